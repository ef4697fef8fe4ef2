import xml.etree.ElementTree as ET

import numpy as np

from geochart.render import position_colors, render_svg, save_svg

NS = "{http://www.w3.org/2000/svg}"


class TestRender:
    def test_well_formed_with_one_circle_per_point(self, rng):
        z = rng.standard_normal((37, 2))
        root = ET.fromstring(render_svg(z, title="a < b"))
        assert len(root.findall(f".//{NS}circle")) == 37

    def test_deterministic_bytes(self, rng, tmp_path):
        z, x = rng.standard_normal((20, 2)), rng.uniform(0, 5, (20, 2))
        save_svg(tmp_path / "a.svg", z, x)
        save_svg(tmp_path / "b.svg", z, x)
        assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()

    def test_axes_in_meters(self, rng):
        svg = render_svg(rng.standard_normal((5, 2)))
        assert "z1 [m]" in svg and "z2 [m]" in svg

    def test_colors_follow_ground_truth(self):
        x = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, 0.5]])
        c = position_colors(x)
        assert np.all((c >= 0) & (c <= 1))
        assert np.allclose(c[4], c[:4].mean(axis=0))
        assert len({tuple(row) for row in c[:4]}) == 4

    def test_degenerate_extent(self):
        root = ET.fromstring(render_svg(np.zeros((3, 2))))
        assert len(root.findall(f".//{NS}circle")) == 3
