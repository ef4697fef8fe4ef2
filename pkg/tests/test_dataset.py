import json

import numpy as np
import pytest

from geochart.dataset import (ArrayGeometry, Dataset, DatasetError, find_breaks, load_dataset,
                              restrict_to_array, save_dataset)
from geochart.synth import (SceneConfig, SceneError, is_simple, l_shape, points_in_polygon,
                            polygon_area, synth_scene)


def _geometry(B=2, T=3):
    return ArrayGeometry(B, 1, 2, T, np.zeros((B, 2)), np.zeros(B))


class TestDataset:
    def test_shape_mismatch_rejected(self):
        with pytest.raises(DatasetError):
            Dataset(_geometry(), np.zeros((4, 2, 1, 2, 2)), np.arange(4.0))

    def test_non_monotone_timestamps_rejected(self):
        with pytest.raises(DatasetError, match="non-monotone"):
            Dataset(_geometry(), np.zeros((3, 2, 1, 2, 3)), [0.0, 2.0, 1.0])

    def test_third_coordinate_dropped(self):
        ds = Dataset(_geometry(), np.zeros((3, 2, 1, 2, 3)), [0.0, 1.0, 2.0],
                     positions=np.arange(9.0).reshape(3, 3))
        assert ds.positions.shape == (3, 2)

    def test_datapoint_access(self):
        ds = Dataset(_geometry(), np.ones((3, 2, 1, 2, 3)), [0.0, 1.0, 2.0],
                     positions=np.arange(6.0).reshape(3, 2))
        p = ds[1]
        assert p.timestamp == 1.0 and np.array_equal(p.position, [2.0, 3.0])

    def test_immutable_arrays(self):
        ds = Dataset(_geometry(), np.zeros((3, 2, 1, 2, 3)), [0.0, 1.0, 2.0])
        with pytest.raises(ValueError):
            ds.timestamps[0] = 5.0

    def test_find_breaks_default_threshold(self):
        t = np.array([0.0, 1, 2, 3, 20, 21, 22])
        assert find_breaks(t).tolist() == [4]
        assert find_breaks(t, gap_threshold=100).tolist() == []


class TestFiles:
    def test_roundtrip_exact(self, small_scene, tmp_path):
        save_dataset(small_scene, tmp_path / "d")
        back = load_dataset(tmp_path / "d")
        assert back.geometry == small_scene.geometry
        assert np.array_equal(back.cir, small_scene.cir)
        assert np.array_equal(back.timestamps, small_scene.timestamps)
        assert np.array_equal(back.positions, small_scene.positions)

    def test_byte_identical_resave(self, small_scene, tmp_path):
        save_dataset(small_scene, tmp_path / "a")
        save_dataset(load_dataset(tmp_path / "a"), tmp_path / "b")
        for name in ("meta.json", "csi.bin", "pos.bin", "time.bin"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_refuses_overwrite(self, small_scene, tmp_path):
        save_dataset(small_scene, tmp_path / "d")
        with pytest.raises(FileExistsError):
            save_dataset(small_scene, tmp_path / "d")
        save_dataset(small_scene, tmp_path / "d", overwrite=True)

    def test_truncated_payload(self, small_scene, tmp_path):
        save_dataset(small_scene, tmp_path / "d")
        f = tmp_path / "d" / "csi.bin"
        f.write_bytes(f.read_bytes()[:-8])
        with pytest.raises(DatasetError, match="size mismatch"):
            load_dataset(tmp_path / "d")

    def test_missing_meta(self, tmp_path):
        with pytest.raises(DatasetError, match="missing"):
            load_dataset(tmp_path)

    def test_without_positions(self, tmp_path):
        ds = Dataset(_geometry(), np.ones((3, 2, 1, 2, 3)), [0.0, 1.0, 2.0])
        save_dataset(ds, tmp_path / "d")
        assert json.loads((tmp_path / "d" / "meta.json").read_text())["has_positions"] is False
        assert load_dataset(tmp_path / "d").positions is None


class TestRestrict:
    def test_slices_one_array(self, small_scene):
        sub = restrict_to_array(small_scene, 2)
        assert sub.geometry.num_arrays == 1
        assert np.array_equal(sub.cir[:, 0], small_scene.cir[:, 1])
        assert np.array_equal(sub.geometry.array_positions[0],
                              small_scene.geometry.array_positions[1])
        assert np.array_equal(sub.positions, small_scene.positions)

    @pytest.mark.parametrize("b", [0, 5])
    def test_out_of_range(self, small_scene, b):
        with pytest.raises(DatasetError):
            restrict_to_array(small_scene, b)


class TestSynth:
    def test_deterministic(self):
        a = synth_scene(SceneConfig(num_points=40, seed=7))
        b = synth_scene(SceneConfig(num_points=40, seed=7))
        assert np.array_equal(a.cir, b.cir) and np.array_equal(a.positions, b.positions)

    def test_points_inside_polygon(self, small_scene):
        assert np.all(points_in_polygon(small_scene.positions, l_shape()))

    def test_speed_and_acceleration_bounded(self, small_scene):
        cfg = SceneConfig()
        v = np.diff(small_scene.positions, axis=0) / cfg.sample_interval
        a = np.diff(v, axis=0) / cfg.sample_interval
        assert np.max(np.linalg.norm(a, axis=1)) <= cfg.max_acceleration + 1e-9

    def test_l_shape_is_simple(self):
        poly = l_shape()
        assert is_simple(poly)
        assert polygon_area(poly) == pytest.approx(20 * 20 - 14 * 14)

    def test_self_intersecting_polygon_rejected(self):
        bow = [(0, 0), (4, 4), (4, 0), (0, 4)]
        with pytest.raises(SceneError):
            synth_scene(SceneConfig(polygon=bow, num_points=10))

    def test_unknown_config_key(self):
        with pytest.raises(SceneError):
            SceneConfig.from_dict({"num_pts": 3})

    def test_multiple_trajectories_give_breaks(self):
        ds = synth_scene(SceneConfig(num_points=60, num_trajectories=3, seed=2))
        assert ds.trajectory_breaks.tolist() == [20, 40]
