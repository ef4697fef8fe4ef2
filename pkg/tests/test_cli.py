import csv
import json

import numpy as np
import pytest

from geochart.cli import main
from geochart.dataset import load_dataset
from geochart.evaluation import evaluate
from geochart.model import forward_all, init_free, load_model, save_model

SMALL = {"scene": {"num_points": 60, "seed": 4}, "k": 8, "R": 2,
         "train": {"steps": 40, "batch_pairs": 200, "learning_rate": 0.05}}


def _run(out, *argv, config=None):
    extra = ["--config", str(config)] if config else []
    return main([argv[0], "--out", str(out), *extra, *argv[1:]])


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(SMALL))
    return p


def _pipeline(out, cfg, *train_args):
    assert _run(out, "synth", config=cfg) == 0
    assert _run(out, "dissim", config=cfg) == 0
    assert _run(out, "graph", "--seed", "0", config=cfg) == 0
    assert _run(out, "train", "--seed", "0", *train_args, config=cfg) == 0


def _tree(out):
    return {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*"))
            if p.is_file()}


class TestPipeline:
    def test_full_run_is_byte_identical(self, tmp_path, cfg_file):
        outs = [tmp_path / "a", tmp_path / "b"]
        for out in outs:
            _pipeline(out, cfg_file, "--loss", "geo_unc")
            assert _run(out, "eval", config=cfg_file) == 0
            assert _run(out, "render", config=cfg_file) == 0
        a, b = (_tree(o) for o in outs)
        assert a.keys() == b.keys()
        for name in a:
            assert a[name] == b[name], name
        assert {"eval.json", "errors.csv", "chart.svg", "graph/graph.json",
                "train/trace.csv"} <= set(a)

    def test_eval_matches_library(self, tmp_path, cfg_file):
        out = tmp_path / "o"
        _pipeline(out, cfg_file)
        assert _run(out, "eval", config=cfg_file) == 0
        got = json.loads((out / "eval.json").read_text())
        ds = load_dataset(out / "dataset")
        z = forward_all(load_model(out / "train")).astype(np.float64)
        ref, _, _ = evaluate(z, ds.positions)
        for key, val in ref.to_dict().items():
            if isinstance(val, float):
                assert got[key] == pytest.approx(val, rel=1e-9, abs=1e-12), key

    def test_perfect_chart_scores_zero(self, tmp_path, cfg_file):
        out = tmp_path / "o"
        assert _run(out, "synth", config=cfg_file) == 0
        ds = load_dataset(out / "dataset")
        save_model(init_free(len(ds), coords=ds.positions), out / "train")
        assert _run(out, "eval", config=cfg_file) == 0
        got = json.loads((out / "eval.json").read_text())
        # float32 checkpoints can reorder near-tied neighbours
        assert got["mae"] < 1e-5 and got["ct"] > 0.99 and got["tw"] > 0.99

    def test_geo_full_init_equals_siam_at_step_zero(self, tmp_path, cfg_file):
        out = tmp_path / "o"
        _pipeline(out, cfg_file, "--loss", "siam")
        siam = (out / "train" / "trace.csv").read_text()
        assert _run(out, "train", "--seed", "0", "--loss", "geo", "--subsample-init", "full",
                    config=cfg_file) == 0
        geo = (out / "train" / "trace.csv").read_text()
        rows = [list(csv.reader(t.splitlines()))[1] for t in (siam, geo)]
        assert rows[0] == rows[1]

    def test_ablate_writes_grid(self, tmp_path, cfg_file):
        out = tmp_path / "o"
        _pipeline(out, cfg_file)
        assert _run(out, "ablate", "--seeds", "2", "--losses", "siam,geo", config=cfg_file) == 0
        grid = json.loads((out / "ablate" / "grid.json").read_text())["grid"]
        assert set(grid) == {"siam+acc", "geo+acc"}

    def test_synth_seed_and_points(self, tmp_path, capsys):
        out = tmp_path / "o"
        assert _run(out, "synth", "--points", "25", "--seed", "7") == 0
        assert "L=25" in capsys.readouterr().out


class TestExitCodes:
    def test_unknown_flag(self, tmp_path):
        assert _run(tmp_path, "train", "--bogus") == 2

    def test_bad_config_key(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text('{"nope": 1}')
        assert _run(tmp_path, "synth", config=p) == 2

    def test_malformed_config_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{")
        assert _run(tmp_path, "synth", config=p) == 2

    def test_missing_config_file(self, tmp_path):
        assert _run(tmp_path, "synth", config=tmp_path / "none.json") == 4

    def test_missing_stage_input(self, tmp_path):
        assert _run(tmp_path / "empty", "dissim") == 4

    def test_bad_threads(self, tmp_path, cfg_file):
        assert _run(tmp_path, "synth", "--threads", "0", config=cfg_file) == 2

    def test_array_out_of_range(self, tmp_path, cfg_file):
        assert _run(tmp_path, "synth", config=cfg_file) == 0
        assert _run(tmp_path, "dissim", "--array", "9", config=cfg_file) == 2

    def test_too_many_realizations(self, tmp_path, cfg_file):
        _pipeline(tmp_path, cfg_file)
        assert _run(tmp_path, "train", "--loss", "geo_unc", "--R", "5", config=cfg_file) == 2

    def test_divergence(self, tmp_path, cfg_file):
        _pipeline(tmp_path, cfg_file)
        assert _run(tmp_path, "train", "--lr", "1e300", config=cfg_file) == 3
