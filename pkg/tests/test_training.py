import csv

import numpy as np
import pytest

from geochart.dataset import ArrayGeometry, Dataset
from geochart.evaluation import kruskal_stress
from geochart.geodesic import KnnGraph, all_pairs_shortest
from geochart.model import init_free, init_parametric, parameters
from geochart.training import (Adam, DivergenceError, TrainConfig, TrainingArtifacts, batch_loss,
                               learning_rate, sample_batch, sample_pairs, schedule_subsample,
                               train, unpack_index)


def oracle_problem(x, with_cir=False, seed=0):
    """Dataset plus a complete-graph realization whose geodesics are the true distances."""
    L = len(x)
    i, j = np.triu_indices(L, 1)
    w = np.linalg.norm(x[i] - x[j], axis=1)
    real = all_pairs_shortest(KnnGraph.from_edges(L, i, j, w, np.zeros(len(i))))
    geom = ArrayGeometry(1, 1, 2, 2, np.zeros((1, 2)), np.zeros(1))
    rng = np.random.default_rng(seed)
    cir = rng.standard_normal((L, 1, 1, 2, 2)) if with_cir else np.ones((L, 1, 1, 2, 2))
    return Dataset(geom, cir, np.arange(L, dtype=float), positions=x), real


class TestConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.beta, c.acc_weight, c.batch_pairs, c.target_segment_length) == (0.2, 1.0, 2000, 2.0)
        assert c.learning_rate == 1e-3 and c.lr_decay == 0.5

    def test_alias(self):
        assert TrainConfig(loss_kind="geo-unc").loss_kind == "geo_unc"

    @pytest.mark.parametrize("bad", [dict(beta=0), dict(sigma_acc=0), dict(batch_pairs=0),
                                     dict(loss_kind="triplet"), dict(subsample_initial="half")])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            TrainConfig(**bad)

    def test_from_dict_rejects_unknown(self):
        with pytest.raises(ValueError, match="unknown"):
            TrainConfig.from_dict({"betta": 1})

    def test_roundtrip(self):
        c = TrainConfig(steps=7, seed=3)
        assert TrainConfig.from_dict(c.to_dict()) == c

    def test_learning_rate_decay(self):
        c = TrainConfig(steps=9, learning_rate=0.4)
        assert [learning_rate(s, c) for s in (0, 2, 3, 6, 8)] == [0.4, 0.4, 0.2, 0.1, 0.1]


class TestSchedule:
    def test_warmup_full(self):
        c = TrainConfig(steps=100)
        assert schedule_subsample(0, 10.0, 20, c) == 20

    def test_target_below_min_edge(self):
        c = TrainConfig(steps=100, target_segment_length=0.01)
        assert schedule_subsample(99, 10.0, 20, c) == 1
        assert schedule_subsample(100, 10.0, 20, c) == 1

    def test_example(self):
        c = TrainConfig(steps=100, target_segment_length=2.0)
        assert schedule_subsample(100, 10.0, 20, c) == 4

    def test_no_warmup(self):
        c = TrainConfig(steps=100, subsample_initial="none", target_segment_length=2.0)
        assert schedule_subsample(0, 10.0, 20, c) == 20
        assert schedule_subsample(50, 10.0, 20, c) < 20

    def test_monotone_in_step(self):
        c = TrainConfig(steps=200)
        s = [schedule_subsample(k, 17.0, 40, c) for k in range(0, 220, 5)]
        assert all(a >= b for a, b in zip(s, s[1:]))
        assert s[0] == 40 and s[-1] == 5

    def test_short_paths_stay_whole(self):
        c = TrainConfig(steps=10)
        assert schedule_subsample(10, [1.5, 1.9], [3, 4], c).tolist() == [3, 4]


class TestSampling:
    @pytest.mark.parametrize("L", [2, 3, 10, 97, 20851])
    def test_unpack_inverts_packing(self, L):
        n = L * (L - 1) // 2
        k = np.unique(np.r_[np.arange(min(n, 5000)), np.arange(max(0, n - 5000), n)])
        i, j = unpack_index(k, L)
        assert np.all(i < j) and np.all(j < L)
        assert np.array_equal(i * (2 * L - i - 1) // 2 + (j - i - 1), k)

    def test_pairs_distinct_and_deterministic(self):
        I, J = sample_pairs(50, 500, step=3, seed=1)
        assert np.all(I != J)
        keys = np.minimum(I, J) * 50 + np.maximum(I, J)
        assert len(np.unique(keys)) == 500
        I2, J2 = sample_pairs(50, 500, step=3, seed=1)
        assert np.array_equal(I, I2) and np.array_equal(J, J2)

    def test_single_pair_repeatable(self):
        assert sample_pairs(30, 1, 0, 9) == sample_pairs(30, 1, 0, 9)

    def test_batch_capped(self):
        I, _ = sample_pairs(4, 100, 0, 0)
        assert len(I) == 6

    def test_round_robin(self, rng):
        _, real = oracle_problem(rng.uniform(0, 5, (8, 2)))
        reals = [real, real, real]
        assert [sample_batch(reals, 4, s, 0).realization for s in range(5)] == [0, 1, 2, 0, 1]

    def test_batch_paths_valid(self, rng):
        _, real = oracle_problem(rng.uniform(0, 5, (8, 2)))
        b = sample_batch([real], 10, 0, 0)
        assert np.array_equal(b.Q[:, 0], b.I)
        assert np.array_equal(b.Q[np.arange(10), b.M], b.J)
        assert np.allclose(b.target, real.dist[b.I, b.J])


class TestAdam:
    def test_first_step_is_signed_lr(self):
        p = np.array([1.0, -2.0, 0.5])
        opt = Adam([p], 0.1)
        opt.step([p], [np.array([3.0, -0.01, 0.0])], 0.1)
        assert np.allclose(p, [0.9, -1.9, 0.5], atol=1e-6)


class TestTrain:
    def test_zero_learning_rate(self, rng):
        ds, real = oracle_problem(rng.uniform(0, 5, (8, 2)))
        m = init_free(8, seed=1)
        before = m.coords.copy()
        cfg = TrainConfig(loss_kind="siam", steps=5, learning_rate=0.0, batch_pairs=100)
        _, rep = train(ds, TrainingArtifacts([real]), m, cfg)
        assert np.array_equal(m.coords, before)
        assert np.allclose(rep.trace[:, 0], rep.trace[0, 0], rtol=1e-12, atol=0)
        assert rep.trace.shape == (5, 3)

    def test_deterministic(self, rng):
        ds, real = oracle_problem(rng.uniform(0, 5, (20, 2)))
        cfg = TrainConfig(loss_kind="geo", steps=30, learning_rate=0.05, batch_pairs=50)
        a = train(ds, TrainingArtifacts([real]), init_free(20, seed=2), cfg)
        b = train(ds, TrainingArtifacts([real]), init_free(20, seed=2), cfg)
        assert a[1].trace.tobytes() == b[1].trace.tobytes()
        assert a[0].coords.tobytes() == b[0].coords.tobytes()

    def test_convex_siam_reaches_low_stress(self):
        x = np.random.default_rng(0).uniform(0, 6, (60, 2))
        ds, real = oracle_problem(x)
        cfg = TrainConfig(loss_kind="siam", use_acc=False, steps=1500, learning_rate=0.05,
                          batch_pairs=500)
        m, _ = train(ds, TrainingArtifacts([real]), init_free(60, seed=0), cfg)
        assert kruskal_stress(m.coords, x) < 0.05

    def test_parametric_loss_decreases(self, rng):
        ds, real = oracle_problem(rng.uniform(0, 5, (30, 2)), with_cir=True)
        cfg = TrainConfig(loss_kind="siam", use_acc=False, steps=200, learning_rate=1e-2,
                          batch_pairs=200)
        m = init_parametric(8, (16, 16), seed=0)
        _, rep = train(ds, TrainingArtifacts([real]), m, cfg)
        assert rep.trace[-20:, 0].mean() < 0.7 * rep.trace[:20, 0].mean()

    def test_float32_precision(self, rng):
        ds, real = oracle_problem(rng.uniform(0, 5, (10, 2)))
        cfg = TrainConfig(loss_kind="siam", steps=3, precision="float32", batch_pairs=10)
        m, _ = train(ds, TrainingArtifacts([real]), init_free(10), cfg)
        assert m.coords.dtype == np.float32

    def test_non_finite_raises(self, rng):
        ds, real = oracle_problem(rng.uniform(0, 5, (8, 2)))
        real.dist[:] = np.nan
        with pytest.raises(DivergenceError, match="non-finite"):
            train(ds, TrainingArtifacts([real]), init_free(8), TrainConfig(loss_kind="siam", steps=2))

    def test_geo_unc_needs_matrices(self, rng):
        ds, real = oracle_problem(rng.uniform(0, 5, (8, 2)))
        with pytest.raises(ValueError, match="geo_unc"):
            train(ds, TrainingArtifacts([real]), init_free(8), TrainConfig(steps=1))

    def test_size_mismatch(self, rng):
        ds, real = oracle_problem(rng.uniform(0, 5, (8, 2)))
        with pytest.raises(ValueError):
            train(ds, TrainingArtifacts([real]), init_free(9), TrainConfig(loss_kind="siam", steps=1))

    def test_geo_equals_siam_during_warmup(self, rng):
        ds, real = oracle_problem(rng.uniform(0, 5, (15, 2)))
        z = rng.standard_normal((15, 2))
        b = sample_batch([real], 40, 0, 0)
        geo = batch_loss(z, b, TrainConfig(loss_kind="geo"), 0, ds.timestamps)
        siam = batch_loss(z, b, TrainConfig(loss_kind="siam"), 0, ds.timestamps)
        assert geo[0] == pytest.approx(siam[0], rel=1e-12)

    def test_trace_csv(self, rng, tmp_path):
        ds, real = oracle_problem(rng.uniform(0, 5, (8, 2)))
        _, rep = train(ds, TrainingArtifacts([real]), init_free(8),
                       TrainConfig(loss_kind="siam", steps=4))
        rep.write_trace(tmp_path / "trace.csv")
        rows = list(csv.reader(open(tmp_path / "trace.csv")))
        assert rows[0] == ["step", "loss", "loss_dissim", "loss_acc"] and len(rows) == 5
        assert float(rows[-1][1]) == rep.final_loss
