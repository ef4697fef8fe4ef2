import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geochart import _backend
from geochart import geodesic as G
from geochart.dissimilarity import DissimilarityMatrix, DistanceModel, fuse_with_choice


def floyd_warshall(L, u, v, w):
    D = np.full((L, L), np.inf)
    np.fill_diagonal(D, 0.0)
    for a, b, c in zip(u, v, w):
        D[a, b] = D[b, a] = min(D[a, b], c)
    for k in range(L):
        D = np.minimum(D, D[:, k : k + 1] + D[k : k + 1, :])
    return D


def random_connected(rng, L, extra=None):
    """Spanning tree plus random extra edges; dyadic weights keep float sums exact.

    Repeated pairs may occur; the graph keeps the first copy.
    """
    perm = rng.permutation(L)
    u = [int(perm[i]) for i in range(1, L)]
    v = [int(perm[rng.integers(0, i)]) for i in range(1, L)]
    for _ in range(rng.integers(0, L * 2) if extra is None else extra):
        a, b = rng.choice(L, 2, replace=False)
        u.append(int(a))
        v.append(int(b))
    a, b = np.minimum(u, v), np.maximum(u, v)
    w = rng.integers(1, 64, len(a)) / 8.0
    return a, b, w


@st.composite
def graphs(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    L = draw(st.integers(2, 10))
    rng = np.random.default_rng(seed)
    return (L,) + random_connected(rng, L)


class TestShortestPaths:
    @settings(max_examples=80, deadline=None)
    @given(graphs())
    def test_matches_floyd_warshall(self, g):
        L, u, v, w = g
        graph = G.KnnGraph.from_edges(L, u, v, w, np.zeros(len(u)))
        real = G.all_pairs_shortest(graph)
        fw = floyd_warshall(L, *graph.edges()[:3])
        assert np.array_equal(real.dist.astype(np.float64), fw)

    @settings(max_examples=40, deadline=None)
    @given(graphs())
    def test_paths_sum_to_distance(self, g):
        L, u, v, w = g
        graph = G.KnnGraph.from_edges(L, u, v, w, np.zeros(len(u)))
        real = G.all_pairs_shortest(graph)
        W = {}
        for a, b, c in zip(*graph.edges()[:3]):
            W[(a, b)] = W[(b, a)] = c
        for i in range(L):
            for j in range(L):
                q = G.reconstruct_path(real, i, j)
                assert q[0] == i and q[-1] == j
                total = sum(W[(q[n], q[n + 1])] for n in range(len(q) - 1))
                assert total == pytest.approx(float(real.dist[i, j]), rel=1e-6)

    def test_vectorised_reconstruction(self, rng):
        L = 15
        graph = G.KnnGraph.from_edges(L, *random_connected(rng, L, 20), np.zeros(L - 1 + 20))
        real = G.all_pairs_shortest(graph)
        I, J = np.meshgrid(np.arange(L), np.arange(L), indexing="ij")
        Q, M = G.reconstruct_paths(real, I.ravel(), J.ravel())
        for r, (i, j) in enumerate(zip(I.ravel(), J.ravel())):
            q = G.reconstruct_path(real, i, j)
            assert M[r] == len(q) - 1
            assert Q[r, : M[r] + 1].tolist() == q
            assert np.all(Q[r, M[r] :] == j)

    def test_dist_symmetric(self, rng):
        L = 12
        graph = G.KnnGraph.from_edges(L, *random_connected(rng, L, 15), np.zeros(L - 1 + 15))
        real = G.all_pairs_shortest(graph)
        assert np.array_equal(real.dist, real.dist.T)

    def test_disconnected_raises(self):
        graph = G.KnnGraph.from_edges(4, [0, 2], [1, 3], [1.0, 1.0], [0, 0])
        with pytest.raises(G.DisconnectedGraphError):
            G.all_pairs_shortest(graph)

    def test_negative_weights(self):
        graph = G.KnnGraph.from_edges(2, [0], [1], [-1.0], [0])
        with pytest.raises(ValueError):
            G.all_pairs_shortest(graph)

    @pytest.mark.skipif(_backend.BACKEND != "cython", reason="extension not built")
    def test_backends_identical(self, rng):
        L = 30
        u, v, w = random_connected(rng, L, 60)
        graph = G.KnnGraph.from_edges(L, u, v, w, np.zeros(len(u)))
        a = G.all_pairs_shortest(graph, backend="cython")
        b = G.all_pairs_shortest(graph, backend="python")
        assert np.array_equal(a.dist, b.dist) and np.array_equal(a.pred, b.pred)


class TestKnnGraph:
    def _matrix(self, rng, L=20):
        x = rng.uniform(0, 10, (L, 2))
        d = np.linalg.norm(x[:, None] - x[None], axis=2)[np.triu_indices(L, 1)]
        return DissimilarityMatrix(L, "fuse", d)

    def test_symmetric_union(self, rng):
        m = self._matrix(rng)
        g = G.knn_graph(m, 3)
        full = m.full()
        for u in range(m.L):
            nn = np.argsort(full[u] + np.diag(np.full(m.L, np.inf))[u], kind="stable")[:3]
            for v in nn:
                assert g.has_edge(u, v) and g.has_edge(v, u)
        assert np.all(np.diff(g.indptr) >= 3)

    def test_k_range(self, rng):
        with pytest.raises(ValueError):
            G.knn_graph(self._matrix(rng, 5), 5)

    def test_ensure_connected_bridges_lightest(self):
        # two tight clusters far apart
        x = np.array([[0, 0], [0, 1], [0, 2], [50, 0], [50, 1], [50, 2.5]], float)
        L = len(x)
        d = np.linalg.norm(x[:, None] - x[None], axis=2)[np.triu_indices(L, 1)]
        m = DissimilarityMatrix(L, "fuse", d)
        g = G.knn_graph(m, 1)
        assert g.components()[0] == 2
        h = G.ensure_connected(g, m)
        assert h.components()[0] == 1
        assert h.has_edge(0, 3)

    def test_edges_roundtrip(self, rng):
        m = self._matrix(rng)
        g = G.knn_graph(m, 4)
        assert G.KnnGraph.from_edges(g.L, *g.edges()) == g


class TestSubsample:
    def test_example(self):
        assert G.subsample_path([5, 9, 7, 8], 2) == [5, 7, 8]

    def test_trivial(self):
        assert G.subsample_path([3, 1, 2], 1) == [3, 1, 2]
        assert G.subsample_path([3, 1, 2], 5) == [3, 2]
        assert G.subsample_path([4], 3) == [4]

    def test_errors(self):
        with pytest.raises(G.PathError):
            G.subsample_path([], 1)
        with pytest.raises(ValueError):
            G.subsample_path([1, 2], 0)

    @given(st.integers(0, 30), st.integers(1, 40))
    def test_positions_agree(self, M, s):
        pos = G.subsample_positions(np.array([M]), np.array([s]))[0]
        expected = G.subsample_path(list(range(M + 1)), s)
        assert pos[: len(expected)].tolist() == expected
        assert np.all(pos[len(expected) - 1 :] == M)


class TestRealizations:
    def _inputs(self, rng, L=25):
        x = rng.uniform(0, 10, (L, 2))
        d = np.linalg.norm(x[:, None] - x[None], axis=2)[np.triu_indices(L, 1)]
        time = DissimilarityMatrix(L, "time", d * rng.uniform(1.0, 3.0, d.shape))
        adp = DissimilarityMatrix(L, "adp", d * rng.uniform(0.8, 1.5, d.shape))
        return time, adp

    def test_zero_sigma_gives_identical(self, rng):
        time, adp = self._inputs(rng)
        m = DistanceModel(speed_spread=0, adp_spread=0, sigma_min=0)
        reals = G.sample_realizations(time, adp, m, 5, R=3, seed=1)
        for r in reals[1:]:
            assert np.array_equal(r.dist, reals[0].dist)
            assert r.graph == reals[0].graph
        fused, choice = fuse_with_choice(time, adp, m)
        det = G.all_pairs_shortest(G.ensure_connected(G.knn_graph(fused, 5, choice), fused, choice))
        assert np.array_equal(det.dist, reals[0].dist)

    def test_seeded(self, rng):
        time, adp = self._inputs(rng)
        a = G.sample_realizations(time, adp, DistanceModel(), 5, R=2, seed=4)
        b = G.sample_realizations(time, adp, DistanceModel(), 5, R=2, seed=4)
        assert all(np.array_equal(x.dist, y.dist) for x, y in zip(a, b))
        assert not np.array_equal(a[0].dist, a[1].dist)

    def test_save_load(self, rng, tmp_path):
        time, adp = self._inputs(rng)
        real = G.sample_realizations(time, adp, DistanceModel(), 5, R=1, seed=0)[0]
        G.save_realization(real, tmp_path / "r", {"k": 5})
        back = G.load_realization(tmp_path / "r")
        assert back.graph == real.graph
        assert np.array_equal(back.dist, real.dist) and np.array_equal(back.pred, real.pred)


class TestMoments:
    def test_hand_case(self):
        # path 0-1-2: edge (0,1) time, edge (1,2) adp
        L = 3
        time = DissimilarityMatrix(L, "time", [1.0, 9.0, 9.0])
        adp = DissimilarityMatrix(L, "adp", [9.0, 9.0, 2.0])
        m = DistanceModel(speed_spread=0.5, adp_spread=0.25, sigma_min=0.0)
        graph = G.KnnGraph.from_edges(L, [0, 1], [1, 2], [1.0, 2.0], [G.TIME, G.ADP])
        real = G.all_pairs_shortest(graph)
        pm = G.path_moments([0, 1, 2], real, time, adp, m)
        assert pm.mu_geo == pytest.approx(3.0)
        assert pm.sigma_geo == pytest.approx(np.sqrt(0.5**2 + 0.5**2))
        assert pm.hops == 2

    def test_time_edges_add_linearly(self):
        L = 4
        time = DissimilarityMatrix(L, "time", np.ones(6))
        adp = DissimilarityMatrix(L, "adp", np.full(6, 9.0))
        m = DistanceModel(speed_spread=0.1, sigma_min=0.0)
        graph = G.KnnGraph.from_edges(L, [0, 1, 2], [1, 2, 3], [1.0] * 3, [G.TIME] * 3)
        pm = G.path_moments([0, 1, 2, 3], G.all_pairs_shortest(graph), time, adp, m)
        assert pm.sigma_geo == pytest.approx(0.3)

    def test_single_vertex(self):
        L = 2
        time = DissimilarityMatrix(L, "time", [1.0])
        graph = G.KnnGraph.from_edges(L, [0], [1], [1.0], [G.TIME])
        pm = G.path_moments([1], G.all_pairs_shortest(graph), time, time.__class__(2, "adp", [1.0]),
                            DistanceModel())
        assert (pm.mu_geo, pm.sigma_geo, pm.hops) == (0.0, 0.0, 0)

    def test_batch_matches_scalar(self, rng):
        time, adp = TestRealizations()._inputs(rng, 20)
        m = DistanceModel()
        real = G.sample_realizations(time, adp, m, 4, R=1, seed=2)[0]
        I = rng.integers(0, 20, 30)
        J = rng.integers(0, 20, 30)
        Q, M = G.reconstruct_paths(real, I, J)
        mu, sigma = G.path_moments_batch(Q, M, real, time, adp, m)
        for r in range(30):
            pm = G.path_moments(G.reconstruct_path(real, I[r], J[r]), real, time, adp, m)
            assert mu[r] == pytest.approx(pm.mu_geo) and sigma[r] == pytest.approx(pm.sigma_geo)

    def test_missing_edge(self):
        L = 3
        time = DissimilarityMatrix(L, "time", [1.0, 1.0, 1.0])
        graph = G.KnnGraph.from_edges(L, [0, 1], [1, 2], [1.0, 1.0], [0, 0])
        with pytest.raises(G.PathError):
            G.path_moments([0, 2], G.all_pairs_shortest(graph), time, time.__class__(3, "adp", [1.0] * 3),
                           DistanceModel())
