"""k-neighbour graphs, geodesic distances and Gaussian path-length moments."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from . import _backend
from ._backend import SOURCE, UNREACHED
from .dissimilarity import (DissimilarityMatrix, DistanceModel, model_distance,
                            pair_index)

TAGS = ("time", "adp", "fuse")
TIME, ADP, FUSE = 0, 1, 2

EDGE_DTYPE = np.dtype([("u", "<u4"), ("v", "<u4"), ("w", "<f4"), ("metric", "u1")])


class DisconnectedGraphError(ValueError):
    pass


class PathError(ValueError):
    pass


@dataclass
class KnnGraph:
    """Symmetric weighted graph in CSR form with sorted neighbour lists.

    ``metric`` holds, per stored edge, the index into ``TAGS`` of the
    dissimilarity that supplied the weight.
    """

    L: int
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    metric: np.ndarray

    @classmethod
    def from_edges(cls, L: int, u, v, w, metric) -> "KnnGraph":
        u, v = np.asarray(u, dtype=np.int64), np.asarray(v, dtype=np.int64)
        w = np.asarray(w, dtype=np.float32)
        metric = np.asarray(metric, dtype=np.uint8)
        if np.any(u == v):
            raise ValueError("self-loops are not allowed")
        rows = np.concatenate([u, v])
        cols = np.concatenate([v, u])
        ww = np.concatenate([w, w])
        mm = np.concatenate([metric, metric])
        key = rows * L + cols
        key, first = np.unique(key, return_index=True)
        rows, cols = key // L, key % L
        indptr = np.zeros(L + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=L), out=indptr[1:])
        return cls(L, indptr, cols.astype(np.int64), ww[first].astype(np.float64), mm[first])

    @property
    def num_edges(self) -> int:
        return int(self.indices.shape[0]) // 2

    def neighbors(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u] : self.indptr[u + 1]]

    def _keys(self) -> np.ndarray:
        rows = np.repeat(np.arange(self.L, dtype=np.int64), np.diff(self.indptr))
        return rows * self.L + self.indices

    def edge_ids(self, u, v) -> np.ndarray:
        """CSR positions of edges ``(u, v)``; raises if any edge is missing."""
        keys = self._keys()
        q = np.asarray(u, dtype=np.int64) * self.L + np.asarray(v, dtype=np.int64)
        pos = np.searchsorted(keys, q)
        pos_c = np.minimum(pos, len(keys) - 1)
        if len(keys) == 0 or np.any(keys[pos_c] != q):
            raise PathError("edge missing from graph")
        return pos_c

    def has_edge(self, u: int, v: int) -> bool:
        return bool(np.any(self.neighbors(u) == v))

    def edges(self):
        """Edges with ``u < v`` as (u, v, weight, metric) arrays."""
        rows = np.repeat(np.arange(self.L, dtype=np.int64), np.diff(self.indptr))
        keep = rows < self.indices
        return rows[keep], self.indices[keep], self.weights[keep], self.metric[keep]

    def components(self):
        adj = csr_matrix((np.ones_like(self.weights), self.indices, self.indptr),
                         shape=(self.L, self.L))
        return connected_components(adj, directed=False)

    def __eq__(self, other):
        if not isinstance(other, KnnGraph):
            return NotImplemented
        return (self.L == other.L and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.weights, other.weights)
                and np.array_equal(self.metric, other.metric))


def _metric_of_pairs(matrix: DissimilarityMatrix, i, j, choice: Optional[np.ndarray]):
    if choice is None:
        return np.full(np.shape(i), TAGS.index(matrix.metric_tag), dtype=np.uint8)
    return choice[pair_index(i, j, matrix.L)]


def knn_graph(matrix: DissimilarityMatrix, k: int, choice: Optional[np.ndarray] = None) -> KnnGraph:
    """Union-symmetrised k-nearest-neighbour graph of a packed matrix.

    Ties between equal weights go to the lower index. ``choice`` optionally
    gives, per packed pair, which metric supplied the weight (0 time, 1 adp).
    """
    L = matrix.L
    if not 1 <= k < L:
        raise ValueError(f"k must satisfy 1 <= k < L (k={k}, L={L})")
    full = matrix.full()
    np.fill_diagonal(full, np.inf)
    nn = np.argsort(full, axis=1, kind="stable")[:, :k]
    u = np.repeat(np.arange(L, dtype=np.int64), k)
    v = nn.reshape(-1).astype(np.int64)
    a, b = np.minimum(u, v), np.maximum(u, v)
    return KnnGraph.from_edges(L, a, b, matrix.values[pair_index(a, b, L)],
                               _metric_of_pairs(matrix, a, b, choice))


def ensure_connected(graph: KnnGraph, matrix: DissimilarityMatrix,
                     choice: Optional[np.ndarray] = None) -> KnnGraph:
    """Bridge components with the globally lightest cross-component pair until connected."""
    ncomp, labels = graph.components()
    if ncomp == 1:
        return graph
    full = matrix.full().astype(np.float64)
    iu = np.triu_indices(matrix.L, 1)
    vals = full[iu]
    u, v, w, m = graph.edges()
    us, vs, ws, ms = [u], [v], [w], [m]
    while ncomp > 1:
        cross = labels[iu[0]] != labels[iu[1]]
        cand = np.where(cross, vals, np.inf)
        best = int(np.argmin(cand))  # first minimum == lowest (i, j)
        i, j = int(iu[0][best]), int(iu[1][best])
        us.append(np.array([i]))
        vs.append(np.array([j]))
        ws.append(np.array([matrix.values[best]]))
        ms.append(_metric_of_pairs(matrix, np.array([i]), np.array([j]), choice))
        li, lj = labels[i], labels[j]
        labels = np.where(labels == lj, li, labels)
        ncomp -= 1
    return KnnGraph.from_edges(graph.L, np.concatenate(us), np.concatenate(vs),
                               np.concatenate(ws), np.concatenate(ms))


@dataclass
class GeodesicRealization:
    """Shortest-path lengths (float32) and predecessors (uint32) for one graph."""

    graph: KnnGraph
    dist: np.ndarray
    pred: np.ndarray

    @property
    def L(self) -> int:
        return self.graph.L


def all_pairs_shortest(graph: KnnGraph, threads: Optional[int] = None,
                       backend: Optional[str] = None) -> GeodesicRealization:
    """Per-source Dijkstra; on equal distances the lower predecessor index wins.

    ``dist`` is made exactly symmetric by mirroring the ``i < j`` half.
    """
    if np.any(graph.weights < 0):
        raise ValueError("negative edge weights")
    threads = _backend.default_threads() if threads is None else max(1, int(threads))
    kern = _backend.get(backend)
    dist, pred = kern.dijkstra_all(graph.indptr, graph.indices, graph.weights, threads)
    if np.any(pred == UNREACHED):
        raise DisconnectedGraphError("graph is disconnected; call ensure_connected first")
    iu = np.triu_indices(graph.L, 1)
    dist = dist.astype(np.float32)
    dist.T[iu] = dist[iu]
    return GeodesicRealization(graph, dist, pred)


def reconstruct_path(real: GeodesicRealization, i: int, j: int) -> List[int]:
    """Vertex list ``q`` with ``q[0] == i`` and ``q[-1] == j``."""
    L = real.L
    if not (0 <= i < L and 0 <= j < L):
        raise IndexError("vertex index out of range")
    back = [j]
    cur = j
    row = real.pred[i]
    while cur != i:
        cur = int(row[cur])
        if cur == UNREACHED or cur == SOURCE or len(back) > L:
            raise PathError(f"no path from {i} to {j}")
        back.append(cur)
    return back[::-1]


def reconstruct_paths(real: GeodesicRealization, I, J):
    """Vectorised path reconstruction.

    Returns ``(Q, M)``: ``Q[r, :M[r]+1]`` is the path from ``I[r]`` to ``J[r]``;
    entries past the end repeat ``J[r]``.
    """
    I = np.asarray(I, dtype=np.int64)
    J = np.asarray(J, dtype=np.int64)
    cur = J.copy()
    back = [cur]
    active = cur != I
    steps = 0
    while np.any(active):
        nxt = real.pred[I, cur].astype(np.int64)
        if np.any(nxt[active] >= UNREACHED - 1):
            raise PathError("unreachable vertex in predecessor walk")
        cur = np.where(active, nxt, cur)
        back.append(cur)
        active = cur != I
        steps += 1
        if steps > real.L:
            raise PathError("predecessor walk does not terminate")
    back = np.stack(back, axis=1)  # (n, K)
    M = np.argmax(back == I[:, None], axis=1)
    K = back.shape[1]
    idx = M[:, None] - np.arange(K)[None, :]
    rows = np.arange(len(I))[:, None]
    Q = np.where(idx >= 0, back[rows, np.maximum(idx, 0)], J[:, None])
    return Q, M


def subsample_path(q, s: int) -> list:
    """``(q_0, q_s, q_2s, ..., q_M)`` for a path ``q`` of ``M`` hops."""
    q = list(q)
    if not q:
        raise PathError("empty path")
    if s < 1:
        raise ValueError("sub-sampling factor must be >= 1")
    M = len(q) - 1
    nseg = -(-M // s)
    return [q[min(s * m, M)] for m in range(nseg + 1)]


def subsample_positions(M, s):
    """Per-path positions ``min(s*m, M)`` for ``m = 0..max ceil(M/s)`` (padded with ``M``)."""
    M = np.asarray(M, dtype=np.int64)
    s = np.asarray(s, dtype=np.int64)
    nseg = -(-M // s)
    width = int(nseg.max()) + 1 if M.size else 1
    m = np.arange(width)[None, :]
    return np.minimum(s[:, None] * m, M[:, None])


# --- probabilistic graphs ----------------------------------------------------


def sample_realizations(time: DissimilarityMatrix, adp: DissimilarityMatrix, model: DistanceModel,
                        k: int, R: int = 4, seed: int = 0, threads: Optional[int] = None,
                        backend: Optional[str] = None) -> List[GeodesicRealization]:
    """Shortest-path realizations of the random graph ``d | Delta``.

    For every pair one Gaussian distance is drawn per metric (negative draws
    clamp to 0) and the smaller one becomes the edge weight, remembering which
    metric won.
    """
    if R < 1:
        raise ValueError("R must be >= 1")
    if time.L != adp.L:
        raise ValueError("dimension mismatch")
    mt, st = model_distance(time.values, "time", model)
    ma, sa = model_distance(adp.values, "adp", model)
    out = []
    for child in np.random.SeedSequence(seed).spawn(R):
        rng = np.random.default_rng(child)
        dt = np.maximum(mt + st * rng.standard_normal(mt.shape), 0.0)
        da = np.maximum(ma + sa * rng.standard_normal(ma.shape), 0.0)
        choice = (da < dt).astype(np.uint8)
        fused = DissimilarityMatrix(time.L, "fuse", np.minimum(dt, da).astype(np.float32))
        graph = ensure_connected(knn_graph(fused, k, choice), fused, choice)
        out.append(all_pairs_shortest(graph, threads, backend))
    return out


def geodesic_from_matrix(matrix: DissimilarityMatrix, k: int, threads: Optional[int] = None,
                         backend: Optional[str] = None) -> GeodesicRealization:
    """Deterministic pipeline: k-NN graph, bridging, all-pairs shortest paths."""
    graph = ensure_connected(knn_graph(matrix, k), matrix)
    return all_pairs_shortest(graph, threads, backend)


@dataclass(frozen=True)
class PathMoments:
    mu_geo: float
    sigma_geo: float
    hops: int


def _edge_moments(U, V, real: GeodesicRealization, time: DissimilarityMatrix,
                  adp: DissimilarityMatrix, model: DistanceModel):
    """Per-edge metric, mean and std for the remembered metric choice."""
    g = real.graph
    metric = g.metric[g.edge_ids(U, V)]
    idx = pair_index(U, V, time.L)
    mt, st = model_distance(time.values[idx], "time", model)
    ma, sa = model_distance(adp.values[idx], "adp", model)
    # fused edges carry no choice: take the metric with the smaller mean
    metric = np.where(metric == FUSE, np.where(ma < mt, ADP, TIME), metric)
    is_time = metric == TIME
    return is_time, np.where(is_time, mt, ma), np.where(is_time, st, sa)


def path_moments(q, real: GeodesicRealization, time: DissimilarityMatrix,
                 adp: DissimilarityMatrix, model: DistanceModel) -> PathMoments:
    """Mean and std of the path length; time edges fully correlated, adp edges independent."""
    q = np.asarray(q, dtype=np.int64)
    if q.size == 0:
        raise PathError("empty path")
    if q.size == 1:
        return PathMoments(0.0, 0.0, 0)
    is_time, mu, sigma = _edge_moments(q[:-1], q[1:], real, time, adp, model)
    var = np.sum(np.where(is_time, 0.0, sigma**2)) + np.sum(np.where(is_time, sigma, 0.0)) ** 2
    return PathMoments(float(np.sum(mu)), float(np.sqrt(var)), int(q.size - 1))


def path_moments_batch(Q, M, real: GeodesicRealization, time: DissimilarityMatrix,
                       adp: DissimilarityMatrix, model: DistanceModel):
    """Vectorised :func:`path_moments` over padded paths from :func:`reconstruct_paths`."""
    Q = np.asarray(Q, dtype=np.int64)
    M = np.asarray(M, dtype=np.int64)
    n, K = Q.shape
    mu_geo = np.zeros(n)
    var_adp = np.zeros(n)
    sum_time = np.zeros(n)
    if K > 1:
        hop = np.arange(1, K)[None, :]
        valid = hop <= M[:, None]
        U, V = Q[:, :-1][valid], Q[:, 1:][valid]
        is_time, mu, sigma = _edge_moments(U, V, real, time, adp, model)
        row = np.broadcast_to(np.arange(n)[:, None], valid.shape)[valid]
        mu_geo = np.bincount(row, weights=mu, minlength=n)
        var_adp = np.bincount(row, weights=np.where(is_time, 0.0, sigma**2), minlength=n)
        sum_time = np.bincount(row, weights=np.where(is_time, sigma, 0.0), minlength=n)
    return mu_geo, np.sqrt(var_adp + sum_time**2)


# --- files ---------------------------------------------------------------------


def save_realization(real: GeodesicRealization, directory, meta: Optional[dict] = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    real.dist.astype("<f4", copy=False).tofile(directory / "dist.bin")
    real.pred.astype("<u4", copy=False).tofile(directory / "pred.bin")
    u, v, w, m = real.graph.edges()
    rec = np.empty(len(u), dtype=EDGE_DTYPE)
    rec["u"], rec["v"], rec["w"], rec["metric"] = u, v, w, m
    rec.tofile(directory / "edges.bin")
    info = {"L": real.L, "num_edges": int(len(u))}
    info.update(meta or {})
    with open(directory / "meta.json", "w", encoding="utf-8") as f:
        json.dump(info, f, indent=2, sort_keys=True)
        f.write("\n")


def load_realization(directory) -> GeodesicRealization:
    directory = Path(directory)
    with open(directory / "meta.json", encoding="utf-8") as f:
        info = json.load(f)
    L = int(info["L"])
    dist = np.fromfile(directory / "dist.bin", dtype="<f4")
    pred = np.fromfile(directory / "pred.bin", dtype="<u4")
    if dist.size != L * L or pred.size != L * L:
        raise ValueError(f"{directory}: payload size mismatch")
    rec = np.fromfile(directory / "edges.bin", dtype=EDGE_DTYPE)
    graph = KnnGraph.from_edges(L, rec["u"], rec["v"], rec["w"], rec["metric"])
    return GeodesicRealization(graph, dist.reshape(L, L).astype(np.float32),
                               pred.reshape(L, L).astype(np.uint32))
