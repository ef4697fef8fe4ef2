"""Pure-Python/numpy twins of the compiled kernels in ``_kernels.pyx``."""

import heapq
from concurrent.futures import ThreadPoolExecutor

import numpy as np

UNREACHED = 0xFFFFFFFF
SOURCE = 0xFFFFFFFE

_ROW_BLOCK = 64


def _adp_rows(ure, uim, i0, i1, out):
    L, S, M = ure.shape
    ar, ai = ure[i0:i1, None], uim[i0:i1, None]  # (n, 1, S, M)
    br, bi = ure[None], uim[None]  # (1, L, S, M)
    acc = np.zeros((i1 - i0, L))
    for s in range(S):
        re = np.zeros((i1 - i0, L))
        im = np.zeros((i1 - i0, L))
        for m in range(M):
            xr, xi = ar[..., s, m], ai[..., s, m]
            yr, yi = br[..., s, m], bi[..., s, m]
            re = re + (xr * yr + xi * yi)
            im = im + (xr * yi - xi * yr)
        acc = acc + (re * re + im * im)
    val = np.maximum(float(S) - acc, 0.0).astype(np.float32)
    for i in range(i0, i1):
        base = i * (2 * L - i - 1) // 2 - i - 1
        out[base + i + 1 : base + L] = val[i - i0, i + 1 :]


def adp_packed(ure, uim, out, threads=1):
    ure = np.ascontiguousarray(ure, dtype=np.float64)
    uim = np.ascontiguousarray(uim, dtype=np.float64)
    L = ure.shape[0]
    if out.shape[0] != L * (L - 1) // 2:
        raise ValueError("output length does not match L")
    blocks = [(i, min(i + _ROW_BLOCK, L)) for i in range(0, L, _ROW_BLOCK)]
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(lambda b: _adp_rows(ure, uim, b[0], b[1], out), blocks))
    else:
        for i0, i1 in blocks:
            _adp_rows(ure, uim, i0, i1, out)


def _sssp(src, indptr, indices, weights, dist, pred):
    L = dist.shape[0]
    d = [float("inf")] * L
    p = [UNREACHED] * L
    done = [False] * L
    d[src] = 0.0
    p[src] = SOURCE
    heap = [(0.0, src)]
    while heap:
        du, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for e in range(indptr[u], indptr[u + 1]):
            v = indices[e]
            if done[v]:
                continue
            nd = du + weights[e]
            if nd < d[v]:
                d[v] = nd
                p[v] = u
                heapq.heappush(heap, (nd, v))
            elif nd == d[v] and u < p[v]:
                p[v] = u
    dist[src] = d
    pred[src] = p


def dijkstra_all(indptr, indices, weights, threads=1):
    indptr = np.asarray(indptr).tolist()
    indices = np.asarray(indices).tolist()
    weights = np.asarray(weights, dtype=np.float64).tolist()
    L = len(indptr) - 1
    dist = np.empty((L, L), dtype=np.float64)
    pred = np.empty((L, L), dtype=np.uint32)
    for src in range(L):
        _sssp(src, indptr, indices, weights, dist, pred)
    return dist, pred
