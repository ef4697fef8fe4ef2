# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: packed ADP dissimilarities and all-pairs Dijkstra.

Every routine here has a twin in ``_fallback.py`` with the same floating
point operation order, so both backends give bit-identical results.
"""

from cython.parallel cimport prange
from libc.stdlib cimport malloc, free
from libc.math cimport INFINITY

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef unsigned int UNREACHED = 0xFFFFFFFF
cdef unsigned int SOURCE = 0xFFFFFFFE


def adp_packed(const double[:, :, ::1] ure, const double[:, :, ::1] uim,
               float[::1] out, int threads=1):
    """Fill ``out`` with packed upper-triangular ADP dissimilarities.

    ``ure``/``uim`` hold unit-normalised antenna slices, shape (L, S, M) with
    S = B*T slices of M antennas each.
    """
    cdef Py_ssize_t L = ure.shape[0]
    cdef Py_ssize_t S = ure.shape[1]
    cdef Py_ssize_t M = ure.shape[2]
    cdef Py_ssize_t i, j, s, m, base
    cdef double acc, re, im, val
    if out.shape[0] != L * (L - 1) // 2:
        raise ValueError("output length does not match L")
    if threads < 1:
        threads = 1
    for i in prange(L, nogil=True, schedule="dynamic", num_threads=threads):
        base = i * (2 * L - i - 1) // 2 - i - 1
        for j in range(i + 1, L):
            acc = 0.0
            for s in range(S):
                re = 0.0
                im = 0.0
                for m in range(M):
                    re = re + (ure[i, s, m] * ure[j, s, m] + uim[i, s, m] * uim[j, s, m])
                    im = im + (ure[i, s, m] * uim[j, s, m] - uim[i, s, m] * ure[j, s, m])
                acc = acc + (re * re + im * im)
            val = <double>S - acc
            if val < 0.0:
                val = 0.0
            out[base + j] = <float>val


cdef inline bint _less(double da, unsigned int a, double db, unsigned int b) noexcept nogil:
    return da < db or (da == db and a < b)


cdef void _sssp(Py_ssize_t src, Py_ssize_t L, const long long[::1] indptr,
                const long long[::1] indices, const double[::1] weights,
                double[:, ::1] dist, unsigned int[:, ::1] pred,
                double* hkey, unsigned int* hval, char* done) noexcept nogil:
    cdef Py_ssize_t n = 0, pos, child, parent, e, v
    cdef unsigned int u
    cdef double du, nd, tk
    cdef unsigned int tv
    for v in range(L):
        dist[src, v] = INFINITY
        pred[src, v] = UNREACHED
        done[v] = 0
    dist[src, src] = 0.0
    pred[src, src] = SOURCE
    hkey[0] = 0.0
    hval[0] = <unsigned int>src
    n = 1
    while n > 0:
        du = hkey[0]
        u = hval[0]
        # pop root
        n -= 1
        if n > 0:
            tk = hkey[n]
            tv = hval[n]
            pos = 0
            while True:
                child = 2 * pos + 1
                if child >= n:
                    break
                if child + 1 < n and _less(hkey[child + 1], hval[child + 1], hkey[child], hval[child]):
                    child += 1
                if _less(hkey[child], hval[child], tk, tv):
                    hkey[pos] = hkey[child]
                    hval[pos] = hval[child]
                    pos = child
                else:
                    break
            hkey[pos] = tk
            hval[pos] = tv
        if done[u]:
            continue
        done[u] = 1
        for e in range(indptr[u], indptr[u + 1]):
            v = indices[e]
            if done[v]:
                continue
            nd = du + weights[e]
            if nd < dist[src, v]:
                dist[src, v] = nd
                pred[src, v] = u
                # push
                pos = n
                n += 1
                while pos > 0:
                    parent = (pos - 1) // 2
                    if _less(nd, <unsigned int>v, hkey[parent], hval[parent]):
                        hkey[pos] = hkey[parent]
                        hval[pos] = hval[parent]
                        pos = parent
                    else:
                        break
                hkey[pos] = nd
                hval[pos] = <unsigned int>v
            elif nd == dist[src, v] and u < pred[src, v]:
                pred[src, v] = u


def dijkstra_all(const long long[::1] indptr, const long long[::1] indices,
                 const double[::1] weights, int threads=1):
    """Per-source Dijkstra over a CSR graph.

    Returns ``(dist, pred)`` as float64 and uint32 ``(L, L)`` arrays. On equal
    tentative distances the lower predecessor index wins.
    """
    cdef Py_ssize_t L = indptr.shape[0] - 1
    cdef Py_ssize_t E = indices.shape[0]
    dist_arr = np.empty((L, L), dtype=np.float64)
    pred_arr = np.empty((L, L), dtype=np.uint32)
    cdef double[:, ::1] dist = dist_arr
    cdef unsigned int[:, ::1] pred = pred_arr
    cdef Py_ssize_t src
    cdef double* hkey
    cdef unsigned int* hval
    cdef char* done
    if threads < 1:
        threads = 1
    for src in prange(L, nogil=True, schedule="dynamic", num_threads=threads):
        hkey = <double*>malloc((E + 1) * sizeof(double))
        hval = <unsigned int*>malloc((E + 1) * sizeof(unsigned int))
        done = <char*>malloc(L * sizeof(char))
        _sssp(src, L, indptr, indices, weights, dist, pred, hkey, hval, done)
        free(hkey)
        free(hval)
        free(done)
    return dist_arr, pred_arr
