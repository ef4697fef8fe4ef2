"""Loss terms on chart points ``z`` (shape ``(L, 2)``).

Every function returns ``(value, dz)`` with ``dz`` the exact gradient w.r.t.
``z``. The gradient of a Euclidean norm at coincident points is taken as 0.
"""

from __future__ import annotations

import numpy as np

from .geodesic import subsample_path, subsample_positions


def _scatter(L, idx, vec):
    """Sum rows of ``vec`` into an ``(L, d)`` array at positions ``idx``."""
    out = np.empty((L, vec.shape[1]))
    for c in range(vec.shape[1]):
        out[:, c] = np.bincount(idx, weights=vec[:, c], minlength=L)
    return out


def _unit(diff):
    n = np.sqrt(np.sum(diff * diff, axis=1))
    u = np.divide(diff, n[:, None], out=np.zeros_like(diff), where=n[:, None] > 0)
    return n, u


def loss_siam(z, I, J, target, beta: float):
    """Sum of ``(|z_i - z_j| - D)**2 / (D + beta)`` over pairs."""
    I = np.asarray(I, dtype=np.int64)
    J = np.asarray(J, dtype=np.int64)
    target = np.asarray(target, dtype=np.float64)
    n, u = _unit(z[I] - z[J])
    r = n - target
    w = 1.0 / (target + beta)
    value = float(np.sum(w * r * r))
    g = (2.0 * w * r)[:, None] * u
    dz = _scatter(len(z), np.concatenate([I, J]), np.concatenate([g, -g]))
    return value, dz


class _Segments:
    """Super-hop segments of a batch of (sub-sampled) paths."""

    def __init__(self, Q, M, s):
        Q = np.asarray(Q, dtype=np.int64)
        M = np.asarray(M, dtype=np.int64)
        s = np.clip(np.broadcast_to(np.asarray(s, dtype=np.int64), M.shape), 1, np.maximum(M, 1))
        P = subsample_positions(M, s)
        rows = np.arange(len(M))[:, None]
        pts = Q[rows, P]
        nseg = -(-M // s)
        valid = np.arange(1, P.shape[1])[None, :] <= nseg[:, None]
        self.a = pts[:, :-1][valid]
        self.b = pts[:, 1:][valid]
        self.row = np.broadcast_to(rows, valid.shape)[valid]
        self.n = len(M)

    def lengths(self, z):
        d, u = _unit(z[self.a] - z[self.b])
        rho = np.bincount(self.row, weights=d, minlength=self.n)
        return rho, u

    def backprop(self, L, coef, u):
        g = coef[self.row][:, None] * u
        return _scatter(L, np.concatenate([self.a, self.b]), np.concatenate([g, -g]))


def rho_geo(z, q, s: int = 1):
    """Length through the chart of path ``q`` taking ``s`` hops at a time."""
    qs = np.asarray(subsample_path(q, s), dtype=np.int64)
    if qs.size < 2:
        return 0.0, np.zeros_like(z)
    d, u = _unit(z[qs[:-1]] - z[qs[1:]])
    dz = _scatter(len(z), np.concatenate([qs[:-1], qs[1:]]), np.concatenate([u, -u]))
    return float(np.sum(d)), dz


def rho_geo_batch(z, Q, M, s):
    """Vectorised :func:`rho_geo` over padded paths; returns lengths only."""
    return _Segments(Q, M, s).lengths(z)[0]


def loss_geo(z, Q, M, target, beta: float, s):
    """Sum of ``(rho - D)**2 / (D + beta)`` with ``rho`` the sub-sampled chart path length."""
    seg = _Segments(Q, M, s)
    rho, u = seg.lengths(z)
    target = np.asarray(target, dtype=np.float64)
    w = 1.0 / (target + beta)
    r = rho - target
    return float(np.sum(w * r * r)), seg.backprop(len(z), 2.0 * w * r, u)


def loss_geo_unc(z, Q, M, mu, sigma, s):
    """Sum of ``(rho - mu)**2 / (2 sigma**2)`` over paths."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("sigma_geo must be > 0")
    seg = _Segments(Q, M, s)
    rho, u = seg.lengths(z)
    r = rho - np.asarray(mu, dtype=np.float64)
    var2 = 2.0 * sigma * sigma
    return float(np.sum(r * r / var2)), seg.backprop(len(z), 2.0 * r / var2, u)


def acceleration_terms(L: int, timestamps, breaks=()):
    """Indices ``l`` with ``l-1`` and ``l-2`` in the same trajectory segment."""
    t = np.asarray(timestamps, dtype=np.float64)
    if np.any(np.diff(t) <= 0):
        raise ValueError("duplicate or non-increasing timestamps")
    start = np.zeros(L, dtype=np.int64)
    for b in np.asarray(breaks, dtype=np.int64):
        start[b:] = b
    l = np.arange(L)
    return l[l - start >= 2]


def loss_acc(z, timestamps, breaks=(), mu_acc: float = 0.0, sigma_acc: float = 1.0):
    """Mean folded-normal negative log-likelihood of chart accelerations."""
    if sigma_acc <= 0:
        raise ValueError("sigma_acc must be > 0")
    t = np.asarray(timestamps, dtype=np.float64)
    L = len(z)
    l = acceleration_terms(L, t, breaks)
    if l.size == 0:
        return 0.0, np.zeros_like(z)
    dt1 = t[l] - t[l - 1]
    dt0 = t[l - 1] - t[l - 2]
    v1 = (z[l] - z[l - 1]) / dt1[:, None]
    v0 = (z[l - 1] - z[l - 2]) / dt0[:, None]
    a_vec = (v1 - v0) / dt1[:, None]
    a, u = _unit(a_vec)
    s2 = sigma_acc * sigma_acc
    e1 = -((a - mu_acc) ** 2) / (2 * s2)
    e2 = -((a + mu_acc) ** 2) / (2 * s2)
    terms = -np.logaddexp(e1, e2)
    N = l.size
    # d term / d|a|, weighted by the two mixture responsibilities
    w1 = np.exp(e1 - np.logaddexp(e1, e2))
    dterm = ((a - mu_acc) * w1 + (a + mu_acc) * (1.0 - w1)) / s2
    ga = (dterm / N)[:, None] * u
    c_l = 1.0 / (dt1 * dt1)
    c_m2 = 1.0 / (dt1 * dt0)
    idx = np.concatenate([l, l - 1, l - 2])
    vec = np.concatenate([ga * c_l[:, None], -ga * (c_l + c_m2)[:, None], ga * c_m2[:, None]])
    return float(np.mean(terms)), _scatter(L, idx, vec)
