"""Affine alignment of charts to ground truth and chart quality metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial.distance import pdist, squareform


class DegenerateChartError(ValueError):
    pass


@dataclass(frozen=True)
class AffineTransform:
    A: np.ndarray
    b: np.ndarray

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) @ self.A.T + self.b


def optimal_affine(z, x) -> AffineTransform:
    """Least-squares ``A, b`` minimising ``sum ||A z + b - x||**2``."""
    z = np.asarray(z, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if z.shape != x.shape or z.ndim != 2:
        raise ValueError("z and x must have the same (L, d) shape")
    if z.shape[0] < 3:
        raise ValueError("optimal_affine needs L >= 3")
    Z = np.hstack([z, np.ones((z.shape[0], 1))])
    if np.linalg.matrix_rank(Z) < Z.shape[1]:
        raise DegenerateChartError("degenerate chart")
    coef, *_ = np.linalg.lstsq(Z, x, rcond=None)
    return AffineTransform(coef[:-1].T.copy(), coef[-1].copy())


def position_errors(z, x, transform: AffineTransform) -> np.ndarray:
    return np.linalg.norm(np.asarray(x, dtype=np.float64) - transform(z), axis=1)


def error_stats(z, x, transform: AffineTransform):
    """``(mae, drms, cep, r95)`` of the aligned position errors."""
    e = position_errors(z, x, transform)
    return (float(np.mean(e)), float(np.sqrt(np.mean(e * e))),
            float(np.percentile(e, 50)), float(np.percentile(e, 95)))


def default_k(L: int) -> int:
    return max(1, math.ceil(0.05 * L))


def _ranks(D: np.ndarray) -> np.ndarray:
    """``R[i, j]``: rank of ``j`` among the neighbours of ``i`` (nearest is 1, self is 0)."""
    L = D.shape[0]
    D = D.copy()
    np.fill_diagonal(D, -np.inf)
    order = np.argsort(D, axis=1, kind="stable")
    R = np.empty((L, L), dtype=np.int64)
    R[np.arange(L)[:, None], order] = np.arange(L)[None, :]
    return R


def _penalty(R_ref: np.ndarray, R_emb: np.ndarray, K: int) -> float:
    """Sum of ``R_ref - K`` over points in the K-NN of ``R_emb`` but not of ``R_ref``."""
    intruders = (R_emb >= 1) & (R_emb <= K) & (R_ref > K)
    return float(np.sum((R_ref - K)[intruders]))


def continuity_trustworthiness(z, x, K: Optional[int] = None):
    """Rank-based ``(ct, tw)`` of chart ``z`` against reference ``x``."""
    z = np.asarray(z, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    L = z.shape[0]
    K = default_k(L) if K is None else int(K)
    if not 1 <= K < L / 2:
        raise ValueError(f"K must satisfy 1 <= K < L/2 (K={K}, L={L})")
    Rz = _ranks(squareform(pdist(z)))
    Rx = _ranks(squareform(pdist(x)))
    norm = 2.0 / (L * K * (2 * L - 3 * K - 1))
    tw = 1.0 - norm * _penalty(Rx, Rz, K)
    ct = 1.0 - norm * _penalty(Rz, Rx, K)
    return ct, tw


def kruskal_stress(z, x) -> float:
    """Scale-optimal normalised stress between chart and reference distances."""
    dz = pdist(np.asarray(z, dtype=np.float64))
    dx = pdist(np.asarray(x, dtype=np.float64))
    den = float(np.sum(dx * dx))
    if den == 0.0:
        raise ValueError("all reference points coincide")
    zz = float(np.sum(dz * dz))
    beta = float(np.sum(dx * dz)) / zz if zz > 0 else 0.0
    return float(np.sqrt(np.sum((beta * dz - dx) ** 2) / den))


@dataclass
class EvalReport:
    mae: Optional[float]
    drms: Optional[float]
    cep: Optional[float]
    r95: Optional[float]
    ct: float
    tw: float
    ks: float
    K: int
    L: int

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(z, x=None, K: Optional[int] = None):
    """Full report plus the aligned chart (``None`` without ground truth).

    Without ``x`` the localization metrics are unavailable and CT/TW/KS
    compare the chart with itself.
    """
    z = np.asarray(z, dtype=np.float64)
    L = z.shape[0]
    K = default_k(L) if K is None else int(K)
    if x is None:
        ct, tw = continuity_trustworthiness(z, z, K)
        return EvalReport(None, None, None, None, ct, tw, kruskal_stress(z, z), K, L), None, None
    x = np.asarray(x, dtype=np.float64)
    T = optimal_affine(z, x)
    mae, drms, cep, r95 = error_stats(z, x, T)
    aligned = T(z)
    ct, tw = continuity_trustworthiness(aligned, x, K)
    report = EvalReport(mae, drms, cep, r95, ct, tw, kruskal_stress(aligned, x), K, L)
    return report, aligned, np.linalg.norm(x - aligned, axis=1)


def save_report(report: EvalReport, directory, errors=None, transform=None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    d = report.to_dict()
    if transform is not None:
        d["affine"] = {"A": transform.A.tolist(), "b": transform.b.tolist()}
    with open(directory / "eval.json", "w", encoding="utf-8") as f:
        json.dump(d, f, indent=2, sort_keys=True)
        f.write("\n")
    if errors is not None:
        with open(directory / "errors.csv", "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["l", "error"])
            for l, e in enumerate(errors):
                w.writerow([l, repr(float(e))])
