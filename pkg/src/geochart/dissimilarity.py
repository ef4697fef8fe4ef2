"""Pairwise CSI/timestamp dissimilarities and the Gaussian distance model.

Matrices are stored packed: the strict upper triangle in row-major order,
``(0,1), (0,2), ..., (0,L-1), (1,2), ...`` (the same order as
:func:`scipy.spatial.distance.squareform`).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import _backend
from .dataset import Dataset

METRICS = ("time", "adp", "fuse")


class CalibrationError(ValueError):
    pass


def pair_index(i, j, L: int):
    """Packed index of pair ``(i, j)``, ``i != j`` (order of the pair is irrelevant)."""
    i, j = np.minimum(i, j), np.maximum(i, j)
    return i * (2 * L - i - 1) // 2 + (j - i - 1)


@dataclass
class DissimilarityMatrix:
    L: int
    metric_tag: str
    values: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.metric_tag not in METRICS:
            raise ValueError(f"unknown metric tag {self.metric_tag!r}")
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.shape != (self.L * (self.L - 1) // 2,):
            raise ValueError("packed length does not match L")

    def __getitem__(self, ij):
        i, j = ij
        if i == j:
            return np.float32(0.0)
        return self.values[pair_index(i, j, self.L)]

    def full(self) -> np.ndarray:
        """Square float32 matrix with zero diagonal."""
        out = np.zeros((self.L, self.L), dtype=np.float32)
        iu = np.triu_indices(self.L, 1)
        out[iu] = self.values
        out.T[iu] = self.values
        return out


def delta_time(t_i: float, t_j: float) -> float:
    return abs(t_i - t_j)


def normalized_slices(cir: np.ndarray):
    """Unit-norm antenna vectors per (array, tap).

    ``cir`` has shape ``(L, B, M_row, M_col, T)``. Returns ``(re, im, zeros)``
    where ``re``/``im`` have shape ``(L, B*T, M_row*M_col)`` and ``zeros`` counts
    slices with zero power (those are left as zero vectors, i.e. p = 0 against
    anything).
    """
    H = np.asarray(cir)
    L, B, R, C, T = H.shape
    h = H.astype(np.complex128).transpose(0, 1, 4, 2, 3).reshape(L, B * T, R * C)
    power = np.sum(h.real * h.real + h.imag * h.imag, axis=2)
    zero = power == 0.0
    scale = np.where(zero, 0.0, 1.0 / np.sqrt(np.where(zero, 1.0, power)))
    u = h * scale[..., None]
    return np.ascontiguousarray(u.real), np.ascontiguousarray(u.imag), int(zero.sum())


def delta_adp(H_i: np.ndarray, H_j: np.ndarray, geometry=None) -> float:
    """ADP dissimilarity between two CIR tensors of shape ``(B, M_row, M_col, T)``."""
    H_i, H_j = np.asarray(H_i), np.asarray(H_j)
    if H_i.shape != H_j.shape or H_i.ndim != 4:
        raise ValueError("CIR tensors must share shape (B, M_row, M_col, T)")
    if geometry is not None and H_i.shape != geometry.cir_shape:
        raise ValueError("CIR tensor does not match geometry")
    re, im, _ = normalized_slices(np.stack([H_i, H_j]))
    out = np.empty(1, dtype=np.float32)
    _backend.adp_packed(re, im, out, 1)
    return float(out[0])


def time_matrix(timestamps: np.ndarray) -> np.ndarray:
    t = np.asarray(timestamps, dtype=np.float64)
    i, j = np.triu_indices(t.shape[0], 1)
    return np.abs(t[i] - t[j]).astype(np.float32)


def compute_matrix(dataset: Dataset, metric_tag: str, threads: Optional[int] = None,
                   backend: Optional[str] = None) -> DissimilarityMatrix:
    """All pairwise dissimilarities of one metric.

    The result does not depend on ``threads``: every entry is computed by one
    worker with a fixed summation order.
    """
    L = len(dataset)
    if metric_tag == "time":
        return DissimilarityMatrix(L, "time", time_matrix(dataset.timestamps))
    if metric_tag != "adp":
        raise ValueError("compute_matrix supports metric 'time' or 'adp'")
    threads = _backend.default_threads() if threads is None else max(1, int(threads))
    re, im, zeros = normalized_slices(dataset.cir)
    out = np.empty(L * (L - 1) // 2, dtype=np.float32)
    _backend.get(backend).adp_packed(re, im, out, threads)
    return DissimilarityMatrix(L, "adp", out, diagnostics={"zero_power_slices": zeros})


@dataclass(frozen=True)
class DistanceModel:
    """Gaussian model of the physical distance given a dissimilarity.

    time: mean ``mean_speed * D``, adp: mean ``adp_scale * D**adp_exponent``;
    standard deviation ``max(spread * mean, sigma_min)`` for both. A zero
    ``sigma_min`` together with zero spreads gives a degenerate (deterministic)
    model, which the uncertainty-aware loss rejects.
    """

    mean_speed: float = 1.0
    speed_spread: float = 0.3
    adp_scale: float = 1.0
    adp_exponent: float = 1.0
    adp_spread: float = 0.3
    sigma_min: float = 0.05

    def __post_init__(self):
        if not (self.mean_speed > 0 and self.adp_scale > 0 and self.adp_exponent > 0
                and self.sigma_min >= 0 and self.speed_spread >= 0 and self.adp_spread >= 0):
            raise ValueError(f"invalid distance model parameters: {self}")

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def model_distance(delta, metric_tag: str, model: DistanceModel):
    """Mean and standard deviation (meters) of ``d | delta``; vectorised."""
    d = np.asarray(delta, dtype=np.float64)
    if metric_tag == "time":
        mu = model.mean_speed * d
        sigma = np.maximum(model.speed_spread * mu, model.sigma_min)
    elif metric_tag == "adp":
        mu = model.adp_scale * np.power(d, model.adp_exponent)
        sigma = np.maximum(model.adp_spread * mu, model.sigma_min)
    else:
        raise ValueError(f"no distance model for metric {metric_tag!r}")
    if np.ndim(delta) == 0:
        return float(mu), float(sigma)
    return mu, sigma


def calibrate_adp_model(dataset: Optional[Dataset], time: DissimilarityMatrix,
                        adp: DissimilarityMatrix, model: DistanceModel,
                        quantile: float = 0.1) -> DistanceModel:
    """Fit ``adp_scale``/``adp_exponent`` against time-implied distances.

    Uses pairs whose time difference lies below the ``quantile`` of all
    positive time differences; fits ``log(v * D_time) = log(a) + g log(D_adp)``
    by least squares.
    """
    if time.L != adp.L or (dataset is not None and len(dataset) != time.L):
        raise ValueError("matrices and dataset must describe the same datapoints")
    dt = time.values.astype(np.float64)
    da = adp.values.astype(np.float64)
    pos = dt > 0
    if not np.any(pos):
        raise CalibrationError("insufficient calibration pairs")
    thr = np.quantile(dt[pos], quantile)
    use = pos & (dt <= thr) & (da > 0)
    if np.count_nonzero(use) < 10:
        raise CalibrationError("insufficient calibration pairs")
    x = np.log(da[use])
    y = np.log(model.mean_speed * dt[use])
    A = np.stack([x, np.ones_like(x)], axis=1)
    (gamma, log_alpha), *_ = np.linalg.lstsq(A, y, rcond=None)
    if not gamma > 0:
        raise CalibrationError(f"calibration produced non-positive exponent {gamma:.3g}")
    return replace(model, adp_scale=float(np.exp(log_alpha)), adp_exponent=float(gamma))


def fuse_with_choice(time: DissimilarityMatrix, adp: DissimilarityMatrix, model: DistanceModel):
    """Fused matrix plus a packed uint8 array: 0 where time won, 1 where adp won."""
    if time.L != adp.L:
        raise ValueError("dimension mismatch between time and adp matrices")
    mt, _ = model_distance(time.values, "time", model)
    ma, _ = model_distance(adp.values, "adp", model)
    choice = (ma < mt).astype(np.uint8)
    fused = np.minimum(mt, ma).astype(np.float32)
    return DissimilarityMatrix(time.L, "fuse", fused), choice


def fuse(time: DissimilarityMatrix, adp: DissimilarityMatrix, model: DistanceModel) -> DissimilarityMatrix:
    """Per-pair minimum of the mean-mapped time and ADP distances (meters)."""
    return fuse_with_choice(time, adp, model)[0]


# --- files ---------------------------------------------------------------------


def save_matrix(matrix: DissimilarityMatrix, directory, model: Optional[DistanceModel] = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"dissim-{matrix.metric_tag}.bin"
    with open(path, "wb") as f:
        f.write(np.array([matrix.L], dtype="<u8").tobytes())
        f.write(matrix.values.astype("<f4", copy=False).tobytes())
    meta = {"metric_tag": matrix.metric_tag, "L": matrix.L,
            "model": model.to_dict() if model is not None else None}
    meta.update({k: v for k, v in matrix.diagnostics.items()})
    with open(directory / f"dissim-{matrix.metric_tag}.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def load_matrix(directory, metric_tag: str) -> DissimilarityMatrix:
    path = Path(directory) / f"dissim-{metric_tag}.bin"
    raw = path.read_bytes()
    if len(raw) < 8:
        raise ValueError(f"{path.name}: truncated header")
    L = int(np.frombuffer(raw[:8], dtype="<u8")[0])
    n = L * (L - 1) // 2
    if len(raw) != 8 + 4 * n:
        raise ValueError(f"{path.name}: payload size mismatch")
    values = np.frombuffer(raw[8:], dtype="<f4").astype(np.float32)
    return DissimilarityMatrix(L, metric_tag, values)


def save_model(model: DistanceModel, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(model.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def load_model(path) -> DistanceModel:
    with open(path, encoding="utf-8") as f:
        return DistanceModel(**json.load(f))
