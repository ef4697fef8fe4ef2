"""Batch-wise training of a chart model on geodesic targets."""

from __future__ import annotations

import csv
import json
import time as _time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import losses
from .dataset import Dataset
from .dissimilarity import DissimilarityMatrix, DistanceModel
from .geodesic import GeodesicRealization, path_moments_batch, reconstruct_paths
from .model import ChartModel, backward, bump, feature_batch, forward_all, parameters

LOSS_KINDS = ("siam", "geo", "geo_unc")


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    loss_kind: str = "geo_unc"
    use_acc: bool = True
    beta: float = 0.2
    mu_acc: float = 0.0
    sigma_acc: float = 1.0
    acc_weight: float = 1.0
    batch_pairs: int = 2000
    steps: int = 3000
    learning_rate: float = 1e-3
    lr_decay: float = 0.5
    lr_decay_every: Optional[int] = None  # default: a third of the steps
    subsample_initial: str = "full"
    target_segment_length: float = 2.0
    warmup_fraction: float = 0.1
    decay_steps: Optional[int] = None  # default: steps
    seed: int = 0
    R: Optional[int] = None  # realizations to cycle through; default all
    precision: str = "float64"

    def __post_init__(self):
        if self.loss_kind == "geo-unc":
            self.loss_kind = "geo_unc"
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")
        if not self.beta > 0:
            raise ValueError("beta must be > 0")
        if not self.sigma_acc > 0:
            raise ValueError("sigma_acc must be > 0")
        if self.batch_pairs < 1:
            raise ValueError("batch_pairs must be >= 1")
        if self.steps < 0 or self.learning_rate < 0:
            raise ValueError("steps and learning_rate must be >= 0")
        if self.subsample_initial not in ("full", "none"):
            raise ValueError("subsample_initial must be 'full' or 'none'")
        if not self.target_segment_length > 0:
            raise ValueError("target_segment_length must be > 0")
        if not 0 <= self.warmup_fraction <= 1:
            raise ValueError("warmup_fraction must lie in [0, 1]")
        if self.precision not in ("float64", "float32"):
            raise ValueError("precision must be float64 or float32")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown train config keys: {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    trace: np.ndarray  # (steps, 3): loss, loss_dissim, loss_acc
    final_loss: float
    diverged: bool = False
    wall_time: float = 0.0

    def write_trace(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["step", "loss", "loss_dissim", "loss_acc"])
            for n, row in enumerate(self.trace):
                w.writerow([n, *(repr(float(v)) for v in row)])


@dataclass
class TrainingArtifacts:
    """Read-only inputs shared by every step.

    ``realizations`` supply paths and (for ``siam``/``geo``) targets;
    ``geo_unc`` additionally needs the raw matrices and the distance model.
    """

    realizations: List[GeodesicRealization]
    time: Optional[DissimilarityMatrix] = None
    adp: Optional[DissimilarityMatrix] = None
    model: Optional[DistanceModel] = None


# --- sub-sampling schedule -----------------------------------------------------------


def schedule_subsample(step: int, delta, M, config: TrainConfig):
    """Per-path sub-sampling factor ``s`` at ``step``.

    During warm-up ``s = M``. Afterwards the allowed super-segment length
    ``ell`` shrinks geometrically from the whole path length ``delta`` to
    ``target_segment_length`` over ``decay_steps``;
    ``s = ceil(M / ceil(delta / ell))``, clipped to ``[1, M]``.
    """
    delta = np.asarray(delta, dtype=np.float64)
    M = np.asarray(M, dtype=np.int64)
    Mc = np.maximum(M, 1)
    total = config.decay_steps if config.decay_steps is not None else config.steps
    warm = config.warmup_fraction * total if config.subsample_initial == "full" else 0.0
    if step < warm or total <= warm:
        f = 0.0 if step < warm else 1.0
    else:
        f = min(1.0, (step - warm) / (total - warm))
    target = config.target_segment_length
    shrink = delta > target
    ell = np.where(shrink, np.power(np.where(shrink, delta, 1.0), 1.0 - f) * target**f, 1.0)
    nseg = np.where(shrink, np.ceil(delta / ell - 1e-9), 1.0)
    nseg = np.maximum(nseg, 1.0)
    s = np.ceil(Mc / nseg).astype(np.int64)
    out = np.clip(s, 1, Mc)
    return int(out) if out.ndim == 0 else out


# --- batches ---------------------------------------------------------------------------


@dataclass
class Batch:
    I: np.ndarray
    J: np.ndarray
    Q: np.ndarray
    M: np.ndarray
    target: np.ndarray  # Delta_geo, or mu_geo for geo_unc
    sigma: Optional[np.ndarray]
    realization: int


def unpack_index(k, L: int):
    """Inverse of the packed pair index: ``k -> (i, j)`` with ``i < j``."""
    k = np.asarray(k, dtype=np.int64)
    i = np.floor((2 * L - 1 - np.sqrt((2.0 * L - 1) ** 2 - 8.0 * k)) / 2).astype(np.int64)
    start = lambda r: r * (2 * L - r - 1) // 2  # noqa: E731
    i = np.where(start(i) > k, i - 1, i)  # float rounding guard
    i = np.where(start(i + 1) <= k, i + 1, i)
    return i, k - start(i) + i + 1


def sample_pairs(L: int, batch_pairs: int, step: int, seed: int):
    """Distinct unordered pairs, randomly oriented; depends only on ``(seed, step)``."""
    rng = np.random.default_rng([int(seed), int(step)])
    n = L * (L - 1) // 2
    k = rng.choice(n, size=min(batch_pairs, n), replace=False)
    i, j = unpack_index(k, L)
    flip = rng.random(len(k)) < 0.5
    return np.where(flip, j, i), np.where(flip, i, j)


def sample_batch(realizations: Sequence[GeodesicRealization], batch_pairs: int, step: int,
                 seed: int, moments: Optional[tuple] = None) -> Batch:
    """Random short paths for one step, cycling through realizations.

    With ``moments = (time, adp, model)`` the targets are ``(mu_geo, sigma_geo)``
    of each path; otherwise the realization's shortest-path length.
    """
    if not realizations:
        raise ValueError("at least one realization is required")
    r = step % len(realizations)
    real = realizations[r]
    I, J = sample_pairs(real.L, batch_pairs, step, seed)
    Q, M = reconstruct_paths(real, I, J)
    if moments is None:
        return Batch(I, J, Q, M, real.dist[I, J].astype(np.float64), None, r)
    mu, sigma = path_moments_batch(Q, M, real, *moments)
    return Batch(I, J, Q, M, mu, sigma, r)


# --- loss composition --------------------------------------------------------------------


def batch_loss(z, batch: Batch, config: TrainConfig, step: int, timestamps=None, breaks=()):
    """``(loss, loss_dissim, loss_acc, dz)`` for one batch."""
    if config.loss_kind == "siam":
        ld, dz = losses.loss_siam(z, batch.I, batch.J, batch.target, config.beta)
    else:
        s = schedule_subsample(step, batch.target, batch.M, config)
        if config.loss_kind == "geo":
            ld, dz = losses.loss_geo(z, batch.Q, batch.M, batch.target, config.beta, s)
        else:
            ld, dz = losses.loss_geo_unc(z, batch.Q, batch.M, batch.target, batch.sigma, s)
    la = 0.0
    if config.use_acc:
        la, da = losses.loss_acc(z, timestamps, breaks, config.mu_acc, config.sigma_acc)
        dz = dz + config.acc_weight * da
    return ld + config.acc_weight * la, ld, la, dz


# --- optimizer ---------------------------------------------------------------------------


class Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def learning_rate(step: int, config: TrainConfig) -> float:
    every = config.lr_decay_every or max(1, -(-config.steps // 3))
    return config.learning_rate * config.lr_decay ** (step // every)


# --- loop ----------------------------------------------------------------------------------


def train(dataset: Dataset, artifacts: TrainingArtifacts, model: ChartModel,
          config: TrainConfig, features: Optional[np.ndarray] = None):
    """Optimise ``model`` in place; returns ``(model, TrainReport)``.

    Raises :class:`DivergenceError` on a non-finite loss.
    """
    L = len(dataset)
    if L < 3:
        raise ValueError("training needs L >= 3")
    reals = list(artifacts.realizations)
    if not reals or any(r.L != L for r in reals):
        raise ValueError("realizations must match the dataset size")
    if config.R is not None:
        reals = reals[: config.R]
    moments = None
    if config.loss_kind == "geo_unc":
        if artifacts.time is None or artifacts.adp is None or artifacts.model is None:
            raise ValueError("geo_unc needs time/adp matrices and a distance model")
        moments = (artifacts.time, artifacts.adp, artifacts.model)
    if model.mode == "free":
        X = None
        if model.coords.shape[0] != L:
            raise ValueError("free model size does not match the dataset")
    else:
        X = feature_batch(dataset.cir) if features is None else features
    dtype = np.float32 if config.precision == "float32" else np.float64
    if model.mode == "free":
        model.coords = model.coords.astype(dtype)
    else:
        model.weights = [w.astype(dtype) for w in model.weights]
        model.biases = [b.astype(dtype) for b in model.biases]
        X = X.astype(dtype)
    bump(model)

    params = parameters(model)
    opt = Adam(params, config.learning_rate)
    trace = np.zeros((config.steps, 3))
    t0 = _time.perf_counter()
    for step in range(config.steps):
        batch = sample_batch(reals, config.batch_pairs, step, config.seed, moments)
        z = forward_all(model, X).astype(np.float64)
        loss, ld, la, dz = batch_loss(z, batch, config, step, dataset.timestamps,
                                      dataset.trajectory_breaks)
        if not np.isfinite(loss) or not np.all(np.isfinite(dz)):
            raise DivergenceError(f"non-finite loss at step {step} "
                                  f"(dissim={ld!r}, acc={la!r})")
        trace[step] = loss, ld, la
        grads = backward(model, dz)
        opt.step(params, grads, learning_rate(step, config))
        bump(model)
    wall = _time.perf_counter() - t0
    final = float(trace[-1, 0]) if config.steps else float("nan")
    return model, TrainReport(trace, final, False, wall)


def final_loss(model: ChartModel, dataset: Dataset, artifacts: TrainingArtifacts,
               config: TrainConfig, features=None, step: Optional[int] = None) -> float:
    """Loss of the trained model on the batch of ``step`` (default: last step)."""
    step = config.steps - 1 if step is None else step
    moments = None
    if config.loss_kind == "geo_unc":
        moments = (artifacts.time, artifacts.adp, artifacts.model)
    reals = artifacts.realizations[: config.R] if config.R else artifacts.realizations
    batch = sample_batch(reals, config.batch_pairs, max(step, 0), config.seed, moments)
    X = None if model.mode == "free" else (feature_batch(dataset.cir) if features is None else features)
    z = forward_all(model, X).astype(np.float64)
    return batch_loss(z, batch, config, max(step, 0), dataset.timestamps,
                      dataset.trajectory_breaks)[0]


def save_train_config(config: TrainConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def load_train_config(path) -> TrainConfig:
    with open(Path(path), encoding="utf-8") as f:
        return TrainConfig.from_dict(json.load(f))
