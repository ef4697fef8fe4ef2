"""Forward charting function: a small feedforward network or a free embedding.

Both modes expose the same three calls: :func:`forward_all` (caching what the
backward pass needs), :func:`backward` (exact reverse-mode gradients) and
:func:`parameters`, whose arrays the optimizer updates in place.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np


class StaleCacheError(RuntimeError):
    pass


# --- features ------------------------------------------------------------------


def feature_map(H: np.ndarray) -> np.ndarray:
    """Interleaved (re, im) features of one CIR tensor, unit mean power per complex entry."""
    return feature_batch(np.asarray(H)[None])[0]


def feature_batch(cir: np.ndarray) -> np.ndarray:
    """Features for a stack of CIR tensors ``(L, B, M_row, M_col, T)`` -> ``(L, 2*B*M_row*M_col*T)``."""
    H = np.asarray(cir)
    if not np.all(np.isfinite(H)):
        raise ValueError("non-finite CIR values")
    L = H.shape[0]
    h = H.reshape(L, -1).astype(np.complex128)
    power = np.mean(h.real**2 + h.imag**2, axis=1)
    scale = np.where(power > 0, 1.0 / np.sqrt(np.where(power > 0, power, 1.0)), 0.0)
    h = h * scale[:, None]
    out = np.empty((L, 2 * h.shape[1]))
    out[:, 0::2] = h.real
    out[:, 1::2] = h.imag
    return out


# --- activations -----------------------------------------------------------------


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


ACTIVATIONS = {
    "softplus": (_softplus, _sigmoid),
    "relu": (lambda x: np.maximum(x, 0.0), lambda x: (x > 0).astype(x.dtype)),
    "tanh": (np.tanh, lambda x: 1.0 - np.tanh(x) ** 2),
    "identity": (lambda x: x, np.ones_like),
}


# --- model -----------------------------------------------------------------------


@dataclass
class ChartModel:
    mode: str
    latent_dim: int = 2
    layer_sizes: List[int] = field(default_factory=list)
    activation: str = "softplus"
    weights: List[np.ndarray] = field(default_factory=list)
    biases: List[np.ndarray] = field(default_factory=list)
    coords: Optional[np.ndarray] = None
    seed: int = 0
    version: int = 0
    _cache: Optional[dict] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.mode not in ("parametric", "free"):
            raise ValueError(f"unknown model mode {self.mode!r}")
        if self.mode == "parametric":
            if self.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {self.activation!r}")
            sizes = self.layer_sizes
            if len(self.weights) != len(sizes) - 1 or sizes[-1] != self.latent_dim:
                raise ValueError("layer sizes do not chain")
            for n, (W, b) in enumerate(zip(self.weights, self.biases)):
                if W.shape != (sizes[n], sizes[n + 1]) or b.shape != (sizes[n + 1],):
                    raise ValueError(f"layer {n} has shape {W.shape}/{b.shape}, expected "
                                     f"({sizes[n]}, {sizes[n + 1]})")
        elif self.coords is None or self.coords.ndim != 2 or self.coords.shape[1] != self.latent_dim:
            raise ValueError("free model needs an (L, latent_dim) coordinate table")

    @property
    def num_parameters(self) -> int:
        return sum(p.size for p in parameters(self))


def init_parametric(input_dim: int, hidden: Sequence[int] = (128, 128, 128, 128),
                    activation: str = "softplus", seed: int = 0, latent_dim: int = 2) -> ChartModel:
    """Fan-in scaled uniform initialisation, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    rng = np.random.default_rng(seed)
    sizes = [int(input_dim), *map(int, hidden), latent_dim]
    Ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        Ws.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        bs.append(rng.uniform(-bound, bound, size=fan_out))
    return ChartModel("parametric", latent_dim, sizes, activation, Ws, bs, seed=seed)


def init_free(L: int, seed: int = 0, scale: float = 1.0, coords: Optional[np.ndarray] = None,
              latent_dim: int = 2) -> ChartModel:
    if coords is None:
        coords = scale * np.random.default_rng(seed).standard_normal((L, latent_dim))
    return ChartModel("free", latent_dim, coords=np.array(coords, dtype=np.float64), seed=seed)


def classical_mds(dist: np.ndarray, latent_dim: int = 2) -> np.ndarray:
    """Classical multidimensional scaling of a full distance matrix."""
    D = np.asarray(dist, dtype=np.float64)
    n = D.shape[0]
    J = np.eye(n) - 1.0 / n
    B = -0.5 * J @ (D * D) @ J
    w, V = np.linalg.eigh(0.5 * (B + B.T))
    w, V = w[::-1][:latent_dim], V[:, ::-1][:, :latent_dim]
    # fix the eigenvector sign so the result is reproducible
    V = V * np.where(V[np.argmax(np.abs(V), axis=0), np.arange(latent_dim)] < 0, -1.0, 1.0)
    return V * np.sqrt(np.maximum(w, 0.0))


def parameters(model: ChartModel) -> List[np.ndarray]:
    if model.mode == "free":
        return [model.coords]
    return [p for pair in zip(model.weights, model.biases) for p in pair]


def forward(model: ChartModel, x) -> np.ndarray:
    """Chart point of one datapoint: features (parametric) or an index (free)."""
    if model.mode == "free":
        return model.coords[int(x)].copy()
    return _mlp(model, np.asarray(x, dtype=np.float64)[None], cache=False)[0]


def forward_all(model: ChartModel, X: Optional[np.ndarray] = None) -> np.ndarray:
    """Chart points for a feature batch (parametric) or the whole table (free).

    Caches what :func:`backward` needs, tagged with the parameter version.
    """
    if model.mode == "free":
        z = model.coords.copy() if X is None else model.coords[np.asarray(X, dtype=np.int64)]
        model._cache = {"version": model.version, "index": None if X is None else np.asarray(X),
                        "n": z.shape[0]}
        return z
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.layer_sizes[0]:
        if X.size == 0:
            return np.zeros((0, model.latent_dim))
        raise ValueError(f"features must have shape (n, {model.layer_sizes[0]})")
    return _mlp(model, X, cache=True)


def _mlp(model: ChartModel, X: np.ndarray, cache: bool) -> np.ndarray:
    act, _ = ACTIVATIONS[model.activation]
    acts, pres = [X], []
    a = X
    last = len(model.weights) - 1
    for n, (W, b) in enumerate(zip(model.weights, model.biases)):
        pre = a @ W + b
        pres.append(pre)
        a = pre if n == last else act(pre)
        acts.append(a)
    if cache:
        model._cache = {"version": model.version, "acts": acts, "pres": pres, "n": X.shape[0]}
    return a


def backward(model: ChartModel, dz: np.ndarray) -> List[np.ndarray]:
    """Gradients of the loss w.r.t. :func:`parameters`, given ``dLoss/dz``."""
    c = model._cache
    dz = np.asarray(dz, dtype=np.float64)
    if c is None or c["version"] != model.version or c["n"] != dz.shape[0]:
        raise StaleCacheError("backward needs a forward_all with the current parameters")
    if model.mode == "free":
        if c["index"] is None:
            return [dz.copy()]
        g = np.zeros_like(model.coords)
        np.add.at(g, c["index"], dz)
        return [g]
    _, dact = ACTIVATIONS[model.activation]
    acts, pres = c["acts"], c["pres"]
    grads = []
    delta = dz
    for n in range(len(model.weights) - 1, -1, -1):
        if n != len(model.weights) - 1:
            delta = delta * dact(pres[n])
        grads.append(delta.sum(axis=0))
        grads.append(acts[n].T @ delta)
        if n > 0:
            delta = delta @ model.weights[n].T
    grads.reverse()  # now [W0, b0, W1, b1, ...]
    return grads


def bump(model: ChartModel) -> None:
    """Mark parameters as changed (invalidates cached activations)."""
    model.version += 1


# --- gradient check ----------------------------------------------------------------


def grad_check(model: ChartModel, loss: Callable, X=None, tolerance: float = 1e-5,
               max_params: int = 200, step: float = 1e-5, seed: int = 0) -> dict:
    """Compare :func:`backward` against central differences.

    ``loss(z) -> (value, dz)``. The relative error per parameter is
    ``|g_a - g_n| / max(|g_a|, |g_n|, 1e-7 * (1 + max|g_a|))``; differences
    below the rounding noise of the central difference,
    ``64 * eps * (1 + |loss|) / step``, count as zero.
    """
    z = forward_all(model, X)
    f0, dz = loss(z)
    noise = 64 * np.finfo(np.float64).eps * (1.0 + abs(f0)) / step
    grads = backward(model, dz)
    params = parameters(model)
    sizes = [p.size for p in params]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    pick = rng.choice(total, size=min(max_params, total), replace=False)
    offsets = np.cumsum([0] + sizes)
    gmax = max(float(np.max(np.abs(g))) if g.size else 0.0 for g in grads)
    floor = 1e-7 * (1.0 + gmax)
    worst = 0.0
    for flat in np.sort(pick):
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        idx = np.unravel_index(flat - offsets[k], params[k].shape)
        orig = params[k][idx]
        params[k][idx] = orig + step
        fp = loss(forward_all(model, X))[0]
        params[k][idx] = orig - step
        fm = loss(forward_all(model, X))[0]
        params[k][idx] = orig
        num = (fp - fm) / (2 * step)
        ana = grads[k][idx]
        diff = abs(ana - num)
        err = 0.0 if diff <= noise else diff / max(abs(ana), abs(num), floor)
        worst = max(worst, err)
    forward_all(model, X)
    return {"max_rel_error": worst, "checked": int(len(pick)), "passed": worst < tolerance}


# --- checkpoint files ---------------------------------------------------------------


def save_model(model: ChartModel, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {"mode": model.mode, "latent_dim": model.latent_dim, "seed": model.seed}
    if model.mode == "parametric":
        meta.update(layer_sizes=model.layer_sizes, activation=model.activation)
    else:
        meta.update(L=int(model.coords.shape[0]))
    with open(directory / "model.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    flat = np.concatenate([p.reshape(-1) for p in parameters(model)])
    flat.astype("<f8").tofile(directory / "model.bin")


def load_model(directory) -> ChartModel:
    directory = Path(directory)
    with open(directory / "model.json", encoding="utf-8") as f:
        meta = json.load(f)
    flat = np.fromfile(directory / "model.bin", dtype="<f8").astype(np.float64)
    if meta["mode"] == "free":
        L, d = int(meta["L"]), int(meta["latent_dim"])
        if flat.size != L * d:
            raise ValueError("model.bin size mismatch")
        return init_free(L, coords=flat.reshape(L, d), seed=meta["seed"], latent_dim=d)
    sizes = meta["layer_sizes"]
    Ws, bs, o = [], [], 0
    for a, b in zip(sizes[:-1], sizes[1:]):
        Ws.append(flat[o : o + a * b].reshape(a, b))
        o += a * b
        bs.append(flat[o : o + b].copy())
        o += b
    if o != flat.size:
        raise ValueError("model.bin size mismatch")
    return ChartModel("parametric", int(meta["latent_dim"]), sizes, meta["activation"], Ws, bs,
                      seed=meta["seed"])
