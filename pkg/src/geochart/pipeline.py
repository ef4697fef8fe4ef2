"""Pipeline stages shared by the command line and the scaled experiments.

A :class:`PipelineConfig` fixes everything from the scene to the renderer.
:func:`prepare` builds the seed-independent artifacts once (dataset,
dissimilarities, calibrated distance model, deterministic geodesics) and
:func:`run_seed` trains and evaluates one chart on top of them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import dissimilarity as dis
from . import geodesic as geo
from .dataset import Dataset, restrict_to_array
from .evaluation import EvalReport, evaluate
from .model import (ChartModel, classical_mds, feature_batch, forward_all, init_free,
                    init_parametric)
from .synth import SceneConfig, synth_scene
from .training import TrainConfig, TrainingArtifacts, TrainReport, train


@dataclass
class PipelineConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    distance: dis.DistanceModel = field(
        default_factory=lambda: dis.DistanceModel(speed_spread=0.05, adp_spread=0.05, sigma_min=0.2))
    calibrate: bool = True
    calibrate_quantile: float = 0.05
    k: int = 20
    R: int = 4
    array: Optional[int] = None  # 1-based; None keeps every array
    mode: str = "free"
    hidden: Sequence[int] = (128, 128, 128, 128)
    activation: str = "softplus"
    init: str = "mds"  # free mode: "mds" or "random"
    init_noise: float = 0.01
    train: TrainConfig = field(default_factory=TrainConfig)
    eval_K: Optional[int] = None
    render_radius: float = 2.0
    colorize: bool = True
    max_points: int = 5000

    def __post_init__(self):
        if self.mode not in ("free", "parametric"):
            raise ValueError(f"unknown model mode {self.mode!r}")
        if self.init not in ("mds", "random"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.k < 1 or self.R < 1:
            raise ValueError("k and R must be >= 1")
        if not 0 < self.calibrate_quantile <= 1:
            raise ValueError("calibrate_quantile must lie in (0, 1]")
        if self.array is not None and self.array < 1:
            raise ValueError("array index is 1-based")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        d = dict(d)
        if "scene" in d:
            d["scene"] = SceneConfig.from_dict(d["scene"])
        if "distance" in d:
            d["distance"] = dis.DistanceModel(**d["distance"])
        if "train" in d:
            d["train"] = TrainConfig.from_dict(d["train"])
        if "hidden" in d:
            d["hidden"] = tuple(int(h) for h in d["hidden"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["scene"] = self.scene.to_dict()
        d["distance"] = self.distance.to_dict()
        d["train"] = self.train.to_dict()
        d["hidden"] = list(self.hidden)
        return d


def load_config(path) -> PipelineConfig:
    with open(path, encoding="utf-8") as f:
        return PipelineConfig.from_dict(json.load(f))


def save_config(config: PipelineConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


# --- stages -------------------------------------------------------------------------


def make_dataset(config: PipelineConfig) -> Dataset:
    ds = synth_scene(config.scene)
    return restrict_to_array(ds, config.array) if config.array is not None else ds


def dissimilarities(dataset: Dataset, config: PipelineConfig, threads: Optional[int] = None):
    """``(time, adp, model, fused, choice)`` with the ADP model calibrated if configured."""
    time = dis.compute_matrix(dataset, "time", threads)
    adp = dis.compute_matrix(dataset, "adp", threads)
    model = config.distance
    if config.calibrate:
        model = dis.calibrate_adp_model(dataset, time, adp, model, config.calibrate_quantile)
    fused, choice = dis.fuse_with_choice(time, adp, model)
    return time, adp, model, fused, choice


def deterministic_geodesic(fused, choice, k: int, threads: Optional[int] = None):
    graph = geo.knn_graph(fused, k, choice)
    ncomp = graph.components()[0]
    graph = geo.ensure_connected(graph, fused, choice)
    return geo.all_pairs_shortest(graph, threads), ncomp


@dataclass
class Prepared:
    """Seed-independent artifacts of one pipeline configuration."""

    dataset: Dataset
    time: dis.DissimilarityMatrix
    adp: dis.DissimilarityMatrix
    model: dis.DistanceModel
    fused: dis.DissimilarityMatrix
    geodesic: geo.GeodesicRealization
    components: int
    features: Optional[np.ndarray] = None


def prepare(config: PipelineConfig, threads: Optional[int] = None) -> Prepared:
    ds = make_dataset(config)
    if len(ds) > config.max_points:
        raise ValueError(f"L={len(ds)} exceeds max_points={config.max_points}")
    time, adp, model, fused, choice = dissimilarities(ds, config, threads)
    real, ncomp = deterministic_geodesic(fused, choice, config.k, threads)
    feats = feature_batch(ds.cir) if config.mode == "parametric" else None
    return Prepared(ds, time, adp, model, fused, real, ncomp, feats)


def realizations_for(prep: Prepared, config: PipelineConfig, seed: int,
                     threads: Optional[int] = None) -> List[geo.GeodesicRealization]:
    """Training paths: the deterministic geodesic, or ``R`` random graphs for ``geo_unc``."""
    if config.train.loss_kind != "geo_unc":
        return [prep.geodesic]
    return geo.sample_realizations(prep.time, prep.adp, prep.model, config.k, config.R, seed,
                                   threads)


def initial_model(prep: Prepared, config: PipelineConfig, seed: int) -> ChartModel:
    L = len(prep.dataset)
    if config.mode == "parametric":
        return init_parametric(prep.features.shape[1], config.hidden, config.activation, seed)
    if config.init == "random":
        return init_free(L, seed=seed)
    z0 = classical_mds(prep.geodesic.dist)
    noise = config.init_noise * np.random.default_rng(seed).standard_normal(z0.shape)
    return init_free(L, seed=seed, coords=z0 + noise)


@dataclass
class RunResult:
    seed: int
    model: ChartModel
    train: TrainReport
    report: EvalReport
    chart: np.ndarray
    aligned: Optional[np.ndarray]
    errors: Optional[np.ndarray]


def chart_of(model: ChartModel, prep: Prepared) -> np.ndarray:
    return forward_all(model, prep.features).astype(np.float64)


def run_seed(prep: Prepared, config: PipelineConfig, seed: int, threads: Optional[int] = None,
             realizations: Optional[List[geo.GeodesicRealization]] = None) -> RunResult:
    """Train and evaluate one chart; ``seed`` drives init, batches and realizations."""
    tcfg = replace(config.train, seed=seed)
    reals = realizations if realizations is not None else realizations_for(prep, config, seed, threads)
    arts = TrainingArtifacts(reals, prep.time, prep.adp, prep.model)
    model, rep = train(prep.dataset, arts, initial_model(prep, config, seed), tcfg, prep.features)
    z = chart_of(model, prep)
    report, aligned, errors = evaluate(z, prep.dataset.positions, config.eval_K)
    return RunResult(seed, model, rep, report, z, aligned, errors)


# --- ablation harness ---------------------------------------------------------------------


METRICS = ("mae", "drms", "cep", "r95", "ct", "tw", "ks")


def robust_median(results: Sequence[RunResult]) -> Dict[str, object]:
    """Median metrics after discarding runs whose final loss exceeds twice the median.

    The rule is applied to ``|final loss|`` because the acceleration term can
    make the loss negative.
    """
    fl = np.array([abs(r.train.final_loss) for r in results])
    ref = float(np.median(fl))
    keep = [r for r, f in zip(results, fl) if not f > 2.0 * ref]
    for r in results:
        r.train.diverged = r not in keep
    out: Dict[str, object] = {"runs": len(results), "kept": len(keep),
                              "discarded_seeds": [r.seed for r in results if r not in keep]}
    for m in METRICS:
        vals = [getattr(r.report, m) for r in keep if getattr(r.report, m) is not None]
        out[m] = float(np.median(vals)) if vals else None
    return out


def ablate(config: PipelineConfig, losses: Sequence[str], seeds: Sequence[int],
           use_acc: Sequence[bool] = (True,), threads: Optional[int] = None,
           prep: Optional[Prepared] = None, log=None):
    """Median metrics per ``(loss, acc)`` cell over ``seeds``.

    Returns ``(grid, runs)`` where ``grid`` maps ``"loss+acc"``/``"loss"`` to
    :func:`robust_median` output and ``runs`` holds the per-seed reports.
    """
    prep = prepare(config, threads) if prep is None else prep
    grid, runs = {}, {}
    for kind in losses:
        for acc in use_acc:
            cfg = replace(config, train=replace(config.train, loss_kind=kind, use_acc=acc))
            name = cfg.train.loss_kind + ("+acc" if acc else "")
            res = []
            for s in seeds:
                r = run_seed(prep, cfg, s, threads)
                res.append(r)
                if log is not None:
                    log(f"{name} seed={s} mae={r.report.mae:.4f} final_loss={r.train.final_loss:.4g}")
            grid[name] = robust_median(res)
            runs[name] = [dict(seed=r.seed, final_loss=r.train.final_loss, **r.report.to_dict())
                          for r in res]
    return grid, runs


# --- scaled scenarios ------------------------------------------------------------------------


def scaled_config(array: Optional[int] = None, steps: int = 6000) -> PipelineConfig:
    """Free-embedding setup of the scaled L-shape comparisons (L=800, 4 arrays, blocker)."""
    train_cfg = TrainConfig(steps=steps, learning_rate=0.1, warmup_fraction=0.3,
                            target_segment_length=6.0, acc_weight=5.0, sigma_acc=0.5)
    return PipelineConfig(scene=SceneConfig(num_points=800, seed=1), k=40, array=array,
                          train=train_cfg)
