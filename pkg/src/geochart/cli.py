"""Command line front end: ``geochart <subcommand> [options]``.

Stages talk through files below ``--out``::

    dataset/                  synth
    dissim/                   dissim (time, adp, fused matrices + distance-model.json)
    graph/geo-fuse/, geo-rN/  graph
    train/                    train (model.json, model.bin, trace.csv, train.json)
    eval.json, errors.csv     eval
    chart.svg                 render
    ablate/grid.json          ablate, or train --seeds N

Exit codes: 0 ok, 2 bad configuration, 3 numeric divergence, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import dissimilarity as dis
from . import geodesic as geo
from . import pipeline as pl
from .dataset import Dataset, load_dataset, restrict_to_array, save_dataset
from .evaluation import evaluate, optimal_affine, save_report
from .model import feature_batch, forward_all, load_model, save_model
from .render import save_svg
from .synth import synth_scene
from .training import DivergenceError, save_train_config

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4


class ConfigError(Exception):
    pass


class StageIOError(Exception):
    pass


def _read(what: str, fn, *args):
    """Run a loader, turning any failure into :class:`StageIOError`."""
    try:
        return fn(*args)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        raise StageIOError(f"cannot read {what}: {e}") from e


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


# --- configuration ---------------------------------------------------------------------


def build_config(args) -> pl.PipelineConfig:
    """Config file (if any) with command line flags applied on top."""
    try:
        cfg = pl.load_config(args.config) if args.config else pl.PipelineConfig()
    except OSError as e:
        raise StageIOError(f"cannot read config: {e}") from e
    except (ValueError, TypeError, KeyError) as e:
        raise ConfigError(f"bad config: {e}") from e
    try:
        top, train = {}, {}
        if getattr(args, "array", None) is not None:
            top["array"] = args.array
        if getattr(args, "k", None) is not None:
            top["k"] = args.k
        if getattr(args, "R", None) is not None:
            top["R"] = args.R
        if getattr(args, "mode", None) is not None:
            top["mode"] = args.mode
        if getattr(args, "max_points", None) is not None:
            top["max_points"] = args.max_points
        if getattr(args, "loss", None) is not None:
            train["loss_kind"] = args.loss
        if getattr(args, "acc", None) is not None:
            train["use_acc"] = args.acc
        if getattr(args, "subsample_init", None) is not None:
            train["subsample_initial"] = args.subsample_init
        if getattr(args, "steps", None) is not None:
            train["steps"] = args.steps
        if getattr(args, "lr", None) is not None:
            train["learning_rate"] = args.lr
        if args.seed is not None:
            train["seed"] = args.seed
        scene = cfg.scene
        if getattr(args, "points", None) is not None:
            scene = replace(scene, num_points=args.points)
        if args.command == "synth" and args.seed is not None:
            scene = replace(scene, seed=args.seed)
        cfg = replace(cfg, scene=scene, train=replace(cfg.train, **train), **top)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"bad config: {e}") from e
    return cfg


# --- stage helpers -----------------------------------------------------------------------


def _dataset(out: Path, cfg: pl.PipelineConfig) -> Dataset:
    ds = _read("dataset", load_dataset, out / "dataset")
    if cfg.array is not None:
        if not 1 <= cfg.array <= ds.geometry.num_arrays:
            raise ConfigError(f"array index {cfg.array} out of range 1..{ds.geometry.num_arrays}")
        ds = restrict_to_array(ds, cfg.array)
    if len(ds) > cfg.max_points:
        raise ConfigError(f"L={len(ds)} exceeds max_points={cfg.max_points}; raise --max-points")
    return ds


def _prepared(out: Path, cfg: pl.PipelineConfig) -> pl.Prepared:
    ds = _dataset(out, cfg)
    d = out / "dissim"
    time = _read("time matrix", dis.load_matrix, d, "time")
    adp = _read("adp matrix", dis.load_matrix, d, "adp")
    fused = _read("fused matrix", dis.load_matrix, d, "fuse")
    model = _read("distance model", dis.load_model, d / "distance-model.json")
    real = _read("geodesic", geo.load_realization, out / "graph" / "geo-fuse")
    if time.L != len(ds) or real.L != len(ds):
        raise StageIOError("stage outputs do not match the dataset; re-run dissim and graph")
    feats = None
    if cfg.mode == "parametric":
        feats = feature_batch(ds.cir)
    return pl.Prepared(ds, time, adp, model, fused, real, real.graph.components()[0], feats)


def _realizations(out: Path, cfg: pl.PipelineConfig, args_R: Optional[int]) -> List[geo.GeodesicRealization]:
    if cfg.train.loss_kind != "geo_unc":
        return [_read("geodesic", geo.load_realization, out / "graph" / "geo-fuse")]
    info = _read("graph.json", lambda p: json.loads(p.read_text()), out / "graph" / "graph.json")
    R = int(info["R"]) if args_R is None else args_R
    if R > int(info["R"]):
        raise ConfigError(f"R={R} but the graph stage wrote {info['R']} realizations")
    return [_read(f"realization {r}", geo.load_realization, out / "graph" / f"geo-r{r}")
            for r in range(1, R + 1)]


# --- subcommands ----------------------------------------------------------------------------


def cmd_synth(cfg, out: Path, args) -> int:
    ds = synth_scene(cfg.scene)
    try:
        save_dataset(ds, out / "dataset", overwrite=True)
    except OSError as e:
        raise StageIOError(str(e)) from e
    lo, hi = ds.positions.min(axis=0), ds.positions.max(axis=0)
    print(f"L={len(ds)} bbox=[{lo[0]:.3f}, {lo[1]:.3f}]..[{hi[0]:.3f}, {hi[1]:.3f}] m")
    return EXIT_OK


def cmd_dissim(cfg, out: Path, args) -> int:
    ds = _dataset(out, cfg)
    time, adp, model, fused, _ = pl.dissimilarities(ds, cfg, args.threads)
    d = out / "dissim"
    for m in (time, adp):
        dis.save_matrix(m, d)
    dis.save_matrix(fused, d, model)
    dis.save_model(model, d / "distance-model.json")
    print(f"L={time.L} adp_scale={model.adp_scale:.6g} adp_exponent={model.adp_exponent:.6g}")
    return EXIT_OK


def cmd_graph(cfg, out: Path, args) -> int:
    d = out / "dissim"
    time = _read("time matrix", dis.load_matrix, d, "time")
    adp = _read("adp matrix", dis.load_matrix, d, "adp")
    model = _read("distance model", dis.load_model, d / "distance-model.json")
    fused, choice = dis.fuse_with_choice(time, adp, model)
    real, ncomp = pl.deterministic_geodesic(fused, choice, cfg.k, args.threads)
    g = out / "graph"
    geo.save_realization(real, g / "geo-fuse", {"k": cfg.k, "components": ncomp})
    seed = cfg.train.seed
    reals = geo.sample_realizations(time, adp, model, cfg.k, cfg.R, seed, args.threads)
    for r, real_r in enumerate(reals, start=1):
        geo.save_realization(real_r, g / f"geo-r{r}", {"k": cfg.k, "seed": seed, "r": r})
    _write_json(g / "graph.json", {"k": cfg.k, "R": cfg.R, "seed": seed, "components": ncomp})
    print(f"components={ncomp} k={cfg.k} R={cfg.R}")
    return EXIT_OK


def _ablate(cfg, out: Path, args, losses, seeds) -> int:
    prep = _prepared(out, cfg)
    grid, runs = pl.ablate(cfg, losses, seeds, (cfg.train.use_acc,), args.threads, prep,
                           log=lambda m: print(m, flush=True))
    _write_json(out / "ablate" / "grid.json", {"grid": grid, "runs": runs,
                                               "seeds": list(seeds)})
    for name, cell in grid.items():
        print(f"{name}: median mae={cell['mae']:.4f} ks={cell['ks']:.4f} "
              f"kept {cell['kept']}/{cell['runs']}")
    return EXIT_OK


def cmd_train(cfg, out: Path, args) -> int:
    if args.seeds and args.seeds > 1:
        return _ablate(cfg, out, args, [cfg.train.loss_kind], range(cfg.train.seed,
                                                                    cfg.train.seed + args.seeds))
    prep = _prepared(out, cfg)
    reals = _realizations(out, cfg, getattr(args, "R", None))
    res = pl.run_seed(prep, cfg, cfg.train.seed, args.threads, reals)
    t = out / "train"
    save_model(res.model, t)
    res.train.write_trace(t / "trace.csv")
    save_train_config(replace(cfg.train, seed=cfg.train.seed), t / "train.json")
    _write_json(t / "run.json", {"final_loss": res.train.final_loss,
                                 "diverged": res.train.diverged, "mode": cfg.mode})
    print(f"final_loss={res.train.final_loss:.6g} mae={res.report.mae:.4f}")
    return EXIT_OK


def _chart(out: Path, cfg) -> tuple:
    ds = _dataset(out, cfg)
    model = _read("checkpoint", load_model, out / "train")
    feats = None
    if model.mode == "parametric":
        feats = feature_batch(ds.cir)
    elif model.coords.shape[0] != len(ds):
        raise StageIOError("checkpoint does not match the dataset")
    return ds, forward_all(model, feats).astype(np.float64)


def cmd_eval(cfg, out: Path, args) -> int:
    ds, z = _chart(out, cfg)
    report, aligned, errors = evaluate(z, ds.positions, cfg.eval_K)
    transform = optimal_affine(z, ds.positions) if ds.positions is not None else None
    save_report(report, out, errors, transform)
    if ds.positions is None:
        print("no ground truth: only ct/tw/ks computed (chart vs chart)", file=sys.stderr)
    print(json.dumps(report.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_render(cfg, out: Path, args) -> int:
    ds, z = _chart(out, cfg)
    pts, cols = z, None
    if ds.positions is not None:
        pts = optimal_affine(z, ds.positions)(z)
        cols = ds.positions if cfg.colorize else None
    save_svg(out / "chart.svg", pts, cols, cfg.render_radius, title=f"L={len(ds)}")
    print(f"wrote {out / 'chart.svg'}")
    return EXIT_OK


def cmd_ablate(cfg, out: Path, args) -> int:
    losses = args.losses.split(",")
    start = cfg.train.seed
    return _ablate(cfg, out, args, losses, range(start, start + (args.seeds or 5)))


COMMANDS = {"synth": cmd_synth, "dissim": cmd_dissim, "graph": cmd_graph, "train": cmd_train,
            "eval": cmd_eval, "render": cmd_render, "ablate": cmd_ablate}


# --- argument parsing ------------------------------------------------------------------------


def _bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {v!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON; flags override it")
    common.add_argument("--seed", type=int, help="scene seed for synth, otherwise run seed")
    common.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    common.add_argument("--out", default="out", help="artifact directory (default: out)")
    common.add_argument("--array", type=int, help="restrict to one antenna array (1-based)")
    common.add_argument("--max-points", type=int, dest="max_points",
                        help="override the L cap (default 5000)")

    p = argparse.ArgumentParser(prog="geochart", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--points", type=int, help="number of datapoints")
    sub.add_parser("dissim", parents=[common], help="pairwise dissimilarity matrices")
    g = sub.add_parser("graph", parents=[common], help="k-NN geodesics and realizations")
    g.add_argument("--k", type=int)
    g.add_argument("--R", type=int)

    train_opts = argparse.ArgumentParser(add_help=False)
    train_opts.add_argument("--loss", choices=["siam", "geo", "geo-unc", "geo_unc"])
    train_opts.add_argument("--acc", type=_bool, nargs="?", const=True,
                            help="add the acceleration prior (true/false)")
    train_opts.add_argument("--no-acc", dest="acc", action="store_false")
    train_opts.add_argument("--mode", choices=["free", "parametric"])
    train_opts.add_argument("--subsample-init", dest="subsample_init", choices=["full", "none"])
    train_opts.add_argument("--steps", type=int)
    train_opts.add_argument("--lr", type=float)
    train_opts.add_argument("--R", type=int)
    train_opts.set_defaults(acc=None)
    t = sub.add_parser("train", parents=[common, train_opts], help="train a chart")
    t.add_argument("--seeds", type=int, help="run N seeds as an ablation cell")
    sub.add_parser("eval", parents=[common], help="evaluate the trained chart")
    sub.add_parser("render", parents=[common], help="SVG of the aligned chart")
    a = sub.add_parser("ablate", parents=[common, train_opts], help="median metrics over seeds")
    a.add_argument("--seeds", type=int, default=5)
    a.add_argument("--losses", default="siam,geo,geo_unc",
                   help="comma separated loss kinds (default: siam,geo,geo_unc)")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    out = Path(args.out)
    try:
        cfg = build_config(args)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        return COMMANDS[args.command](cfg, out, args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except StageIOError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except DivergenceError as e:
        print(f"error: training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
