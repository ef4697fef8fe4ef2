"""Compare the compiled and pure-Python kernel backends.

Times the packed ADP dissimilarity and all-pairs Dijkstra on a synthetic
scene, checks both backends agree bit for bit, and prints one line per case.

    python benchmarks/bench_kernels.py --points 400 --k 20 --repeat 3
"""

import argparse
import time

import numpy as np

from geochart import _backend
from geochart.dissimilarity import DistanceModel, compute_matrix, fuse_with_choice
from geochart.geodesic import all_pairs_shortest, ensure_connected, knn_graph
from geochart.synth import SceneConfig, synth_scene


def best_of(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--points", type=int, default=400)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--threads", type=int, default=1)
    args = p.parse_args(argv)

    try:
        _backend.get("cython")
        backends = ["cython", "python"]
    except ImportError:
        backends = ["python"]
        print("compiled extension not built; timing the fallback only")

    ds = synth_scene(SceneConfig(num_points=args.points, seed=0))
    time_m = compute_matrix(ds, "time")
    res = {}
    for b in backends:
        t, adp = best_of(lambda: compute_matrix(ds, "adp", args.threads, backend=b), args.repeat)
        res[("adp", b)] = (t, adp.values)
    fused, choice = fuse_with_choice(time_m, adp, DistanceModel())
    graph = ensure_connected(knn_graph(fused, args.k, choice), fused, choice)
    for b in backends:
        t, real = best_of(lambda: all_pairs_shortest(graph, args.threads, backend=b), args.repeat)
        res[("dijkstra", b)] = (t, real.dist)

    print(f"L={args.points} k={args.k} threads={args.threads} best of {args.repeat}")
    for kernel in ("adp", "dijkstra"):
        base = res[(kernel, backends[-1])][0]
        for b in backends:
            t, _ = res[(kernel, b)]
            print(f"{kernel:9s} {b:7s} {t * 1e3:10.2f} ms  speedup x{base / t:7.1f}")
        if len(backends) == 2:
            same = np.array_equal(res[(kernel, "cython")][1], res[(kernel, "python")][1])
            print(f"{kernel:9s} outputs identical: {same}")


if __name__ == "__main__":
    main()
