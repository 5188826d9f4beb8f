"""Time the numpy and numba backends on a calibration run.

Usage::

    python3 benchmarks/bench_kernels.py [--P 50] [--M 16] [--iters 20] [--repeat 3]

Each backend runs the same fixed number of BCD sweeps on the same data; the
best of ``--repeat`` wall times is reported, after one warm-up run that also
absorbs numba compilation.
"""
import argparse
import dataclasses
import time

import numpy as np

from uscal import _backend
from uscal.benchmark import SimConfig, add_noise, make_rng, truth_state
from uscal.calibration import BcdConfig, CalibrationSet, calibrate


def time_backend(name, data, cfg, repeat, deterministic):
    cfg = dataclasses.replace(cfg, deterministic=deterministic)
    with _backend.use_backend(name):
        est = calibrate(data, cfg)
        best = np.inf
        for _ in range(repeat):
            t0 = time.perf_counter()
            calibrate(data, cfg)
            best = min(best, time.perf_counter() - t0)
    return best, est.final_cost


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--P", type=int, default=50)
    ap.add_argument("--N", type=int, default=4)
    ap.add_argument("--M", type=int, default=16)
    ap.add_argument("--L", type=int, default=24)
    ap.add_argument("--T", type=int, default=10)
    ap.add_argument("--iters", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    sim = SimConfig(P=args.P, N=args.N, M=args.M, L=args.L, T=args.T, deltas=(0.5,), n_trials=1)
    truth = truth_state(sim, make_rng(0, 0), 0.5)
    rng = make_rng(0, 1)
    data = CalibrationSet(np.stack([add_noise(y, 10.0, rng) for y in truth.model()]))
    cfg = BcdConfig(tol=1e-300, max_iter=args.iters)

    print(f"P={args.P} N={args.N} M={args.M} L={args.L} T={args.T}, {args.iters} sweeps, best of {args.repeat}")
    runs = [("numpy", True)]
    if _backend.HAVE_NUMBA:
        runs += [("numba", True), ("numba", False)]
    base = None
    for name, det in runs:
        t, cost = time_backend(name, data, cfg, args.repeat, det)
        base = base or t
        mode = "serial" if det else "parallel"
        print(f"{name:6s} {mode:8s} {t:8.3f} s  speedup {base / t:5.2f}x  final cost {cost:.12e}")


if __name__ == "__main__":
    main()
