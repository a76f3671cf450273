"""Numba vs numpy timings for the hot kernels.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Each kernel runs under both backends by flipping GIBBSINIT_BACKEND in-process
(the flag is read at call time). The first numba call is a warm-up so compile
time is not counted. Outputs are compared so a speedup never hides a mismatch.
"""
import argparse
import json
import os
import time

import numpy as np

from gibbsinit import kernels, problems
from gibbsinit._accel import BACKEND_ENV
from gibbsinit.objective import Domain


def _cases(rng):
    d = 5
    centers = rng.uniform(-1, 1, (50, d))
    weights = -np.full(50, 1.0 / 50)
    X = rng.uniform(-1, 1, (1000, d))
    dom = Domain.box(-1.0, 1.0, d).kernel_arrays()
    noise = rng.standard_normal((2000, d))
    spec, data = problems.gmnl_generate(N=1000, R=100, seed=0)
    ids = data.points[:, 0].astype(np.int64)
    y = data.points[:, 1].astype(np.int64)
    Z = np.ascontiguousarray(data.points[:, 2:])
    E = np.exp(spec.frozen_draws[ids])
    v = spec.products @ spec.phi_star
    a = np.exp(Z @ spec.psi_star)
    return {
        "kernel_sum (1000 pts x 50 centers, d=5)":
            lambda: kernels.kernel_sum(X, centers, weights, 0.1)[1],
        "ula_kernel_chain (2000 steps, 50 centers)":
            lambda: kernels.ula_kernel_chain(np.zeros(d), centers, weights, 0.1, 10.0, 1e-4,
                                             noise, 1000, 10, 100, dom)[0],
        "gmnl_eval value+grad (N=1000, R=100)":
            lambda: np.concatenate(kernels.gmnl_eval(v, a, E, y, Z, True)[1:3]),
    }


def _time(fn, repeat):
    fn()
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json")
    args = ap.parse_args(argv)
    cases = _cases(np.random.default_rng(0))
    old = os.environ.get(BACKEND_ENV)
    rows = []
    try:
        for name, fn in cases.items():
            res = {}
            for backend in ("numba", "numpy"):
                os.environ[BACKEND_ENV] = backend
                res[backend] = (_time(fn, args.repeat), fn())
            diff = float(np.max(np.abs(res["numba"][1] - res["numpy"][1])))
            rows.append({"kernel": name, "numba_s": res["numba"][0],
                         "numpy_s": res["numpy"][0],
                         "speedup": res["numpy"][0] / res["numba"][0], "max_abs_diff": diff})
    finally:
        if old is None:
            os.environ.pop(BACKEND_ENV, None)
        else:
            os.environ[BACKEND_ENV] = old
    print(f"{'kernel':45s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s} {'max|diff|':>10s}")
    for r in rows:
        print(f"{r['kernel']:45s} {1e3 * r['numba_s']:10.3f} {1e3 * r['numpy_s']:10.3f} "
              f"{r['speedup']:8.1f} {r['max_abs_diff']:10.2e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return rows


if __name__ == "__main__":
    main()
