"""Compiled versus numpy angular moment kernel.

Times ``power_log_moments`` from both backends on the pair set of a radial
grid and checks that they agree. Run with ``python3 benchmarks/bench_core.py``.
"""

import argparse
import time

import numpy as np

from biharmonic_resonance import _core_py
from biharmonic_resonance.discretization import build_grid
from biharmonic_resonance.kernels import angular_rule

try:
    from biharmonic_resonance import _core
except ImportError:
    _core = None


def pair_set(N, d):
    grid = build_grid(N, 3.0, "gauss", d)
    r = grid.nodes
    i, j = np.triu_indices(len(r))
    return np.ascontiguousarray(r[i]), np.ascontiguousarray(r[j])


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--N", type=int, nargs="+", default=[40, 80, 160])
    parser.add_argument("--d", type=int, default=5)
    parser.add_argument("--nterms", type=int, default=45)
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args(argv)

    theta, weights = angular_rule(args.d, 0)
    theta = np.ascontiguousarray(theta, dtype=float)
    weights = np.ascontiguousarray(weights, dtype=float)
    p0 = float(4 - args.d)
    print(f"{'N':>5} {'pairs':>8} {'python [s]':>11} {'cython [s]':>11} {'speedup':>8} {'max rel diff':>13}")
    for N in args.N:
        rho, big = pair_set(N, args.d)
        t_py, (pw_py, lg_py) = best_of(
            lambda: _core_py.power_log_moments(rho, big, theta, weights, p0, args.nterms, True, 1), args.repeat)
        if _core is None:
            print(f"{N:>5} {len(rho):>8} {t_py:>11.4f} {'n/a':>11} {'n/a':>8} {'n/a':>13}")
            continue
        t_cy, (pw_cy, lg_cy) = best_of(
            lambda: _core.power_log_moments(rho, big, theta, weights, p0, args.nterms, True, args.threads),
            args.repeat)
        scale = np.maximum(np.abs(pw_py), 1e-300)
        diff = max(float(np.max(np.abs(pw_cy - pw_py) / scale)),
                   float(np.max(np.abs(lg_cy - lg_py)) / max(np.max(np.abs(lg_py)), 1e-300)))
        print(f"{N:>5} {len(rho):>8} {t_py:>11.4f} {t_cy:>11.4f} {t_py / t_cy:>8.1f} {diff:>13.2e}")


if __name__ == "__main__":
    main()
