"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--pixels N] [--repeat R]

Both implementations are called directly, so the env flag does not matter
here. The first numba call (compilation or cache load) is timed separately.
Results are checked for agreement before timing.
"""
import argparse
import time

import numpy as np

from pitof import kernels
from pitof._backend import HAVE_NUMBA


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(n, rng):
    p0 = 0.17
    lo, hi = 1e-3 / p0, 1e3 / p0
    sigma = rng.uniform(0.1, 2.0, n)
    target = kernels.mean_phase_pol_np(sigma, p0)
    theta0 = np.log(1.0 / (target - p0))
    x = np.geomspace(1e-3, 50.0, n)
    m = max(n // 64, 8)  # quadrature is per unique parameter set, so far fewer calls
    si = rng.uniform(0.05, 1.0, m)
    sp = rng.uniform(0.05, 1.0, m)
    kind = np.full(m, kernels.UNPOLARIZED)
    up = p0 + 40.0 / si
    return {
        "e1_scaled": (lambda f: f(x), kernels.e1_scaled_nb, kernels.e1_scaled_np),
        "mean_phase_unpol": (lambda f: f(0.6 * sigma, sigma, p0), kernels.mean_phase_unpol_nb,
                             kernels.mean_phase_unpol_np),
        "fit_adam": (lambda f: f(target, theta0, p0, 0.05, 500, 1e-16, lo, hi)[0],
                     kernels.fit_adam_nb, kernels.fit_adam_np),
        "invert_pol_bisect": (lambda f: f(target, p0, lo, hi)[0], kernels.invert_pol_bisect_nb,
                              kernels.invert_pol_bisect_np),
        "quad_moments": (lambda f: f(kind, si, sp, p0, up, 1e-9, 1e-12, 20000)[0],
                         kernels.quad_moments_nb, kernels.quad_moments_np),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pixels", type=int, default=64 * 48)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'first nb [s]':>14}{'numba [s]':>12}{'numpy [s]':>12}"
          f"{'speedup':>10}{'max rel diff':>14}")
    for name, (call, nb, npy) in cases(args.pixels, rng).items():
        t0 = time.perf_counter()
        r_nb = call(nb)
        first = time.perf_counter() - t0
        r_np = call(npy)
        diff = float(np.max(np.abs(r_nb - r_np) / np.maximum(np.abs(r_np), 1e-300)))
        t_nb = best_of(lambda: call(nb), args.repeat)
        t_np = best_of(lambda: call(npy), args.repeat)
        print(f"{name:<20}{first:>14.3f}{t_nb:>12.4f}{t_np:>12.4f}{t_np / t_nb:>9.1f}x"
              f"{diff:>14.1e}")


if __name__ == "__main__":
    main()
