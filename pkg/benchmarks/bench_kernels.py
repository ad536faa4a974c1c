"""Time the numba kernels against the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json]

The backend is chosen per call from ``POISSON_STEIN_DISABLE_NUMBA``, so both
paths run in one process.  Each case also checks that the two backends agree.
"""

import argparse
import json
import os
import time

import numpy as np

from poisson_stein import kernels
from poisson_stein._accel import _FLAG


def _cases(rng):
    out = []
    for n in (500, 2000, 8000):
        pts = rng.random((n, 2))
        out.append((f"knn_edge_power n={n}", lambda p=pts: kernels.knn_edge_power(p, 1, 1.0)))
    for n in (1000, 10000):
        starts = rng.random((n, 2)) * 1.4 - 0.2
        ang = rng.random(n) * 2 * np.pi
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        smax = np.where(rng.random(n) < 0.1, np.inf, rng.random(n) * 0.3)
        out.append((f"clipped_lengths n={n}",
                    lambda s=starts, d=dirs, m=smax: kernels.clipped_lengths(s, d, m, (0.0, 0.0), (1.0, 1.0))))
    for T in (100, 1000):
        coords = rng.random((T, 1)) * (T + 12) - 12
        marks = np.ones(T)
        shape = (int(2 * T),)
        out.append((f"shot_noise_field T={T}",
                    lambda c=coords, m=marks, s=shape: kernels.shot_noise_field(
                        c, m, kernels.KERNEL_OU, 1.0, np.array([1.0]), 12.0, np.array([0.0]), np.array([0.5]), s)))
    return out


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run(repeat=5):
    rows = []
    for name, fn in _cases(np.random.default_rng(0)):
        os.environ[_FLAG] = "0"
        ref = fn()  # also triggers compilation
        t_nb = _time(fn, repeat)
        os.environ[_FLAG] = "1"
        alt = fn()
        t_np = _time(fn, repeat)
        agree = bool(np.allclose(ref, alt, rtol=1e-12, atol=1e-12))
        rows.append({"case": name, "numba_s": t_nb, "numpy_s": t_np, "speedup": t_np / t_nb, "agree": agree})
    os.environ.pop(_FLAG, None)
    return rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args()
    rows = run(args.repeat)
    if args.json:
        print(json.dumps(rows, indent=2))
        return
    print(f"{'case':<28}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}  agree")
    for r in rows:
        print(f"{r['case']:<28}{1e3 * r['numba_s']:>12.3f}{1e3 * r['numpy_s']:>12.3f}{r['speedup']:>10.1f}  {r['agree']}")


if __name__ == "__main__":
    main()
