"""Compare the compiled and the numpy kernel backends.

Times the three hot kernels on shapes typical for this package (a few
hundred frames, mixtures of 2-16 components, 3-6 output dims) and prints
one table row per (kernel, shape). Run from the repo root:

    python3 benchmarks/bench_backends.py [--repeats 7]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from anomoe.backend import available_backends, load_backend


def make_case(rng, n, k, d_in, d_out):
    d = d_in + d_out
    means = rng.normal(size=(k, d))
    raw = rng.normal(size=(k, d, d))
    covs = raw @ np.swapaxes(raw, 1, 2) + d * np.eye(d)
    w = rng.uniform(0.2, 1.0, size=k)
    w /= w.sum()
    sig_ii = covs[:, :d_in, :d_in]
    sig_io = covs[:, :d_in, d_in:]
    sig_oo = covs[:, d_in:, d_in:]
    reg_t = np.linalg.solve(sig_ii, sig_io)
    reg = np.ascontiguousarray(np.swapaxes(reg_t, 1, 2))
    cond = sig_oo - np.swapaxes(reg_t, 1, 2) @ sig_io
    cond = 0.5 * (cond + np.swapaxes(cond, 1, 2))
    X = rng.normal(size=(n, d))
    diff_covs = covs[rng.integers(k, size=n)][:, d_in:, d_in:]
    return {
        "X": X,
        "Xin": np.ascontiguousarray(X[:, :d_in]),
        "log_w": np.log(w),
        "means": means,
        "chols": np.linalg.cholesky(covs),
        "mu_in": np.ascontiguousarray(means[:, :d_in]),
        "chol_in": np.linalg.cholesky(np.ascontiguousarray(sig_ii)),
        "mu_out": np.ascontiguousarray(means[:, d_in:]),
        "reg": reg,
        "cond": np.ascontiguousarray(cond),
        "diffs": rng.normal(size=(n, d_out)),
        "diff_covs": np.ascontiguousarray(diff_covs),
    }


def best_of(repeats, fn):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=7)
    args = parser.parse_args()

    backends = {name: load_backend(name) for name in available_backends()}
    if len(backends) == 1:
        print("note: only the numpy backend is built; nothing to compare")

    shapes = [
        (200, 2, 1, 3),
        (200, 10, 1, 6),
        (2000, 10, 1, 6),
        (2000, 16, 3, 6),
    ]
    rng = np.random.default_rng(0)
    cases = {shape: make_case(rng, *shape) for shape in shapes}

    header = f"{'kernel':<18} {'n':>5} {'k':>3} {'din':>3} {'dout':>4}"
    header += "".join(f" {name:>12}" for name in backends)
    if len(backends) == 2:
        header += f" {'speedup':>9}"
    print(header)
    print("-" * len(header))

    kernels = {
        "component_logpdfs": lambda mod, c: mod.component_logpdfs(
            c["X"], c["means"], c["chols"]
        ),
        "gmr_moments": lambda mod, c: mod.gmr_moments(
            c["Xin"], c["log_w"], c["mu_in"], c["chol_in"],
            c["mu_out"], c["reg"], c["cond"],
        ),
        "mahalanobis_batch": lambda mod, c: mod.mahalanobis_batch(
            c["diffs"], c["diff_covs"]
        ),
    }
    for kernel_name, call in kernels.items():
        for shape in shapes:
            case = cases[shape]
            times = {}
            for backend_name, mod in backends.items():
                call(mod, case)  # warm up
                times[backend_name] = best_of(args.repeats, lambda: call(mod, case))
            n, k, d_in, d_out = shape
            row = f"{kernel_name:<18} {n:>5} {k:>3} {d_in:>3} {d_out:>4}"
            row += "".join(f" {times[b] * 1e3:>10.3f}ms" for b in backends)
            if len(times) == 2:
                ratio = times["python"] / times["cython"]
                row += f" {ratio:>8.2f}x"
            print(row)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
