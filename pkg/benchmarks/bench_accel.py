"""Time the compiled kernels against their plain-numpy builds.

The backend is pinned at import time by GRAPHMEND_DISABLE_NUMBA, so this
script re-runs itself in a worker subprocess per backend and compares the
timings.  Workloads mirror the package's hot paths: the CSR block product
at propagation-solver shape, and the greedy neighbour pop at packaging
shape.

Usage: python3 benchmarks/bench_accel.py [--reps 30]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def knn_csr(n, k, seed):
    rng = np.random.default_rng(seed)
    indptr = np.arange(n + 1, dtype=np.int64) * k
    indices = np.empty(n * k, dtype=np.int64)
    for i in range(n):
        indices[i * k : (i + 1) * k] = rng.choice(n, size=k, replace=False)
    data = rng.uniform(0.0, 1.0, n * k)
    return indptr, indices, data


def bench_matvec(reps):
    from graphmend import accel

    n, k, width = 20000, 50, 8
    indptr, indices, data = knn_csr(n, k, seed=1)
    x = np.random.default_rng(2).standard_normal((n, width))
    out = np.empty_like(x)
    bound = accel.make_csr_matvec(indptr, indices, data)
    bound(x, out)  # warm-up also pays any compile cost
    best = np.inf
    for _ in range(reps):
        t0 = time.perf_counter()
        bound(x, out)
        best = min(best, time.perf_counter() - t0)
    return best * 1e3, float(out.sum())


def bench_nearest(reps):
    from graphmend import accel

    n, take = 4000, 32
    simrow = np.random.default_rng(3).uniform(0.0, 1.0, n)
    out = np.empty(take, dtype=np.int64)
    accel.nearest_remaining(simrow, np.ones(n, dtype=np.bool_), take, out)
    best = np.inf
    for _ in range(reps):
        alive = np.ones(n, dtype=np.bool_)
        t0 = time.perf_counter()
        accel.nearest_remaining(simrow, alive, take, out)
        best = min(best, time.perf_counter() - t0)
    return best * 1e3, float(out.sum())


def worker(reps):
    from graphmend import accel

    matvec_ms, matvec_sum = bench_matvec(reps)
    nearest_ms, nearest_sum = bench_nearest(reps)
    print(
        json.dumps(
            {
                "backend": accel.BACKEND,
                "matvec_ms": matvec_ms,
                "matvec_sum": matvec_sum,
                "nearest_ms": nearest_ms,
                "nearest_sum": nearest_sum,
            }
        )
    )


def run_backend(disable_numba, reps):
    env = dict(os.environ)
    if disable_numba:
        env["GRAPHMEND_DISABLE_NUMBA"] = "1"
    else:
        env.pop("GRAPHMEND_DISABLE_NUMBA", None)
    proc = subprocess.run(
        [sys.executable, os.path.abspath(__file__), "--worker", "--reps", str(reps)],
        capture_output=True,
        text=True,
        env=env,
    )
    if proc.returncode != 0:
        raise RuntimeError(proc.stderr)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--reps", type=int, default=30)
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()
    if args.worker:
        worker(args.reps)
        return
    fast = run_backend(disable_numba=False, reps=args.reps)
    slow = run_backend(disable_numba=True, reps=args.reps)
    if fast["backend"] == slow["backend"]:
        print("numba unavailable; both runs used the %s build" % fast["backend"])
    for key in ("matvec_sum", "nearest_sum"):
        if fast[key] != slow[key]:
            raise SystemExit("backend results disagree on %s" % key)
    print("kernel                          %8s        %8s   speedup" % (fast["backend"], slow["backend"]))
    for name, key in (
        ("csr block product 20000x50 r=8", "matvec_ms"),
        ("greedy neighbour pop n=4000", "nearest_ms"),
    ):
        print(
            "%-30s %9.3f ms %9.3f ms %8.1fx"
            % (name, fast[key], slow[key], slow[key] / fast[key])
        )


if __name__ == "__main__":
    main()
