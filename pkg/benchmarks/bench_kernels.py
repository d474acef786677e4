"""Compare the numba and pure-numpy kernel backends.

Times the bootstrap batch kernel (calibration refit + logistic IRLS per
replicate) on the default simulated cohort and checks both backends agree.

    python benchmarks/bench_kernels.py [--replicates 200] [--repeat 3]
"""

import argparse
import time

import numpy as np

from rckit import _kernels_numpy as numpy_backend
from rckit import kernels, simulate
from rckit.calibration import CalibrationSpec
from rckit.rc import OutcomeSpec, build_problem
from rckit.variance import BootstrapSpec, resample_indices


def batch_args(n_replicates):
    spec = simulate.default_table_a1()
    problem = build_problem(
        simulate.gen_cohort(spec, 0),
        CalibrationSpec(exposure="xstar", confounders=("z", "v"), dependent="xss"),
        OutcomeSpec("y", "xstar", ("z", "v")),
    )
    boot = BootstrapSpec(n_replicates=n_replicates, seed=1)
    pairs = [resample_indices(problem, boot, r) for r in range(n_replicates)]
    idx_cal = np.stack([p[0] for p in pairs])
    idx_out = np.stack([p[1] for p in pairs])
    return (problem.cal_X, problem.cal_Y, problem.cohort_cal_X, problem.out_X, problem.exp_cols,
            problem.y, problem.w, problem.family.code, idx_cal, idx_out)


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--replicates", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    batch = batch_args(args.replicates)
    t_np, (b_np, _) = best_of(numpy_backend.rc_batch, batch, args.repeat)
    print(f"numpy  rc_batch  B={args.replicates}: {t_np * 1e3:8.1f} ms")

    if kernels.numba_backend is None:
        print("numba backend disabled or unavailable; nothing to compare")
        return
    nb = kernels.numba_backend
    t0 = time.perf_counter()
    nb.rc_batch(*batch)
    print(f"numba  first call (includes JIT): {(time.perf_counter() - t0) * 1e3:8.1f} ms")
    t_nb, (b_nb, _) = best_of(nb.rc_batch, batch, args.repeat)
    print(f"numba  rc_batch  B={args.replicates}: {t_nb * 1e3:8.1f} ms")
    print(f"speedup: {t_np / t_nb:.1f}x   max |diff| = {np.nanmax(np.abs(b_np - b_nb)):.2e}")

    g = np.random.default_rng(0)
    X = np.column_stack([np.ones(2500), g.normal(size=(2500, 3))])
    y = (g.random(2500) < 0.4).astype(float)
    w = np.ones(2500)
    for name, fn in (("numpy", numpy_backend.irls_logistic), ("numba", nb.irls_logistic)):
        fn(X, y, w)
        t, _ = best_of(fn, (X, y, w), 50)
        print(f"{name}  irls_logistic n=2500 p=4: {t * 1e6:8.1f} us")


if __name__ == "__main__":
    main()
