"""Compiled kernels versus the numpy fallback.

Runs the same EM and SGLD workloads through both backends, reports the
wall time per path-step and the largest difference between the outputs.

    python benchmarks/bench_kernels.py [--repeat 3]
"""

import argparse
import time

import numpy as np

from scorelab import _backend
from scorelab.gaussian import GaussianProblem
from scorelab.ou import OuSchedule
from scorelab.sampler import EmRunConfig, em_backward_run
from scorelab.score_matching import SgldConfig, sgld_run


def _em(backend):
    cfg = EmRunConfig.to_horizon(OuSchedule(5.0), 0.01, np.array([1.0, -0.5]), 20_000, 11)
    return em_backward_run(cfg, backend=backend).samples, 20_000 * cfg.grid.n_steps


def _sgld(mode, n_iters, replicas):
    def job(backend):
        cfg = SgldConfig(0.05, 1e4, n_iters, np.zeros(2), OuSchedule(1.0), GaussianProblem([1.0, 1.0]))
        return sgld_run(cfg, 11, n_replicas=replicas, mode=mode, backend=backend).theta, n_iters * replicas
    return job


WORKLOADS = {
    "em_affine": _em,
    "sgld_faithful": _sgld("faithful", 2_000, 200),
    "sgld_collapsed": _sgld("collapsed", 2_000_000, 4),
}


def bench(fn, backend, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out, steps = fn(backend)
        best = min(best, time.perf_counter() - t0)
    return out, best, steps


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    try:
        _backend.get_kernels("compiled")
    except RuntimeError as exc:
        raise SystemExit(str(exc))
    print(f"{'workload':<16} {'compiled ns/step':>17} {'python ns/step':>15} {'speedup':>8} {'max |diff|':>11}")
    for name, fn in WORKLOADS.items():
        out_c, t_c, steps = bench(fn, "compiled", args.repeat)
        out_p, t_p, _ = bench(fn, "python", args.repeat)
        diff = float(np.max(np.abs(out_c - out_p)))
        print(f"{name:<16} {1e9 * t_c / steps:>17.1f} {1e9 * t_p / steps:>15.1f} "
              f"{t_p / t_c:>8.1f} {diff:>11.2e}")


if __name__ == "__main__":
    main()
