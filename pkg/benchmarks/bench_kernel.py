"""Compare the compiled and pure-Python search kernels.

Times full search runs (simulation, Q recomputation and the adversary step)
plus policy rollouts, and checks that both kernels produce the same bits.

    python benchmarks/bench_kernel.py [--budget N] [--repeat R]
"""
import argparse
import logging
import statistics
import time

import numpy as np

from ramcp._backend import KERNELS
from ramcp.driver import evaluate_policy, search
from ramcp.envelope import RiskEnvelope
from ramcp.environments import build_bandit, build_patient


def timed(fn, repeat):
    out, times = None, []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return out, min(times), statistics.median(times)


def cases(budget):
    bandit, patient = build_bandit(), build_patient()
    yield "bandit F", bandit, "F", budget
    yield "bandit I", bandit, "I", budget
    yield "patient I", patient, "I", max(1, budget // 4)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--budget", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--rollouts", type=int, default=20_000)
    args = ap.parse_args(argv)
    logging.getLogger("ramcp").setLevel(logging.ERROR)  # zero-weight notices are expected here

    if "cython" not in KERNELS:
        print("compiled kernel not built; run `python setup.py build_ext --inplace` first")
        return 1

    print(f"{'case':<12} {'iters':>6} {'python s':>9} {'cython s':>9} {'speedup':>8}  identical")
    for name, problem, mode, budget in cases(args.budget):
        env = RiskEnvelope.cvar(problem.prior, 0.5)
        results = {}
        for backend in ("python", "cython"):
            run = lambda: search(problem, env, mode, budget, np.random.default_rng(0),  # noqa: E731
                                 backend=backend)
            results[backend] = timed(run, args.repeat)
        (rp, tp, _), (rc, tc, _) = results["python"], results["cython"]
        same = rp.trace.to_csv() == rc.trace.to_csv()
        print(f"{name:<12} {budget:>6} {tp:>9.3f} {tc:>9.3f} {tp / tc:>7.1f}x  {same}")

        evals = {}
        for backend, (res, _, _) in results.items():
            ev = lambda: evaluate_policy(problem, res.policy, 0, args.rollouts,  # noqa: E731
                                         np.random.default_rng(1), strict=False)
            evals[backend] = timed(ev, args.repeat)
        (ep, tp, _), (ec, tc, _) = evals["python"], evals["cython"]
        print(f"{'  rollouts':<12} {args.rollouts:>6} {tp:>9.3f} {tc:>9.3f} {tp / tc:>7.1f}x  "
              f"{ep.mean == ec.mean}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
