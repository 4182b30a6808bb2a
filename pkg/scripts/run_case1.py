"""Three-way comparison (sdhybr, genhybr, fhybr) on the 32x32 footprint problem.

    python3 scripts/run_case1.py --seeds 5 --rule optimal
"""

import argparse
import time

import numpy as np

from sdkrylov.problems import gen_case1, rel_error
from sdkrylov.regparam import SelectionRule
from sdkrylov.solvers import SolveOptions, fhybr, genhybr, sdhybr

METHODS = (("sdhybr", sdhybr), ("genhybr", genhybr), ("fhybr", fhybr))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--rule", default="optimal", choices=["optimal", "upre", "dp", "wgcv"])
    ap.add_argument("--max-iter", type=int, default=50)
    args = ap.parse_args()

    print(f"{'seed':>4} " + " ".join(f"{name:>16}" for name, _ in METHODS) + f" {'margin':>8}")
    margins = []
    for seed in range(args.seeds):
        tp = gen_case1(seed=seed)
        rule = SelectionRule(args.rule, truth=tp.s_true) if args.rule == "optimal" else SelectionRule(args.rule)
        opts = SolveOptions(rule=rule, max_iter=args.max_iter)
        cells, errs = [], {}
        for name, fn in METHODS:
            t0 = time.perf_counter()
            res = fn(tp.problem, opts)
            errs[name] = rel_error(res.s, tp.s_true)
            cells.append(f"{errs[name]:.4f} ({res.k:2d}, {time.perf_counter() - t0:4.1f}s)")
        other = min(errs["genhybr"], errs["fhybr"])
        margins.append((other - errs["sdhybr"]) / other)
        print(f"{seed:>4} " + " ".join(f"{c:>16}" for c in cells) + f" {margins[-1]:>8.1%}")
    print(f"median margin of sdhybr over the better baseline: {np.median(margins):.1%}")


if __name__ == "__main__":
    main()
