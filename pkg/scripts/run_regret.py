"""Regret of the estimated depth-2 tree against the best tree in the class.

    python3 scripts/run_regret.py --family gini --n-list 500,2000 --reps 20
"""

from __future__ import annotations

import argparse
import json

from lrpolicy.scores import WelfareSpec
from lrpolicy.simlab import get_preset, regret_experiment


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dgp", default="reference")
    ap.add_argument("--family", default="additive")
    ap.add_argument("--n-list", default="500,2000")
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--depth", type=int, default=2)
    ap.add_argument("--mc-draws", type=int, default=1_000_000)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    n_list = tuple(int(v) for v in args.n_list.split(","))
    curve = regret_experiment(get_preset(args.dgp), WelfareSpec(args.family), depth=args.depth, n_list=n_list,
                              replications=args.reps, mc_draws=args.mc_draws, threads=args.threads)
    print(f"W* = {curve.oracle_best:.6f}  best tree:")
    print(curve.best_tree.render(["x1", "x2"]))
    for row in curve.to_rows():
        print(json.dumps(row, sort_keys=True))


if __name__ == "__main__":
    main()
