"""Calibrate the ``kendall`` preset.

Finds arm slopes so that Kendall's tau between Y(d) and X1 is about 0.3 when
everyone is treated and 0.1 when no one is, then reports the Monte-Carlo
tau of both constant rules and of simple threshold rules on x1 (the
treated-arm intercept lets treating low-x1 units push tau towards 0).

    python3 scripts/calibrate_kendall_dgp.py --mc-draws 1000000
"""

from __future__ import annotations

import argparse
import math
from dataclasses import replace

import numpy as np
from scipy import integrate, optimize
from scipy.special import erf

from lrpolicy.policy import PolicyTree
from lrpolicy.scores import WelfareSpec
from lrpolicy.simlab import PRESETS, oracle_welfare


def _sgn_mean(m, s):
    return erf(m / (s * math.sqrt(2.0)))


def tau_constant(slope: float, noise_var: float, parent_var: float) -> float:
    """tau(a x1 + eps, x1 + eta) with x1 ~ U[0, 1]; the difference of two uniforms is triangular."""
    s_p = math.sqrt(2 * parent_var)
    s_y = math.sqrt(2 * noise_var)

    def integrand(delta):
        return _sgn_mean(delta, s_p) * _sgn_mean(slope * delta, s_y) * (1 - abs(delta))

    return integrate.quad(integrand, -1, 1, points=[0.0], limit=200)[0]


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--treated-tau", type=float, default=0.3)
    p.add_argument("--control-tau", type=float, default=0.1)
    p.add_argument("--intercept", type=float, default=0.25)
    p.add_argument("--mc-draws", type=int, default=1_000_000)
    args = p.parse_args()

    base = PRESETS["kendall"]
    solve = lambda target: optimize.brentq(  # noqa: E731
        lambda a: tau_constant(a, base.noise_var, base.parent_var) - target, 1e-6, 20.0)
    a1, a0 = solve(args.treated_tau), solve(args.control_tau)
    print(f"slopes: a0={a0:.4f} a1={a1:.4f} (intercept {args.intercept})")
    print(f"frozen preset params: {base.params}")
    candidate = replace(base, params=(round(a0, 4), round(a1, 4), args.intercept))

    spec = WelfareSpec("kendall_tau", target_t=0.0)
    L = PolicyTree.leaf
    rules = {"treat-all": L(1), "treat-none": L(0)}
    for c in np.arange(1, 10) / 10:
        rules[f"treat x1<={c:.1f}"] = PolicyTree.split(0, c, L(1), L(0))
    for name, rule in rules.items():
        v = oracle_welfare(candidate, rule, spec, args.mc_draws, seed=1)
        print(f"{name:<16} tau={v.raw:+.4f} (MC se {v.se:.4f})")


if __name__ == "__main__":
    main()
