"""Fit every ALM preset and compare the ratios with the exact ones.

    python3 scripts/dice_presets.py --n 5000
"""
import argparse

import numpy as np

from opeval.data import collect
from opeval.errors import ConvergenceError
from opeval.fitting import PRESETS, fit_alm, oracle_marginal_weights, preset
from opeval.mdp import make_random_mdp, optimal_q_function
from opeval.policies import PolicyHead


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=5000)
    ap.add_argument("--horizon", type=int, default=20)
    ap.add_argument("--discount", type=float, default=0.9)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    mdp = make_random_mdp(3, 2, args.horizon, args.discount, seed=args.seed)
    q = optimal_q_function(mdp)
    behavior = PolicyHead("epsilon_greedy", 0.7, "behavior").apply(q)
    target = PolicyHead("epsilon_greedy", 0.3, "target").apply(q)
    ds = collect(mdp, behavior, args.n, args.seed)
    exact = oracle_marginal_weights(mdp, target, behavior).rho_state_action

    print(f"{'preset':14s} {'row':32s} {'max |rho - rho*|':>17s}")
    for name in PRESETS:
        hp = preset(name)
        try:
            w, _, _ = fit_alm(ds, target, hp)
            gap = f"{np.abs(w.rho_state_action - exact).max():17.4f}"
        except ConvergenceError as err:
            gap = f"{'no convergence':>17s}"
            print(f"  ({name}: {err})")
        print(f"{name:14s} {str(hp.table_row()):32s} {gap}")


if __name__ == "__main__":
    main()
