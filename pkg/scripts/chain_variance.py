"""Interaction chain: sampled E var_{M_-k}(psi) per level vs the product of step factors.

    python3 scripts/chain_variance.py [--j 2] [--reps 4000]
"""
import argparse

import numpy as np

from cannings_lab.families import CoefficientFamily as CF
from cannings_lab.lambda_measure import LambdaMeasure
from cannings_lab.mckv import sample_interaction_chain
from cannings_lab.renorm import dk_flow


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--j", type=int, default=2)
    ap.add_argument("--reps", type=int, default=4000)
    ap.add_argument("--lam", type=float, default=1.0, help="lambda_k, carried by an atom at r = 1/2")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    j, theta = args.j, np.array([0.3, 0.7])
    flow = dk_flow(CF.explicit([1.0] * (j + 1), 1.0), CF.explicit([args.lam / 2] * (j + 1)), k_max=j + 1)
    lams = [LambdaMeasure.point(0.5, args.lam)] * (j + 1)
    s = sample_interaction_chain(j, flow.c, lams, flow.d, theta, args.reps, rng=args.seed)
    ev, se = s.expected_variance([1.0, 0.0])
    var_theta = theta[0] * theta[1]
    print(f"{'level':>5s} {'E var':>9s} {'SE':>8s} {'product':>9s}")
    for pos in range(j + 2):
        level = j + 1 - pos
        pred = var_theta * np.prod(1.0 / (1.0 + flow.m[level:j + 1]))
        print(f"{level:5d} {ev[pos]:9.5f} {se[pos]:8.5f} {pred:9.5f}")


if __name__ == "__main__":
    main()
