"""Pair-coalescence hazard: closed form vs Monte Carlo as the group order N grows.

c_k = 4^k, lambda_k = 2^-k; the large-N form is printed for reference.

    python3 scripts/hazard_vs_order.py [--reps 20000]
"""
import argparse

from cannings_lab.coalescent import pair_hazard_mc
from cannings_lab.families import CoefficientFamily as CF
from cannings_lab.renorm import hazard_closed_form, hazard_large_N


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()
    c, lam = CF.exp(4.0), CF.exp(0.5)
    print(f"large-N limit: {hazard_large_N(c, lam, 40):.5f}")
    print(f"{'N':>5s} {'closed':>9s} {'second':>9s} {'MC':>9s} {'SE':>8s}")
    for N in (8, 16, 32, 64, 128, 256):
        hz = hazard_closed_form(N, c, lam, 40)
        mc, se = pair_hazard_mc(N, c, lam, reps=args.reps, seed=args.seed)
        print(f"{N:5d} {hz.first:9.5f} {hz.second:9.5f} {mc:9.5f} {se:8.5f}")


if __name__ == "__main__":
    main()
