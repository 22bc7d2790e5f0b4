"""Classify a few coefficient families and show where their d_k flow goes.

    python3 scripts/regimes.py [--k-max 5000]
"""
import argparse

from cannings_lab.families import CoefficientFamily as CF
from cannings_lab.renorm import classify_regime, dichotomy_test

FAMILIES = {
    "c=k+1, mu=2(k+1)": (CF.poly(1.0), CF.poly(1.0, amplitude=2.0)),
    "c=1, mu=k^-2": (CF.poly(0.0), CF.poly(-2.0)),
    "c=1, mu=k^-3": (CF.poly(0.0), CF.poly(-3.0)),
    "c=2^-k, mu=2^-k": (CF.exp(0.5), CF.exp(0.5)),
    "c=2^k, mu=2^-k": (CF.exp(2.0), CF.exp(0.5)),
    "c=k log^3 k, mu=1/k": (CF.poly(1.0, p=3.0), CF.poly(-1.0)),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k-max", type=int, default=5000)
    args = ap.parse_args()
    print(f"{'family':24s} {'case':>12s} {'verdict':>18s} {'limit':>10s} {'flow err':>9s}")
    for name, (c, mu) in FAMILIES.items():
        rep = classify_regime(c, mu)
        if rep.limit_quantity is not None:
            k_max = 150 if rep.family_kind == "exponential" else args.k_max
            _, err = rep.validate_flow(c, mu, k_max)
            lim, err = f"{rep.limit_value:.5f}", f"{err:.2e}"
        else:
            lim = err = "-"
        verdict = rep.verdict or dichotomy_test(c, mu, k_max=args.k_max).verdict
        print(f"{name:24s} {rep.case:>12s} {verdict:>18s} {lim:>10s} {err:>9s}")


if __name__ == "__main__":
    main()
