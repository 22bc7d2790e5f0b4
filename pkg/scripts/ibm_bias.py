"""Duality gap of the individual-based model as the colony size M grows.

The gap should fall like 1/M; the control-variate estimator keeps its
standard error far below the bias.

    python3 scripts/ibm_bias.py [--reps 2000]
"""
import argparse

import numpy as np

from cannings_lab.coalescent import LabelledPartition
from cannings_lab.forward import ForwardConfig, PopulationField, duality_gap
from cannings_lab.hiergeo import mean_field
from cannings_lab.lambda_measure import LambdaMeasure


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=2000)
    ap.add_argument("--t", type=float, default=1.0)
    args = ap.parse_args()
    g = mean_field(4)
    F = np.array([[0.9, 0.1], [0.2, 0.8], [0.5, 0.5], [0.3, 0.7]])
    phi = np.array([[1.0, 0.0], [0.0, 0.0]])
    pi0 = LabelledPartition.singletons(2, [0, 0])
    print(f"{'M':>6s} {'gap':>11s} {'SE':>9s} {'M * gap':>9s}")
    for M in (100, 250, 500, 1000, 2000):
        cfg = ForwardConfig(g, [1.0], (LambdaMeasure.point(0.5),), M=M)
        x0 = PopulationField("ibm", np.rint(F * M), g, M)
        r = duality_gap(cfg, x0, pi0, phi, args.t, args.reps, estimator="cv", rng=np.random.default_rng(M))
        print(f"{M:6d} {r.gap:11.3e} {r.se:9.1e} {M * r.gap:9.4f}")


if __name__ == "__main__":
    main()
