"""Median kappa of the OLS learner under both treatment-coefficient patterns.

    python3 scripts/beta_pattern_check.py [b_reps]
"""

import sys

from dmlk.dgp import beta_for
from dmlk.learners import LearnerKind, LearnerSpec
from dmlk.montecarlo import CellConfig, aggregate_cell, run_cell
from dmlk.stochastics import toeplitz_sigma


def main(b_reps=100):
    sigma = toeplitz_sigma(10, 0.5)
    for pattern in ("linear", "geometric"):
        beta = beta_for(pattern, 10)
        print(f"{pattern}: beta' Sigma beta = {beta @ sigma @ beta:.4f}")
        for n in (500, 2000):
            for r2 in (0.75, 0.90, 0.97):
                cfg = CellConfig("lowdim", 10, n, r2, LearnerSpec(LearnerKind.LIN), b_reps,
                                 base_seed=1, beta_pattern=pattern)
                s = aggregate_cell(run_cell(cfg))
                print(f"  n={n:5d} r2={r2:.2f} median kappa={s.median_kappa:.4f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 100)
