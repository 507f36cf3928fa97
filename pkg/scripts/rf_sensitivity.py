"""Forest cells under alternative feature-subsampling and leaf-size settings.

Compares median kappa, coverage and bias of the low-dimensional forest cells
for mtry = ceil(p/3) (package default) against mtry = p.

    python3 scripts/rf_sensitivity.py [b_reps]
"""

import sys

from dmlk.learners import ForestParams, LearnerKind, LearnerSpec
from dmlk.montecarlo import CellConfig, aggregate_cell, run_cell

SETTINGS = {
    "mtry=ceil(p/3), min_leaf=5": ForestParams(),
    "mtry=p, min_leaf=5": ForestParams(mtry=10),
    "mtry=p, min_leaf=1": ForestParams(mtry=10, min_leaf=1),
}


def main(b_reps=50):
    print(f"{'setting':<28} {'n':>5} {'r2':>5} {'kappa':>7} {'cover':>6} {'bias':>8}")
    for label, params in SETTINGS.items():
        for n in (500, 2000):
            for r2 in (0.75, 0.90, 0.97):
                cfg = CellConfig("lowdim", 10, n, r2, LearnerSpec(LearnerKind.RF, rf=params),
                                 b_reps, base_seed=20240607, beta_pattern="geometric")
                s = aggregate_cell(run_cell(cfg))
                print(f"{label:<28} {n:5d} {r2:5.2f} {s.median_kappa:7.3f} "
                      f"{s.coverage:6.3f} {s.mean_bias:8.4f}", flush=True)


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 50)
