"""High-dimensional lasso study (n=200, p=500) with monotonicity diagnostics.

    python3 scripts/highdim_study.py [b_reps] [out_dir]
"""

import logging
import sys
from pathlib import Path

from dmlk.io import write_artifacts
from dmlk.montecarlo import run_highdim_study


def main(b_reps=200, out="results/highdim"):
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    study = run_highdim_study((0.75, 0.90, 0.97), b_reps=b_reps, base_seed=20240607)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_artifacts(out, study.records)
    print(f"{'r2':>6} {'median kappa':>13} {'coverage':>9} {'CI length':>10} regime")
    for s in study.summaries:
        print(f"{s.r2_target:6.2f} {s.median_kappa:13.4f} {s.coverage:9.3f} "
              f"{s.avg_ci_length:10.4f} {s.regime}")
    print(f"kappa strictly increasing: {study.kappa_increasing}")
    print(f"coverage non-increasing:   {study.coverage_nonincreasing}")


if __name__ == "__main__":
    args = sys.argv[1:]
    main(int(args[0]) if args else 200, *(args[1:2] or []))
