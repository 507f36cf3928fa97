"""Run an experiment config and write CSV artifacts plus the markdown report.

    python3 scripts/run_grid.py configs/desk.toml results/desk

Equivalent to ``dmlk run-sim``; set DMLK_THREADS for worker processes.
"""

import logging
import sys
from pathlib import Path

from dmlk.io import load_config, write_artifacts
from dmlk.montecarlo import run_grid


def main(config, out):
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = load_config(config)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    records = run_grid(cfg.cells())
    write_artifacts(out, records)
    print((out / "report.md").read_text())


if __name__ == "__main__":
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    main(*sys.argv[1:])
