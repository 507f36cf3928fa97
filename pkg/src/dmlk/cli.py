"""``dmlk`` command line: run-sim, diagnose, report.

Exit codes: 0 success, 2 invalid arguments or configuration, 3 runtime or
data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

from .dml import Regime, run_dml
from .errors import ConfigError, DataError, DmlkError, SpecError
from .io import ARTIFACTS, load_config, read_dataset_csv, read_reps, write_aggregates, write_artifacts
from .learners import LearnerKind, LearnerSpec
from .montecarlo import run_grid
from .stochastics import SeededStream

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("dmlk")

GUIDANCE = {
    Regime.WELL: ("kappa_DML < 1: residual treatment variation is ample and the usual "
                  "DML interval can be relied on."),
    Regime.MODERATE: ("1 <= kappa_DML < 2: the score is flat enough that small nuisance "
                      "errors are amplified; examine the estimate and its interval closely."),
    Regime.SEVERE: ("kappa_DML >= 2: weak overlap makes the estimate fragile; nuisance bias "
                    "is strongly amplified and the interval may undercover, so examine it "
                    "closely before drawing conclusions."),
}


@dataclass
class DiagnoseReport:
    theta_hat: float
    se: float
    ci: List[float]
    kappa: float
    regime: str
    n: int
    p: int
    learner: str
    k_folds: int
    alpha: float
    seed: int
    warnings: List[str] = field(default_factory=list)

    def render(self) -> str:
        level = round(100 * (1 - self.alpha), 6)
        lines = [
            f"n = {self.n}, p = {self.p}, learner = {self.learner.upper()}, K = {self.k_folds}",
            f"theta_hat = {self.theta_hat:.6g}",
            f"SE        = {self.se:.6g}",
            f"{level:g}% CI    = [{self.ci[0]:.6g}, {self.ci[1]:.6g}]",
            f"kappa_DML = {self.kappa:.6g}",
            f"regime    = {self.regime}",
        ]
        guidance = GUIDANCE[Regime(self.regime)]
        return "\n".join(lines + [f"guidance: {guidance}"]
                         + [f"warning: {w}" for w in self.warnings])


def diagnose(data_path, learner="las", k_folds=5, alpha=0.05, seed=0) -> DiagnoseReport:
    ds = read_dataset_csv(data_path)
    if ds.n < 2 * k_folds:
        raise DataError(f"{data_path}: {ds.n} rows, but {k_folds} folds need at least "
                        f"{2 * k_folds}")
    spec = LearnerSpec(LearnerKind(learner))
    fit = run_dml(ds, spec, k_folds, alpha, SeededStream(seed))
    regime = fit.regime
    warnings = [] if regime is Regime.WELL else [
        f"kappa_DML = {fit.kappa:.3g} is outside the well-conditioned range (< 1)"]
    return DiagnoseReport(fit.theta_hat, fit.se, list(fit.ci), fit.kappa, regime.value,
                          ds.n, ds.p, spec.kind.value, k_folds, alpha, seed, warnings)


def cmd_diagnose(args) -> int:
    report = diagnose(args.data, args.learner, args.folds, args.alpha, args.seed)
    print(report.render())
    if args.json:
        Path(args.json).write_text(json.dumps(asdict(report), indent=2) + "\n")
    return EXIT_OK


def cmd_run_sim(args) -> int:
    cfg = load_config(args.config)
    out = args.out or cfg.out
    if out is None:
        raise ConfigError("out: no output directory (pass --out or set out in the config)")
    out = Path(out)
    cells = cfg.cells()
    out.mkdir(parents=True, exist_ok=True)
    log.info("running %d cells x %d replications", len(cells), cfg.b_reps)
    try:
        records = run_grid(cells)
        write_artifacts(out, records)
    except BaseException:
        for name in ARTIFACTS:
            (out / name).unlink(missing_ok=True)
        raise
    failures = sum(not r.ok for r in records)
    print(f"wrote {len(records)} replications ({failures} failed) and "
          f"{len(cells)} cell summaries to {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    records = read_reps(args.reps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_aggregates(out, records)
    print(f"wrote aggregates for {len(records)} replications to {out}")
    return EXIT_OK


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _open_unit(text):
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmlk", description=(
        "Cross-fitted DML estimates with the kappa_DML condition number."))
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("run-sim", help="run a Monte Carlo grid from a config file")
    sim.add_argument("--config", required=True)
    sim.add_argument("--out", help="output directory (overrides 'out' in the config)")
    sim.set_defaults(func=cmd_run_sim)

    diag = sub.add_parser("diagnose", help="estimate theta and kappa_DML on a CSV dataset")
    diag.add_argument("--data", required=True, help="CSV with header y,d,x1..xp")
    diag.add_argument("--learner", choices=[k.value for k in LearnerKind], default="las")
    diag.add_argument("--folds", type=_positive_int, default=5)
    diag.add_argument("--alpha", type=_open_unit, default=0.05)
    diag.add_argument("--seed", type=int, default=0)
    diag.add_argument("--json", help="also write the report as JSON to this path")
    diag.set_defaults(func=cmd_diagnose)

    rep = sub.add_parser("report", help="recompute aggregate tables from reps.csv")
    rep.add_argument("--reps", required=True)
    rep.add_argument("--out", required=True)
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, SpecError) as exc:
        print(f"dmlk: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DmlkError as exc:
        print(f"dmlk: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
