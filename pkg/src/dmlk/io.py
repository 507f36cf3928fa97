"""Dataset CSV ingestion, experiment configs, and artifact files.

Floats are written with ``repr`` (shortest round-trip form), so a value read
back is bit-identical to the one written.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import tomli

from .dgp import BetaPattern, Dataset, Design
from .errors import ConfigError, DataError, DmlkError
from .learners import ForestParams, LassoParams, LearnerKind, LearnerSpec
from .montecarlo import (CELL_COLUMNS, DESIGN_COLUMNS, REGIME_COLUMNS, REP_COLUMNS, CellConfig,
                         CellSummary, DesignRow, RegimeRow, RepRecord, aggregate_cells,
                         design_table, regime_table, sort_records)


def fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


# ---------------------------------------------------------------- datasets

ORACLE_COLUMNS = ("oracle_true_m", "oracle_true_l", "oracle_eps", "oracle_u")


def write_dataset_csv(ds: Dataset, path, oracle: bool = False) -> None:
    """Header ``y,d,x1..xp``; with ``oracle`` the true nuisance values follow
    in ``oracle_*`` columns."""
    header = ["y", "d"] + [f"x{j + 1}" for j in range(ds.p)]
    columns = [ds.y, ds.d] + list(ds.x.T)
    if oracle:
        if ds.oracle is None:
            raise DataError("dataset has no oracle to export")
        o = ds.oracle
        header += list(ORACLE_COLUMNS)
        columns += [o.true_m, o.true_l, o.eps, o.u]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([repr(float(v)) for v in row])


def read_dataset_csv(path) -> Dataset:
    """Parse a ``y,d,x1..xp`` file; errors name the offending row and column.

    Trailing ``oracle_*`` columns are validated and then ignored: the
    covariate coefficients behind them cannot be recovered from a file.
    """
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file, expected header y,d,x1..xp")
        header = [h.strip() for h in header]
        n_oracle = sum(h.startswith("oracle_") for h in header)
        p = len(header) - 2 - n_oracle
        expected = ["y", "d"] + [f"x{j + 1}" for j in range(p)]
        if p < 1 or header[:p + 2] != expected or not all(
                h.startswith("oracle_") for h in header[p + 2:]):
            raise DataError(f"{path}: header must be y,d,x1..xp, got {','.join(header)}")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {line_no} has {len(row)} fields, "
                                f"expected {len(header)}")
            parsed = []
            for name, cell in zip(header, row):
                try:
                    value = float(cell)
                except ValueError:
                    raise DataError(f"{path}: row {line_no}, column {name}: "
                                    f"not a number: {cell!r}") from None
                if not math.isfinite(value):
                    raise DataError(f"{path}: row {line_no}, column {name}: "
                                    f"non-finite value {cell!r}")
                parsed.append(value)
            rows.append(parsed[:p + 2])
    if not rows:
        raise DataError(f"{path}: no data rows")
    a = np.array(rows)
    return Dataset(y=a[:, 0], d=a[:, 1], x=a[:, 2:])


# ----------------------------------------------------------------- configs

@dataclass(frozen=True)
class ExperimentConfig:
    design: Design
    p: int
    n: Tuple[int, ...]
    r2_target: Tuple[float, ...]
    learners: Tuple[LearnerSpec, ...]
    b_reps: int
    k_folds: int = 5
    alpha: float = 0.05
    base_seed: int = 0
    rho: float = 0.5
    beta_pattern: Optional[BetaPattern] = None
    out: Optional[str] = None

    def cells(self) -> List[CellConfig]:
        """Grid in (n, r2_target, learner) order."""
        return [CellConfig(self.design, self.p, n, r2, learner, self.b_reps, self.k_folds,
                           self.alpha, self.base_seed, self.rho, self.beta_pattern)
                for n in self.n for r2 in self.r2_target for learner in self.learners]


_TOP_KEYS = {"design", "p", "n", "r2_target", "learners", "b_reps", "k_folds", "alpha",
             "base_seed", "rho", "beta_pattern", "out"}
_LASSO_KEYS = {f"lasso_{f.name}": f.name for f in fields(LassoParams)}
_RF_KEYS = {f"rf_{f.name}": f.name for f in fields(ForestParams)}
_REQUIRED = ("design", "p", "n", "r2_target", "learners", "b_reps")


def _expect(key, value, kind):
    ok = {
        "int": isinstance(value, int) and not isinstance(value, bool),
        "float": isinstance(value, (int, float)) and not isinstance(value, bool),
        "str": isinstance(value, str),
        "bool": isinstance(value, bool),
    }[kind]
    if not ok:
        raise ConfigError(f"{key}: expected {kind}, got {value!r}")
    return float(value) if kind == "float" else value


def _as_list(key, value, kind):
    items = value if isinstance(value, list) else [value]
    if not items:
        raise ConfigError(f"{key}: list must not be empty")
    return tuple(_expect(key, v, kind) for v in items)


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a flat key/value mapping. Unknown keys are rejected."""
    unknown = sorted(set(raw) - _TOP_KEYS - set(_LASSO_KEYS) - set(_RF_KEYS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    missing = [k for k in _REQUIRED if k not in raw]
    if missing:
        raise ConfigError(f"missing required config key(s): {', '.join(missing)}")
    try:
        design = Design(_expect("design", raw["design"], "str"))
    except ValueError:
        raise ConfigError(f"design: must be one of lowdim, highdim, got {raw['design']!r}") from None
    lasso = {}
    for key, name in _LASSO_KEYS.items():
        if key in raw:
            kind = {"lambda_grid": None, "lambda_ratio": "float", "tol": "float"}.get(name, "int")
            lasso[name] = (_as_list(key, raw[key], "float") if kind is None
                           else _expect(key, raw[key], kind))
    rf = {}
    for key, name in _RF_KEYS.items():
        if key in raw:
            rf[name] = _expect(key, raw[key], "bool" if name == "bootstrap" else "int")
    learners = []
    for name in _as_list("learners", raw["learners"], "str"):
        try:
            kind = LearnerKind(name)
        except ValueError:
            raise ConfigError(f"learners: unknown learner {name!r} (use lin, las, rf)") from None
        try:
            learners.append(LearnerSpec(kind, LassoParams(**lasso), ForestParams(**rf)))
        except DmlkError as exc:
            raise ConfigError(f"learner settings: {exc}") from None
    if len(set(learners)) != len(learners):
        raise ConfigError("learners: duplicate entries")
    beta_pattern = raw.get("beta_pattern")
    if beta_pattern is not None:
        try:
            beta_pattern = BetaPattern(_expect("beta_pattern", beta_pattern, "str"))
        except ValueError:
            raise ConfigError(f"beta_pattern: must be linear or geometric, "
                              f"got {beta_pattern!r}") from None
    cfg = ExperimentConfig(
        design=design,
        p=_expect("p", raw["p"], "int"),
        n=_as_list("n", raw["n"], "int"),
        r2_target=_as_list("r2_target", raw["r2_target"], "float"),
        learners=tuple(learners),
        b_reps=_expect("b_reps", raw["b_reps"], "int"),
        k_folds=_expect("k_folds", raw.get("k_folds", 5), "int"),
        alpha=_expect("alpha", raw.get("alpha", 0.05), "float"),
        base_seed=_expect("base_seed", raw.get("base_seed", 0), "int"),
        rho=_expect("rho", raw.get("rho", 0.5), "float"),
        beta_pattern=beta_pattern,
        out=_expect("out", raw["out"], "str") if "out" in raw else None,
    )
    checks = [
        ("b_reps", cfg.b_reps >= 1, "must be >= 1"),
        ("k_folds", cfg.k_folds >= 2, "must be >= 2"),
        ("alpha", 0.0 < cfg.alpha < 1.0, "must lie in (0, 1)"),
        ("base_seed", cfg.base_seed >= 0, "must be >= 0"),
        ("rho", 0.0 <= cfg.rho < 1.0, "must lie in [0, 1)"),
        ("r2_target", all(0.0 < r < 1.0 for r in cfg.r2_target), "values must lie in (0, 1)"),
        ("n", all(v >= 2 * cfg.k_folds for v in cfg.n), "values must be >= 2 * k_folds"),
        ("p", cfg.p >= 1, "must be >= 1"),
    ]
    for key, ok, msg in checks:
        if not ok:
            raise ConfigError(f"{key}: {msg}, got {raw.get(key, getattr(cfg, key))!r}")
    if len(set(cfg.n)) != len(cfg.n) or len(set(cfg.r2_target)) != len(cfg.r2_target):
        raise ConfigError("n and r2_target must not contain duplicates")
    try:
        cfg.cells()
    except DmlkError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    nested = [k for k, v in raw.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"{path}: tables are not allowed, use flat keys ({', '.join(nested)})")
    return parse_config(raw)


# --------------------------------------------------------------- artifacts

ARTIFACTS = ("reps.csv", "cells.csv", "regimes.csv", "design.csv", "report.md")


def _write_rows(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(getattr(row, c)) for c in columns])


def write_reps(path, records: Sequence[RepRecord]) -> None:
    _write_rows(path, REP_COLUMNS, records)


_INT_FIELDS = {"p", "n", "rep", "seed"}
_FLOAT_FIELDS = {"r2_target", "theta_hat", "se", "ci_lo", "ci_hi", "kappa", "bias",
                 "sq_error", "sample_r2"}


def read_reps(path) -> List[RepRecord]:
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        if tuple(header) != REP_COLUMNS:
            raise DataError(f"{path}: header does not match the replication schema "
                            f"({','.join(REP_COLUMNS)})")
        records = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(REP_COLUMNS):
                raise DataError(f"{path}: row {line_no} has {len(row)} fields, "
                                f"expected {len(REP_COLUMNS)}")
            values = {}
            for name, cell in zip(REP_COLUMNS, row):
                try:
                    if name in _INT_FIELDS:
                        values[name] = int(cell)
                    elif name in _FLOAT_FIELDS:
                        values[name] = float(cell)
                    elif name == "covered":
                        if cell not in ("0", "1"):
                            raise ValueError
                        values[name] = cell == "1"
                    else:
                        values[name] = cell
                except ValueError:
                    raise DataError(f"{path}: row {line_no}, column {name}: "
                                    f"bad value {cell!r}") from None
            if values["status"] not in ("ok", "failed"):
                raise DataError(f"{path}: row {line_no}: unknown status {values['status']!r}")
            records.append(RepRecord(**values))
    if not records:
        raise DataError(f"{path}: no replication rows")
    return records


def _cell(value, digits=3):
    if isinstance(value, float):
        return "NA" if math.isnan(value) else f"{value:.{digits}f}"
    return str(value)


def _md_table(header, rows) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(_cell(v) for v in row) + " |" for row in rows]
    return "\n".join(lines)


def render_report(cells: Sequence[CellSummary], regimes: Sequence[RegimeRow],
                  design: Sequence[DesignRow]) -> str:
    parts = ["# Monte Carlo report", ""]
    parts += ["## Median kappa by overlap level", "",
              _md_table(["Design", "R2 target", "Cells", "Reps", "Median kappa", "Mean kappa",
                         "SD kappa"],
                        [(d.design, d.r2_target, d.n_cells, d.n_reps, d.median_kappa,
                          d.mean_kappa, d.sd_kappa) for d in design]), ""]
    parts += ["## Cell-level summary", "",
              _md_table(["Design", "n", "p", "R2 target", "Learner", "Median kappa",
                         "Mean kappa", "Coverage", "Avg CI length", "Mean bias", "RMSE",
                         "Regime", "Failures"],
                        [(c.design, c.n, c.p, c.r2_target, c.learner.upper(), c.median_kappa,
                          c.mean_kappa, c.coverage, c.avg_ci_length, c.mean_bias, c.rmse,
                          c.regime or "NA", c.failures) for c in cells]), ""]
    parts += ["## Coverage and CI length by kappa regime and learner", "",
              _md_table(["Regime", "Learner", "Cells", "Reps", "Coverage (%)",
                         "Avg CI length", "Mean bias", "RMSE"],
                        [(r.regime, r.learner.upper(), r.n_cells, r.n_reps,
                          100.0 * r.coverage, r.avg_ci_length, r.mean_bias, r.rmse)
                         for r in regimes]), ""]
    highdim = [c for c in cells if c.design == Design.HIGHDIM.value]
    if highdim:
        kappas = [c.median_kappa for c in highdim]
        covs = [c.coverage for c in highdim]
        parts += ["## High-dimensional design", "",
                  _md_table(["n", "p", "R2 target", "Median kappa", "Coverage (%)",
                             "Avg CI length", "Regime"],
                            [(c.n, c.p, c.r2_target, c.median_kappa, 100.0 * c.coverage,
                              c.avg_ci_length, c.regime or "NA") for c in highdim]), "",
                  f"- median kappa strictly increasing in R2: "
                  f"{all(a < b for a, b in zip(kappas, kappas[1:]))}",
                  f"- coverage non-increasing in R2: "
                  f"{all(a >= b for a, b in zip(covs, covs[1:]))}", ""]
    return "\n".join(parts)


def write_aggregates(out_dir, records: Sequence[RepRecord]) -> List[Path]:
    """Write cells, regimes, design and the markdown report; returns the paths."""
    out_dir = Path(out_dir)
    records = sort_records(records)
    cells = aggregate_cells(records)
    regimes = regime_table(cells, records)
    design = design_table(cells, records)
    paths = [out_dir / name for name in ARTIFACTS[1:]]
    _write_rows(paths[0], CELL_COLUMNS, cells)
    _write_rows(paths[1], REGIME_COLUMNS, regimes)
    _write_rows(paths[2], DESIGN_COLUMNS, design)
    paths[3].write_text(render_report(cells, regimes, design))
    return paths


def write_artifacts(out_dir, records: Sequence[RepRecord]) -> List[Path]:
    out_dir = Path(out_dir)
    write_reps(out_dir / ARTIFACTS[0], records)
    return [out_dir / ARTIFACTS[0]] + write_aggregates(out_dir, records)
