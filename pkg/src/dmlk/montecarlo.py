"""Replication loops, cell and regime aggregation, and the high-dimensional study.

Replication ``r`` of a cell draws everything from
``SeededStream(derive_seed(base_seed, cell.key, r))``, so records depend only
on the configuration and never on which worker ran them. Aggregation sorts
records by ``(cell, rep)`` before reducing.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .dgp import BetaPattern, Design, gen_sample, make_spec, realized_r2
from .dml import Regime, classify_regime, run_dml
from .errors import DataError, DmlkError, SpecError
from .learners import LassoParams, LearnerKind, LearnerSpec
from .stochastics import SeededStream, derive_seed

log = logging.getLogger(__name__)

THREADS_ENV = "DMLK_THREADS"
LEARNER_ORDER = (LearnerKind.LIN, LearnerKind.LAS, LearnerKind.RF)
REGIME_ORDER = (Regime.WELL, Regime.MODERATE, Regime.SEVERE)


@dataclass(frozen=True)
class CellConfig:
    design: Design
    p: int
    n: int
    r2_target: float
    learner: LearnerSpec
    b_reps: int
    k_folds: int = 5
    alpha: float = 0.05
    base_seed: int = 0
    rho: float = 0.5
    beta_pattern: Optional[BetaPattern] = None

    def __post_init__(self):
        object.__setattr__(self, "design", Design(self.design))
        if self.beta_pattern is not None:
            object.__setattr__(self, "beta_pattern", BetaPattern(self.beta_pattern))
        if self.b_reps < 1:
            raise SpecError(f"b_reps must be >= 1, got {self.b_reps}")
        if self.k_folds < 2:
            raise SpecError(f"k_folds must be >= 2, got {self.k_folds}")
        if self.n < 2 * self.k_folds:
            raise SpecError(f"n = {self.n} is below 2 * k_folds = {2 * self.k_folds}")
        if not 0.0 < self.alpha < 1.0:
            raise SpecError(f"alpha must lie in (0, 1), got {self.alpha}")
        # Validates design, p and r2_target.
        self.dgp()

    def dgp(self):
        return make_spec(self.design, self.p, self.rho, self.r2_target, self.beta_pattern)

    @property
    def key(self) -> str:
        """Stable identifier; also the seed key of the cell."""
        return (f"{self.design.value}-p{self.p}-n{self.n}-r2_{self.r2_target!r}"
                f"-{self.learner.kind.value}")


@dataclass(frozen=True)
class RepRecord:
    cell: str
    design: str
    p: int
    n: int
    r2_target: float
    learner: str
    rep: int
    seed: int
    status: str  # "ok" or "failed"
    theta_hat: float
    se: float
    ci_lo: float
    ci_hi: float
    kappa: float
    covered: bool
    bias: float
    sq_error: float
    sample_r2: float
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"


REP_COLUMNS = tuple(f.name for f in fields(RepRecord))


@dataclass(frozen=True)
class CellSummary:
    cell: str
    design: str
    p: int
    n: int
    r2_target: float
    learner: str
    b_reps: int
    failures: int
    median_kappa: float
    mean_kappa: float
    sd_kappa: float
    coverage: float
    avg_ci_length: float
    mean_bias: float
    rmse: float
    regime: str  # interval label of the median kappa; empty if every rep failed


CELL_COLUMNS = tuple(f.name for f in fields(CellSummary))


@dataclass(frozen=True)
class RegimeRow:
    regime: str
    learner: str
    n_cells: int
    n_reps: int
    coverage: float
    avg_ci_length: float
    mean_bias: float
    rmse: float


REGIME_COLUMNS = tuple(f.name for f in fields(RegimeRow))


@dataclass(frozen=True)
class DesignRow:
    design: str
    r2_target: float
    n_cells: int
    n_reps: int
    median_kappa: float
    mean_kappa: float
    sd_kappa: float


DESIGN_COLUMNS = tuple(f.name for f in fields(DesignRow))


def rep_seed(cfg: CellConfig, rep: int) -> int:
    return derive_seed(cfg.base_seed, cfg.key, rep)


def run_replication(cfg: CellConfig, rep: int) -> RepRecord:
    """One replication; learner and data errors become a failed record."""
    seed = rep_seed(cfg, rep)
    stream = SeededStream(seed)
    ident = dict(cell=cfg.key, design=cfg.design.value, p=cfg.p, n=cfg.n,
                 r2_target=cfg.r2_target, learner=cfg.learner.kind.value, rep=rep, seed=seed)
    ds = gen_sample(cfg.dgp(), cfg.n, stream.fork("data"))
    try:
        fit = run_dml(ds, cfg.learner, cfg.k_folds, cfg.alpha, stream.fork("dml"))
    except DmlkError as exc:
        nan = math.nan
        return RepRecord(**ident, status="failed", theta_hat=nan, se=nan, ci_lo=nan, ci_hi=nan,
                         kappa=nan, covered=False, bias=nan, sq_error=nan,
                         sample_r2=realized_r2(ds), error=f"{type(exc).__name__}: {exc}")
    theta0 = ds.oracle.theta0
    lo, hi = fit.ci
    bias = fit.theta_hat - theta0
    return RepRecord(**ident, status="ok", theta_hat=fit.theta_hat, se=fit.se, ci_lo=lo,
                     ci_hi=hi, kappa=fit.kappa, covered=bool(lo <= theta0 <= hi), bias=bias,
                     sq_error=bias * bias, sample_r2=realized_r2(ds))


def _run_chunk(args):
    cfg, reps = args
    return [run_replication(cfg, r) for r in reps]


def default_workers() -> int:
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return 1
    try:
        workers = int(raw)
    except ValueError:
        raise SpecError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if workers < 1:
        raise SpecError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return workers


def run_grid(cells: Sequence[CellConfig], workers: Optional[int] = None,
             chunk: int = 25) -> List[RepRecord]:
    """All replications of all cells, in (cell order, rep) order."""
    workers = default_workers() if workers is None else workers
    jobs = [(cfg, range(start, min(start + chunk, cfg.b_reps)))
            for cfg in cells for start in range(0, cfg.b_reps, chunk)]
    out: List[RepRecord] = []
    if workers == 1:
        for i, job in enumerate(jobs):
            out.extend(_run_chunk(job))
            log.info("chunk %d/%d done (%s)", i + 1, len(jobs), job[0].key)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, recs in enumerate(pool.map(_run_chunk, jobs)):
                out.extend(recs)
                log.info("chunk %d/%d done (%s)", i + 1, len(jobs), jobs[i][0].key)
    order = {cfg.key: i for i, cfg in enumerate(cells)}
    return sort_records(out, order)


def sort_records(records: Iterable[RepRecord], cell_order=None) -> List[RepRecord]:
    records = list(records)
    if cell_order is None:
        cell_order = {}
        for rec in records:
            cell_order.setdefault(rec.cell, len(cell_order))
    return sorted(records, key=lambda r: (cell_order[r.cell], r.rep))


def run_cell(cfg: CellConfig, workers: Optional[int] = None) -> List[RepRecord]:
    return run_grid([cfg], workers)


def median(values) -> float:
    """Median; the two central order statistics are averaged for even counts."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise DataError("median of an empty sample")
    mid = v.size // 2
    if v.size % 2:
        return float(v[mid])
    return float((v[mid - 1] + v[mid]) / 2.0)


def _sd(values) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def _pooled(records):
    covered = np.array([r.covered for r in records], dtype=float)
    length = np.array([r.ci_hi - r.ci_lo for r in records])
    bias = np.array([r.bias for r in records])
    sq = np.array([r.sq_error for r in records])
    return (float(covered.mean()), float(length.mean()), float(bias.mean()),
            math.sqrt(float(sq.mean())))


def aggregate_cell(records: Sequence[RepRecord]) -> CellSummary:
    """Summary of one cell; failed replications are counted, not averaged."""
    records = list(records)
    if not records:
        raise DataError("cannot aggregate an empty set of replications")
    first = records[0]
    if any(r.cell != first.cell for r in records):
        raise DataError("records from more than one cell")
    ok = sort_records([r for r in records if r.ok])
    ident = dict(cell=first.cell, design=first.design, p=first.p, n=first.n,
                 r2_target=first.r2_target, learner=first.learner, b_reps=len(records),
                 failures=len(records) - len(ok))
    if not ok:
        nan = math.nan
        return CellSummary(**ident, median_kappa=nan, mean_kappa=nan, sd_kappa=nan,
                           coverage=nan, avg_ci_length=nan, mean_bias=nan, rmse=nan, regime="")
    kappa = [r.kappa for r in ok]
    coverage, length, bias, rmse = _pooled(ok)
    med = median(kappa)
    return CellSummary(**ident, median_kappa=med, mean_kappa=float(np.mean(kappa)),
                       sd_kappa=_sd(kappa), coverage=coverage, avg_ci_length=length,
                       mean_bias=bias, rmse=rmse, regime=classify_regime(med).interval)


def group_by_cell(records: Sequence[RepRecord]):
    groups = {}
    for rec in records:
        groups.setdefault(rec.cell, []).append(rec)
    return groups


def aggregate_cells(records: Sequence[RepRecord]) -> List[CellSummary]:
    return [aggregate_cell(group) for group in group_by_cell(records).values()]


def _learner_rank(label):
    values = [k.value for k in LEARNER_ORDER]
    return values.index(label) if label in values else len(values)


def regime_table(summaries: Sequence[CellSummary], records: Sequence[RepRecord]) -> List[RegimeRow]:
    """Cells grouped by (regime of median kappa, learner); statistics pooled
    over the successful replications of the member cells."""
    by_cell = group_by_cell([r for r in records if r.ok])
    groups = {}
    for s in summaries:
        if s.regime:
            groups.setdefault((s.regime, s.learner), []).append(s.cell)
    rows = []
    for regime in REGIME_ORDER:
        keys = sorted((k for k in groups if k[0] == regime.interval),
                      key=lambda k: _learner_rank(k[1]))
        for key in keys:
            pooled = [r for cell in groups[key] for r in by_cell.get(cell, [])]
            coverage, length, bias, rmse = _pooled(pooled)
            rows.append(RegimeRow(regime.interval, key[1], len(groups[key]), len(pooled),
                                  coverage, length, bias, rmse))
    return rows


def design_table(summaries: Sequence[CellSummary], records: Sequence[RepRecord]) -> List[DesignRow]:
    """Kappa statistics per (design, overlap level), pooled over sample sizes
    and learners."""
    by_cell = group_by_cell([r for r in records if r.ok])
    groups = {}
    for s in summaries:
        groups.setdefault((s.design, s.r2_target), []).append(s.cell)
    rows = []
    for design, r2 in sorted(groups):
        cells = groups[(design, r2)]
        kappa = [r.kappa for cell in cells for r in by_cell.get(cell, [])]
        if kappa:
            rows.append(DesignRow(design, r2, len(cells), len(kappa), median(kappa),
                                  float(np.mean(kappa)), _sd(kappa)))
        else:
            rows.append(DesignRow(design, r2, len(cells), 0, math.nan, math.nan, math.nan))
    return rows


@dataclass(frozen=True)
class HighDimStudy:
    summaries: List[CellSummary]
    records: List[RepRecord] = field(repr=False)

    @property
    def kappa_increasing(self) -> bool:
        k = [s.median_kappa for s in self.summaries]
        return all(a < b for a, b in zip(k, k[1:]))

    @property
    def coverage_nonincreasing(self) -> bool:
        c = [s.coverage for s in self.summaries]
        return all(a >= b for a, b in zip(c, c[1:]))


HIGHDIM_LEARNER = LearnerSpec(LearnerKind.LAS, lasso=LassoParams(cv_patience=10))


def highdim_cells(r2_grid=(0.75, 0.90, 0.97), b_reps: int = 200, n: int = 200, p: int = 500,
                  base_seed: int = 0, learner: LearnerSpec = HIGHDIM_LEARNER, **kwargs):
    if learner.kind is not LearnerKind.LAS:
        raise SpecError("the high-dimensional study uses the lasso learner only")
    return [CellConfig(Design.HIGHDIM, p, n, r2, learner, b_reps, base_seed=base_seed, **kwargs)
            for r2 in sorted(r2_grid)]


def run_highdim_study(r2_grid=(0.75, 0.90, 0.97), b_reps: int = 200, n: int = 200,
                      p: int = 500, base_seed: int = 0, workers: Optional[int] = None,
                      learner: LearnerSpec = HIGHDIM_LEARNER, **kwargs) -> HighDimStudy:
    """One summary per overlap level, in increasing r2 order."""
    cells = highdim_cells(r2_grid, b_reps, n, p, base_seed, learner, **kwargs)
    records = run_grid(cells, workers)
    return HighDimStudy(aggregate_cells(records), records)


def as_row(obj) -> dict:
    return asdict(obj)
