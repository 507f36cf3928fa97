"""Acceptance criteria at their stated tolerances.

Each test records one PASS/FAIL line, printed in the terminal summary. The
desk-scale grid (18 cells x 200 replications) is simulated twice, the second
time with two worker processes, and shared across criteria 3, 4 and 7.
"""

import math

import numpy as np
import pytest
from scipy import stats

from conftest import CRITERIA_LINES
from dmlk.dgp import gen_sample, make_spec
from dmlk.dml import decompose_linearization, orthogonality_derivative, population_moment, run_dml
from dmlk.io import load_config, write_artifacts
from dmlk.learners import LearnerKind, LearnerSpec
from dmlk.montecarlo import (CellConfig, aggregate_cells, design_table, regime_table, run_cell,
                             run_grid, run_highdim_study)
from dmlk.stochastics import SeededStream

pytestmark = pytest.mark.acceptance


def record(label, ok, detail):
    CRITERIA_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
    assert ok, f"{label}: {detail}"


def within(value, target, tol):
    return abs(value - target) <= tol


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    cfg = load_config("configs/desk.toml")
    records = run_grid(cfg.cells(), workers=1)
    out = tmp_path_factory.mktemp("desk")
    write_artifacts(out, records)
    cells = aggregate_cells(records)
    return {"cfg": cfg, "records": records, "cells": cells, "out": out,
            "regimes": regime_table(cells, records), "design": design_table(cells, records)}


def cell_of(desk, n, r2, learner):
    (s,) = [c for c in desk["cells"] if c.n == n and c.r2_target == r2 and c.learner == learner]
    return s


# ------------------------------------------------------------ criterion 1

def test_c1_exact_identities():
    rng = np.random.default_rng(2024)
    worst = {"kappa": 0.0, "root": 0.0, "eps": 0.0, "rem": 0.0}
    kinds = [LearnerKind.LIN, LearnerKind.LAS, LearnerKind.RF]
    for i in range(100):
        n = int(rng.integers(20, 201))
        r2 = float(rng.choice([0.75, 0.9, 0.97]))
        ds = gen_sample(make_spec("lowdim", 10, 0.5, r2), n, SeededStream(i))
        fit = run_dml(ds, LearnerSpec(kinds[i % 3]), 5, 0.05, SeededStream(10_000 + i))
        su2 = float(fit.u_hat @ fit.u_hat)
        worst["kappa"] = max(worst["kappa"], abs(fit.kappa * abs(fit.j_hat) - 1.0))
        worst["root"] = max(worst["root"],
                            abs(float(fit.u_hat @ (fit.v_hat - fit.theta_hat * fit.u_hat))) / su2)
        worst["eps"] = max(worst["eps"], float(np.max(np.abs(
            fit.eps_hat - (fit.v_hat - fit.theta_hat * fit.u_hat)))))
        parts = decompose_linearization(ds, fit)
        worst["rem"] = max(worst["rem"],
                           abs(parts.r_n) / (1 + abs(fit.theta_hat - ds.oracle.theta0)))
    ok = (worst["kappa"] <= 4 * np.finfo(float).eps and worst["root"] <= 1e-8
          and worst["eps"] == 0.0 and worst["rem"] <= 1e-10)
    record("C1 exact identities (100 fits)", ok,
           f"max |kappa*|J|-1|={worst['kappa']:.1e}, score root={worst['root']:.1e}, "
           f"eps identity={worst['eps']:.1e}, |R_n|={worst['rem']:.1e}")


# ------------------------------------------------------------ criterion 2

@pytest.fixture(scope="module")
def big_sample():
    return gen_sample(make_spec("lowdim", 10, 0.5, 0.90), 100_000, SeededStream(314159))


def test_c2a_population_moment(big_sample):
    mean, se = population_moment(big_sample)
    record("C2a population moment", abs(mean) <= 4 * se, f"mean={mean:.3e}, 4*se={4 * se:.3e}")


def test_c2b_orthogonality(big_sample):
    deriv, se = orthogonality_derivative(big_sample, lambda x: x[:, 0], lambda x: x[:, 1])
    record("C2b Neyman orthogonality", abs(deriv) <= 4 * se,
           f"derivative={deriv:.3e}, 4*se={4 * se:.3e}")


# ------------------------------------------------------------ criterion 3

def test_c3a_lin_high_overlap(desk):
    s = cell_of(desk, 500, 0.75, "lin")
    ok = (within(s.coverage, 0.956, 0.04) and within(s.median_kappa, 0.724, 0.05)
          and within(s.avg_ci_length, 0.194, 0.02))
    record("C3a (n=500, r2=0.75, LIN)", ok,
           f"coverage={s.coverage:.3f}, median kappa={s.median_kappa:.4f}, "
           f"CI length={s.avg_ci_length:.4f}")


def test_c3b_las_low_overlap(desk):
    s = cell_of(desk, 2000, 0.97, "las")
    ok = (within(s.coverage, 0.950, 0.04) and within(s.median_kappa, 7.90, 0.40)
          and within(s.avg_ci_length, 0.317, 0.03))
    record("C3b (n=2000, r2=0.97, LAS)", ok,
           f"coverage={s.coverage:.3f}, median kappa={s.median_kappa:.4f}, "
           f"CI length={s.avg_ci_length:.4f}")


def test_c3c_rf_low_overlap(desk):
    s = cell_of(desk, 2000, 0.97, "rf")
    ok = s.coverage <= 0.60 and s.mean_bias <= -0.05
    record("C3c (n=2000, r2=0.97, RF)", ok,
           f"coverage={s.coverage:.3f} (<= 0.60), mean bias={s.mean_bias:.4f} (<= -0.05)")


# ------------------------------------------------------------ criterion 4

def test_c4a_pooled_low_overlap_kappa(desk):
    (row,) = [d for d in desk["design"] if d.r2_target == 0.97]
    record("C4a pooled low-overlap median kappa", within(row.median_kappa, 7.600, 0.15 * 7.600),
           f"median={row.median_kappa:.4f} vs 7.600 +/- 15%")


def test_c4b_las_well_conditioned_coverage(desk):
    rows = [r for r in desk["regimes"] if r.regime == "<1" and r.learner == "las"]
    ok = len(rows) == 1 and within(rows[0].coverage, 0.943, 0.02)
    detail = f"coverage={rows[0].coverage:.4f} over {rows[0].n_reps} reps" if rows else "no row"
    record("C4b LAS <1 regime coverage 94.3% +/- 2pp", ok, detail)


def test_c4c_lin_kappa_monotone(desk):
    seqs = {n: [cell_of(desk, n, r2, "lin").median_kappa for r2 in (0.75, 0.90, 0.97)]
            for n in (500, 2000)}
    ok = all(a < b < c for a, b, c in seqs.values())
    record("C4c LIN median kappa strictly increasing in r2", ok,
           "; ".join(f"n={n}: " + ", ".join(f"{k:.3f}" for k in v) for n, v in seqs.items()))


# ------------------------------------------------------------ criterion 5

@pytest.fixture(scope="module")
def highdim():
    return run_highdim_study((0.75, 0.90, 0.97), b_reps=200, n=200, p=500, base_seed=20240607,
                             workers=1)


def test_c5a_highdim_kappa_band(highdim):
    s = highdim.summaries[0]
    record("C5a high-dim median kappa at r2=0.75", within(s.median_kappa, 0.62, 0.15),
           f"median={s.median_kappa:.4f} vs 0.62 +/- 0.15")


def test_c5b_highdim_monotone(highdim):
    k = [s.median_kappa for s in highdim.summaries]
    c = [s.coverage for s in highdim.summaries]
    record("C5b high-dim kappa increasing, coverage non-increasing",
           highdim.kappa_increasing and highdim.coverage_nonincreasing,
           f"kappa={[round(v, 3) for v in k]}, coverage={c}")


def test_c5c_highdim_severe_coverage(highdim):
    severe = [s for s in highdim.summaries if s.regime == ">=2"]
    reps = sum(s.b_reps - s.failures for s in severe)
    coverage = (sum(s.coverage * (s.b_reps - s.failures) for s in severe) / reps
                if reps else math.nan)
    record("C5c high-dim severe-regime coverage >= 0.80", bool(severe) and coverage >= 0.80,
           f"{len(severe)} severe cell(s), coverage={coverage:.3f}")


# ------------------------------------------------------------ criterion 6

@pytest.fixture(scope="module")
def lin_500():
    cfg = CellConfig("lowdim", 10, 500, 0.75, LearnerSpec(LearnerKind.LIN), 500,
                     base_seed=777, beta_pattern="geometric")
    return [r for r in run_cell(cfg, workers=1) if r.ok]


def test_c6a_t_stat_ks(lin_500):
    t = np.array([r.bias / r.se for r in lin_500])
    res = stats.kstest(t, "norm")
    record("C6a t-statistic KS vs N(0,1) at 0.01", res.pvalue > 0.01 and len(t) == 500,
           f"D={res.statistic:.4f}, p={res.pvalue:.3f}")


def test_c6b_coverage_binomial_band(lin_500):
    hits = sum(r.covered for r in lin_500)
    lo, hi = stats.binom.interval(0.99, 500, 0.95)
    record("C6b coverage in exact binomial 99% band", lo <= hits <= hi,
           f"{hits}/500 covered, band [{int(lo)}, {int(hi)}]")


# ------------------------------------------------------------ criterion 7

def test_c7_determinism(desk, tmp_path):
    records = run_grid(desk["cfg"].cells(), workers=2)
    write_artifacts(tmp_path, records)
    same = (tmp_path / "reps.csv").read_bytes() == (desk["out"] / "reps.csv").read_bytes()
    record("C7 byte-identical reps.csv across runs (1 vs 2 workers)", same,
           f"{len(records)} rows")
