import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lfpplab.scaling import (ScalingEntry, ScalingTable, bootstrap_median, crossing_distance, estimate_a_eps,
                             fit_exponent, fit_exponent_ci, regular_variation_check, replica_seeds, scaling_ratio)

EPS = (0.1, 0.05, 0.025, 0.0125)


# ---------------------------------------------------------------- a_eps


def test_zero_variance_crossing_is_one():
    assert crossing_distance(0.1, 0.2, 1 / 40, seed=3, variance=0.0) == pytest.approx(1.0, abs=1e-12)


def test_estimate_reproducible():
    a = estimate_a_eps(0.1, 0.2, 1 / 40, 6, seed=5)
    b = estimate_a_eps(0.1, 0.2, 1 / 40, 6, seed=5)
    assert a.a_hat == b.a_hat and a.samples == b.samples


def test_estimate_rejects_coarse_spacing():
    with pytest.raises(ValueError):
        estimate_a_eps(0.1, 0.2, 0.06, 2, 0)


def test_replica_seeds_distinct():
    s = replica_seeds(7, 50)
    assert len(set(s)) == 50 and s == replica_seeds(7, 50)


def test_global_shift_scales_median_exactly():
    xi, c = 0.2, 0.8
    seeds = replica_seeds(1, 5)
    base = [crossing_distance(0.1, xi, 1 / 40, s) for s in seeds]
    shifted = [crossing_distance(0.1, xi, 1 / 40, s, shift=c) for s in seeds]
    for a, b in zip(base, shifted):
        assert b / a == pytest.approx(math.exp(xi * c), rel=1e-12)
    assert np.median(shifted) / np.median(base) == pytest.approx(math.exp(xi * c), rel=1e-12)


def test_pinned_regression_value():
    # first recorded run of this configuration; reruns are bit-identical
    e = estimate_a_eps(0.05, 0.2, 1 / 256, 200, seed=0)
    assert e.a_hat == 0.8156886089714623
    assert e.stderr == pytest.approx(0.01611163119093794, rel=1e-12)


def test_bootstrap_median_degenerate():
    assert bootstrap_median([2.0, 2.0, 2.0], 0) == (2.0, 0.0)
    med, se = bootstrap_median(np.arange(101.0), 0)
    assert med == 50.0 and se > 0


# ---------------------------------------------------------------- table


def test_table_validation():
    with pytest.raises(ValueError):
        ScalingTable(0.2, (ScalingEntry(0.1, 1.0, 0, 1, 0), ScalingEntry(0.1, 2.0, 0, 1, 0)))
    with pytest.raises(ValueError):
        ScalingTable(0.2, (ScalingEntry(0.1, -1.0, 0, 1, 0),))
    t = ScalingTable(0.2, (ScalingEntry(0.05, 1.0, 0, 1, 0), ScalingEntry(0.1, 2.0, 0, 1, 0)))
    assert list(t.eps) == [0.1, 0.05]


def test_table_csv_roundtrip(tmp_path):
    t = ScalingTable.power_law(0.2, 2.0, EPS)
    p = tmp_path / "t.csv"
    t.to_csv(p)
    back = ScalingTable.from_csv(p)
    assert back.xi == t.xi and np.array_equal(back.a_hat, t.a_hat) and np.array_equal(back.eps, t.eps)
    p.write_text("eps,a_hat\n0.1,1\n")
    with pytest.raises(ValueError, match="missing columns"):
        ScalingTable.from_csv(p)


def test_extrapolation_refused():
    t = ScalingTable.power_law(0.2, 2.0, EPS)
    with pytest.raises(ValueError, match="extrapolation"):
        t.a(0.2)
    assert t.a(0.0125) == pytest.approx(0.0125**0.6, rel=1e-14)


# ---------------------------------------------------------------- fit


def test_fit_exact_power_law():
    fit = fit_exponent(ScalingTable.power_law(0.2, 2.0, EPS))
    assert abs(fit.slope - 0.6) < 1e-12
    assert abs(fit.q_hat - 2.0) < 1e-12
    assert np.max(np.abs(fit.residuals)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 5.0), st.floats(0.1, 1.5))
def test_fit_intercept_absorbed(c, s):
    ents = tuple(ScalingEntry(e, c * e**s, 0.0, 1, 0.0) for e in EPS)
    fit = fit_exponent(ScalingTable(0.2, ents))
    assert fit.slope == pytest.approx(s, abs=1e-10)
    assert fit.intercept == pytest.approx(math.log(c), abs=1e-9)


def test_fit_needs_octaves():
    with pytest.raises(ValueError):
        fit_exponent(ScalingTable.power_law(0.2, 2.0, (0.1, 0.08, 0.06)))
    with pytest.raises(ValueError):
        fit_exponent(ScalingTable.power_law(0.2, 2.0, (0.1, 0.05)))


def test_fit_ci_on_real_table(real_table):
    fit = fit_exponent_ci(real_table, seed=0)
    lo, hi = fit.ci
    assert lo < fit.q_hat < hi
    assert real_table.q_hat == pytest.approx(fit.q_hat, rel=1e-12)


# ---------------------------------------------------------------- scaling ratio


@settings(max_examples=40, deadline=None)
@given(st.floats(0.2, 1.0), st.floats(0.5, 1.0), st.floats(0.3, 4.0))
def test_power_law_ratio_is_one(r, t, q):
    tab = ScalingTable.power_law(0.2, q, EPS)
    eps = 0.0125 / t * 1.000001
    if eps * t / r > 0.1:
        return
    assert scaling_ratio(tab, r, eps, t) == pytest.approx(1.0, rel=1e-12)


def test_ratio_r_one(real_table):
    assert scaling_ratio(real_table, 1.0, 0.05, 1.0) == 1.0
    with pytest.raises(ValueError):
        scaling_ratio(real_table, 1.0, 1.0, 1.0)


def test_ratio_real_table_within_ci(real_table):
    # r = 1/8, t = 1: a(8 eps) and a(eps) must both be in range, so eps = 0.0125
    r, eps = 1 / 8, 0.0125
    val = scaling_ratio(real_table, r, eps, 1.0)
    se = math.hypot(real_table.rel_stderr(eps / r), real_table.rel_stderr(eps))
    # propagate the uncertainty of q_hat too: d log ratio / dq = -xi log r
    fit = fit_exponent_ci(real_table, seed=0)
    q_se = (fit.ci[1] - fit.ci[0]) / (2 * 1.96)
    se = math.hypot(se, real_table.xi * math.log(1 / r) * q_se)
    assert abs(math.log(val)) <= 1.96 * se


# ---------------------------------------------------------------- regular variation


def test_variation_power_law_zero():
    rep = regular_variation_check(ScalingTable.power_law(0.2, 2.0, EPS), 0.5)
    assert len(rep.rows) == 3 and all(r.deviation < 1e-12 for r in rep.rows)


def test_variation_C_one(real_table):
    rep = regular_variation_check(real_table, 1.0)
    assert all(r.deviation == 0 for r in rep.rows)


def test_variation_real_table(real_table):
    rep = regular_variation_check(real_table, 0.5)
    assert rep.all_within, rep.rows


@pytest.mark.xfail(reason="deviations are inside Monte Carlo noise at 40 replicas, so their ordering is not resolved",
                   strict=False)
def test_variation_real_table_trend(real_table):
    assert regular_variation_check(real_table, 0.5).trend in ("decreasing", "flat")
