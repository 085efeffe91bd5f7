import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from camflux.core import TpSeries
from camflux.stats import (
    DiffSeries,
    diff_series,
    effect_size,
    incomplete_beta,
    log_beta,
    paired_t_test,
    t_cdf,
    t_ppf,
    t_sf,
)

from oracles import cauchy_cdf, exact_t_statistic, normal_cdf

# (x, a, b, I_x(a, b)) from a 20-digit arbitrary-precision evaluation
BETAINC_TABLE = [
    (0.5, 2, 2, 0.5),
    (0.3, 0.5, 0.5, 0.36901011956554537504),
    (0.9, 5, 0.5, 0.3166429150200123125),
    (0.999, 50, 0.5, 0.75236901996537668139),
    (0.01, 0.5, 50, 0.68269560212580241567),
    (0.2, 3.5, 7.25, 0.19284161922441871363),
    (0.75, 10, 10, 0.99109672069607768208),
    (0.663939, 0.2756, 7.084, 0.99995842998371599312),
    (0.17419, 2.2578, 0.9513, 0.017974862886344663567),
    (0.526364, 21.6163, 140.1947, 1.0),
    (0.726803, 5.6175, 0.1497, 0.014333780499647251261),
    (0.765589, 47.6808, 11.7793, 0.23090645187147188858),
    (0.003227, 13.2579, 0.1595, 1.8266028875786559129e-35),
    (0.56339, 88.2193, 3.6134, 4.199059292937978309e-19),
    (0.359743, 15.5728, 139.0765, 0.99999999999995531418),
    (0.636683, 2.0022, 0.2498, 0.099807366275730232895),
    (0.231475, 1.3992, 4.496, 0.55604131480482659101),
    (0.55597, 21.2601, 3.6921, 0.00056450887552975857291),
    (0.764195, 1.0843, 31.9864, 0.99999999999999999999),
    (0.539335, 0.6786, 67.3238, 1.0),
    (0.760612, 39.4162, 85.2439, 1.0),
    (0.284743, 2.1325, 3.6752, 0.36945697904673866604),
    (0.762363, 0.2827, 0.2526, 0.58445965322138940128),
    (0.464856, 12.0498, 11.883, 0.35367500329554827012),
    (0.883128, 9.3953, 11.7581, 0.99999934166713315931),
    (0.062948, 1.168, 0.2003, 0.0072870146159085285561),
    (0.714677, 155.6868, 0.1644, 1.4203204207344520644e-25),
    (0.127868, 19.2547, 42.3269, 0.000096417031348629715844),
    (0.184727, 114.0398, 0.2405, 1.9148638141235132559e-86),
    (0.440251, 10.8152, 1.1127, 0.0001837326351063672111),
    (0.597244, 0.2592, 26.6702, 0.99999999999894355618),
    (0.473605, 10.2031, 0.4855, 0.00010705637836319069693),
    (0.488671, 13.7929, 0.1214, 1.1231342308504669069e-6),
    (0.040295, 0.1625, 40.3289, 0.98373028941806880088),
    (0.309739, 97.0836, 17.5741, 3.0024673985877186146e-33),
    (0.915604, 144.2588, 196.1666, 1.0),
    (0.403372, 3.7796, 118.002, 1.0),
    (0.312575, 160.7785, 13.5584, 2.5310105304911412399e-65),
    (0.243822, 29.1848, 62.8865, 0.059967715635699759567),
    (0.350387, 60.0444, 166.377, 0.9971807705048418139),
]


@pytest.mark.parametrize("x, a, b, expected", BETAINC_TABLE)
def test_incomplete_beta_reference_values(x, a, b, expected):
    assert incomplete_beta(x, a, b) == pytest.approx(expected, rel=1e-12, abs=0)


@pytest.mark.parametrize("x", [0.0, 0.1, 0.37, 0.5, 0.9, 1.0])
def test_incomplete_beta_closed_forms(x):
    assert incomplete_beta(x, 1, 1) == pytest.approx(x, abs=1e-15)
    assert incomplete_beta(x, 2, 1) == pytest.approx(x**2, abs=1e-15)
    assert incomplete_beta(x, 1, 3) == pytest.approx(1 - (1 - x) ** 3, abs=1e-15)
    # I_x(1/2, 1/2) is the arcsine distribution
    assert incomplete_beta(x, 0.5, 0.5) == pytest.approx(2 / math.pi * math.asin(math.sqrt(x)), abs=1e-14)


@given(st.floats(0, 1).filter(lambda v: 1 - (1 - v) == v), st.floats(0.05, 200), st.floats(0.05, 200))
def test_incomplete_beta_symmetry(x, a, b):
    assert incomplete_beta(x, a, b) + incomplete_beta(1 - x, b, a) == pytest.approx(1.0, abs=1e-12)


@given(st.floats(0.5, 300), st.floats(0.5, 300))
def test_log_beta_against_lgamma(a, b):
    ref = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
    assert log_beta(a, b) == pytest.approx(ref, abs=1e-11 * max(1.0, abs(ref)))


def test_incomplete_beta_domain():
    with pytest.raises(ValueError):
        incomplete_beta(1.2, 1, 1)
    with pytest.raises(ValueError):
        incomplete_beta(0.5, 0, 1)


@pytest.mark.parametrize("t", np.linspace(-50, 50, 200))
def test_t_cdf_one_df_is_cauchy(t):
    assert t_cdf(t, 1) == pytest.approx(cauchy_cdf(t), abs=1e-12)


@pytest.mark.parametrize("t", np.linspace(-8, 8, 200))
def test_t_cdf_large_df_approaches_normal(t):
    assert t_cdf(t, 1e6) == pytest.approx(normal_cdf(t), abs=1e-6)


def test_t_cdf_two_df_closed_form():
    for t in np.linspace(-20, 20, 81):
        assert t_cdf(t, 2) == pytest.approx(0.5 + t / (2 * math.sqrt(2 + t * t)), abs=1e-13)


@given(st.floats(-1e3, 1e3), st.floats(1, 1e4))
def test_t_cdf_antisymmetric(t, df):
    assert t_cdf(t, df) + t_cdf(-t, df) == pytest.approx(1.0, abs=1e-12)
    assert t_sf(t, df) == pytest.approx(t_cdf(-t, df), abs=1e-12)


@given(st.floats(1, 500))
def test_t_cdf_monotone(df):
    vals = [t_cdf(t, df) for t in np.linspace(-30, 30, 121)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert t_cdf(0.0, df) == 0.5


@pytest.mark.parametrize("df", [1, 3, 9, 99, 999])
@pytest.mark.parametrize("p", [0.005, 0.025, 0.3, 0.5, 0.9, 0.995])
def test_t_ppf_inverts_cdf(p, df):
    assert t_cdf(t_ppf(p, df), df) == pytest.approx(p, abs=1e-12)


def test_t_cdf_matches_scipy_grid():
    scipy_stats = pytest.importorskip("scipy.stats")
    for df in (1, 2, 5, 30, 99, 500):
        for t in np.linspace(-40, 40, 200):
            assert t_cdf(t, df) == pytest.approx(scipy_stats.t.cdf(t, df), abs=1e-10)


# ---------------------------------------------------------------- paired test

def test_identical_runs():
    r = paired_t_test(diff_series([1, 2, 3, 4], [1, 2, 3, 4]))
    assert r.mean_diff == 0.0 and r.t_stat == 0.0 and r.p_value == 1.0
    assert not r.reject_null and not r.degenerate


def test_interleaved_unit_difference():
    d = diff_series([0] * 100, [1, 0] * 50)
    r = paired_t_test(d, alpha=0.01)
    assert r.t_stat == pytest.approx(math.sqrt(99), abs=1e-12)
    assert r.t_stat == pytest.approx(9.9499, abs=1e-3)
    assert r.df == 99 and r.reject_null
    assert r.p_value < 1e-15


def test_constant_difference_is_degenerate():
    r = paired_t_test(diff_series([1, 1, 1], [2, 2, 2]))
    assert r.degenerate and r.t_stat == math.inf and r.p_value == 0.0 and r.reject_null
    assert r.as_dict()["t_stat"] is None
    r = paired_t_test(diff_series([2, 2, 2], [1, 1, 1]), alternative="greater")
    assert r.degenerate and r.p_value == 1.0 and not r.reject_null


def test_length_mismatch_and_short_series():
    with pytest.raises(ValueError):
        diff_series([1, 2, 3], [1, 2])
    with pytest.raises(ValueError):
        DiffSeries((1.0,))
    with pytest.raises(ValueError):
        paired_t_test(diff_series([1, 2], [2, 4]), alpha=1.0)
    with pytest.raises(ValueError):
        paired_t_test(diff_series([1, 2], [2, 4]), alternative="up")


def test_pairs_by_position():
    a = TpSeries.from_counts([1, 2, 3], [3, 3, 3], frame_ids=[0, 1, 2])
    b = TpSeries.from_counts([2, 2, 5], [3, 3, 3], frame_ids=[7, 8, 9])
    assert diff_series(a, b).d == (1, 0, 2)


def test_one_sided_alternatives():
    d = diff_series([0] * 6, [1, 2, 0, 1, 3, 1])
    two = paired_t_test(d, alpha=0.05)
    gt = paired_t_test(d, alpha=0.05, alternative="greater")
    lt = paired_t_test(d, alpha=0.05, alternative="less")
    assert gt.p_value == pytest.approx(two.p_value / 2, rel=1e-12)
    assert gt.p_value + lt.p_value == pytest.approx(1.0, abs=1e-12)


def test_effect_size_interval():
    d = diff_series([0] * 5, [1, 2, 3, 4, 5])
    e = effect_size(d, alpha=0.05, baseline_mean=2.0)
    # mean 3, sd sqrt(2.5), t_{0.975, 4} = 2.7764451051977987
    half = 2.7764451051977987 * math.sqrt(2.5) / math.sqrt(5)
    assert (e.mean_diff, e.ci_low, e.ci_high) == pytest.approx((3, 3 - half, 3 + half), abs=1e-12)
    assert e.relative_effect == 1.5 and e.level == 0.95
    assert effect_size(d).relative_effect is None


diffs = st.lists(st.integers(-20, 20), min_size=2, max_size=60).filter(lambda v: len(set(v)) > 1)


@given(diffs)
def test_t_statistic_matches_exact_rational(d):
    r = paired_t_test(DiffSeries(tuple(d)))
    assert r.t_stat == pytest.approx(exact_t_statistic(d), rel=1e-12, abs=1e-12)


@given(diffs)
def test_sign_flip(d):
    r = paired_t_test(DiffSeries(tuple(d)))
    f = paired_t_test(DiffSeries(tuple(-v for v in d)))
    assert f.t_stat == pytest.approx(-r.t_stat, rel=1e-12, abs=1e-12)
    assert f.p_value == pytest.approx(r.p_value, rel=1e-9, abs=1e-15)


@given(diffs, st.integers(-5, 5))
def test_constant_shift_of_both_runs(d, c):
    a = list(range(len(d)))
    b = [x + y for x, y in zip(a, d)]
    r = paired_t_test(diff_series(a, b))
    s = paired_t_test(diff_series([x + c for x in a], [x + c for x in b]))
    assert s.t_stat == r.t_stat and s.p_value == r.p_value


@given(diffs)
def test_ci_contains_mean_and_p_in_range(d):
    r = paired_t_test(DiffSeries(tuple(d)))
    assert r.ci_low <= r.mean_diff <= r.ci_high
    assert 0.0 <= r.p_value <= 1.0
    # the interval excludes zero exactly when the two-sided test rejects
    if abs(r.p_value - r.alpha) > 1e-9:
        assert (r.ci_low > 0 or r.ci_high < 0) == r.reject_null


@pytest.mark.slow
def test_type_one_error_calibration():
    rng = np.random.default_rng(12345)
    trials, alpha = 10_000, 0.05
    rejects = 0
    for _ in range(trials):
        x = rng.normal(size=20)
        rejects += paired_t_test(DiffSeries(tuple(x.tolist())), alpha=alpha).reject_null
    rate = rejects / trials
    assert 0.5 * alpha <= rate <= 1.5 * alpha
