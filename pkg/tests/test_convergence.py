import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levytest.convergence import (ConvergenceConstants, absolute_sum_bounds, absolute_sum_checks, coupled_sums, k1, k2,
                                  k2_limit, k2_star, k3, mean_k2_star, pasta_difference_check, series_checks,
                                  tail_diagnostic)
from levytest.models import CompoundPoissonExp, GammaSubordinator, ModelError, stationary_lst, stationary_moments

MM1 = CompoundPoissonExp(0.6, 10.0)
GAM = GammaSubordinator(0.5, 1.0)
XI = 3.0
REPS = 20_000


def test_constants_require_stability():
    c = ConvergenceConstants.of(MM1)
    assert c.d1 == pytest.approx(0.94)
    assert c.d2 == pytest.approx(2 * 0.6 / 100)
    with pytest.raises(ModelError):
        ConvergenceConstants.of(CompoundPoissonExp(12.0, 10.0))


@pytest.mark.parametrize("model", [MM1, GAM])
@pytest.mark.parametrize("v", [0.0, 0.05, 1.0])
def test_k2_limits(model, v):
    assert abs(k2(model, v, 1e-7)) < 1e-5
    c = ConvergenceConstants.of(model)
    assert k2(model, v, 1e9) == pytest.approx(c.d2 / (2 * c.d1) - v, abs=1e-7)
    assert k2_limit(model, v) == pytest.approx(abs(c.d2 / (2 * c.d1) - v))


@pytest.mark.parametrize("model", [MM1, GAM])
@pytest.mark.parametrize("alpha", [0.3, 2.0, 15.0])
def test_k3_is_minus_alpha_derivative_of_k2(model, alpha):
    # E[V e^{-aV}] = -d/da E[e^{-aV}], so the same relation holds for the deviation sums
    for v in (0.0, 0.2, 1.5):
        h = 1e-5 * alpha
        fd = -(k2(model, v, alpha + h) - k2(model, v, alpha - h)) / (2 * h)
        assert k3(model, v, alpha) == pytest.approx(fd, rel=1e-6, abs=1e-10)


def test_k1_stationary_mean_zero():
    # starting from the stationary law the deviations average out
    ev, ev2 = stationary_moments(MM1)
    c = ConvergenceConstants.of(MM1)
    from levytest.clrt import stationary_expectation

    assert stationary_expectation(MM1, lambda v: k1(MM1, v)) == pytest.approx(0.0, abs=1e-12)
    assert stationary_expectation(MM1, lambda v: k2(MM1, v, 1.3)) == pytest.approx(0.0, abs=1e-12)
    assert ev == pytest.approx(c.d2 / (2 * c.d1))
    assert ev2 > 0


def test_k2_bounded_on_grid():
    a = np.logspace(-6, 8, 2001)
    for v in (0.0, 0.3, 3.0):
        vals = k2(MM1, v, a)
        assert np.all(np.isfinite(vals))
        assert np.max(np.abs(vals)) <= k2_star(MM1, v) + 1e-12


@given(st.floats(0.0, 5.0))
@settings(max_examples=25, deadline=None)
def test_k2_star_dominates(v):
    rng = np.random.default_rng(int(v * 1e6))
    a = np.exp(rng.uniform(math.log(1e-4), math.log(1e6), 1000))
    for model in (MM1, GAM):
        assert np.all(np.abs(k2(model, v, a)) <= k2_star(model, v) * (1 + 1e-12))


def test_k2_star_large_v_growth():
    # for a of order 1/v the term a v / phi(a) is close to v / phi'(0), which
    # exceeds the a -> inf limit; the supremum grows like v / phi'(0)
    assert k2_star(MM1, 1.0) == pytest.approx(k2_limit(MM1, 1.0), rel=1e-12)
    for v in (10.0, 1e4):
        assert k2_star(MM1, v) > k2_limit(MM1, v)
    assert k2_star(MM1, 1e6) / 1e6 == pytest.approx(1 / MM1.dphi0, rel=1e-3)


@pytest.mark.parametrize("model", [MM1, GAM])
def test_mean_k2_star_finite(model):
    m1, s1 = mean_k2_star(model, reps=500, seed=1)
    m2, s2 = mean_k2_star(model, reps=2000, seed=2)
    assert math.isfinite(m1) and math.isfinite(m2)
    assert abs(m1 - m2) < 3 * math.hypot(s1, s2)


@given(st.floats(1e-3, 1e4), st.floats(0.1, 20.0), st.floats(0.01, 0.95))
@settings(max_examples=100, deadline=None)
def test_absolute_sum_bounds_properties(alpha, xi, rho):
    for model in (CompoundPoissonExp(rho * 10, 10.0), GammaSubordinator(rho, 1.0)):
        b = absolute_sum_bounds(model, xi, alpha)
        assert b.lst_sum <= b.Xi * (1 + 1e-9)
        assert b.ev_sum >= 0


def test_absolute_sum_value_matches_closed_form_series():
    # from an empty start the exp-deviation series keeps one sign, so it equals xi |k2(0, a)|
    for a in (0.5, 2.0):
        b = absolute_sum_bounds(MM1, XI, a)
        assert b.lst_sum == pytest.approx(abs(XI * k2(MM1, 0.0, a)), rel=1e-12)
    b = absolute_sum_bounds(MM1, XI, 1.0)
    assert b.ev_sum == pytest.approx(abs(XI * k1(MM1, 0.0)), rel=1e-12)


@pytest.fixture(scope="module")
def coupled():
    return coupled_sums(MM1, XI, [0.5, 1.0, 2.0], REPS, seed=11)


def test_coupled_start_is_empty_and_stationary(coupled):
    assert coupled.sum_id.shape == (REPS,)
    assert coupled.sum_exp.shape == (REPS, 3)
    assert coupled.mean_id_n.shape == (1000,)
    # the empty start lies below the stationary one, so differences are never positive
    assert np.all(coupled.mean_id_n <= 0)
    assert np.all(coupled.mean_exp_n >= 0)


def test_series_against_simulation():
    rows = series_checks(MM1, XI, reps=REPS, seed=4)
    names = [r.check for r in rows]
    assert names[0] == "ev_series" and "vexp_series[alpha=1]" in names
    for r in rows:
        assert abs(r.zscore) < 3, r


def test_absolute_sums_against_simulation():
    for r in absolute_sum_checks(MM1, XI, reps=REPS, seed=5):
        if r.check.startswith("vexp_abs_bound"):
            assert r.lhs <= r.rhs + 3 * r.se, r
        else:
            assert abs(r.zscore) < 3, r


@pytest.mark.parametrize("g", ["identity", "exp"])
def test_pasta_difference(g):
    r = pasta_difference_check(MM1, XI, g, alpha=1.0, reps=REPS, seed=6)
    assert abs(r.zscore) < 3, r
    # both sides estimate xi k(0, .); compare the time integral with the closed form
    cs = coupled_sums(MM1, XI, [1.0], REPS, seed=6)
    lhs = XI * (cs.int_id if g == "identity" else cs.int_exp[:, 0])
    target = XI * (k1(MM1, 0.0) if g == "identity" else k2(MM1, 0.0, 1.0))
    assert abs(lhs.mean() - target) < 3 * lhs.std(ddof=1) / math.sqrt(REPS)


def test_pasta_constant_and_unknown():
    r = pasta_difference_check(MM1, XI, "constant")
    assert (r.lhs, r.rhs, r.zscore) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        pasta_difference_check(MM1, XI, "square", reps=2)


def test_tail_diagnostic_within_noise(coupled):
    diag = tail_diagnostic(coupled)
    assert set(diag) == {"ev_series", "lst_series[alpha=0.5]", "lst_series[alpha=1]", "lst_series[alpha=2]"}
    for name, (m, se) in diag.items():
        assert abs(m) < 3 * se + 1e-12, name


def test_gamma_harness_not_available():
    with pytest.raises(NotImplementedError):
        coupled_sums(GAM, 1.0, [1.0], 10)


def test_lst_series_consistent_with_stationary_lst():
    # k2 at v = 0 involves E exp(-aV) = stationary_lst; check the sign convention
    a = 1.0
    assert k2(MM1, 0.0, a) > 0
    assert 0 < stationary_lst(MM1, a) < 1
