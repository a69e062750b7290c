import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import expit

from cicattrition.cic import naive_difference
from cicattrition.ipw import (
    PerfectSeparationError,
    TrimRule,
    _Propensities,
    fit_logistic,
    ipw_ate,
    ipw_ate_r,
    ipw_estimates,
    log_likelihood,
    propensities,
    score,
)
from cicattrition.panel import EmptyCellError, PanelSample
from cicattrition.simulation import design_preset, draw_sample


def test_independent_outcome_gives_flat_fit():
    rng = np.random.default_rng(0)
    x = rng.normal(size=4000)
    y = rng.random(4000) < 0.5
    fit = fit_logistic(y, x)
    assert fit.converged
    assert abs(fit.coefficients[1]) < 0.1
    share = y.mean()
    assert fit.coefficients[0] == pytest.approx(np.log(share / (1 - share)), abs=0.01)


def test_threshold_outcome_with_noise_has_zero_score_at_solution():
    rng = np.random.default_rng(1)
    x = rng.normal(size=3000)
    y = ((x > np.median(x)) ^ (rng.random(3000) < 0.2)).astype(float)
    fit = fit_logistic(y, x)
    assert fit.converged and fit.coefficients[1] > 0
    assert np.max(np.abs(score(fit.coefficients, y, x))) < 1e-8
    assert np.all((fit.fitted > 0) & (fit.fitted < 1))
    np.testing.assert_allclose(fit.predict(x), fit.fitted, rtol=1e-12)


def test_matches_closed_form_for_binary_regressor():
    # with x in {0, 1} the MLE reproduces the two class shares exactly
    x = np.array([0] * 10 + [1] * 10, dtype=float)
    y = np.array([1] * 3 + [0] * 7 + [1] * 6 + [0] * 4, dtype=float)
    fit = fit_logistic(y, x)
    assert expit(fit.coefficients[0]) == pytest.approx(0.3, abs=1e-12)
    assert expit(fit.coefficients.sum()) == pytest.approx(0.6, abs=1e-12)


def test_single_class_and_separation_errors():
    with pytest.raises(ValueError, match="single class"):
        fit_logistic(np.ones(5), np.arange(5.0))
    with pytest.raises(PerfectSeparationError):
        fit_logistic([0, 0, 1, 1], [1.0, 2.0, 3.0, 4.0])
    with pytest.raises(PerfectSeparationError):
        fit_logistic([0, 0, 1, 1], [1.0, 2.0, 2.0, 4.0])  # quasi-complete
    with pytest.raises(ValueError):
        fit_logistic([0, 1, 2], [1.0, 2.0, 3.0])


def test_constant_regressor_is_intercept_only():
    fit = fit_logistic([0, 1, 1, 1], [2.0, 2.0, 2.0, 2.0])
    assert fit.converged and fit.coefficients[1] == 0
    np.testing.assert_allclose(fit.fitted, 0.75)


@given(
    st.lists(st.tuples(st.floats(-3, 3), st.booleans()), min_size=4, max_size=60),
    st.floats(-2, 2),
    st.floats(-2, 2),
)
def test_score_matches_finite_difference_gradient(points, b0, b1):
    x = np.array([p[0] for p in points])
    y = np.array([p[1] for p in points], dtype=float)
    beta = np.array([b0, b1])
    h = 1e-5
    fd = np.array([
        (log_likelihood(beta + h * e, y, x) - log_likelihood(beta - h * e, y, x)) / (2 * h)
        for e in np.eye(2)
    ])
    analytic = score(beta, y, x)
    np.testing.assert_allclose(analytic, fd, rtol=1e-6, atol=1e-6 * max(1.0, np.abs(analytic).max()))


def test_score_at_fitted_optimum_matches_finite_difference():
    rng = np.random.default_rng(4)
    x = rng.normal(size=500)
    y = (rng.random(500) < expit(0.3 + 0.8 * x)).astype(float)
    beta = fit_logistic(y, x).coefficients
    h = 1e-5
    fd = [(log_likelihood(beta + h * e, y, x) - log_likelihood(beta - h * e, y, x)) / (2 * h) for e in np.eye(2)]
    assert np.max(np.abs(fd)) < 1e-6
    assert np.max(np.abs(score(beta, y, x))) < 1e-8


def _random_sample(seed, n=400, response=lambda y0, g: np.full(y0.shape, 0.8)):
    rng = np.random.default_rng(seed)
    g = rng.integers(0, 2, n)
    y0 = rng.normal(size=n)
    r = (rng.random(n) < response(y0, g)).astype(int)
    y1 = y0 + g + rng.normal(size=n)
    return PanelSample.from_arrays(g, r, y0, y1)


@given(st.integers(0, 10_000), st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_constant_propensities_give_naive_difference(seed, a, b, c):
    s = _random_sample(seed, 60)
    props = _Propensities(np.full(s.n, a), np.full(s.n, b), np.full(s.n, c))
    naive = naive_difference(s).point
    for rule in (None, TrimRule()):
        est = ipw_estimates(s, rule, props)
        assert est["ATE-R"].point == pytest.approx(naive, abs=1e-12)
        assert est["ATE"].point == pytest.approx(naive, abs=1e-12)


def test_response_independent_of_baseline_is_close_to_naive():
    s = _random_sample(2, 4000)
    assert ipw_ate_r(s).point == pytest.approx(naive_difference(s).point, abs=0.02)
    full = _random_sample(3, 4000, response=lambda y0, g: np.ones(y0.shape))
    assert ipw_ate(full).point == pytest.approx(naive_difference(full).point, abs=0.05)


def test_trimming_is_a_noop_without_extreme_propensities():
    s = _random_sample(5, 800)
    ps = propensities(s)
    assert ps.resp_own.min() > 0.05 and 0.05 < ps.treat.min() and ps.treat.max() < 0.95
    one, two = ipw_estimates(s, None, ps), ipw_estimates(s, TrimRule(), ps)
    assert one["ATE-R"].point == two["ATE-R"].point
    assert one["ATE"].point == two["ATE"].point
    assert two["ATE"].n_used["trimmed"] == 0


def test_trimming_drops_low_response_units():
    s = _random_sample(6, 3000, response=lambda y0, g: expit(4 * y0))
    ps = propensities(s)
    one, two = ipw_estimates(s, None, ps), ipw_estimates(s, TrimRule(), ps)
    low = int(np.sum(ps.resp_own[s.r == 1] < 0.05))
    assert low > 0
    assert two["ATE-R"].n_used["trimmed"] == low
    assert two["ATE"].n_used["trimmed"] >= low
    assert one["ATE-R"].point != two["ATE-R"].point


def test_weights_positive_and_finite():
    s = draw_sample(design_preset("I", 2000, 2.0, 1.0, seed=3))
    ps = propensities(s)
    resp = s.r == 1
    w_r = ps.resp_pooled[resp] / ps.resp_own[resp]
    p_arm = np.where(s.g[resp] == 1, ps.treat[resp], 1 - ps.treat[resp])
    w_a = 1 / (ps.resp_own[resp] * p_arm)
    assert np.all(np.isfinite(w_r) & (w_r > 0))
    assert np.all(np.isfinite(w_a) & (w_a > 0))


def test_missing_at_random_design_is_recovered():
    design = design_preset("III", 40_000, 2.0, 0.0, seed=9)
    s = draw_sample(design)
    assert ipw_ate_r(s).point == pytest.approx(design.beta1, abs=0.06)
    assert ipw_ate(s, TrimRule()).point == pytest.approx(design.beta1, abs=0.06)


def test_needs_respondents_in_both_arms():
    s = PanelSample.from_arrays([0, 0, 1, 1], [1, 1, 0, 0], [0, 1, 2, 3], [0, 1, 0, 0])
    with pytest.raises(EmptyCellError):
        ipw_ate(s)


def test_trim_rule_validation():
    with pytest.raises(ValueError):
        TrimRule(0.05, 0.6, 0.4)
    with pytest.raises(ValueError):
        TrimRule(1.0)
