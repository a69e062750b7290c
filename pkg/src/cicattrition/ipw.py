"""Inverse-probability-weighting comparator.

Response and treatment propensities are logit models in the baseline
outcome.  Means are Hajek-normalized, so constant weights give back the
unweighted respondent means.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .cic import EstimandValue
from .panel import EmptyCellError, PanelSample


class PropensityFitError(RuntimeError):
    pass


class PerfectSeparationError(PropensityFitError):
    pass


@dataclass(frozen=True)
class PropensityFit:
    coefficients: np.ndarray  # (intercept, slope)
    fitted: np.ndarray
    converged: bool
    iterations: int

    def predict(self, x) -> np.ndarray:
        return expit(self.coefficients[0] + self.coefficients[1] * np.asarray(x, dtype=float))


@dataclass(frozen=True)
class TrimRule:
    response_floor: float = 0.05
    treat_floor: float = 0.05
    treat_ceiling: float = 0.95

    def __post_init__(self):
        if not (0 <= self.response_floor < 1):
            raise ValueError("response_floor must lie in [0, 1)")
        if not (0 <= self.treat_floor < self.treat_ceiling <= 1):
            raise ValueError("need 0 <= treat_floor < treat_ceiling <= 1")


def log_likelihood(beta, y, x) -> float:
    eta = beta[0] + beta[1] * x
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def score(beta, y, x) -> np.ndarray:
    resid = y - expit(beta[0] + beta[1] * x)
    return np.array([resid.sum(), (resid * x).sum()])


def fit_logistic(outcome, regressor, tol: float = 1e-10, max_iter: int = 100) -> PropensityFit:
    """Logit of a binary outcome on (1, regressor) by iteratively reweighted least squares.

    Raises
    ------
    ValueError
        If the outcome has a single class or the inputs are malformed.
    PerfectSeparationError
        If the classes are separated by the regressor (the MLE does not exist).
    """
    y = np.asarray(outcome, dtype=float)
    x = np.asarray(regressor, dtype=float)
    if y.shape != x.shape or y.ndim != 1 or y.size < 2:
        raise ValueError("outcome and regressor must be 1-d of equal length >= 2")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("outcome must be binary")
    if y.min() == y.max():
        raise ValueError("outcome has a single class")
    pbar = y.mean()
    if x.min() == x.max():
        # slope not identified; the intercept-only MLE is the class share
        return PropensityFit(np.array([np.log(pbar / (1 - pbar)), 0.0]), np.full(y.size, pbar), True, 0)
    lo1, hi1 = x[y == 1].min(), x[y == 1].max()
    lo0, hi0 = x[y == 0].min(), x[y == 0].max()
    if hi0 <= lo1 or hi1 <= lo0:
        raise PerfectSeparationError("outcome is perfectly separated by the regressor")

    # center the regressor for conditioning
    xm, xs = x.mean(), x.std()
    z = (x - xm) / xs
    X = np.column_stack([np.ones_like(z), z])
    beta = np.array([np.log(pbar / (1 - pbar)), 0.0])
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(X @ beta)
        w = p * (1 - p)
        grad = X.T @ (y - p)
        hess = (X * w[:, None]).T @ X
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError as exc:
            raise PerfectSeparationError("singular information matrix") from exc
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            converged = True
            break
    coef = np.array([beta[0] - beta[1] * xm / xs, beta[1] / xs])
    fitted = expit(X @ beta)
    if not np.all((fitted > 0) & (fitted < 1)):
        raise PerfectSeparationError("fitted probabilities reached 0 or 1")
    if converged and np.max(np.abs(X.T @ (y - fitted))) > 1e-8:
        converged = False
    return PropensityFit(coefficients=coef, fitted=fitted, converged=converged, iterations=it)


@dataclass(frozen=True)
class _Propensities:
    resp_own: np.ndarray  # P(R=1 | y0, own arm)
    resp_pooled: np.ndarray  # P(R=1 | y0), both arms pooled
    treat: np.ndarray  # P(G=1 | y0)


def _fit_or_raise(outcome, regressor, what):
    try:
        fit = fit_logistic(outcome, regressor)
    except (ValueError, PropensityFitError) as exc:
        raise PropensityFitError(f"{what} propensity: {exc}") from exc
    if not fit.converged:
        raise PropensityFitError(f"{what} propensity did not converge")
    return fit


def propensities(sample: PanelSample) -> _Propensities:
    for g in (0, 1):
        if sample.counts[(g, 1)] == 0:
            raise EmptyCellError(g, 1, "IPW needs respondents in both arms")
    g, r, y0 = sample.g, sample.r, sample.y0
    resp_own = np.empty(sample.n)
    for arm in (0, 1):
        m = g == arm
        if sample.counts[(arm, 0)] == 0:
            resp_own[m] = 1.0  # everyone in this arm responds
        else:
            resp_own[m] = _fit_or_raise(r[m], y0[m], f"response (arm {arm})").fitted
    if sample.counts[(0, 0)] + sample.counts[(1, 0)] == 0:
        resp_pooled = np.ones(sample.n)
    else:
        resp_pooled = _fit_or_raise(r, y0, "pooled response").fitted
    treat = _fit_or_raise(g, y0, "treatment").fitted
    return _Propensities(resp_own, resp_pooled, treat)


def _hajek_difference(y1, g, w):
    t, c = g == 1, g == 0
    if w[t].sum() <= 0 or w[c].sum() <= 0:
        raise PropensityFitError("all units trimmed in an arm")
    return float(np.sum(w[t] * y1[t]) / w[t].sum() - np.sum(w[c] * y1[c]) / w[c].sum())


def ipw_estimates(sample: PanelSample, trim: TrimRule | None = None, props: _Propensities | None = None) -> dict[str, EstimandValue]:
    """IPW ATE-R and ATE; returns ``{"ATE-R": ..., "ATE": ...}``."""
    ps = props or propensities(sample)
    resp = sample.r == 1
    g, y1 = sample.g[resp], sample.y1[resp]
    p_own, p_pool, p_g = ps.resp_own[resp], ps.resp_pooled[resp], ps.treat[resp]

    keep_r = np.ones(g.size, dtype=bool)
    keep_a = np.ones(g.size, dtype=bool)
    if trim is not None:
        keep_r = p_own >= trim.response_floor
        keep_a = keep_r & (p_g >= trim.treat_floor) & (p_g <= trim.treat_ceiling)

    w_r = np.where(keep_r, p_pool / p_own, 0.0)
    p_arm = np.where(g == 1, p_g, 1 - p_g)
    w_a = np.where(keep_a, 1.0 / (p_own * p_arm), 0.0)

    n_resp = int(resp.sum())
    out = {}
    for name, w, keep in (("ATE-R", w_r, keep_r), ("ATE", w_a, keep_a)):
        used = {"respondents": n_resp, "trimmed": int(n_resp - keep.sum())}
        out[name] = EstimandValue(name, _hajek_difference(y1, g, w), used)
    return out


def ipw_ate_r(sample: PanelSample, trim: TrimRule | None = None) -> EstimandValue:
    return ipw_estimates(sample, trim)["ATE-R"]


def ipw_ate(sample: PanelSample, trim: TrimRule | None = None) -> EstimandValue:
    return ipw_estimates(sample, trim)["ATE"]
