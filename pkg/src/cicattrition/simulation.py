"""Monte Carlo design with outcome-driven attrition.

Units have a scalar unobservable ``U_t = alpha + sigma * eta_t`` in each
period.  Untreated outcomes equal ``U_t``; treated outcomes are
``beta1 + (1 + beta2) * U_t``.  Response is a threshold rule on
``V = b * mean(U_0, U_1) + eps`` with arm-specific thresholds, so selection
depends on both periods' unobservables but symmetrically.

Random numbers come from numpy's PCG64 bit generator with the ziggurat
``standard_normal`` sampler; replication ``k`` of a design with seed ``s``
always uses ``SeedSequence(s, spawn_key=(k,))``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable

import numpy as np
from scipy import stats
from scipy.stats import qmc
from scipy.special import ndtr, ndtri

from ._jobs import default_jobs
from .cic import cic_estimates
from .ipw import TrimRule, ipw_estimates, propensities
from .panel import PanelDataError, PanelSample

PRESETS = {
    # name: (b, control attrition, treatment attrition)
    "I": (1.0, 0.30, 0.20),
    "II": (1.0, 0.25, 0.25),
    "III": (0.0, 0.30, 0.20),
}

RESPONSE_INDEXES = ("mean", "follow_up")


@dataclass(frozen=True)
class SimDesign:
    n: int = 2000
    sigma: float = 2.0
    beta2: float = 0.0
    b: float = 1.0
    target_attrition: tuple[float, float] = (0.30, 0.20)  # (control, treatment)
    seed: int = 0
    label: str = ""
    response_index: str = "mean"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.response_index not in RESPONSE_INDEXES:
            raise ValueError(f"response_index must be one of {RESPONSE_INDEXES}")
        for p in self.target_attrition:
            if not 0 < p < 1:
                raise ValueError("attrition targets must lie in (0, 1)")

    @property
    def sd_untreated(self) -> float:
        """Standard deviation of the untreated follow-up outcome."""
        return math.sqrt(1.0 + self.sigma**2)

    @property
    def beta1(self) -> float:
        return 0.25 * self.sd_untreated

    @property
    def sd_v(self) -> float:
        if self.response_index == "mean":
            var_index = 1.0 + self.sigma**2 / 2.0  # Var of the two-period average
        else:
            var_index = 1.0 + self.sigma**2
        return math.sqrt(self.b**2 * var_index + 1.0)

    @property
    def thresholds(self) -> tuple[float, float]:
        """Response thresholds (a0, a1) with P(V < a_g) equal to the target rate."""
        return tuple(self.sd_v * float(stats.norm.ppf(p)) for p in self.target_attrition)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["target_attrition"] = list(self.target_attrition)
        d.update(beta1=self.beta1, sd_v=self.sd_v, thresholds=list(self.thresholds))
        return d


def design_preset(name: str, n: int = 2000, sigma: float = 2.0, beta2: float = 0.0, seed: int = 0) -> SimDesign:
    try:
        b, p0, p1 = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown design {name!r}; choose from {sorted(PRESETS)}") from None
    return SimDesign(n=n, sigma=sigma, beta2=beta2, b=b, target_attrition=(p0, p1), seed=seed, label=name)


@dataclass(frozen=True)
class Latents:
    alpha: np.ndarray
    eta0: np.ndarray
    eta1: np.ndarray
    eps: np.ndarray
    u0: np.ndarray
    u1: np.ndarray
    r0: np.ndarray  # potential response if untreated
    r1: np.ndarray  # potential response if treated
    g: np.ndarray


def replication_rng(seed: int, replication: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(replication,))))


def _draw_latents(design: SimDesign, n: int, rng: np.random.Generator) -> Latents:
    alpha = rng.standard_normal(n)
    eta = rng.standard_normal((2, n))
    eps = rng.standard_normal(n)
    g = (rng.random(n) < 0.5).astype(np.int8)
    u0 = alpha + design.sigma * eta[0]
    u1 = alpha + design.sigma * eta[1]
    index = 0.5 * (u0 + u1) if design.response_index == "mean" else u1
    v = design.b * index + eps
    a0, a1 = design.thresholds
    r0 = (v >= a0).astype(np.int8)
    r1 = (v >= a1).astype(np.int8)
    return Latents(alpha, eta[0], eta[1], eps, u0, u1, r0, r1, g)


def _outcome(design: SimDesign, u, treated):
    return np.where(treated, design.beta1 + (1.0 + design.beta2) * u, u)


def draw_sample(design: SimDesign, replication: int = 0, keep_latents: bool = False):
    """One simulated panel; with ``keep_latents`` also return the Latents."""
    lat = _draw_latents(design, design.n, replication_rng(design.seed, replication))
    r = np.where(lat.g == 1, lat.r1, lat.r0)
    y0 = lat.u0
    y1 = _outcome(design, lat.u1, lat.g == 1)
    sample = PanelSample.from_arrays(lat.g, r, y0, y1, validate=False)
    return (sample, lat) if keep_latents else sample


def true_values(design: SimDesign, mc_size: int = 10**7, chunk: int = 10**6, seed: int | None = None) -> dict[str, float]:
    """Population estimands by brute-force simulation of potential outcomes.

    ATE is exactly beta1 because the unobservable has mean zero.
    """
    seed = design.seed if seed is None else seed
    ss = np.random.SeedSequence(seed, spawn_key=(2**31,))
    sums = {k: 0.0 for k in ("t", "c")}
    cnts = {k: 0 for k in ("t", "c")}
    done = 0
    for child in ss.spawn(math.ceil(mc_size / chunk)):
        m = min(chunk, mc_size - done)
        lat = _draw_latents(design, m, np.random.Generator(np.random.PCG64(child)))
        effect = design.beta1 + design.beta2 * lat.u1
        t = (lat.g == 1) & (lat.r1 == 1)
        c = (lat.g == 0) & (lat.r0 == 1)
        sums["t"] += effect[t].sum()
        sums["c"] += effect[c].sum()
        cnts["t"] += int(t.sum())
        cnts["c"] += int(c.sum())
        done += m
    att = sums["t"] / cnts["t"]
    atu = sums["c"] / cnts["c"]
    return {
        "ATT-R": att,
        "ATU-R": atu,
        "ATE-R": (sums["t"] + sums["c"]) / (cnts["t"] + cnts["c"]),
        "ATE": design.beta1,
    }


# (estimand, estimator) rows of a Monte Carlo summary, in output order
MC_ROWS = (
    ("ATE-R", "naive"),
    ("ATT-R", "CiC"),
    ("ATU-R", "CiC"),
    ("ATE-R", "CiC"),
    ("ATE-R", "IPW1"),
    ("ATE-R", "IPW2"),
    ("ATE", "CiC"),
    ("ATE", "CiC-NORA"),
    ("ATE", "IPW1"),
    ("ATE", "IPW2"),
)

ESTIMATOR_GROUPS = {
    "naive": {("ATE-R", "naive")},
    "cic": {("ATT-R", "CiC"), ("ATU-R", "CiC"), ("ATE-R", "CiC"), ("ATE", "CiC"), ("ATE", "CiC-NORA")},
    "ipw1": {("ATE-R", "IPW1"), ("ATE", "IPW1")},
    "ipw2": {("ATE-R", "IPW2"), ("ATE", "IPW2")},
}

SUMMARY_COLUMNS = ("estimand", "estimator", "true", "mean", "bias", "sd", "rmse", "failures")


def _estimate_replication(design: SimDesign, replication: int, groups: frozenset[str], trim: TrimRule) -> dict:
    sample = draw_sample(design, replication)
    out: dict[tuple[str, str], float] = {}
    if "cic" in groups or "naive" in groups:
        try:
            est = cic_estimates(sample)
        except PanelDataError:
            est = None
        if est is not None:
            if "naive" in groups:
                out[("ATE-R", "naive")] = est["naive"].point
            if "cic" in groups:
                out[("ATT-R", "CiC")] = est["ATT-R"].point
                out[("ATU-R", "CiC")] = est["ATU-R"].point
                out[("ATE-R", "CiC")] = est["ATE-R"].point
                out[("ATE", "CiC")] = est["ATE-RA"].point
                out[("ATE", "CiC-NORA")] = est["ATE-NORA"].point
    if "ipw1" in groups or "ipw2" in groups:
        try:
            props = propensities(sample)
        except Exception:
            props = None
        for label, rule in (("IPW1", None), ("IPW2", trim)):
            if label.lower() not in groups or props is None:
                continue
            try:
                res = ipw_estimates(sample, rule, props)
            except Exception:
                continue
            out[("ATE-R", label)] = res["ATE-R"].point
            out[("ATE", label)] = res["ATE"].point
    return out


@dataclass(frozen=True)
class McRow:
    estimand: str
    estimator: str
    true: float
    mean: float
    bias: float
    sd: float
    rmse: float
    failures: int

    def as_tuple(self):
        return tuple(getattr(self, c) for c in SUMMARY_COLUMNS)


@dataclass(frozen=True)
class McSummary:
    design: SimDesign
    replications: int
    truths: dict
    rows: tuple[McRow, ...]
    estimates: dict = field(default_factory=dict, repr=False, compare=False)

    def row(self, estimand: str, estimator: str) -> McRow:
        for r in self.rows:
            if r.estimand == estimand and r.estimator == estimator:
                return r
        raise KeyError((estimand, estimator))

    def to_json(self) -> str:
        return json.dumps(
            {
                "design": self.design.to_dict(),
                "replications": self.replications,
                "true_values": self.truths,
                "columns": list(SUMMARY_COLUMNS),
                "rows": [dict(zip(SUMMARY_COLUMNS, r.as_tuple())) for r in self.rows],
            },
            indent=2,
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in self.rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r.as_tuple()])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(self.to_csv())

    def to_text(self) -> str:
        head = f"Design {self.design.label or '-'}  n={self.design.n}  sigma={self.design.sigma:g}  beta2={self.design.beta2:g}  reps={self.replications}"
        lines = [head, f"{'Estimand':<9}{'Estim.':<10}{'True':>7}{'Mean':>8}{'Bias':>8}{'SD':>7}{'RMSE':>7}{'Fail':>6}"]
        for r in self.rows:
            lines.append(
                f"{r.estimand:<9}{r.estimator:<10}{r.true:7.2f}{r.mean:8.2f}{r.bias:8.2f}{r.sd:7.2f}{r.rmse:7.2f}{r.failures:6d}"
            )
        return "\n".join(lines)


def summarize(values: np.ndarray, truth: float) -> tuple[float, float, float, float]:
    """Mean, bias, sd and rmse of replicate estimates (population moments)."""
    mean = float(np.mean(values))
    bias = mean - truth
    sd = float(np.sqrt(np.mean((values - mean) ** 2)))
    rmse = float(np.sqrt(np.mean((values - truth) ** 2)))
    return mean, bias, sd, rmse


def run_monte_carlo(
    design: SimDesign,
    replications: int,
    estimators: Iterable[str] = ("naive", "cic", "ipw1", "ipw2"),
    trim: TrimRule | None = None,
    truths: dict | None = None,
    mc_size: int = 10**6,
    n_jobs: int | None = None,
) -> McSummary:
    """Repeat draw-and-estimate ``replications`` times and summarize against true values.

    Failures of individual estimators in a replication are counted, not raised.
    """
    if replications < 2:
        raise ValueError("replications must be >= 2")
    groups = frozenset(e.lower() for e in estimators)
    unknown = groups - set(ESTIMATOR_GROUPS)
    if unknown:
        raise ValueError(f"unknown estimators: {sorted(unknown)}")
    trim = trim or TrimRule()
    truths = truths or true_values(design, mc_size)
    n_jobs = n_jobs or default_jobs()
    if n_jobs > 1:
        from joblib import Parallel, delayed

        per_rep = Parallel(n_jobs=n_jobs)(
            delayed(_estimate_replication)(design, k, groups, trim) for k in range(replications)
        )
    else:
        per_rep = [_estimate_replication(design, k, groups, trim) for k in range(replications)]

    wanted = set().union(*(ESTIMATOR_GROUPS[g] for g in groups))
    rows = []
    estimates = {}
    for key in MC_ROWS:
        if key not in wanted:
            continue
        vals = np.array([rep[key] for rep in per_rep if key in rep])
        failures = replications - vals.size
        truth = truths[key[0]]
        estimates[key] = vals
        if vals.size == 0:
            rows.append(McRow(*key, truth, math.nan, math.nan, math.nan, math.nan, failures))
            continue
        rows.append(McRow(*key, truth, *summarize(vals, truth), failures))
    return McSummary(design, replications, dict(truths), tuple(rows), estimates)


# --- time homogeneity of the unobservable within selection cells ------------

def weighted_ks(x, y, weights) -> float:
    """Sup distance between the weighted ECDFs of x and y (same weights on both)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    pts = np.concatenate([x, y])
    sw = np.concatenate([w, -w])
    order = np.argsort(pts, kind="mergesort")
    pts, sw = pts[order], sw[order]
    cum = np.cumsum(sw)
    # only compare after the last of a run of tied points
    last = np.r_[pts[1:] != pts[:-1], True]
    return float(np.max(np.abs(cum[last])))


def _cell_weights(design: SimDesign, lat: Latents, method: str) -> dict[str, np.ndarray]:
    """Weights selecting each (G,R) and response-type cell.

    ``method="exact"`` integrates the response shock and the treatment
    coin analytically (both are independent of the unobservables);
    ``method="sample"`` uses hard 0/1 cell membership.
    """
    a0, a1 = design.thresholds
    if method == "exact":
        index = 0.5 * (lat.u0 + lat.u1) if design.response_index == "mean" else lat.u1
        s = design.b * index
        p1 = 1.0 - ndtr(a1 - s)  # P(R(1)=1 | U)
        p0 = 1.0 - ndtr(a0 - s)  # P(R(0)=1 | U)
        lo, hi = (a1, a0) if a1 <= a0 else (a0, a1)
        between = ndtr(hi - s) - ndtr(lo - s)
        never = ndtr(lo - s)
        always = 1.0 - ndtr(hi - s)
        cells = {
            "G=1,R=1": p1, "G=1,R=0": 1 - p1, "G=0,R=1": p0, "G=0,R=0": 1 - p0,
            "type=never": never, "type=always": always,
        }
        if a1 < a0:
            cells["type=treatment-only"] = between
        elif a0 < a1:
            cells["type=control-only"] = between
        return cells
    if method != "sample":
        raise ValueError("method must be 'exact' or 'sample'")
    g, r0, r1 = lat.g == 1, lat.r0 == 1, lat.r1 == 1
    r = np.where(g, r1, r0)
    return {
        "G=1,R=1": (g & r).astype(float), "G=1,R=0": (g & ~r).astype(float),
        "G=0,R=1": (~g & r).astype(float), "G=0,R=0": (~g & ~r).astype(float),
        "type=never": (~r0 & ~r1).astype(float), "type=always": (r0 & r1).astype(float),
        "type=treatment-only": (~r0 & r1).astype(float), "type=control-only": (r0 & ~r1).astype(float),
    }


def _invariance_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(2**31 + 1,))))


def _sobol_unobservables(design: SimDesign, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """(U0, U1) from scrambled Sobol points pushed through the normal quantile."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # n need not be a power of two
        z = ndtri(qmc.Sobol(3, scramble=True, seed=_invariance_rng(seed)).random(n))
    alpha, eta0, eta1 = z.T
    return alpha + design.sigma * eta0, alpha + design.sigma * eta1


def time_invariance_check(design: SimDesign, mc_size: int = 10**5, method: str = "exact", seed: int | None = None) -> dict[str, dict]:
    """KS distance between baseline and follow-up unobservables within selection cells.

    With ``method="exact"`` the response shock and treatment coin are
    integrated out analytically and the unobservables come from a
    scrambled Sobol sequence, so the distance estimates the population
    distance with little integration noise.  ``method="sample"`` draws the
    full latent record with the simulation RNG and uses hard cell membership.

    Returns ``{cell: {"distance", "pvalue", "n_eff"}}``.  The p-value uses
    the asymptotic Kolmogorov distribution with the effective sample size of
    the cell weights; it ignores the within-unit correlation of U0 and U1
    and is only nominal for the Sobol points.
    """
    seed = design.seed if seed is None else seed
    if method == "exact":
        u0, u1 = _sobol_unobservables(design, mc_size, seed)
        lat = Latents(None, None, None, None, u0, u1, None, None, None)
    elif method == "sample":
        lat = _draw_latents(design, mc_size, _invariance_rng(seed))
    else:
        raise ValueError("method must be 'exact' or 'sample'")
    out = {}
    for cell, w in _cell_weights(design, lat, method).items():
        total = w.sum()
        if total <= 0:
            continue
        n_eff = total**2 / np.sum(w**2)
        d = weighted_ks(lat.u0, lat.u1, w)
        p = float(stats.kstwobign.sf(d * math.sqrt(n_eff / 2.0)))
        out[cell] = {"distance": d, "pvalue": p, "n_eff": float(n_eff)}
    return out


def with_overrides(design: SimDesign, **kw) -> SimDesign:
    return replace(design, **{k: v for k, v in kw.items() if v is not None})
