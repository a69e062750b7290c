"""Nonparametric bootstrap for estimands, estimator differences and the RA diagnostic."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .cic import build_transforms, cic_estimates, default_diagnostic_grid, ra_discrepancy, transported_balance
from .ipw import PropensityFitError, TrimRule, ipw_estimates, propensities
from .panel import PanelDataError, PanelSample
from ._jobs import default_jobs

MAX_FAILURE_SHARE = 0.20


class BootstrapError(RuntimeError):
    """Too many replicates failed for the bootstrap to be trusted."""


@dataclass(frozen=True)
class BootstrapSpec:
    draws: int = 999
    seed: int = 0
    resample_unit: str = "unit"  # or "cluster"
    ci_level: float = 0.95
    stratify: bool = False  # resample within arm
    n_jobs: int | None = None

    def __post_init__(self):
        if self.draws < 2:
            raise ValueError("draws must be >= 2")
        if self.resample_unit not in ("unit", "cluster"):
            raise ValueError("resample_unit must be 'unit' or 'cluster'")
        if not 0 < self.ci_level < 1:
            raise ValueError("ci_level must lie in (0, 1)")


@dataclass(frozen=True)
class BootstrapResult:
    point: float
    se: float
    ci: tuple[float, float]
    draws_used: int
    failures: int
    replicates: np.ndarray

    def interval(self, level: float) -> tuple[float, float]:
        """Percentile interval at another level from the same replicates."""
        return _percentile_ci(self.replicates, level)


# --- named statistics ---------------------------------------------------------

CIC_NAMES = {"ATT-R", "ATU-R", "ATE-R", "ATE-RA", "ATE-NORA", "ATT-A", "ATU-A", "naive"}
IPW_NAMES = {"IPW1:ATE-R", "IPW1:ATE", "IPW2:ATE-R", "IPW2:ATE"}


def evaluate_statistics(
    sample: PanelSample, names: Sequence[str], trim: TrimRule | None = None, errors: dict | None = None
) -> dict[str, float]:
    """Evaluate named estimators (``"ATE-RA"``, ``"IPW1:ATE"``, or ``"A - B"`` differences).

    Statistics that cannot be computed on ``sample`` are absent from the
    result; pass a dict as ``errors`` to collect the reason per statistic.
    """
    base = set()
    for name in names:
        if " - " in name:
            base.update(p.strip() for p in name.split(" - "))
        else:
            base.add(name)
    unknown = base - CIC_NAMES - IPW_NAMES
    if unknown:
        raise ValueError(f"unknown statistics: {sorted(unknown)}")
    vals: dict[str, float] = {}
    why: dict[str, str] = {}
    if base & CIC_NAMES:
        try:
            est = cic_estimates(sample)
            vals.update({k: v.point for k, v in est.items()})
            for k in ("ATT-A", "ATU-A"):
                if k not in est:
                    why[k] = f"no {'treatment' if k == 'ATT-A' else 'control'}-arm attritors"
        except PanelDataError as exc:
            why.update(dict.fromkeys(CIC_NAMES, str(exc)))
    if base & IPW_NAMES:
        try:
            props = propensities(sample)
        except (PanelDataError, PropensityFitError) as exc:
            props = None
            why.update(dict.fromkeys(IPW_NAMES, str(exc)))
        for label, rule in (("IPW1", None), ("IPW2", trim or TrimRule())):
            if props is None or not any(n.startswith(label) for n in base):
                continue
            try:
                res = ipw_estimates(sample, rule, props)
            except PropensityFitError as exc:
                why[f"{label}:ATE-R"] = why[f"{label}:ATE"] = str(exc)
                continue
            vals[f"{label}:ATE-R"] = res["ATE-R"].point
            vals[f"{label}:ATE"] = res["ATE"].point
    out = {}
    for name in names:
        parts = [p.strip() for p in name.split(" - ")]
        if all(p in vals for p in parts):
            out[name] = vals[parts[0]] - vals[parts[1]] if len(parts) == 2 else vals[name]
        elif errors is not None:
            errors[name] = next((f"{p}: {why[p]}" for p in parts if p not in vals and p in why), "not computable")
    return out


# --- resampling ---------------------------------------------------------------

def replicate_rng(seed: int, k: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(k,))))


class _Resampler:
    def __init__(self, sample: PanelSample, spec: BootstrapSpec):
        self.n = sample.n
        self.spec = spec
        if spec.resample_unit == "cluster":
            if sample.cluster is None or any(c is None for c in sample.cluster):
                raise ValueError("cluster resampling needs a cluster id on every record")
            keys, inverse = np.unique(sample.cluster.astype(str), return_inverse=True)
            order = np.argsort(inverse, kind="stable")
            bounds = np.searchsorted(inverse[order], np.arange(len(keys) + 1))
            self.members = [order[bounds[i]:bounds[i + 1]] for i in range(len(keys))]
            if spec.stratify:
                arm = np.array([int(sample.g[m[0]]) for m in self.members])
                self.strata = [np.flatnonzero(arm == a) for a in (0, 1)]
            else:
                self.strata = [np.arange(len(self.members))]
        else:
            if spec.stratify:
                self.strata = [np.flatnonzero(sample.g == a) for a in (0, 1)]
            else:
                self.strata = [np.arange(self.n)]

    def indices(self, k: int) -> np.ndarray:
        rng = replicate_rng(self.spec.seed, k)
        picks = [s[rng.integers(0, len(s), len(s))] for s in self.strata if len(s)]
        chosen = np.concatenate(picks)
        if self.spec.resample_unit == "cluster":
            return np.concatenate([self.members[c] for c in chosen])
        return chosen


def _map(fn: Callable[[int], object], ks: range, n_jobs: int):
    if n_jobs > 1:
        from joblib import Parallel, delayed

        return Parallel(n_jobs=n_jobs)(delayed(fn)(k) for k in ks)
    return [fn(k) for k in ks]


def _percentile_ci(reps: np.ndarray, level: float) -> tuple[float, float]:
    alpha = 1 - level
    lo, hi = np.quantile(reps, [alpha / 2, 1 - alpha / 2])
    return float(lo), float(hi)


def _summarize(point: float, reps: list[float], draws: int, level: float) -> BootstrapResult:
    arr = np.sort(np.asarray(reps, dtype=float))
    failures = draws - arr.size
    if failures > MAX_FAILURE_SHARE * draws:
        raise BootstrapError(f"{failures} of {draws} bootstrap replicates failed")
    se = 0.0 if arr[0] == arr[-1] else float(np.std(arr, ddof=1))
    return BootstrapResult(point, se, _percentile_ci(arr, level), int(arr.size), int(failures), arr)


class _StatTask:
    """Picklable per-replicate evaluation for parallel workers."""

    def __init__(self, sample, resampler, names, trim, func):
        self.sample, self.resampler, self.names, self.trim, self.func = sample, resampler, names, trim, func

    def __call__(self, k):
        boot = self.sample.take(self.resampler.indices(k))
        if self.func is not None:
            try:
                return {"value": float(self.func(boot))}
            except (PanelDataError, PropensityFitError, ValueError, ZeroDivisionError):
                return {}
        return evaluate_statistics(boot, self.names, self.trim)


def bootstrap_many(
    sample: PanelSample,
    statistics: Sequence[str],
    spec: BootstrapSpec = BootstrapSpec(),
    trim: TrimRule | None = None,
    skip_failed: bool = False,
) -> dict[str, BootstrapResult]:
    """Bootstrap several named statistics on shared resamples.

    A statistic with more than 20% failed replicates raises BootstrapError,
    unless ``skip_failed`` is set, in which case it is left out of the result.
    """
    point = evaluate_statistics(sample, statistics, trim)
    missing = [s for s in statistics if s not in point]
    if missing:
        raise PanelDataError(f"statistics not computable on the original sample: {missing}")
    task = _StatTask(sample, _Resampler(sample, spec), list(statistics), trim, None)
    reps = _map(task, range(spec.draws), spec.n_jobs or default_jobs())
    out = {}
    for s in statistics:
        try:
            out[s] = _summarize(point[s], [r[s] for r in reps if s in r], spec.draws, spec.ci_level)
        except BootstrapError:
            if not skip_failed:
                raise
    return out


def bootstrap(sample: PanelSample, statistic, spec: BootstrapSpec = BootstrapSpec(), trim: TrimRule | None = None) -> BootstrapResult:
    """Bootstrap one statistic: a name such as ``"ATE-RA"``, a difference
    ``"ATE-RA - naive"``, or a callable taking a PanelSample and returning a float."""
    if callable(statistic):
        point = float(statistic(sample))
        task = _StatTask(sample, _Resampler(sample, spec), None, trim, statistic)
        reps = _map(task, range(spec.draws), spec.n_jobs or default_jobs())
        return _summarize(point, [r["value"] for r in reps if r], spec.draws, spec.ci_level)
    return bootstrap_many(sample, [statistic], spec, trim)[statistic]


# --- random-assignment diagnostic --------------------------------------------

@dataclass(frozen=True)
class DiagnosticResult:
    statistic: dict  # d -> sup-norm discrepancy
    pvalue: dict  # d -> bootstrap p-value
    draws_used: int
    failures: int


class _DiagTask:
    def __init__(self, sample, resampler, grid):
        self.sample, self.resampler, self.grid = sample, resampler, grid

    def __call__(self, k):
        boot = self.sample.take(self.resampler.indices(k))
        try:
            tr = build_transforms(boot)
            if boot.counts[(0, 0)] + boot.counts[(0, 1)] == 0 or boot.counts[(1, 0)] + boot.counts[(1, 1)] == 0:
                return None
        except PanelDataError:
            return None
        # centred empirical process evaluated at the replicate's own transported points
        centred = transported_balance(boot, self.grid, tr) - transported_balance(self.sample, self.grid, tr)
        return np.max(np.abs(centred), axis=1)


def diagnostic_pvalue(sample: PanelSample, spec: BootstrapSpec = BootstrapSpec()) -> DiagnosticResult:
    """Bootstrap p-values for the random-assignment mixture identity, per d in {0, 1}.

    The observed statistic is the sup-norm of :func:`ra_discrepancy` on the
    default grid.  Each replicate re-estimates the transforms and measures
    the sup-norm of the resampled-minus-original arm baseline difference at
    its own transported grid points; recentring at fixed points instead
    mixes transform noise into the centring and makes the test conservative.
    """
    tr = build_transforms(sample)
    grid = default_diagnostic_grid(sample, tr)
    stat = np.max(np.abs(ra_discrepancy(sample, grid, tr)), axis=1)
    task = _DiagTask(sample, _Resampler(sample, spec), grid)
    reps = [r for r in _map(task, range(spec.draws), spec.n_jobs or default_jobs()) if r is not None]
    failures = spec.draws - len(reps)
    if failures > MAX_FAILURE_SHARE * spec.draws:
        raise BootstrapError(f"{failures} of {spec.draws} bootstrap replicates failed")
    reps = np.array(reps)
    pv = {d: float(np.mean(reps[:, d] >= stat[d])) for d in (0, 1)}
    return DiagnosticResult({0: float(stat[0]), 1: float(stat[1])}, pv, len(reps), failures)
