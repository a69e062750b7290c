"""Changes-in-changes attrition corrections.

Two rank-preserving transforms link baseline and follow-up outcomes: one
estimated from control respondents (untreated potential outcome), one from
treatment respondents (treated potential outcome).  Because the transforms
are common to every treatment/response subpopulation, they impute follow-up
outcomes for respondents' counterfactuals and for attritors alike.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .empirical import EmpiricalCdf, qq_index
from .panel import EmptyCellError, PanelSample

ROUTE_RESPONDENTS = "respondents"
ROUTE_RA = "random-assignment"
ROUTE_NO_RA = "no-random-assignment"

ESTIMANDS = ("ATT-R", "ATU-R", "ATE-R", "ATE-RA", "ATE-NORA", "ATT-A", "ATU-A", "naive")

ROUTES = {
    "ATT-R": ROUTE_RESPONDENTS,
    "ATU-R": ROUTE_RESPONDENTS,
    "ATE-R": ROUTE_RESPONDENTS,
    "naive": ROUTE_RESPONDENTS,
    "ATE-RA": ROUTE_RA,
    "ATE-NORA": ROUTE_NO_RA,
    "ATT-A": ROUTE_NO_RA,
    "ATU-A": ROUTE_NO_RA,
}


@dataclass(frozen=True)
class EstimandValue:
    name: str
    point: float
    n_used: dict
    support_warning: bool = False
    clamp_fraction: float = 0.0
    components: dict = field(default_factory=dict)
    notes: tuple = ()

    @property
    def route(self) -> str:
        return ROUTES.get(self.name, ROUTE_RESPONDENTS)


@dataclass(frozen=True)
class _Map:
    """Quantile map between the two periods of one respondent cell."""

    y0: EmpiricalCdf
    y1: EmpiricalCdf

    def forward(self, y):
        """Follow-up value -> baseline value at the same ECDF level."""
        return self.y0.values[qq_index(self.y1, self.y0, y)]

    def impute(self, y0):
        """Baseline value -> follow-up value at the same ECDF level."""
        return self.y1.values[qq_index(self.y0, self.y1, y0)]

    def outside(self, y0) -> np.ndarray:
        v = self.y0.values
        return (y0 < v[0]) | (y0 > v[-1])


@dataclass(frozen=True)
class CicTransforms:
    """Untreated (``t0``) and treated (``t1``) transforms.

    ``t0`` comes from control respondents, ``t1`` from treatment respondents.
    ``t0.forward`` is the baseline-from-follow-up map; ``t0.impute`` maps a
    baseline outcome to the untreated follow-up outcome.
    """

    t0: _Map
    t1: _Map

    def support_flags(self, y0, which: int) -> np.ndarray:
        return (self.t1 if which else self.t0).outside(np.asarray(y0, dtype=float))


def build_transforms(sample: PanelSample) -> CicTransforms:
    maps = []
    for g in (0, 1):
        try:
            y0 = sample.cell(g, 1, "y0")
            y1 = sample.cell(g, 1, "y1")
        except EmptyCellError as exc:
            raise EmptyCellError(g, 1, "needed to identify the outcome transform") from exc
        maps.append(_Map(EmpiricalCdf(y0), EmpiricalCdf(y1)))
    return CicTransforms(t0=maps[0], t1=maps[1])


def _cell_or_empty(sample: PanelSample, g: int, r: int) -> np.ndarray:
    try:
        return sample.cell(g, r, "y0")
    except EmptyCellError:
        return np.empty(0)


def _mean(a: np.ndarray) -> float:
    return float(a.sum()) / a.size


def cic_estimates(sample: PanelSample, transforms: Optional[CicTransforms] = None) -> dict[str, EstimandValue]:
    """Every CiC estimand plus the naive respondent difference, in one pass.

    Attritor cells may be empty; their terms then carry zero weight and the
    attritor-only components (ATT-A, ATU-A) are omitted.
    """
    tr = transforms or build_transforms(sample)
    counts = sample.counts
    n = sample.n
    n_used = {f"g{g}_r{r}": counts[(g, r)] for g, r in counts}
    n11, n01, n10, n00 = counts[(1, 1)], counts[(0, 1)], counts[(1, 0)], counts[(0, 0)]

    y0_t, y1_t = sample.cell(1, 1, "y0"), sample.cell(1, 1, "y1")
    y0_c, y1_c = sample.cell(0, 1, "y0"), sample.cell(0, 1, "y1")
    mean_y1_t = _mean(y1_t)
    mean_y1_c = _mean(y1_c)

    # treated respondents: untreated counterfactual via t0
    cf_t = tr.t0.impute(y0_t)
    out_t = tr.t0.outside(y0_t)
    mean_cf_t = _mean(cf_t)
    att_r = _mean(y1_t - cf_t)  # unit-level differences round once
    # control respondents: treated counterfactual via t1
    cf_c = tr.t1.impute(y0_c)
    out_c = tr.t1.outside(y0_c)
    mean_cf_c = _mean(cf_c)
    atu_r = _mean(cf_c - y1_c)

    w_t = n11 / (n11 + n01)
    w_c = n01 / (n11 + n01)
    ate_r = w_t * att_r + w_c * atu_r

    res = {
        "naive": EstimandValue("naive", mean_y1_t - mean_y1_c, n_used),
        "ATT-R": EstimandValue(
            "ATT-R", att_r, n_used, bool(out_t.any()), _mean(out_t),
            components={"mean_observed": mean_y1_t, "mean_imputed": mean_cf_t},
        ),
        "ATU-R": EstimandValue(
            "ATU-R", atu_r, n_used, bool(out_c.any()), _mean(out_c),
            components={"mean_imputed": mean_cf_c, "mean_observed": mean_y1_c},
        ),
    }
    resp_out = np.concatenate([out_t, out_c])
    res["ATE-R"] = EstimandValue(
        "ATE-R", ate_r, n_used, bool(resp_out.any()), _mean(resp_out),
        components={"ATT-R": att_r, "ATU-R": atu_r, "weight_treated": w_t, "weight_control": w_c},
    )

    # attritors under both transforms
    notes = []
    flags_ra = [out_t, out_c]
    flags_nora = [out_t, out_c]
    p_resp_t = n11 / (n11 + n10)
    p_resp_c = n01 / (n01 + n00)
    treated_mean = p_resp_t * mean_y1_t
    control_mean = p_resp_c * mean_y1_c
    comps_nora = {"ATT-R": att_r, "ATU-R": atu_r}
    weights_nora = {"ATT-R": n11 / n, "ATU-R": n01 / n, "ATT-A": n10 / n, "ATU-A": n00 / n}
    ate_nora = weights_nora["ATT-R"] * att_r + weights_nora["ATU-R"] * atu_r

    if n10:
        y0_ta = sample.cell(1, 0, "y0")
        i1, i0 = tr.t1.impute(y0_ta), tr.t0.impute(y0_ta)
        f1 = tr.t1.outside(y0_ta)
        f_both = f1 | tr.t0.outside(y0_ta)
        treated_mean += (1 - p_resp_t) * _mean(i1)
        att_a = _mean(i1 - i0)
        ate_nora += weights_nora["ATT-A"] * att_a
        comps_nora["ATT-A"] = att_a
        flags_ra.append(f1)
        flags_nora.append(f_both)
        res["ATT-A"] = EstimandValue("ATT-A", att_a, n_used, bool(f_both.any()), _mean(f_both))
    else:
        notes.append("no treatment-arm attritors: attritor term has zero weight")
    if n00:
        y0_ca = sample.cell(0, 0, "y0")
        i1, i0 = tr.t1.impute(y0_ca), tr.t0.impute(y0_ca)
        f0 = tr.t0.outside(y0_ca)
        f_both = f0 | tr.t1.outside(y0_ca)
        control_mean += (1 - p_resp_c) * _mean(i0)
        atu_a = _mean(i1 - i0)
        ate_nora += weights_nora["ATU-A"] * atu_a
        comps_nora["ATU-A"] = atu_a
        flags_ra.append(f0)
        flags_nora.append(f_both)
        res["ATU-A"] = EstimandValue("ATU-A", atu_a, n_used, bool(f_both.any()), _mean(f_both))
    else:
        notes.append("no control-arm attritors: attritor term has zero weight")

    ra_flags = np.concatenate(flags_ra)
    res["ATE-RA"] = EstimandValue(
        "ATE-RA", treated_mean - control_mean, n_used, bool(ra_flags.any()), _mean(ra_flags),
        components={"treated_arm_mean": treated_mean, "control_arm_mean": control_mean},
        notes=tuple(notes),
    )
    nora_flags = np.concatenate(flags_nora)
    res["ATE-NORA"] = EstimandValue(
        "ATE-NORA", ate_nora, n_used, bool(nora_flags.any()), _mean(nora_flags),
        components={**comps_nora, **{f"weight_{k}": v for k, v in weights_nora.items()}},
        notes=tuple(notes),
    )
    return res


def att_r(sample: PanelSample) -> EstimandValue:
    return cic_estimates(sample)["ATT-R"]


def atu_r(sample: PanelSample) -> EstimandValue:
    return cic_estimates(sample)["ATU-R"]


def ate_r(sample: PanelSample) -> EstimandValue:
    return cic_estimates(sample)["ATE-R"]


def ate_random_assignment(sample: PanelSample) -> EstimandValue:
    return cic_estimates(sample)["ATE-RA"]


def ate_no_random_assignment(sample: PanelSample) -> EstimandValue:
    """ATE without random assignment; ``components`` holds ATT-R, ATU-R, ATT-A, ATU-A and their weights."""
    return cic_estimates(sample)["ATE-NORA"]


def naive_difference(sample: PanelSample) -> EstimandValue:
    return cic_estimates(sample)["naive"]


# --- distribution-level objects ---------------------------------------------

def _transport_cdf(target: EmpiricalCdf, ident: _Map, y, lower: bool = False) -> np.ndarray:
    """F_target(T(y)) where T sends follow-up levels of ``ident`` to its baseline values.

    ``lower`` uses the sup-inverse instead of the inf-inverse.  A level of 0
    means y lies below the identifying follow-up support, so the result is 0.
    """
    k = ident.y1.counts_le(y)
    q = k / ident.y1.n
    if lower:
        idx = ident.y0.sup_index(q)
        vals = ident.y0.values[np.maximum(idx, 0)]
        out = np.where(idx < 0, 0.0, target.cdf(vals))
    else:
        vals = ident.y0.values[ident.y0.inf_index(q)]
        out = target.cdf(vals)
    return np.where(k == 0, 0.0, out)


def discrete_bounds(sample: PanelSample, target_cell: tuple[int, int], potential: str, grid):
    """Lower and upper bounds on the follow-up CDF of a potential outcome in a cell.

    Parameters
    ----------
    target_cell : (g, r)
        Subpopulation whose counterfactual distribution is bounded.
    potential : {"untreated", "treated"}
        Which potential outcome; identified from control or treatment respondents.
    grid : array_like
        Evaluation points.

    Returns
    -------
    lb, ub : ndarray
        Pointwise bounds; they coincide when outcomes have no ties.
    """
    if potential not in ("untreated", "treated"):
        raise ValueError("potential must be 'untreated' or 'treated'")
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("grid must be non-empty")
    tr = build_transforms(sample)
    ident = tr.t1 if potential == "treated" else tr.t0
    target = EmpiricalCdf(sample.cell(*target_cell, field="y0"))
    lb = _transport_cdf(target, ident, grid, lower=True)
    ub = _transport_cdf(target, ident, grid, lower=False)
    return lb, ub


def default_diagnostic_grid(sample: PanelSample, transforms: Optional[CicTransforms] = None) -> np.ndarray:
    """Observed follow-up values plus attritors' imputed follow-up values."""
    tr = transforms or build_transforms(sample)
    parts = [sample.cell(0, 1, "y1"), sample.cell(1, 1, "y1")]
    for g in (0, 1):
        y0a = _cell_or_empty(sample, g, 0)
        if y0a.size:
            parts.extend([tr.t0.impute(y0a), tr.t1.impute(y0a)])
    return np.unique(np.concatenate(parts))


def ra_discrepancy(sample: PanelSample, grid, transforms: Optional[CicTransforms] = None) -> np.ndarray:
    """Treated-arm minus control-arm mixture CDF of Y1(d) on ``grid``, rows d = 0, 1.

    Under random assignment both arms share the same potential-outcome
    distributions, so each row should be close to zero.
    """
    tr = transforms or build_transforms(sample)
    grid = np.asarray(grid, dtype=float)
    counts = sample.counts
    out = np.empty((2, grid.size))
    for d, ident in ((0, tr.t0), (1, tr.t1)):
        arm_cdf = []
        for g in (0, 1):
            n_resp, n_attr = counts[(g, 1)], counts[(g, 0)]
            total = n_resp + n_attr
            if g == d:
                resp = ident.y1.cdf(grid)
            else:
                resp = _transport_cdf(EmpiricalCdf(sample.cell(g, 1, "y0")), ident, grid)
            mix = (n_resp / total) * resp
            if n_attr:
                mix = mix + (n_attr / total) * _transport_cdf(
                    EmpiricalCdf(sample.cell(g, 0, "y0")), ident, grid
                )
            arm_cdf.append(mix)
        out[d] = arm_cdf[1] - arm_cdf[0]
    return out


def transported_balance(sample: PanelSample, grid, transforms: CicTransforms) -> np.ndarray:
    """Arm difference of baseline ECDFs at the points T_d(grid), rows d = 0, 1.

    Without ties this equals :func:`ra_discrepancy` exactly: each arm's
    mixture collapses to its baseline ECDF pushed through the transform.
    Passing another sample's ``transforms`` evaluates this sample's arm
    difference at that sample's transported points.
    """
    grid = np.asarray(grid, dtype=float)
    arm = [EmpiricalCdf(sample.y0[sample.g == g]) for g in (0, 1)]
    out = np.empty((2, grid.size))
    for d, ident in ((0, transforms.t0), (1, transforms.t1)):
        out[d] = _transport_cdf(arm[1], ident, grid) - _transport_cdf(arm[0], ident, grid)
    return out


def ra_diagnostic(sample: PanelSample, grid=None) -> dict[int, float]:
    """Sup-norm discrepancy of the random-assignment mixture identity, per d."""
    tr = build_transforms(sample)
    if grid is None:
        grid = default_diagnostic_grid(sample, tr)
    disc = ra_discrepancy(sample, grid, tr)
    return {0: float(np.max(np.abs(disc[0]))), 1: float(np.max(np.abs(disc[1])))}


@dataclass(frozen=True)
class SupportCheck:
    """Range containment of one cell's baseline outcomes inside an identifying cell's."""

    transform: str  # "untreated" or "treated"
    cell: tuple[int, int]
    identifying_cell: tuple[int, int]
    cell_range: tuple[float, float]
    identifying_range: tuple[float, float]
    share_outside: float

    @property
    def contained(self) -> bool:
        return self.share_outside == 0.0

    def message(self) -> str:
        def name(c):
            return f"{'treatment' if c[0] else 'control'} {'respondents' if c[1] else 'attritors'}"

        lo, hi = self.cell_range
        ilo, ihi = self.identifying_range
        return (
            f"{self.transform}-outcome transform: baseline range of {name(self.cell)} "
            f"[{lo:g}, {hi:g}] is not contained in that of {name(self.identifying_cell)} "
            f"[{ilo:g}, {ihi:g}]; {self.share_outside:.1%} of units are mapped by clamping"
        )


def support_overlap(sample: PanelSample) -> list[SupportCheck]:
    """Observed-range containment for every cell a transform is applied to.

    The untreated transform (control respondents) is applied to treatment
    respondents and to attritors of both arms; the treated transform
    (treatment respondents) to control respondents and to attritors.
    Empty cells are skipped.
    """
    counts = sample.counts
    checks = []
    for transform, ident in (("untreated", (0, 1)), ("treated", (1, 1))):
        if not counts[ident]:
            continue
        base = sample.cell(*ident, field="y0")
        ilo, ihi = float(base.min()), float(base.max())
        other_resp = (1 - ident[0], 1)
        for cell in (other_resp, (1, 0), (0, 0)):
            if not counts[cell]:
                continue
            y0 = sample.cell(*cell, field="y0")
            share = float(np.mean((y0 < ilo) | (y0 > ihi)))
            checks.append(SupportCheck(transform, cell, ident, (float(y0.min()), float(y0.max())), (ilo, ihi), share))
    return checks
