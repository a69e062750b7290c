"""Estimation reports: point estimates, bootstrap inference and provenance.

A report is a plain nested dict so that the JSON rendering is the
authoritative form; the CSV and text renderers are views of the same dict.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from importlib import resources
from dataclasses import dataclass, field
from typing import Sequence

from . import __version__
from .cic import ROUTES, cic_estimates, support_overlap
from .inference import BootstrapError, BootstrapSpec, bootstrap_many, diagnostic_pvalue, evaluate_statistics
from .ipw import PropensityFitError, TrimRule, ipw_estimates, propensities
from .panel import PanelDataError, PanelSample, attrition_summary

SCHEMA_VERSION = "1.0"

CIC_ESTIMATES = ("naive", "ATT-R", "ATU-R", "ATE-R", "ATE-RA", "ATE-NORA", "ATT-A", "ATU-A")
IPW_ESTIMATES = ("IPW1:ATE-R", "IPW1:ATE", "IPW2:ATE-R", "IPW2:ATE")
DEFAULT_ESTIMATES = CIC_ESTIMATES + IPW_ESTIMATES
ROUTE_IPW = "unconfoundedness-given-baseline"

CSV_COLUMNS = ("kind", "name", "route", "value", "se", "ci_lo", "ci_hi", "pvalue", "support_warning", "clamp_fraction", "note")


def default_differences(estimates: Sequence[str]) -> list[str]:
    """Every correction against the naive difference, plus CiC against IPW."""
    have = set(estimates)
    diffs = [f"{e} - naive" for e in estimates if e != "naive" and "naive" in have and not e.endswith("-A")]
    for cic, ipw in (("ATE-R", "IPW1:ATE-R"), ("ATE-R", "IPW2:ATE-R"), ("ATE-RA", "IPW1:ATE"), ("ATE-RA", "IPW2:ATE")):
        if cic in have and ipw in have:
            diffs.append(f"{cic} - {ipw}")
    return diffs


def route_of(name: str) -> str:
    if name.startswith("IPW"):
        return ROUTE_IPW
    return ROUTES[name]


@dataclass(frozen=True)
class EstimateConfig:
    """What to estimate and how to bootstrap it."""

    estimates: tuple[str, ...] = DEFAULT_ESTIMATES
    differences: tuple[str, ...] | None = None  # None: default_differences(estimates)
    bootstrap: BootstrapSpec | None = field(default_factory=BootstrapSpec)
    trim: TrimRule = field(default_factory=TrimRule)
    diagnostic: bool = True

    def __post_init__(self):
        unknown = set(self.estimates) - set(DEFAULT_ESTIMATES)
        if unknown:
            raise ValueError(f"unknown estimates: {sorted(unknown)}")

    def resolved_differences(self) -> list[str]:
        if self.differences is None:
            return default_differences(self.estimates)
        return list(self.differences)


def load_schema() -> dict:
    """The JSON schema that :func:`to_json` output validates against."""
    text = resources.files(__package__).joinpath("schemas/estimate_report.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def config_hash(config: dict) -> str:
    """sha256 of the canonical JSON encoding of a config dict."""
    text = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _point_details(sample: PanelSample, trim: TrimRule) -> dict[str, dict]:
    """Point estimate metadata keyed by report name; failures are omitted."""
    out = {}
    try:
        for name, ev in cic_estimates(sample).items():
            out[name] = {
                "n_used": ev.n_used, "support_warning": ev.support_warning,
                "clamp_fraction": ev.clamp_fraction, "notes": list(ev.notes),
            }
    except PanelDataError:
        pass
    try:
        props = propensities(sample)
        for label, rule in (("IPW1", None), ("IPW2", trim)):
            try:
                res = ipw_estimates(sample, rule, props)
            except PropensityFitError:
                continue
            for k, ev in res.items():
                notes = ["Hajek-normalized weights"]
                if rule is not None:
                    notes.append(f"{ev.n_used['trimmed']} respondents trimmed")
                out[f"{label}:{k}"] = {"n_used": ev.n_used, "support_warning": False, "clamp_fraction": 0.0, "notes": notes}
    except (PanelDataError, PropensityFitError):
        pass
    return out


def _inference_block(result) -> dict:
    if result is None:
        return {"se": None, "ci": None, "draws_used": None, "failures": None}
    return {
        "se": result.se, "ci": [result.ci[0], result.ci[1]],
        "draws_used": result.draws_used, "failures": result.failures,
    }


def build_report(sample: PanelSample, config: EstimateConfig, provenance: dict | None = None) -> dict:
    """Estimate, bootstrap and summarize ``sample`` according to ``config``.

    Estimators whose preconditions fail are listed under ``gaps`` instead of
    aborting the report.
    """
    errors: dict[str, str] = {}
    names = list(config.estimates)
    diffs = config.resolved_differences()
    points = evaluate_statistics(sample, names + diffs, config.trim, errors)
    details = _point_details(sample, config.trim)
    gaps = [{"name": k, "reason": v} for k, v in errors.items()]

    boot = {}
    if config.bootstrap is not None and points:
        stats = [s for s in names + diffs if s in points]
        boot = bootstrap_many(sample, stats, config.bootstrap, config.trim, skip_failed=True)
        for s in stats:
            if s not in boot:
                gaps.append({"name": s, "reason": "bootstrap unreliable: more than 20% of replicates failed"})

    estimates = []
    for name in names:
        if name not in points:
            continue
        d = details.get(name, {})
        estimates.append({
            "name": name,
            "route": route_of(name),
            "point": points[name],
            **_inference_block(boot.get(name)),
            "n_used": d.get("n_used", {}),
            "support_warning": d.get("support_warning", False),
            "clamp_fraction": d.get("clamp_fraction", 0.0),
            "notes": d.get("notes", []),
        })
    differences = [
        {"name": name, "point": points[name], **_inference_block(boot.get(name))}
        for name in diffs if name in points
    ]

    diagnostic = None
    if config.diagnostic:
        spec = config.bootstrap or BootstrapSpec()
        try:
            res = diagnostic_pvalue(sample, spec)
            diagnostic = {
                "statistic": {f"d={d}": v for d, v in res.statistic.items()},
                "pvalue": {f"d={d}": v for d, v in res.pvalue.items()},
                "draws_used": res.draws_used,
                "failures": res.failures,
            }
        except (PanelDataError, BootstrapError) as exc:
            gaps.append({"name": "RA diagnostic", "reason": str(exc)})

    return {
        "schema_version": SCHEMA_VERSION,
        "estimates": estimates,
        "differences": differences,
        "attrition": attrition_summary(sample),
        "support": [
            {"transform": c.transform, "cell": f"g{c.cell[0]}_r{c.cell[1]}", "share_outside": c.share_outside,
             "contained": c.contained}
            for c in support_overlap(sample)
        ],
        "ra_diagnostic": diagnostic,
        "gaps": gaps,
        "provenance": provenance or {},
    }


def make_provenance(config: dict, seed: int, input_digest: str | None = None) -> dict:
    return {
        "version": __version__,
        "seed": seed,
        "config_hash": config_hash(config),
        "config": config,
        "input_sha256": input_digest,
    }


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


# --- renderers ----------------------------------------------------------------

def to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=False)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_csv(report: dict) -> str:
    """One flat table; the ``kind`` column says which report section a row is from."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)

    def row(**kw):
        w.writerow([_fmt(kw.get(c)) for c in CSV_COLUMNS])

    for e in report["estimates"]:
        ci = e["ci"] or [None, None]
        row(kind="estimate", name=e["name"], route=e["route"], value=e["point"], se=e["se"], ci_lo=ci[0],
            ci_hi=ci[1], support_warning=e["support_warning"], clamp_fraction=e["clamp_fraction"],
            note="; ".join(e["notes"]))
    for d in report["differences"]:
        ci = d["ci"] or [None, None]
        row(kind="difference", name=d["name"], value=d["point"], se=d["se"], ci_lo=ci[0], ci_hi=ci[1])
    att = report["attrition"]
    for key in ("overall", "treatment", "control"):
        row(kind="attrition", name=key, value=att[key])
    diag = report["ra_diagnostic"]
    if diag:
        for key, stat in diag["statistic"].items():
            row(kind="diagnostic", name=key, value=stat, pvalue=diag["pvalue"][key])
    for gap in report["gaps"]:
        row(kind="gap", name=gap["name"], note=gap["reason"])
    prov = report["provenance"]
    for key in ("version", "seed", "config_hash", "input_sha256"):
        if key in prov:
            row(kind="provenance", name=key, note=prov[key])
    return buf.getvalue()


def _num(v, width=8, digits=3):
    return f"{'':>{width}}" if v is None else f"{v:{width}.{digits}f}"


def to_text(report: dict) -> str:
    """Fixed-width layout: estimates, differences, attrition, diagnostic."""
    lines = ["A. Estimates", f"{'Estimand':<12}{'Route':<32}{'Point':>8}{'SE':>8}{'CI low':>9}{'CI high':>9}  Flags"]
    for e in report["estimates"]:
        ci = e["ci"] or [None, None]
        flags = []
        if e["support_warning"]:
            flags.append(f"clamped {e['clamp_fraction']:.1%}")
        flags.extend(e["notes"])
        lines.append(
            f"{e['name']:<12}{e['route']:<32}{_num(e['point'])}{_num(e['se'])}{_num(ci[0], 9)}{_num(ci[1], 9)}  "
            + "; ".join(flags)
        )
    lines += ["", "B. Differences between estimates", f"{'Difference':<26}{'Point':>8}{'SE':>8}{'CI low':>9}{'CI high':>9}"]
    for d in report["differences"]:
        ci = d["ci"] or [None, None]
        lines.append(f"{d['name']:<26}{_num(d['point'])}{_num(d['se'])}{_num(ci[0], 9)}{_num(ci[1], 9)}")

    att = report["attrition"]
    lines += ["", "C. Attrition", f"n = {att['n']}"]
    for key in ("overall", "treatment", "control"):
        lines.append(f"attrition rate, {key:<10}" + ("       -" if att[key] is None else f"{att[key]:8.3f}"))
    for cell, m in att["mean_y0"].items():
        lines.append(f"mean baseline outcome, {cell:<7}" + ("       -" if m is None else f"{m:8.3f}"))
    for s in report["support"]:
        if not s["contained"]:
            lines.append(f"support: {s['transform']} transform applied to {s['cell']} clamps {s['share_outside']:.1%} of units")

    diag = report["ra_diagnostic"]
    if diag:
        lines += ["", "D. Random-assignment diagnostic (sup-norm, bootstrap p-value)"]
        for key, stat in diag["statistic"].items():
            lines.append(f"{key}: statistic {stat:.4f}  p-value {diag['pvalue'][key]:.3f}")
    if report["gaps"]:
        lines += ["", "Not reported"]
        lines.extend(f"{g['name']}: {g['reason']}" for g in report["gaps"])
    prov = report["provenance"]
    if prov:
        lines += ["", f"version {prov.get('version')}  seed {prov.get('seed')}  config {prov.get('config_hash', '')[:16]}"]
    return "\n".join(lines) + "\n"


RENDERERS = {"json": to_json, "csv": to_csv, "text": to_text}
