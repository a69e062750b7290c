"""Command-line front end: ``cicattr {estimate,simulate,validate}``.

Settings come from built-in defaults, then an optional config file of
``key = value`` lines (keys mirror the long flag names), then flags.
Exit codes: 0 success, 1 usage or config error, 2 data validation
failure, 3 estimation failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from . import __version__
from .cic import support_overlap
from .inference import BootstrapSpec
from .ipw import TrimRule
from .panel import CELLS, DEFAULT_COLUMNS, PanelDataError, PanelSample, attrition_summary, read_records
from .report import DEFAULT_ESTIMATES, RENDERERS, EstimateConfig, build_report, file_digest, make_provenance
from .simulation import PRESETS, design_preset, run_monte_carlo, with_overrides

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_ESTIMATION = 3

log = logging.getLogger("cicattrition")


class UsageError(Exception):
    pass


@dataclass
class JobConfig:
    mode: str = "estimate"
    # data
    input: str | None = None
    id_col: str = DEFAULT_COLUMNS["id"]
    g_col: str = DEFAULT_COLUMNS["g"]
    r_col: str = DEFAULT_COLUMNS["r"]
    y0_col: str = DEFAULT_COLUMNS["y0"]
    y1_col: str = DEFAULT_COLUMNS["y1"]
    cluster_col: str | None = None
    # estimation
    estimators: str = ",".join(DEFAULT_ESTIMATES)
    differences: str | None = None  # comma list of "A - B"; empty uses the defaults
    bootstrap_draws: int = 999
    ci_level: float = 0.95
    stratify: bool = False
    diagnostic: bool = True
    trim: bool = True
    response_floor: float = 0.05
    treat_floor: float = 0.05
    treat_ceiling: float = 0.95
    seed: int = 0
    # simulation
    design: str | None = None
    n: int = 2000
    sigma: float = 2.0
    beta2: float = 0.0
    b: float | None = None
    control_attrition: float | None = None
    treatment_attrition: float | None = None
    response_index: str = "mean"
    reps: int = 1000
    mc_size: int = 10**6
    # output
    out: str | None = None
    format: str = "json"
    verbose: int = 0
    jobs: int | None = None

    # fields that do not change results and stay out of the config hash
    OUTPUT_ONLY = ("out", "format", "verbose", "jobs")

    def validate(self) -> None:
        if self.mode not in ("estimate", "simulate", "validate"):
            raise UsageError(f"unknown mode {self.mode!r}")
        if self.format not in RENDERERS:
            raise UsageError(f"format must be one of {sorted(RENDERERS)}")
        if self.mode in ("estimate", "validate") and not self.input:
            raise UsageError(f"{self.mode} needs --input")
        if self.mode == "simulate":
            if self.design not in PRESETS:
                raise UsageError(f"unknown design {self.design!r}; choose from {sorted(PRESETS)}")
            if self.reps < 2:
                raise UsageError("--reps must be at least 2")
        if self.bootstrap_draws < 0 or self.bootstrap_draws == 1:
            raise UsageError("--bootstrap-draws must be 0 (no bootstrap) or at least 2")

    def columns(self) -> dict[str, str]:
        cols = {"id": self.id_col, "g": self.g_col, "r": self.r_col, "y0": self.y0_col, "y1": self.y1_col}
        if self.cluster_col:
            cols["cluster"] = self.cluster_col
        return cols

    def trim_rule(self) -> TrimRule:
        return TrimRule(self.response_floor, self.treat_floor, self.treat_ceiling)

    def analysis_dict(self) -> dict:
        """Every setting that can change a result (hashed into provenance)."""
        return {k: v for k, v in asdict(self).items() if k not in self.OUTPUT_ONLY}


_FIELD_TYPES = {f.name: f.type for f in fields(JobConfig)}
_BOOL_WORDS = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def _coerce(key: str, text):
    kind = _FIELD_TYPES[key]
    if not isinstance(text, str):
        return text
    text = text.strip()
    if "None" in kind and text.lower() in ("", "none"):
        return None
    try:
        if kind.startswith("bool"):
            return _BOOL_WORDS[text.lower()]
        if kind.startswith("int"):
            return int(float(text)) if "e" in text.lower() else int(text)
        if kind.startswith("float"):
            return float(text)
    except (KeyError, ValueError):
        raise UsageError(f"bad value for {key}: {text!r}") from None
    return text


def read_config_file(path) -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        text = Path(path).read_text(encoding="utf-8")
        parser.read_string("[job]\n" + text)
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    out = {}
    for key, value in parser["job"].items():
        name = key.replace("-", "_")
        if name not in _FIELD_TYPES or name in ("mode", "OUTPUT_ONLY"):
            raise UsageError(f"unknown config key {key!r}")
        out[name] = _coerce(name, value)
    return out


def job_from_dict(values: dict) -> JobConfig:
    job = JobConfig(**{k: _coerce(k, v) for k, v in values.items()})
    job.validate()
    return job


# --- argument parsing --------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cicattr", description="Changes-in-changes corrections for panel attrition.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="mode", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="file of key = value settings; flags override it")
        p.add_argument("--out", help="output path (default: stdout)")
        p.add_argument("--format", choices=sorted(RENDERERS))
        p.add_argument("-v", "--verbose", action="count")
        p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int, help="worker processes (default: $CICATTR_THREADS or 1)")

    def data(p):
        p.add_argument("--input", help="panel CSV")
        for key in ("id", "g", "r", "y0", "y1"):
            p.add_argument(f"--{key}-col", dest=f"{key}_col", help=f"column holding {key}")
        p.add_argument("--cluster-col", help="column with cluster ids (enables cluster resampling)")

    est = sub.add_parser("estimate", help="estimate effects with bootstrap inference", argument_default=argparse.SUPPRESS)
    common(est)
    data(est)
    est.add_argument("--estimators", help="comma list, e.g. naive,ATE-R,ATE-RA,IPW1:ATE")
    est.add_argument("--differences", help="comma list of 'A - B' pairs")
    est.add_argument("--bootstrap-draws", type=int, help="0 disables the bootstrap")
    est.add_argument("--ci-level", type=float)
    est.add_argument("--stratify", action=argparse.BooleanOptionalAction, help="resample within arm")
    est.add_argument("--diagnostic", action=argparse.BooleanOptionalAction, help="random-assignment diagnostic")
    est.add_argument("--trim", action=argparse.BooleanOptionalAction, help="also report trimmed IPW (IPW2)")

    sim = sub.add_parser("simulate", help="Monte Carlo study of a preset design", argument_default=argparse.SUPPRESS)
    common(sim)
    sim.add_argument("--design", help="preset: I, II or III")
    sim.add_argument("--n", type=int)
    sim.add_argument("--sigma", type=float)
    sim.add_argument("--beta2", type=float)
    sim.add_argument("--b", type=float, help="override the response loading")
    sim.add_argument("--control-attrition", type=float)
    sim.add_argument("--treatment-attrition", type=float)
    sim.add_argument("--reps", type=int)
    sim.add_argument("--mc-size", type=int, help="draws used for the true values")
    sim.add_argument("--trim", action=argparse.BooleanOptionalAction, help="include trimmed IPW (IPW2)")

    val = sub.add_parser("validate", help="check a panel CSV", argument_default=argparse.SUPPRESS)
    common(val)
    data(val)
    return parser


def resolve_job(argv) -> JobConfig:
    ns = vars(build_parser().parse_args(argv))
    values = {}
    if ns.get("config"):
        values.update(read_config_file(ns.pop("config")))
    ns.pop("config", None)
    values.update({k: v for k, v in ns.items() if v is not None})
    if "format" not in values and values.get("mode") == "validate":
        values["format"] = "text"
    return job_from_dict(values)


# --- subcommands --------------------------------------------------------------

def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
        log.info("wrote %s", out)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _load(job: JobConfig) -> PanelSample:
    records = read_records(job.input, job.columns())
    return PanelSample.from_records(records)


def run_estimate(job: JobConfig) -> tuple[dict, int]:
    sample = _load(job)
    log.info("loaded %d records from %s", sample.n, job.input)
    names = tuple(s.strip() for s in job.estimators.split(",") if s.strip())
    if not job.trim:
        names = tuple(s for s in names if not s.startswith("IPW2"))
    diffs = None
    if job.differences:
        diffs = tuple(s.strip() for s in job.differences.split(",") if s.strip())
    spec = None
    if job.bootstrap_draws:
        spec = BootstrapSpec(
            draws=job.bootstrap_draws, seed=job.seed, ci_level=job.ci_level, stratify=job.stratify,
            resample_unit="cluster" if job.cluster_col else "unit", n_jobs=job.jobs,
        )
    try:
        config = EstimateConfig(names, diffs, spec, job.trim_rule(), job.diagnostic and spec is not None)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    provenance = make_provenance(job.analysis_dict(), job.seed, file_digest(job.input))
    report = build_report(sample, config, provenance)
    code = EXIT_OK if report["estimates"] else EXIT_ESTIMATION
    return report, code


def run_simulate(job: JobConfig):
    design = design_preset(job.design, job.n, job.sigma, job.beta2, job.seed)
    rates = (
        design.target_attrition[0] if job.control_attrition is None else job.control_attrition,
        design.target_attrition[1] if job.treatment_attrition is None else job.treatment_attrition,
    )
    design = with_overrides(design, b=job.b, target_attrition=rates, response_index=job.response_index)
    groups = ["naive", "cic", "ipw1"] + (["ipw2"] if job.trim else [])
    log.info("simulating design %s: n=%d reps=%d", job.design, job.n, job.reps)
    summary = run_monte_carlo(design, job.reps, groups, job.trim_rule(), mc_size=job.mc_size, n_jobs=job.jobs)
    total_failure = all(r.failures == job.reps for r in summary.rows)
    return summary, EXIT_ESTIMATION if total_failure else EXIT_OK


def run_validate(job: JobConfig) -> tuple[dict, int]:
    records, errors = read_records(job.input, job.columns(), collect_errors=True)
    result = {
        "input": job.input,
        "valid": not errors,
        "violations": [{"row": e.row, "column": e.column, "message": e.detail} for e in errors],
        "warnings": [],
    }
    if records:
        sample = PanelSample.from_records(records)
        summary = attrition_summary(sample)
        result["counts"] = summary["counts"]
        result["attrition"] = {k: summary[k] for k in ("overall", "treatment", "control")}
        for g, r in CELLS:
            if sample.counts[(g, r)] == 0:
                result["warnings"].append(f"cell g={g}, r={r} is empty")
        result["warnings"].extend(c.message() for c in support_overlap(sample) if not c.contained)
    return result, EXIT_OK if not errors else EXIT_DATA


def _validation_text(res: dict) -> str:
    lines = [f"{res['input']}: {'valid' if res['valid'] else 'INVALID'}"]
    for v in res["violations"]:
        where = f"row {v['row']}" if v["row"] is not None else "file"
        col = f", column {v['column']}" if v["column"] else ""
        lines.append(f"  {where}{col}: {v['message']}")
    if "counts" in res:
        c = res["counts"]
        lines += [
            "",
            f"{'':<10}{'r=1':>8}{'r=0':>8}",
            f"{'g=1':<10}{c['g1_r1']:>8}{c['g1_r0']:>8}",
            f"{'g=0':<10}{c['g0_r1']:>8}{c['g0_r0']:>8}",
            "",
        ]
        for k, v in res["attrition"].items():
            lines.append(f"attrition {k:<10}" + ("-" if v is None else f"{v:.3f}"))
    if res["warnings"]:
        lines.append("")
        lines.extend(f"warning: {w}" for w in res["warnings"])
    return "\n".join(lines) + "\n"


def main(argv=None) -> int:
    try:
        job = resolve_job(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(f"cicattr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.WARNING - 10 * min(job.verbose, 2), format="%(levelname)s %(message)s", stream=sys.stderr
    )
    try:
        if job.mode == "validate":
            res, code = run_validate(job)
            _emit(json.dumps(res, indent=2) if job.format == "json" else _validation_text(res), job.out)
            return code
        if job.mode == "simulate":
            summary, code = run_simulate(job)
            text = {"json": summary.to_json, "csv": summary.to_csv, "text": summary.to_text}[job.format]()
            _emit(text, job.out)
            return code
        report, code = run_estimate(job)
        _emit(RENDERERS[job.format](report), job.out)
        for gap in report["gaps"]:
            log.warning("%s not reported: %s", gap["name"], gap["reason"])
        return code
    except UsageError as exc:
        print(f"cicattr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"cicattr: error: no such file: {exc.filename or exc}", file=sys.stderr)
        return EXIT_USAGE
    except PanelDataError as exc:
        print(f"cicattr: invalid data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, RuntimeError) as exc:
        print(f"cicattr: estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
