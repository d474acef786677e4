"""Command-line front end.

Each subcommand reads an optional JSON run configuration, applies flag
overrides to its top-level scalar fields, runs one pipeline and writes a
pretty-printed JSON report.  Exit status: 0 success, 1 input/validation
error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .calibration import (
    CalibrationModel,
    CalibrationSpec,
    berkson_check,
    covariate_contribution_test,
    fit_calibration,
)
from .dataset import AnalysisDataset, ColumnRole, load_csv, split_validation
from .errors import ConfigError, InputError, NumericalError, RcKitError
from .mediation import MediationSpec, compare_three_methods, midthune_total_effect
from .rc import OutcomeSpec, check_alignment, naive_fit, rc_fit
from .samplesize import SampleSizeInputs, sample_size_by_simulation, validation_sample_size
from .variance import BootstrapSpec, bootstrap_rc, sandwich_stacked

logger = logging.getLogger("rckit")

REPORT_VERSION = 1
COMMANDS = ("calibrate", "rc", "mediate", "samplesize", "simulate", "survey-rc")
SCALAR_FIELDS = {
    "seed": int,
    "output": str,
    "strict": bool,
    "bootstrap_replicates": int,
    "ci_level": float,
    "sandwich": bool,
    "or_factor": float,
    "workers": int,
    "preset": str,
    "sims": int,
    "simulate_grid": bool,
}
SECTION_FIELDS = (
    "data",
    "role_map",
    "validation_role_map",
    "calibration",
    "calibration_model",
    "save_calibration_model",
    "contribution_candidates",
    "outcome",
    "mediation",
    "survey",
    "samplesize",
    "scenario",
    "raw_csv",
)


@dataclass
class RunConfig:
    command: str
    seed: int = 0
    output: str | None = None
    strict: bool = False
    bootstrap_replicates: int = 1000
    ci_level: float = 0.95
    sandwich: bool = True
    or_factor: float | None = None
    workers: int | None = None
    preset: str = "table1"
    sims: int | None = None
    simulate_grid: bool = False
    sections: dict[str, Any] = field(default_factory=dict)
    base_dir: Path = Path(".")

    def section(self, name: str, default=None):
        return self.sections.get(name, default)

    def path(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else self.base_dir / q

    def echo(self) -> dict:
        # the report's own path is left out so reruns to different files match byte for byte
        d = {k: getattr(self, k) for k in SCALAR_FIELDS if k != "output"}
        d.update(self.sections)
        return d


def _line_of(text: str, key: str) -> int | None:
    for i, line in enumerate(text.splitlines(), start=1):
        if f'"{key}"' in line:
            return i
    return None


def load_config(path: str | None, command: str, overrides: dict) -> RunConfig:
    raw: dict = {}
    text = ""
    base = Path(".")
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON ({exc.msg})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        base = p.parent
    cfg = RunConfig(command=command, base_dir=base)
    for key, value in raw.items():
        where = f"{path}:{_line_of(text, key) or '?'}: field {key!r}"
        if key in SCALAR_FIELDS:
            setattr(cfg, key, _coerce_scalar(key, value, where))
        elif key in SECTION_FIELDS:
            cfg.sections[key] = value
        else:
            raise ConfigError(f"{where}: unknown field")
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, _coerce_scalar(key, value, f"flag --{key.replace('_', '-')}"))
    return cfg


def _coerce_scalar(key: str, value, where: str):
    kind = SCALAR_FIELDS[key]
    if value is None and key in ("output", "or_factor", "workers", "sims"):
        return None
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false")
        return value
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{where}: expected an integer")
    if kind is float and (isinstance(value, bool) or not isinstance(value, (int, float))):
        raise ConfigError(f"{where}: expected a number")
    if kind is str and not isinstance(value, str):
        raise ConfigError(f"{where}: expected a string")
    return kind(value)


def _require(cfg: RunConfig, name: str) -> Any:
    value = cfg.section(name)
    if value is None:
        raise ConfigError(f"config field {name!r} is required for `{cfg.command}`")
    return value


def _section_obj(cfg: RunConfig, name: str, builder):
    raw = _require(cfg, name)
    try:
        return builder(raw)
    except InputError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"config field {name!r}: {exc}") from None


# --- data ------------------------------------------------------------------------------


def _load_data(cfg: RunConfig) -> tuple[AnalysisDataset, AnalysisDataset | None]:
    data = _require(cfg, "data")
    if "main" not in data:
        raise ConfigError("config field 'data': missing 'main' path")
    role_map = _require(cfg, "role_map")
    main = load_csv(cfg.path(data["main"]), role_map)
    validation = None
    if data.get("validation"):
        vpath = cfg.path(data["validation"])
        vmap = cfg.section("validation_role_map")
        if vmap is None:
            # reuse the main role map for whichever columns the validation file has
            with open(vpath, newline="", encoding="utf-8") as fh:
                header = next(csv.reader(fh), [])
            vmap = {k: v for k, v in role_map.items() if k in header}
        validation = load_csv(vpath, vmap, require_outcome=False)
    return main, validation


def _calibration_sample(main: AnalysisDataset, validation: AnalysisDataset | None) -> AnalysisDataset:
    return validation if validation is not None else split_validation(main)[0]


def _calibration_spec(cfg: RunConfig) -> CalibrationSpec:
    return _section_obj(cfg, "calibration", CalibrationSpec.from_dict)


def _outcome_spec(cfg: RunConfig) -> OutcomeSpec:
    def build(d):
        d = dict(d)
        d["confounders"] = tuple(d.get("confounders", ()))
        return OutcomeSpec(**d)

    return _section_obj(cfg, "outcome", build)


def _boot(cfg: RunConfig) -> BootstrapSpec:
    return BootstrapSpec(n_replicates=cfg.bootstrap_replicates, seed=cfg.seed, ci_level=cfg.ci_level)


# --- checklist ---------------------------------------------------------------------------


def checklist_warnings(
    cal_spec: CalibrationSpec | None,
    outcome_spec: OutcomeSpec | None,
    *,
    external_validation: bool = False,
    n_validation: int | None = None,
    required_n_validation: int | None = None,
    adjusted_se: bool = True,
    mediator_columns: tuple[str, ...] = (),
    strict: bool = False,
) -> list[dict]:
    """One entry per violated (or, for items 2, 3, 7, relevant) checklist item."""
    out = []
    if cal_spec is not None and outcome_spec is not None:
        for issue in check_alignment(cal_spec, outcome_spec, strict).issues:
            out.append({"checklist_item": issue.checklist_item, "severity": issue.severity.lower(),
                        "column": issue.column, "message": issue.message})
        cal_scale = cal_spec.dependent_transform
        out_scale = outcome_spec.exposure_transform
        if cal_scale in ("identity", "log") and cal_scale != out_scale:
            out.append({"checklist_item": 4, "severity": "warn",
                        "message": f"calibration dependent is on the {cal_scale} scale but the outcome model "
                                   f"uses the {out_scale} scale for the exposure; fit the calibration on the "
                                   "scale used in the outcome model"})
    if not adjusted_se:
        out.append({"checklist_item": 6, "severity": "warn",
                    "message": "only model-based SEs reported; they ignore calibration uncertainty "
                               "(enable the bootstrap or the stacked sandwich)"})
    if external_validation:
        out.append({"checklist_item": 2, "severity": "info",
                    "message": "calibration estimated in an external validation sample; its transportability "
                               "to the main study is assumed, not checked"})
    if n_validation is not None:
        msg = f"validation sample has {n_validation} usable rows"
        if required_n_validation is not None:
            msg += f"; the sizing formula asks for {required_n_validation}"
        out.append({"checklist_item": 3, "severity": "info", "message": msg})
    if mediator_columns:
        out.append({"checklist_item": 7, "severity": "info",
                    "message": f"mediator column(s) {', '.join(mediator_columns)} present; if a calibration "
                               "covariate mediates the exposure effect, use the mediation subcommand "
                               "(Midthune's method) for the total effect"})
    return out


def _mediators(main: AnalysisDataset) -> tuple[str, ...]:
    return tuple(main.columns_with_role(ColumnRole.MEDIATOR))


def _required_nv(cfg: RunConfig) -> int | None:
    ss = cfg.section("samplesize")
    if not ss:
        return None
    try:
        return validation_sample_size(SampleSizeInputs(**{k: ss[k] for k in ("f", "alpha", "power", "rho") if k in ss}))
    except TypeError:
        return None


# --- subcommands ----------------------------------------------------------------------------


def cmd_calibrate(cfg: RunConfig) -> dict:
    main, validation = _load_data(cfg)
    spec = _calibration_spec(cfg)
    val = _calibration_sample(main, validation)
    model = fit_calibration(val, spec)
    out = {
        "calibration": model.to_dict(),
        "berkson": berkson_check(model, val).to_dict(),
    }
    candidates = cfg.section("contribution_candidates") or []
    if candidates:
        out["contribution_tests"] = [covariate_contribution_test(val, spec, c).__dict__ for c in candidates]
    if cfg.section("save_calibration_model"):
        cfg.path(cfg.section("save_calibration_model")).write_text(model.to_json(), encoding="utf-8")
    out["warnings"] = checklist_warnings(
        None, None, external_validation=validation is not None, n_validation=model.n_used,
        required_n_validation=_required_nv(cfg), mediator_columns=_mediators(main),
    )
    return out


def cmd_rc(cfg: RunConfig) -> dict:
    main, validation = _load_data(cfg)
    outcome = _outcome_spec(cfg)
    val = _calibration_sample(main, validation)
    if cfg.section("calibration_model"):
        text = cfg.path(cfg.section("calibration_model")).read_text(encoding="utf-8")
        model = CalibrationModel.from_json(text)
        spec = model.spec
    else:
        spec = _calibration_spec(cfg)
        model = fit_calibration(val, spec)
    result = rc_fit(main, model, outcome, strict=cfg.strict, or_factor=cfg.or_factor)
    naive = naive_fit(main, outcome.replace(exposure=spec.exposure))
    out = {
        "calibration": model.to_dict(),
        "berkson": berkson_check(model, val).to_dict(),
        "rc": result.to_dict(),
        "naive": {"exposure_coefficient": naive.exposure_coefficient, "unadjusted_se": naive.unadjusted_se},
    }
    variance: dict = {}
    adjusted = False
    if cfg.bootstrap_replicates > 0:
        vr = bootstrap_rc(main, spec, outcome, _boot(cfg), validation=validation, workers=cfg.workers)
        variance["bootstrap"] = vr.to_dict()
        adjusted = True
    if cfg.sandwich:
        sw = sandwich_stacked(main, model, result, outcome, validation=validation)
        variance["sandwich_se"] = sw.se
        adjusted = True
    out["variance"] = variance
    out["warnings"] = checklist_warnings(
        spec, outcome, external_validation=validation is not None, n_validation=model.n_used,
        required_n_validation=_required_nv(cfg), adjusted_se=adjusted,
        mediator_columns=_mediators(main), strict=cfg.strict,
    )
    return out


def _mediation_spec(cfg: RunConfig, main: AnalysisDataset) -> MediationSpec:
    def build(d):
        d = dict(d)
        d.setdefault("outcome", main.column_with_role(ColumnRole.OUTCOME))
        d.setdefault("exposure", main.column_with_role(ColumnRole.EXPOSURE))
        d.setdefault("mediator", main.column_with_role(ColumnRole.MEDIATOR))
        d.setdefault("replicates", tuple(main.columns_with_role(ColumnRole.REPLICATE)))
        d.setdefault("confounders", tuple(main.columns_with_role(ColumnRole.CONFOUNDER)))
        return MediationSpec(**d)

    return _section_obj(cfg, "mediation", build)


def cmd_mediate(cfg: RunConfig) -> dict:
    main, validation = _load_data(cfg)
    spec = _mediation_spec(cfg, main)
    boot = _boot(cfg) if cfg.bootstrap_replicates > 0 else None
    fit = midthune_total_effect(main, spec, validation, boot)
    rows = compare_three_methods(main, spec, validation, boot, or_factor=cfg.or_factor)
    out = {"midthune": fit.to_dict(), "three_methods": [r.to_dict() for r in rows]}
    out["warnings"] = checklist_warnings(
        None, None, external_validation=validation is not None, adjusted_se=boot is not None,
        mediator_columns=(spec.mediator,),
    )
    return out


def cmd_samplesize(cfg: RunConfig, flags: dict) -> dict:
    ss = dict(cfg.section("samplesize") or {})
    for k in ("f", "alpha", "power", "rho"):
        if flags.get(k) is not None:
            ss[k] = flags[k]
    missing = [k for k in ("f", "rho") if k not in ss]
    if missing:
        raise ConfigError(f"samplesize needs {', '.join(missing)} (config 'samplesize' section or flags)")
    inputs = SampleSizeInputs(**{k: ss[k] for k in ("f", "alpha", "power", "rho") if k in ss})
    out = {"inputs": inputs.to_dict(), "n_v": validation_sample_size(inputs)}
    if cfg.simulate_grid:
        from .simulate import ScenarioSpec

        scen = ScenarioSpec.from_dict(cfg.section("scenario", {})).replace(seed=cfg.seed)
        grid = ss.get("grid", [100, 250, 500])
        res = sample_size_by_simulation(scen, grid, n_sims=cfg.sims or 200,
                                        boot=BootstrapSpec(n_replicates=cfg.bootstrap_replicates, seed=cfg.seed),
                                        workers=cfg.workers, target_power=inputs.power)
        out["simulation"] = {"alpha": res["alpha"], "points": [p.to_dict() for p in res["points"]],
                             "smallest_meeting_target": res["smallest_meeting_target"]}
    return out


def cmd_simulate(cfg: RunConfig) -> dict:
    from . import simulate as sim

    preset = cfg.preset
    scen_raw = dict(cfg.section("scenario", {}) or {})
    if preset in ("table1", "table3"):
        scen = sim.ScenarioSpec.from_dict(scen_raw).replace(seed=cfg.seed)
        if preset == "table1":
            summary = sim.run_table1(scen, cfg.sims, workers=cfg.workers)
        else:
            boot = BootstrapSpec(n_replicates=cfg.bootstrap_replicates, seed=cfg.seed, ci_level=cfg.ci_level)
            summary = sim.run_table3(scen, cfg.sims, boot, workers=cfg.workers)
    elif preset == "mediation":
        sc = sim.MediationScenario(**scen_raw).replace(seed=cfg.seed)
        summary = sim.run_mediation_scenario(sc, cfg.sims, workers=cfg.workers)
    elif preset == "survey":
        sc = sim.SurveyScenario(**{**scen_raw, "seed": cfg.seed})
        surv = cfg.section("survey", {}) or {}
        summary = sim.run_survey_coverage(sc, cfg.sims or 300, surv.get("M", 10), surv.get("R", 200),
                                          workers=cfg.workers)
    else:
        raise ConfigError(f"unknown simulation preset {preset!r} (table1, table3, mediation, survey)")
    if cfg.section("raw_csv"):
        summary.dump_csv(cfg.path(cfg.section("raw_csv")))
    return {"simulation": summary.to_dict()}


def cmd_survey_rc(cfg: RunConfig) -> dict:
    from .survey import ReplicateWeightSet, SurveyDesign, mi_rc_pipeline

    main, validation = _load_data(cfg)
    spec = _calibration_spec(cfg)
    outcome = _outcome_spec(cfg)
    surv = dict(cfg.section("survey", {}) or {})
    unknown = set(surv) - {"M", "R", "robust", "rubin_factor", "replicate_weights_csv", "export_replicate_weights"}
    if unknown:
        raise ConfigError(f"config field 'survey': unknown keys {sorted(unknown)}")
    if surv.get("replicate_weights_csv"):
        design = ReplicateWeightSet.from_csv(cfg.path(surv["replicate_weights_csv"]))
    else:
        design = SurveyDesign.from_dataset(main)
    if surv.get("export_replicate_weights") and isinstance(design, SurveyDesign):
        from .survey import make_replicate_weights

        design = make_replicate_weights(design, surv.get("R", 1000), cfg.seed)
        design.to_csv(cfg.path(surv["export_replicate_weights"]))
    pooled = mi_rc_pipeline(
        main, spec, outcome, design, validation=validation, M=surv.get("M", 25), R=surv.get("R", 1000),
        seed=cfg.seed, robust=surv.get("robust", False), rubin_factor=surv.get("rubin_factor", False),
        workers=cfg.workers,
    )
    lo, hi = pooled.wald_ci(cfg.ci_level)
    out = {"mi_pooled": pooled.to_dict(), "wald_ci": [lo, hi]}
    out["warnings"] = checklist_warnings(
        spec, outcome, external_validation=validation is not None,
        required_n_validation=_required_nv(cfg), mediator_columns=_mediators(main),
    )
    return out


# --- entry point -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rckit", description="Regression calibration toolkit")
    parser.add_argument("--version", action="version", version=f"rckit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", "-c", help="JSON run configuration")
        p.add_argument("--output", "-o", help="report path (default: stdout)")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--timing", action="store_true", help="include wall-clock time in the report")
        p.add_argument("--verbose", "-v", action="store_true")
        if name in ("rc", "mediate", "simulate", "samplesize"):
            p.add_argument("--bootstrap-replicates", "-B", dest="bootstrap_replicates", type=int)
        if name in ("rc", "survey-rc", "mediate", "simulate"):
            p.add_argument("--ci-level", dest="ci_level", type=float)
        if name in ("rc", "mediate"):
            p.add_argument("--or-factor", dest="or_factor", type=float)
        if name == "rc":
            p.add_argument("--strict", action="store_const", const=True)
            p.add_argument("--no-sandwich", dest="sandwich", action="store_const", const=False)
        if name == "simulate":
            p.add_argument("--preset", choices=("table1", "table3", "mediation", "survey"))
            p.add_argument("--sims", type=int)
        if name == "samplesize":
            p.add_argument("--f", type=float)
            p.add_argument("--alpha", type=float)
            p.add_argument("--power", type=float)
            p.add_argument("--rho", type=float)
            p.add_argument("--simulate", dest="simulate_grid", action="store_const", const=True)
            p.add_argument("--sims", type=int)
    return parser


def run(argv: list[str] | None = None) -> tuple[int, dict | None]:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    flags = vars(args)
    overrides = {k: flags.get(k) for k in SCALAR_FIELDS if k in flags}
    started = time.perf_counter()
    try:
        cfg = load_config(args.config, args.command, overrides)
        handler = {
            "calibrate": cmd_calibrate,
            "rc": cmd_rc,
            "mediate": cmd_mediate,
            "samplesize": lambda c: cmd_samplesize(c, flags),
            "simulate": cmd_simulate,
            "survey-rc": cmd_survey_rc,
        }[args.command]
        body = handler(cfg)
    except InputError as exc:
        print(f"rckit: error: {exc}", file=sys.stderr)
        return 1, None
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"rckit: numerical failure: {exc}", file=sys.stderr)
        return 2, None
    except RcKitError as exc:
        print(f"rckit: error: {exc}", file=sys.stderr)
        return 1, None
    except OSError as exc:
        print(f"rckit: error: {exc}", file=sys.stderr)
        return 1, None
    report = {
        "report_version": REPORT_VERSION,
        "tool": {"name": "rckit", "version": __version__},
        "command": args.command,
        "seed": cfg.seed,
        "config": cfg.echo(),
        **body,
    }
    report.setdefault("warnings", [])
    if args.timing:
        report["wall_clock_seconds"] = time.perf_counter() - started
    text = json.dumps(_jsonable(report), indent=2, sort_keys=False, allow_nan=True) + "\n"
    if cfg.output:
        Path(cfg.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0, report


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def main(argv: list[str] | None = None) -> int:
    code, _ = run(argv)
    return code


if __name__ == "__main__":
    sys.exit(main())
