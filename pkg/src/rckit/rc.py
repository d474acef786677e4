"""Regression-calibration estimation of the outcome model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import glm
from .calibration import CalibrationModel, CalibrationSpec, _dependent_block, _predictor_design, calibrate
from .dataset import AnalysisDataset, ColumnRole, DesignMatrix, build_design
from .errors import AlignmentError, InputError, LambdaNearZero, NotLogScale, RoleConflict

UNADJUSTED_NOTE = "ignores calibration uncertainty"


@dataclass(frozen=True)
class OutcomeSpec:
    outcome: str
    exposure: str
    confounders: tuple[str, ...] = ()
    family: glm.ModelFamily = glm.ModelFamily.LOGISTIC
    exposure_transform: str = "identity"
    confounder_transforms: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "confounders", tuple(self.confounders))
        object.__setattr__(self, "family", glm.ModelFamily(self.family))
        if self.exposure in self.confounders:
            raise RoleConflict(f"exposure {self.exposure!r} also listed as a confounder")

    def replace(self, **kw) -> "OutcomeSpec":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(kw)
        return OutcomeSpec(**d)

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "exposure": self.exposure,
            "confounders": list(self.confounders),
            "family": self.family.value,
            "exposure_transform": self.exposure_transform,
        }


@dataclass(frozen=True)
class AlignmentIssue:
    kind: str  # "a": outcome confounder missing from calibration; "b": calibration covariate missing from outcome
    column: str
    severity: str
    message: str
    checklist_item: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class AlignmentReport:
    issues: tuple[AlignmentIssue, ...] = ()

    def __bool__(self) -> bool:
        return bool(self.issues)

    def __len__(self) -> int:
        return len(self.issues)

    @property
    def errors(self) -> list[AlignmentIssue]:
        return [i for i in self.issues if i.severity == "ERROR"]

    def to_list(self) -> list[dict]:
        return [i.to_dict() for i in self.issues]


def check_alignment(cal_spec: CalibrationSpec, outcome_spec: OutcomeSpec, strict: bool = False) -> AlignmentReport:
    """Compare covariate sets of the calibration and outcome models."""
    severity = "ERROR" if strict else "WARN"
    cal_covs = list(cal_spec.confounders) + list(cal_spec.extras)
    issues = []
    for z in outcome_spec.confounders:
        if z not in cal_covs:
            issues.append(
                AlignmentIssue(
                    "a",
                    z,
                    severity,
                    f"outcome confounder {z!r} is not in the calibration equation; "
                    "omit it only if it does not contribute to estimating the exposure",
                    1,
                )
            )
    for z in cal_covs:
        if z not in outcome_spec.confounders:
            issues.append(
                AlignmentIssue(
                    "b",
                    z,
                    severity,
                    f"calibration covariate {z!r} is not in the outcome model; "
                    "omit it only if it is independent of the outcome given the other covariates",
                    5,
                )
            )
    return AlignmentReport(tuple(issues))


@dataclass(frozen=True, eq=False)
class RcResult:
    fit: glm.GlmFit
    exposure_labels: tuple[str, ...]
    alignment: AlignmentReport = AlignmentReport()
    calibrated: bool = True
    log_scale_exposure: bool = False
    or_per_increase: tuple | None = None

    @property
    def exposure_index(self) -> int:
        return self.fit.column_labels.index(self.exposure_labels[0])

    @property
    def exposure_coefficient(self) -> float:
        return float(self.fit.coefficients[self.exposure_index])

    @property
    def unadjusted_se(self) -> float:
        return float(self.fit.se[self.exposure_index])

    def to_dict(self) -> dict:
        d = {
            "calibrated": self.calibrated,
            "exposure_coefficient": self.exposure_coefficient,
            "unadjusted_se": self.unadjusted_se,
            "unadjusted_se_note": UNADJUSTED_NOTE,
            "outcome_fit": self.fit.to_dict(),
            "alignment": self.alignment.to_list(),
        }
        if self.or_per_increase is not None:
            factor, ratio, ci = self.or_per_increase
            d["or_per_increase"] = {"factor": factor, "or": ratio, "ci_unadjusted": list(ci)}
        return d


def _outcome_design(ds: AnalysisDataset, exposure_cols: Sequence[str], spec: OutcomeSpec, transforms=None):
    transforms = dict(spec.confounder_transforms, **(transforms or {}))
    return build_design(ds, [*exposure_cols, *spec.confounders], transforms)


def _finish(ds, exposure_cols, spec, transforms, alignment, calibrated, log_scale, or_factor, weights=None):
    needed = [spec.outcome, *exposure_cols, *spec.confounders]
    ds = ds.complete_cases(needed, "outcome model")
    design = _outcome_design(ds, exposure_cols, spec, transforms)
    w = None if weights is None else ds[weights]
    result = glm.fit(spec.family, ds[spec.outcome], design, w)
    labels = tuple(design.column_labels[1 : 1 + len(exposure_cols)])
    out = RcResult(result, labels, alignment, calibrated, log_scale)
    if or_factor is not None:
        b, se = out.exposure_coefficient, out.unadjusted_se
        ratio, ci = or_per_increase(b, ci=(b - 1.959963984540054 * se, b + 1.959963984540054 * se), factor=or_factor,
                                    log_scale=log_scale)
        out = RcResult(result, labels, alignment, calibrated, log_scale, (or_factor, ratio, ci))
    return out


def rc_fit(
    cohort: AnalysisDataset,
    model: CalibrationModel,
    outcome_spec: OutcomeSpec,
    *,
    strict: bool = False,
    or_factor: float | None = None,
    weights: str | None = None,
) -> RcResult:
    """Fit the outcome model with the calibrated exposure in place of X*.

    The unadjusted SE in the result comes from the model-based covariance and
    ignores calibration uncertainty; use the variance module for corrected SEs.
    """
    report = check_alignment(model.spec, outcome_spec, strict)
    if strict and report.errors:
        names = ", ".join(f"{i.column!r} ({'missing from calibration' if i.kind == 'a' else 'missing from outcome'})"
                          for i in report.errors)
        raise AlignmentError(f"calibration and outcome models are not aligned: {names}")
    ds = calibrate(model, cohort)
    log_scale = model.spec.dependent_transform == "log"
    return _finish(ds, list(model.output_columns), outcome_spec, {}, report, True, log_scale, or_factor, weights)


def naive_fit(
    cohort: AnalysisDataset,
    outcome_spec: OutcomeSpec,
    *,
    or_factor: float | None = None,
    weights: str | None = None,
) -> RcResult:
    """Outcome model with the error-prone X* itself (biased in general)."""
    log_scale = outcome_spec.exposure_transform == "log"
    transforms = {outcome_spec.exposure: outcome_spec.exposure_transform}
    return _finish(
        cohort, [outcome_spec.exposure], outcome_spec, transforms, AlignmentReport(), False, log_scale, or_factor, weights
    )


@dataclass(frozen=True)
class AttenuationResult:
    lambda_hat: float
    var_lambda: float
    beta_star_hat: float
    var_beta_star: float
    beta_corrected: float
    var_corrected: float

    @property
    def se_corrected(self) -> float:
        return math.sqrt(self.var_corrected)


def attenuation_from_estimates(beta_star: float, var_beta_star: float, lam: float, var_lam: float) -> AttenuationResult:
    """beta*/lambda with the delta-method variance (independent estimates)."""
    if abs(lam) < 1e-6:
        raise LambdaNearZero(f"attenuation coefficient {lam:.3g} too close to zero for a stable correction")
    var = var_beta_star / lam**2 + beta_star**2 * var_lam / lam**4
    return AttenuationResult(lam, var_lam, beta_star, var_beta_star, beta_star / lam, var)


def attenuation_correct(
    beta_star: float,
    var_beta_star: float,
    val: AnalysisDataset,
    exposure: str,
    reference: str,
) -> AttenuationResult:
    """Divide a naive slope by lambda-hat, the slope of reference on X* in ``val``."""
    val = val.complete_cases([exposure, reference], "attenuation")
    design = build_design(val, [exposure])
    f = glm.fit(glm.ModelFamily.LINEAR, val[reference], design)
    return attenuation_from_estimates(beta_star, var_beta_star, float(f.coefficients[1]), float(f.vcov_model[1, 1]))


def or_per_increase(
    beta: float,
    ci: tuple[float, float] | None = None,
    factor: float = 1.2,
    *,
    log_scale: bool = True,
) -> tuple[float, tuple[float, float] | None]:
    """Odds ratio for a multiplicative ``factor`` increase in a log-scale exposure.

    The CI endpoints are mapped with the same monotone transform.
    """
    if not log_scale:
        raise NotLogScale("odds ratio per relative increase needs the exposure on the log scale")
    if factor <= 0:
        raise InputError("factor must be positive")
    c = math.log(factor)
    ratio = math.exp(beta * c)
    if ci is None:
        return ratio, None
    lo, hi = sorted((math.exp(ci[0] * c), math.exp(ci[1] * c)))
    return ratio, (lo, hi)


@dataclass(frozen=True, eq=False)
class RcProblem:
    """Array form of a calibration + outcome analysis.

    ``cal_X``/``cal_Y`` are the calibration design and dependent block on
    the calibration rows.  ``cohort_cal_X`` is the calibration design on
    cohort rows and ``out_X`` the outcome design whose ``exp_cols`` receive
    calibrated values.  ``val_pos`` maps calibration rows to cohort rows for
    an internal validation study and is ``None`` for an external one.
    """

    cal_X: np.ndarray
    cal_Y: np.ndarray
    cohort_cal_X: np.ndarray
    out_X: np.ndarray
    exp_cols: np.ndarray
    y: np.ndarray
    w: np.ndarray
    family: glm.ModelFamily
    val_pos: np.ndarray | None
    cal_labels: tuple[str, ...]
    out_labels: tuple[str, ...]
    knots: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.out_X.shape[0]

    @property
    def exposure_index(self) -> int:
        return int(self.exp_cols[0])

    def calibration_coefficients(self, rows=None) -> np.ndarray:
        X = self.cal_X if rows is None else self.cal_X[rows]
        Y = self.cal_Y if rows is None else self.cal_Y[rows]
        theta, _ = np.linalg.lstsq(X, Y, rcond=None)[:2]
        return theta

    def outcome_design(self, theta: np.ndarray) -> np.ndarray:
        X = self.out_X.copy()
        X[:, self.exp_cols] = self.cohort_cal_X @ theta
        return X


def build_problem(
    cohort: AnalysisDataset,
    cal_spec: CalibrationSpec,
    outcome_spec: OutcomeSpec,
    validation: AnalysisDataset | None = None,
    *,
    knots=None,
    weights: str | None = None,
) -> RcProblem:
    """Assemble the arrays used by the bootstrap and the stacked sandwich.

    With ``validation=None`` the calibration rows are the cohort rows carrying
    the validation flag (internal validation).
    """
    predictors = list(cal_spec.predictors)
    out_cols = [outcome_spec.outcome, *predictors, *outcome_spec.confounders]
    if weights is not None:
        out_cols.append(weights)
    cohort = cohort.complete_cases(dict.fromkeys(out_cols), "cohort")
    exposure_source = cal_spec.replicates[1] if cal_spec.mode == "replicate" else None
    dep = cal_spec.dependent_column

    if validation is None:
        flag = cohort.column_with_role(ColumnRole.VALIDATION)
        if flag is None:
            raise InputError("internal validation requires a validation flag column")
        val_mask = cohort[flag] == 1.0
        val_mask &= ~cohort.missing_mask([dep] + ([exposure_source] if exposure_source else []))
        val_pos = np.flatnonzero(val_mask)
        val = cohort.take(val_pos)
    else:
        needed = [dep, *predictors] if exposure_source is None else [dep, exposure_source, *predictors[1:]]
        val = validation.complete_cases(needed, "calibration")
        val_pos = None

    cal_design = _predictor_design(cal_spec, val, exposure_source)
    cal_Y, knots = _dependent_block(cal_spec, val[dep], knots)
    cohort_design = _predictor_design(cal_spec, cohort)
    k = cal_Y.shape[1]
    placeholder = {f"__exp{j}": np.zeros(cohort.n_rows) for j in range(k)}
    ds = cohort.with_columns(placeholder)
    out_design = _outcome_design(ds, list(placeholder), outcome_spec)
    names = [cal_spec.output_name] if k == 1 else [f"{cal_spec.output_name}_{j + 1}" for j in range(k)]
    rename = dict(zip(placeholder, names))
    out_labels = tuple(rename.get(lab, lab) for lab in out_design.column_labels)
    w = np.ones(cohort.n_rows) if weights is None else np.asarray(cohort[weights], dtype=float)
    return RcProblem(
        cal_X=np.ascontiguousarray(cal_design.values),
        cal_Y=np.ascontiguousarray(cal_Y),
        cohort_cal_X=np.ascontiguousarray(cohort_design.values),
        out_X=np.ascontiguousarray(out_design.values),
        exp_cols=np.arange(1, 1 + k),
        y=np.asarray(cohort[outcome_spec.outcome], dtype=float),
        w=w,
        family=outcome_spec.family,
        val_pos=val_pos,
        cal_labels=cal_design.column_labels,
        out_labels=out_labels,
        knots=knots,
    )


def problem_point_estimate(problem: RcProblem) -> tuple[np.ndarray, glm.GlmFit]:
    """Calibration coefficients and outcome fit on the full data."""
    cal = glm.fit(glm.ModelFamily.LINEAR, problem.cal_Y[:, 0], problem.cal_X)
    thetas = [cal.coefficients]
    for j in range(1, problem.cal_Y.shape[1]):
        thetas.append(glm.fit(glm.ModelFamily.LINEAR, problem.cal_Y[:, j], problem.cal_X).coefficients)
    theta = np.column_stack(thetas)
    X = problem.outcome_design(theta)
    fit = glm.fit(problem.family, problem.y, DesignMatrix(X, problem.out_labels), problem.w)
    return theta, fit
