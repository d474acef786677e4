"""Calibration equations E(f(X) | X*, Z) estimated from validation data."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from . import glm
from .dataset import AnalysisDataset, DesignMatrix, apply_transform, build_design
from .errors import InputError, InsufficientValidationRows, RoleConflict, TooFewDistinctValues, UnknownColumn

KNOT_QUANTILES = {
    3: (0.10, 0.50, 0.90),
    4: (0.05, 0.35, 0.65, 0.95),
    5: (0.05, 0.275, 0.50, 0.725, 0.95),
}


@dataclass(frozen=True)
class CalibrationSpec:
    """What to regress on what.

    In ``reference`` mode the dependent is ``dependent`` (exact X or an
    unbiased reference X**).  In ``replicate`` mode the dependent is
    ``replicates[0]`` and ``replicates[1]`` stands in for the exposure while
    fitting; the fitted equation is then applied to ``exposure`` in the
    cohort.
    """

    exposure: str
    confounders: tuple[str, ...] = ()
    extras: tuple[str, ...] = ()
    dependent: str | None = None
    replicates: tuple[str, str] | None = None
    mode: str = "reference"
    dependent_transform: str = "identity"
    n_knots: int | None = None
    predictor_transforms: Mapping[str, str] = field(default_factory=dict)
    output_name: str = "xhat"

    def __post_init__(self):
        object.__setattr__(self, "confounders", tuple(self.confounders))
        object.__setattr__(self, "extras", tuple(self.extras))
        object.__setattr__(self, "predictor_transforms", dict(self.predictor_transforms))
        if self.replicates is not None:
            object.__setattr__(self, "replicates", tuple(self.replicates))
        if self.mode == "reference":
            if self.dependent is None:
                raise RoleConflict("reference-mode calibration needs a dependent column")
        elif self.mode == "replicate":
            if self.replicates is None or len(self.replicates) != 2:
                raise RoleConflict("replicate-mode calibration needs exactly two replicate columns")
        else:
            raise InputError(f"unknown calibration mode {self.mode!r}")
        if self.dependent_transform not in ("identity", "log", "spline"):
            raise InputError(f"unknown dependent transform {self.dependent_transform!r}")
        if self.dependent_transform == "spline" and self.n_knots not in KNOT_QUANTILES:
            raise InputError("spline calibration needs n_knots in {3, 4, 5}")

    @property
    def predictors(self) -> tuple[str, ...]:
        return (self.exposure,) + self.confounders + self.extras

    @property
    def dependent_column(self) -> str:
        return self.dependent if self.mode == "reference" else self.replicates[0]

    @property
    def n_basis(self) -> int:
        return self.n_knots - 1 if self.dependent_transform == "spline" else 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["replicates"] = list(self.replicates) if self.replicates else None
        d["confounders"] = list(self.confounders)
        d["extras"] = list(self.extras)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "CalibrationSpec":
        d = dict(d)
        if d.get("replicates") is not None:
            d["replicates"] = tuple(d["replicates"])
        return cls(**d)


def spline_knots(x: np.ndarray, n_knots: int) -> np.ndarray:
    if n_knots not in KNOT_QUANTILES:
        raise InputError("n_knots must be 3, 4 or 5")
    x = np.asarray(x, dtype=float)
    x = x[~np.isnan(x)]
    if np.unique(x).size < n_knots:
        raise TooFewDistinctValues(f"need at least {n_knots} distinct values for {n_knots} knots")
    knots = np.quantile(x, KNOT_QUANTILES[n_knots])
    if np.unique(knots).size < n_knots:
        raise TooFewDistinctValues("quantile knots are not distinct")
    return knots


def spline_basis(x, n_knots: int | None = None, knots=None) -> tuple[np.ndarray, np.ndarray]:
    """Restricted cubic spline basis (linear beyond the boundary knots).

    Returns ``(basis, knots)`` where ``basis`` has ``len(knots) - 1`` columns,
    the first being ``x`` itself.  Nonlinear terms are scaled by
    ``(t_k - t_1)**2`` so they share the units of ``x``.
    """
    x = np.asarray(x, dtype=float)
    if knots is None:
        knots = spline_knots(x, n_knots)
    t = np.asarray(knots, dtype=float)
    k = t.size
    scale = (t[-1] - t[0]) ** 2

    def cube(u):
        return np.where(u > 0, u, 0.0) ** 3

    cols = [x]
    for j in range(k - 2):
        term = (
            cube(x - t[j])
            - cube(x - t[k - 2]) * (t[k - 1] - t[j]) / (t[k - 1] - t[k - 2])
            + cube(x - t[k - 1]) * (t[k - 2] - t[j]) / (t[k - 1] - t[k - 2])
        )
        cols.append(term / scale)
    return np.column_stack(cols), t


@dataclass(frozen=True, eq=False)
class CalibrationModel:
    spec: CalibrationSpec
    fits: tuple[glm.GlmFit, ...]
    r_squared: tuple[float, ...]
    knots: np.ndarray | None = None
    n_used: int = 0
    fingerprint: str = ""

    @property
    def predictor_labels(self) -> tuple[str, ...]:
        return self.fits[0].column_labels

    @property
    def output_columns(self) -> tuple[str, ...]:
        name = self.spec.output_name
        if len(self.fits) == 1:
            return (name,)
        return tuple(f"{name}_{j + 1}" for j in range(len(self.fits)))

    @property
    def coefficients(self) -> np.ndarray:
        """(q, K) matrix, one column per basis function."""
        return np.column_stack([f.coefficients for f in self.fits])

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "predictor_labels": list(self.predictor_labels),
            "coefficients": [f.coefficients.tolist() for f in self.fits],
            "vcov": [f.vcov_model.tolist() for f in self.fits],
            "r_squared": list(self.r_squared),
            "knots": None if self.knots is None else self.knots.tolist(),
            "n_used": self.n_used,
            "fingerprint": self.fingerprint,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: Mapping) -> "CalibrationModel":
        spec = CalibrationSpec.from_dict(d["spec"])
        labels = tuple(d["predictor_labels"])
        fits = tuple(
            glm.GlmFit(
                glm.ModelFamily.LINEAR,
                np.asarray(c, dtype=float),
                np.asarray(v, dtype=float),
                labels,
                int(d.get("n_used", 0)),
                True,
                1,
                False,
            )
            for c, v in zip(d["coefficients"], d["vcov"])
        )
        knots = None if d.get("knots") is None else np.asarray(d["knots"], dtype=float)
        return cls(spec, fits, tuple(d["r_squared"]), knots, int(d.get("n_used", 0)), d.get("fingerprint", ""))

    @classmethod
    def from_json(cls, text: str) -> "CalibrationModel":
        return cls.from_dict(json.loads(text))


def identity_model(exposure: str, output_name: str = "xhat") -> CalibrationModel:
    """The calibration X-hat = X*, i.e. no correction."""
    spec = CalibrationSpec(exposure=exposure, dependent=exposure, output_name=output_name)
    fit = glm.GlmFit(
        glm.ModelFamily.LINEAR, np.array([0.0, 1.0]), np.zeros((2, 2)), ("(intercept)", exposure), 0, True, 1, False
    )
    return CalibrationModel(spec, (fit,), (1.0,))


def _predictor_design(spec: CalibrationSpec, ds: AnalysisDataset, exposure_source: str | None = None) -> DesignMatrix:
    exposure_source = exposure_source or spec.exposure
    if exposure_source != spec.exposure:
        # replicate mode: the second replicate stands in for X* under the X* label
        if exposure_source not in ds:
            raise UnknownColumn(f"unknown column {exposure_source!r}")
        ds = ds.with_columns({spec.exposure: ds[exposure_source]})
    return build_design(ds, spec.predictors, spec.predictor_transforms)


def _dependent_block(spec: CalibrationSpec, values: np.ndarray, knots=None):
    if spec.dependent_transform == "spline":
        return spline_basis(values, spec.n_knots, knots)
    return apply_transform(values, spec.dependent_transform, spec.dependent_column)[:, None], None


def _fitting_arrays(spec: CalibrationSpec, val: AnalysisDataset, knots=None):
    """Complete-case design and dependent block exactly as used for fitting."""
    needed = [spec.dependent_column, *spec.predictors]
    exposure_source = None
    if spec.mode == "replicate":
        needed = [spec.replicates[0], spec.replicates[1], *spec.confounders, *spec.extras]
        exposure_source = spec.replicates[1]
    for name in needed:
        if name not in val:
            raise UnknownColumn(f"calibration column {name!r} not in validation data")
    val = val.complete_cases(needed, "calibration")
    design = _predictor_design(spec, val, exposure_source)
    Y, knots = _dependent_block(spec, val[spec.dependent_column], knots)
    return design, Y, knots


def _fingerprint(design: DesignMatrix, Y: np.ndarray) -> str:
    h = hashlib.sha1()
    h.update(np.ascontiguousarray(design.values).tobytes())
    h.update(np.ascontiguousarray(Y).tobytes())
    return h.hexdigest()


def fit_calibration(val: AnalysisDataset, spec: CalibrationSpec) -> CalibrationModel:
    """Regress f_k(reference) on (X*, Z, extras) by least squares, one fit per basis."""
    design, Y, knots = _fitting_arrays(spec, val)
    n, q = design.shape
    min_rows = q + 2 if spec.mode == "replicate" else q + 1
    if n < min_rows:
        raise InsufficientValidationRows(f"{n} usable validation rows for {q} calibration coefficients")
    fits = tuple(glm.fit(glm.ModelFamily.LINEAR, Y[:, j], design) for j in range(Y.shape[1]))
    r2 = tuple(_r_squared(Y[:, j], design.values @ f.coefficients) for j, f in enumerate(fits))
    return CalibrationModel(spec, fits, r2, knots, n, _fingerprint(design, Y))


def _r_squared(y, yhat) -> float:
    sse = float(np.sum((y - yhat) ** 2))
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0.0:
        return 1.0
    return min(max(1.0 - sse / sst, 0.0), 1.0)


def calibrate(model: CalibrationModel, cohort: AnalysisDataset) -> AnalysisDataset:
    """Append the calibrated exposure column(s) to ``cohort``.

    Rows missing a predictor get NaN.  Columns carry provenance naming the
    calibration model.
    """
    for name in model.spec.predictors:
        if name not in cohort:
            raise UnknownColumn(f"calibration predictor {name!r} not in cohort")
    design = _predictor_design(model.spec, cohort)
    if design.column_labels != model.predictor_labels:
        raise UnknownColumn(
            f"cohort design {design.column_labels} does not match calibration predictors {model.predictor_labels}"
        )
    values = design.values @ model.coefficients
    new = {name: values[:, j] for j, name in enumerate(model.output_columns)}
    tag = f"calibration[{model.spec.dependent_column}~{'+'.join(model.spec.predictors)}]"
    if model.fingerprint:
        tag += f"#{model.fingerprint[:12]}"
    return cohort.with_columns(new, provenance=tag)


@dataclass(frozen=True)
class BerksonDiagnostics:
    residual_mean: float
    residual_covariate_correlations: dict[str, float]
    r_squared: float
    n: int
    out_of_sample: bool

    def to_dict(self) -> dict:
        return asdict(self)


def berkson_check(model: CalibrationModel, val: AnalysisDataset, basis: int = 0) -> BerksonDiagnostics:
    """Residual U = dependent - X-hat and its correlation with each predictor."""
    design, Y, _ = _fitting_arrays(model.spec, val, model.knots)
    in_sample = bool(model.fingerprint) and _fingerprint(design, Y) == model.fingerprint
    y = Y[:, basis]
    u = y - design.values @ model.fits[basis].coefficients
    corrs = {}
    for j, label in enumerate(design.column_labels):
        col = design.values[:, j]
        if np.ptp(col) == 0.0:
            continue
        corrs[label] = _corr(u, col)
    return BerksonDiagnostics(
        residual_mean=float(u.mean()),
        residual_covariate_correlations=corrs,
        r_squared=_r_squared(y, y - u),
        n=int(y.size),
        out_of_sample=not in_sample,
    )


def _corr(a, b) -> float:
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt(np.dot(a, a) * np.dot(b, b))
    return float(np.dot(a, b) / denom) if denom > 0 else 0.0


@dataclass(frozen=True)
class ContributionTest:
    candidate: str
    f_statistic: float
    df_num: int
    df_den: int
    p_value: float
    delta_r2: float


def covariate_contribution_test(val: AnalysisDataset, spec: CalibrationSpec, candidate: str) -> ContributionTest:
    """Partial F-test for ``candidate`` in the calibration regression (first basis)."""
    if candidate not in spec.predictors:
        raise InputError(f"{candidate!r} is not a calibration predictor")
    design, Y, _ = _fitting_arrays(spec, val)
    full = glm.fit(glm.ModelFamily.LINEAR, Y[:, 0], design)
    drop = [j for j, lab in enumerate(design.column_labels) if _label_base(lab) == candidate]
    keep = [j for j in range(design.shape[1]) if j not in drop]
    reduced_design = DesignMatrix(design.values[:, keep], tuple(design.column_labels[j] for j in keep))
    reduced = glm.fit(glm.ModelFamily.LINEAR, Y[:, 0], reduced_design)
    y = Y[:, 0]
    sse_f = float(np.sum((y - design.values @ full.coefficients) ** 2))
    sse_r = float(np.sum((y - reduced_design.values @ reduced.coefficients) ** 2))
    n, q = design.shape
    df_num, df_den = len(drop), n - q
    f_stat = ((sse_r - sse_f) / df_num) / (sse_f / df_den)
    p = float(stats.f.sf(f_stat, df_num, df_den))
    sst = float(np.sum((y - y.mean()) ** 2))
    return ContributionTest(candidate, float(f_stat), df_num, df_den, p, (sse_r - sse_f) / sst)


def _label_base(label: str) -> str:
    if label.endswith(")") and "(" in label and not label.startswith("("):
        label = label[label.index("(") + 1 : -1]
    return label.split("[", 1)[0]


def calibration_columns(spec: CalibrationSpec) -> Sequence[str]:
    """Every column a calibration fit touches."""
    cols = [*spec.predictors]
    if spec.mode == "replicate":
        cols += list(spec.replicates)
    else:
        cols.append(spec.dependent)
    return cols
