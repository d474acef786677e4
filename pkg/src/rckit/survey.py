"""Survey-design variance for regression calibration.

Replicate weights come from a rescaled PSU bootstrap: within stratum h with
n_h PSUs each replicate draws n_h - 1 PSUs with replacement and scales the
selected rows' base weights by multiplicity * n_h / (n_h - 1).

``mi_rc_pipeline`` adds calibration uncertainty by refitting the calibration
on bootstrap resamples of the validation data ("imputations") and pooling
with the law of total variance.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
import numpy as np
from scipy.stats import median_abs_deviation

from . import glm, kernels
from .calibration import CalibrationModel, CalibrationSpec, calibrate, fit_calibration
from .dataset import AnalysisDataset, ColumnRole, split_validation
from .errors import InputError, MalformedCsv, SingletonStratum, TooManyFailedReplicates
from .parallel import pmap, substream
from .rc import OutcomeSpec, _outcome_design

logger = logging.getLogger(__name__)

REPW_STREAM = 0x5E7
MI_STREAM = 0x313
DEFAULT_M = 25
DEFAULT_R = 1000


@dataclass(frozen=True, eq=False)
class SurveyDesign:
    strata: np.ndarray
    psus: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        n = len(self.weights)
        if len(self.strata) != n or len(self.psus) != n:
            raise InputError("stratum, PSU and weight columns differ in length")
        w = np.asarray(self.weights, dtype=float)
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise InputError("base weights must be positive and finite")
        object.__setattr__(self, "weights", w)
        for h in np.unique(self.strata):
            if np.unique(self.psus[self.strata == h]).size < 2:
                raise SingletonStratum(f"stratum {h!r} has a single PSU; variance cannot be estimated")

    @property
    def n(self) -> int:
        return self.weights.size

    @classmethod
    def from_dataset(cls, ds: AnalysisDataset) -> "SurveyDesign":
        """Build from the stratum / psu / weight roles (missing roles default sensibly)."""
        n = ds.n_rows
        s = ds.column_with_role(ColumnRole.STRATUM)
        p = ds.column_with_role(ColumnRole.PSU)
        w = ds.column_with_role(ColumnRole.WEIGHT)
        strata = np.zeros(n) if s is None else np.asarray(ds[s])
        psus = np.arange(n) if p is None else np.asarray(ds[p])
        weights = np.ones(n) if w is None else np.asarray(ds[w], dtype=float)
        return cls(strata, psus, weights)


@dataclass(frozen=True, eq=False)
class ReplicateWeightSet:
    """Replicate weights, shape (R, n)."""

    weights: np.ndarray
    seed: int | None = None
    method: str = "rescaled-psu-bootstrap"

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.weights, dtype=float))
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InputError("replicate weights must be finite and non-negative")
        object.__setattr__(self, "weights", w)

    @property
    def n_replicates(self) -> int:
        return self.weights.shape[0]

    def to_csv(self, path: str | Path) -> None:
        """One column per replicate, one line per data row."""
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow([f"w{r + 1}" for r in range(self.n_replicates)])
            for row in self.weights.T:
                wr.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path: str | Path) -> "ReplicateWeightSet":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2:
            raise MalformedCsv(f"{path}: no replicate-weight rows")
        width = len(rows[0])
        data = []
        for i, row in enumerate(rows[1:], start=2):
            if len(row) != width:
                raise MalformedCsv(f"{path}: line {i} has {len(row)} fields, expected {width}")
            try:
                data.append([float(v) for v in row])
            except ValueError as exc:
                raise MalformedCsv(f"{path}: line {i}: {exc}") from None
        return cls(np.asarray(data).T, None, "imported")


def make_replicate_weights(design: SurveyDesign, R: int = DEFAULT_R, seed: int = 0,
                           adjustment: np.ndarray | None = None) -> ReplicateWeightSet:
    """Rescaled PSU bootstrap replicate weights.

    ``adjustment`` is an optional per-row multiplier (e.g. a nonresponse
    correction) applied to every replicate.
    """
    if R < 2:
        raise InputError("need at least 2 replicates")
    out = np.zeros((R, design.n))
    for k, h in enumerate(np.unique(design.strata)):
        rows = np.flatnonzero(design.strata == h)
        labels, psu_of_row = np.unique(design.psus[rows], return_inverse=True)
        n_h = labels.size
        rng = substream(seed, REPW_STREAM, k)
        draws = rng.integers(0, n_h, size=(R, n_h - 1))
        mult = np.zeros((R, n_h))
        np.add.at(mult, (np.repeat(np.arange(R), n_h - 1), draws.ravel()), 1.0)
        out[:, rows] = design.weights[rows] * mult[:, psu_of_row] * (n_h / (n_h - 1))
    if adjustment is not None:
        out *= np.asarray(adjustment, dtype=float)
    return ReplicateWeightSet(out, seed)


def _replicate_fits(family: glm.ModelFamily, X, y, W, beta0) -> tuple[np.ndarray, np.ndarray]:
    R, p = W.shape[0], X.shape[1]
    if family is glm.ModelFamily.LINEAR:
        G = np.einsum("rn,ni,nj->rij", W, X, X)
        h = W @ (X * y[:, None])
        try:
            return np.linalg.solve(G, h[:, :, None])[:, :, 0], np.zeros(R, dtype=np.int64)
        except np.linalg.LinAlgError:
            pass
    betas = np.full((R, p), np.nan)
    status = np.zeros(R, dtype=np.int64)
    for r in range(R):
        b, s = kernels.fit_coef(family.code, X, y, W[r], beta0)
        betas[r], status[r] = b, s
    return betas, status


@dataclass(frozen=True, eq=False)
class SurveyRcResult:
    estimate: float
    replicate_estimates: np.ndarray
    variance: float
    n_failed: int
    fit: glm.GlmFit

    @property
    def se(self) -> float:
        return math.sqrt(self.variance)

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "variance": self.variance, "se": self.se,
                "n_replicates": int(self.replicate_estimates.size + self.n_failed), "n_failed": self.n_failed}


def replicate_variance(values: np.ndarray) -> float:
    """(1/(R-1)) * sum (b_r - mean)^2 with the mean taken over R."""
    v = np.asarray(values, dtype=float)
    return float(np.sum((v - v.mean()) ** 2) / (v.size - 1))


def survey_rc_fit(
    cohort: AnalysisDataset,
    design: SurveyDesign | ReplicateWeightSet,
    model: CalibrationModel,
    outcome_spec: OutcomeSpec,
    *,
    R: int = DEFAULT_R,
    seed: int = 0,
    base_weights: np.ndarray | None = None,
    failure_budget: float = 0.05,
) -> SurveyRcResult:
    """Weighted RC estimate (run 1) and its replicate-weight variance (runs 2..R+1).

    ``design`` may be a :class:`SurveyDesign` (replicates generated here) or a
    ready :class:`ReplicateWeightSet`, in which case ``base_weights`` default
    to the dataset's weight column, or ones.
    """
    if isinstance(design, SurveyDesign):
        base = design.weights
        reps = make_replicate_weights(design, R, seed)
    else:
        reps = design
        if base_weights is None:
            wcol = cohort.column_with_role(ColumnRole.WEIGHT)
            base_weights = np.ones(cohort.n_rows) if wcol is None else cohort[wcol]
        base = np.asarray(base_weights, dtype=float)
    if reps.weights.shape[1] != cohort.n_rows or base.size != cohort.n_rows:
        raise InputError("weights do not match the number of cohort rows")
    ds = calibrate(model, cohort)
    exp_cols = list(model.output_columns)
    needed = [outcome_spec.outcome, *exp_cols, *outcome_spec.confounders]
    keep = np.flatnonzero(~ds.missing_mask(needed))
    if keep.size < cohort.n_rows:
        logger.info("survey fit: %d incomplete row(s) excluded", cohort.n_rows - keep.size)
    ds = ds.take(keep)
    design_mat = _outcome_design(ds, exp_cols, outcome_spec)
    y = np.asarray(ds[outcome_spec.outcome], dtype=float)
    fit = glm.fit(outcome_spec.family, y, design_mat, base[keep])
    j = 1
    betas, status = _replicate_fits(outcome_spec.family, design_mat.values, y, reps.weights[:, keep], fit.coefficients)
    ok = status == kernels.OK
    n_failed = int((~ok).sum())
    if n_failed > failure_budget * reps.n_replicates:
        raise TooManyFailedReplicates(f"{n_failed} of {reps.n_replicates} replicate-weight fits failed")
    est = betas[ok, j]
    return SurveyRcResult(float(fit.coefficients[j]), est, replicate_variance(est), n_failed, fit)


def _mean(x: np.ndarray) -> float:
    # shifted so that M identical values come back unchanged
    return float(x[0] + np.mean(x - x[0]))


@dataclass(frozen=True, eq=False)
class MiPooledEstimate:
    estimates: np.ndarray
    variances: np.ndarray
    robust: bool = False
    rubin_factor: bool = False
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.asarray(self.estimates).size < 2:
            raise InputError("pooling needs at least M = 2 imputations")

    @property
    def M(self) -> int:
        return int(np.asarray(self.estimates).size)

    @property
    def estimate(self) -> float:
        b = np.asarray(self.estimates, dtype=float)
        return float(np.median(b) if self.robust else _mean(b))

    @property
    def within(self) -> float:
        v = np.asarray(self.variances, dtype=float)
        return float(np.median(v) if self.robust else _mean(v))

    @property
    def between(self) -> float:
        b = np.asarray(self.estimates, dtype=float)
        if self.robust:
            return float(median_abs_deviation(b, scale="normal") ** 2)
        return float(np.sum((b - _mean(b)) ** 2) / (b.size - 1))

    @property
    def variance(self) -> float:
        factor = 1.0 + 1.0 / self.M if self.rubin_factor else 1.0
        return self.within + factor * self.between

    @property
    def se(self) -> float:
        return math.sqrt(self.variance)

    def wald_ci(self, level: float = 0.95) -> tuple[float, float]:
        from statistics import NormalDist

        z = NormalDist().inv_cdf(0.5 + level / 2)
        return self.estimate - z * self.se, self.estimate + z * self.se

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "variance": self.variance,
            "se": self.se,
            "within": self.within,
            "between": self.between,
            "robust": self.robust,
            "rubin_factor": self.rubin_factor,
            "per_imputation": {"estimates": [float(v) for v in self.estimates],
                               "variances": [float(v) for v in self.variances]},
            "metadata": self.metadata,
        }


def _replicate_membership(val: AnalysisDataset) -> np.ndarray:
    """Stratum label per validation row: pattern of observed replicate columns."""
    cols = val.columns_with_role(ColumnRole.REPLICATE)
    if not cols:
        return np.zeros(val.n_rows, dtype=np.int64)
    code = np.zeros(val.n_rows, dtype=np.int64)
    for k, c in enumerate(cols):
        code += (~np.isnan(np.asarray(val[c], dtype=float))).astype(np.int64) << k
    return code


def _stratified_resample(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    parts = []
    for h in np.unique(labels):
        rows = np.flatnonzero(labels == h)
        parts.append(rows[rng.integers(0, rows.size, rows.size)])
    return np.concatenate(parts)


def mi_rc_pipeline(
    cohort: AnalysisDataset,
    cal_spec: CalibrationSpec,
    outcome_spec: OutcomeSpec,
    design: SurveyDesign | ReplicateWeightSet,
    *,
    validation: AnalysisDataset | None = None,
    M: int = DEFAULT_M,
    R: int = DEFAULT_R,
    seed: int = 0,
    robust: bool = False,
    rubin_factor: bool = False,
    base_weights: np.ndarray | None = None,
    workers: int | None = None,
) -> MiPooledEstimate:
    """Resampling-based multiple imputation for survey RC.

    Imputation m refits the calibration on a bootstrap resample of the
    validation rows (stratified on which replicate columns are observed),
    recalibrates the cohort, and records the base-weight estimate and its
    replicate-weight variance.  One replicate-weight set is shared by all
    imputations.  ``robust`` replaces means by medians and variances by
    squared normal-scaled MADs.
    """
    if M < 2:
        raise InputError("mi_rc_pipeline requires M >= 2")
    if validation is None:
        validation, _ = split_validation(cohort)
    if isinstance(design, SurveyDesign):
        base_weights = design.weights
        reps = make_replicate_weights(design, R, seed)
    else:
        reps = design
    labels = _replicate_membership(validation)

    def one(m: int):
        rng = substream(seed, MI_STREAM, m)
        val_m = validation.take(_stratified_resample(labels, rng))
        model = fit_calibration(val_m, cal_spec)
        res = survey_rc_fit(cohort, reps, model, outcome_spec, base_weights=base_weights)
        if robust:
            return res.estimate, float(median_abs_deviation(res.replicate_estimates, scale="normal") ** 2)
        return res.estimate, res.variance

    out = pmap(one, range(M), workers)
    meta = {
        "M": M,
        "R": reps.n_replicates,
        "defaults": {"M": DEFAULT_M, "R": DEFAULT_R},
        "seed": seed,
        "replicate_mean_normalizer": "1/R",
        "replicate_variance_normalizer": "1/(R-1)",
        "replicate_method": reps.method,
    }
    return MiPooledEstimate(np.array([o[0] for o in out]), np.array([o[1] for o in out]), robust, rubin_factor, meta)
