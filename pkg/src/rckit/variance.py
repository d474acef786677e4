"""Standard errors that account for estimating the calibration equation.

Two routes: a bootstrap stratified on validation membership that refits both
models on every resample, and a stacked estimating-equation sandwich.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import kernels
from .calibration import CalibrationModel, CalibrationSpec
from .dataset import AnalysisDataset
from .errors import InputError, SingularA, TooManyFailedReplicates
from .glm import ModelFamily
from .parallel import pmap, substream
from .rc import OutcomeSpec, RcProblem, build_problem, problem_point_estimate

logger = logging.getLogger(__name__)

BOOT_STREAM = 0xB007
CHUNK = 50


@dataclass(frozen=True)
class BootstrapSpec:
    n_replicates: int = 1000
    seed: int = 0
    stratify_on_validation: bool = True
    ci_method: str = "percentile"
    ci_level: float = 0.95
    failure_budget: float = 0.05

    def __post_init__(self):
        if self.n_replicates < 2:
            raise InputError("bootstrap needs at least 2 replicates")
        if not 0.0 < self.ci_level < 1.0:
            raise InputError("ci_level must lie in (0, 1)")
        if self.ci_method != "percentile":
            raise InputError("only percentile bootstrap intervals are supported")


@dataclass(frozen=True, eq=False)
class VarianceReport:
    point_estimate: float
    se_unadjusted: float
    se_bootstrap: float
    ci_bootstrap: tuple[float, float]
    n_replicates: int
    n_failed: int
    ci_level: float = 0.95
    se_sandwich: float | None = None
    replicate_estimates: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "point_estimate": self.point_estimate,
            "se_unadjusted": self.se_unadjusted,
            "se_unadjusted_note": "ignores calibration uncertainty",
            "se_bootstrap": self.se_bootstrap,
            "ci_bootstrap": list(self.ci_bootstrap),
            "ci_method": "percentile",
            "ci_level": self.ci_level,
            "se_sandwich": self.se_sandwich,
            "n_replicates": self.n_replicates,
            "n_failed_replicates": self.n_failed,
        }


def percentile_ci(values, level: float = 0.95) -> tuple[float, float]:
    """Order statistics at ranks ceil(B*a/2) and ceil(B*(1-a/2)) (1-based)."""
    v = np.sort(np.asarray(values, dtype=float))
    B = v.size
    if B == 0:
        return (math.nan, math.nan)
    alpha = 1.0 - level
    lo = max(1, math.ceil(B * alpha / 2 - 1e-9))
    hi = min(B, math.ceil(B * (1 - alpha / 2) - 1e-9))
    return float(v[lo - 1]), float(v[hi - 1])


def resample_indices(problem: RcProblem, boot: BootstrapSpec, r: int, key: tuple[int, ...] = ()):
    """Calibration-row and cohort-row indices for replicate ``r``.

    Depends only on ``(boot.seed, key, r)``.
    """
    rng = substream(boot.seed, BOOT_STREAM, *key, r)
    n_cal = problem.cal_X.shape[0]
    n = problem.n
    if problem.val_pos is None:
        return rng.integers(0, n_cal, n_cal), rng.integers(0, n, n)
    if boot.stratify_on_validation:
        non_pos = _non_validation_positions(problem)
        idx_cal = rng.integers(0, n_cal, n_cal)
        idx_out = np.concatenate([problem.val_pos[idx_cal], non_pos[rng.integers(0, non_pos.size, non_pos.size)]])
        return idx_cal, idx_out
    idx_out = rng.integers(0, n, n)
    lookup = np.full(n, -1)
    lookup[problem.val_pos] = np.arange(problem.val_pos.size)
    idx_cal = lookup[idx_out]
    return idx_cal[idx_cal >= 0], idx_out


def _non_validation_positions(problem: RcProblem) -> np.ndarray:
    mask = np.ones(problem.n, dtype=bool)
    mask[problem.val_pos] = False
    return np.flatnonzero(mask)


def bootstrap_problem(
    problem: RcProblem,
    boot: BootstrapSpec,
    *,
    key: tuple[int, ...] = (),
    beta0: np.ndarray | None = None,
    workers: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Replicate outcome coefficients, shape (B, p), and per-replicate status."""
    B = boot.n_replicates
    fixed_width = problem.val_pos is None or boot.stratify_on_validation

    def run_chunk(start: int):
        stop = min(start + CHUNK, B)
        pairs = [resample_indices(problem, boot, r, key) for r in range(start, stop)]
        if fixed_width:
            idx_cal = np.stack([p[0] for p in pairs])
            idx_out = np.stack([p[1] for p in pairs])
            return _batch(problem, idx_cal, idx_out, beta0)
        outs = [_batch(problem, p[0][None, :], p[1][None, :], beta0) for p in pairs]
        return np.vstack([o[0] for o in outs]), np.concatenate([o[1] for o in outs])

    results = pmap(run_chunk, range(0, B, CHUNK), workers)
    betas = np.vstack([r[0] for r in results])
    status = np.concatenate([r[1] for r in results])
    return betas, status


def _batch(problem, idx_cal, idx_out, beta0):
    if idx_cal.shape[1] <= problem.cal_X.shape[1]:
        return np.full((idx_out.shape[0], problem.out_X.shape[1]), np.nan), np.full(idx_out.shape[0], kernels.RANK_DEFICIENT)
    return kernels.rc_batch(
        problem.cal_X,
        problem.cal_Y,
        problem.cohort_cal_X,
        problem.out_X,
        problem.exp_cols,
        problem.y,
        problem.w,
        problem.family.code,
        idx_cal,
        idx_out,
        beta0,
    )


def summarize_replicates(
    point: float,
    se_unadjusted: float,
    replicate_estimates: np.ndarray,
    status: np.ndarray,
    boot: BootstrapSpec,
) -> VarianceReport:
    ok = status == kernels.OK
    n_failed = int((~ok).sum())
    if n_failed > boot.failure_budget * boot.n_replicates:
        raise TooManyFailedReplicates(
            f"{n_failed} of {boot.n_replicates} bootstrap replicates failed "
            f"(budget {boot.failure_budget:.0%}); results would be unreliable"
        )
    if n_failed:
        logger.warning("dropped %d failed bootstrap replicate(s)", n_failed)
    est = replicate_estimates[ok]
    return VarianceReport(
        point_estimate=float(point),
        se_unadjusted=float(se_unadjusted),
        se_bootstrap=float(np.std(est, ddof=1)),
        ci_bootstrap=percentile_ci(est, boot.ci_level),
        n_replicates=boot.n_replicates,
        n_failed=n_failed,
        ci_level=boot.ci_level,
        replicate_estimates=est,
    )


def bootstrap_rc(
    cohort: AnalysisDataset,
    cal_spec: CalibrationSpec,
    outcome_spec: OutcomeSpec,
    boot: BootstrapSpec,
    *,
    validation: AnalysisDataset | None = None,
    workers: int | None = None,
    key: tuple[int, ...] = (),
) -> VarianceReport:
    """Bootstrap SE and percentile CI of the calibrated exposure coefficient.

    Each replicate resamples rows with replacement within the validation
    stratum and within the remaining cohort (stratum sizes preserved),
    refits the calibration, recalibrates and refits the outcome model.
    """
    problem = build_problem(cohort, cal_spec, outcome_spec, validation)
    _, fit = problem_point_estimate(problem)
    j = problem.exposure_index
    betas, status = bootstrap_problem(problem, boot, key=key, beta0=fit.coefficients, workers=workers)
    return summarize_replicates(fit.coefficients[j], fit.se[j], betas[:, j], status, boot)


# --- stacked estimating equations -------------------------------------------


@dataclass(frozen=True, eq=False)
class SandwichResult:
    cov: np.ndarray
    labels: tuple[str, ...]
    exposure_position: int

    @property
    def se(self) -> float:
        j = self.exposure_position
        return float(math.sqrt(self.cov[j, j]))


def _stacked_scores(problem: RcProblem, params: np.ndarray, q: int, K: int) -> np.ndarray:
    """Per-row stacked scores; rows = cohort rows (+ external validation rows)."""
    theta = params[: q * K].reshape(K, q).T
    beta = params[q * K :]
    n = problem.n
    X = problem.outcome_design(theta)
    eta = X @ beta
    mu = expit(eta) if problem.family is ModelFamily.LOGISTIC else eta
    out_scores = X * (problem.w * (problem.y - mu))[:, None]
    resid = problem.cal_Y - problem.cal_X @ theta
    cal_scores = np.hstack([problem.cal_X * resid[:, [k]] for k in range(K)])
    if problem.val_pos is not None:
        cal_full = np.zeros((n, q * K))
        cal_full[problem.val_pos] = cal_scores
        return np.hstack([cal_full, out_scores])
    n_val = cal_scores.shape[0]
    top = np.hstack([np.zeros((n, q * K)), out_scores])
    bottom = np.hstack([cal_scores, np.zeros((n_val, out_scores.shape[1]))])
    return np.vstack([top, bottom])


def stacked_covariance(problem: RcProblem, theta: np.ndarray, beta: np.ndarray) -> SandwichResult:
    """A^-1 B A^-T / N for the stacked calibration + outcome system.

    A is the Jacobian of the mean score by central differences with step
    1e-6*max(1, |param|); B the mean outer product of per-row scores.
    """
    theta = np.asarray(theta, dtype=float).reshape(problem.cal_X.shape[1], -1)
    q, K = theta.shape
    params = np.concatenate([theta.T.ravel(), np.asarray(beta, dtype=float)])
    psi = _stacked_scores(problem, params, q, K)
    N = psi.shape[0]
    m = params.size
    A = np.empty((m, m))
    for j in range(m):
        h = 1e-6 * max(1.0, abs(params[j]))
        up = params.copy()
        dn = params.copy()
        up[j] += h
        dn[j] -= h
        A[:, j] = (_stacked_scores(problem, up, q, K).mean(axis=0) - _stacked_scores(problem, dn, q, K).mean(axis=0)) / (
            2 * h
        )
    s = np.linalg.svd(A, compute_uv=False)
    if not np.all(np.isfinite(s)) or s[-1] <= 1e-12 * s[0]:
        raise SingularA("stacked Jacobian is singular; sandwich covariance undefined")
    Bm = psi.T @ psi / N
    Ainv = np.linalg.inv(A)
    cov = Ainv @ Bm @ Ainv.T / N
    cov = 0.5 * (cov + cov.T)
    labels = tuple(f"cal{k}:{lab}" for k in range(K) for lab in problem.cal_labels) + problem.out_labels
    return SandwichResult(cov, labels, q * K + problem.exposure_index)


def sandwich_stacked(
    cohort: AnalysisDataset,
    model: CalibrationModel,
    outcome_fit,
    outcome_spec: OutcomeSpec,
    *,
    validation: AnalysisDataset | None = None,
) -> SandwichResult:
    """Stacked-EE sandwich for a fitted calibration model and outcome fit.

    ``outcome_fit`` is an ``RcResult`` or ``GlmFit`` from ``rc_fit``.
    """
    fit = getattr(outcome_fit, "fit", outcome_fit)
    problem = build_problem(cohort, model.spec, outcome_spec, validation, knots=model.knots)
    return stacked_covariance(problem, model.coefficients, fit.coefficients)


def ordinary_sandwich(X: np.ndarray, y: np.ndarray, beta: np.ndarray, family, w=None) -> np.ndarray:
    """Robust (HC0) covariance of a single GLM fit."""
    family = ModelFamily(family)
    w = np.ones(len(y)) if w is None else w
    eta = X @ beta
    if family is ModelFamily.LOGISTIC:
        mu = expit(eta)
        H = X.T @ ((w * mu * (1 - mu))[:, None] * X)
    else:
        mu = eta
        H = X.T @ (w[:, None] * X)
    s = X * (w * (y - mu))[:, None]
    Hinv = np.linalg.inv(H)
    return Hinv @ (s.T @ s) @ Hinv
