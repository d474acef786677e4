"""Linear and logistic GLM fitting on top of the backend kernels."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import expit

from . import kernels
from .dataset import DesignMatrix
from .errors import DimensionMismatch, InputError, NonConvergence, RankDeficient, Separation


class ModelFamily(str, Enum):
    LINEAR = "linear"
    LOGISTIC = "logistic"

    @property
    def code(self) -> int:
        return 0 if self is ModelFamily.LINEAR else 1


MAX_ITER = 50


@dataclass(frozen=True, eq=False)
class GlmFit:
    family: ModelFamily
    coefficients: np.ndarray
    vcov_model: np.ndarray
    column_labels: tuple[str, ...]
    n_used: int
    converged: bool
    iterations: int
    weights_used: bool

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.vcov_model))

    def coef(self, label: str) -> float:
        return float(self.coefficients[self.column_labels.index(label)])

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "labels": list(self.column_labels),
            "coefficients": self.coefficients.tolist(),
            "se_model": self.se.tolist(),
            "n_used": self.n_used,
            "converged": self.converged,
            "iterations": self.iterations,
        }


def _as_design(design) -> DesignMatrix:
    if isinstance(design, DesignMatrix):
        return design
    values = np.asarray(design, dtype=float)
    if values.ndim != 2:
        raise DimensionMismatch("design must be 2-d")
    return DesignMatrix(values, tuple(f"x{j}" for j in range(values.shape[1])))


def check_rank(X: np.ndarray, w: np.ndarray | None = None) -> None:
    """Raise RankDeficient when the R-diagonal ratio of QR(X) is below 1e-10."""
    A = X if w is None else X * np.sqrt(w)[:, None]
    if A.shape[0] < A.shape[1]:
        raise RankDeficient(f"design has fewer usable rows ({A.shape[0]}) than columns ({A.shape[1]})")
    d = np.abs(np.diag(np.linalg.qr(A, mode="r")))
    if d.size and d.min() <= kernels.RANK_TOL * d.max():
        raise RankDeficient(f"design column rank < {A.shape[1]} (diagonal ratio {d.min() / d.max():.3g})")



def fit(family, y, design, weights=None) -> GlmFit:
    """Fit a linear (QR least squares) or logistic (IRLS) model.

    Parameters
    ----------
    family : ModelFamily or str
    y : array of length n
    design : DesignMatrix or (n, p) array
    weights : optional nonnegative array; fractional values allowed

    Raises
    ------
    RankDeficient, NonConvergence, Separation
    """
    family = ModelFamily(family)
    dm = _as_design(design)
    X = np.ascontiguousarray(dm.values, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if y.shape != (n,):
        raise DimensionMismatch(f"y has shape {y.shape}, design has {n} rows")
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (n,):
            raise DimensionMismatch("weights length differs from design rows")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InputError("weights must be finite and nonnegative")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise InputError("design and response must be free of missing values")
    if family is ModelFamily.LOGISTIC and not np.all(np.isin(y, (0.0, 1.0))):
        raise InputError("logistic family requires a 0/1 response")
    n_used = int(np.count_nonzero(w))
    if n_used < p:
        raise RankDeficient(f"{n_used} rows with positive weight for {p} coefficients")
    check_rank(X, w)

    if family is ModelFamily.LINEAR:
        beta, status = kernels.wls(X, y, w)
        if status != kernels.OK:
            raise RankDeficient("least-squares design is rank deficient")
        resid = y - X @ beta
        dof = max(n_used - p, 1)
        sigma2 = float(np.dot(w, resid * resid) / dof)
        vcov = sigma2 * _inv_xtwx(X, w)
        return GlmFit(family, beta, vcov, dm.column_labels, n_used, True, 1, weights is not None)

    beta, iters, status, _ = kernels.irls_logistic(X, y, w, None, MAX_ITER)
    if status == kernels.SEPARATED:
        raise Separation(
            "logistic fit diverges: fitted probabilities pinned at 0/1 (complete or quasi-complete separation)"
        )
    if status == kernels.RANK_DEFICIENT:
        raise RankDeficient("logistic information matrix is singular")
    if status == kernels.NONCONVERGED:
        raise NonConvergence(f"IRLS did not converge in {MAX_ITER} iterations")
    mu = expit(X @ beta)
    vcov = _inv_xtwx(X, w * mu * (1.0 - mu))
    return GlmFit(family, np.asarray(beta), vcov, dm.column_labels, n_used, True, int(iters), weights is not None)


def _inv_xtwx(X, w):
    M = X.T @ (w[:, None] * X)
    inv = np.linalg.inv(M)
    return 0.5 * (inv + inv.T)


def predict(result: GlmFit, design, scale: str = "response") -> np.ndarray:
    """Linear predictor or (with ``scale="response"``) the inverse link of it."""
    X = _as_design(design).values
    if X.shape[1] != result.coefficients.shape[0]:
        raise DimensionMismatch(f"design has {X.shape[1]} columns, fit has {result.coefficients.shape[0]}")
    eta = X @ result.coefficients
    if scale == "linear-predictor" or scale == "link":
        return eta
    if scale != "response":
        raise ValueError(f"unknown scale {scale!r}")
    return expit(eta) if result.family is ModelFamily.LOGISTIC else eta


def score(result: GlmFit, y, design, weights=None) -> np.ndarray:
    """Gradient of the (weighted) log-likelihood, X'W(y - mu), at the fit."""
    X = _as_design(design).values
    w = np.ones(X.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    resid = np.asarray(y, dtype=float) - predict(result, X, "response")
    return X.T @ (w * resid)
