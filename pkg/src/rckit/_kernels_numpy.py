"""Pure-numpy versions of the hot kernels.

Same signatures and status codes as ``_kernels_numba``; selected when numba
is disabled or unavailable, and used as the reference path in tests.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit

OK = 0
NONCONVERGED = 1
SEPARATED = 2
RANK_DEFICIENT = 3

RANK_TOL = 1e-10
ETA_SEPARATION = 30.0


def wls(X, y, w):
    """Weighted least squares via QR of ``sqrt(w) * X``.

    ``y`` may be 1-d or 2-d (several responses sharing one design).
    Returns ``(beta, status)``.
    """
    sw = np.sqrt(w)
    Q, R = np.linalg.qr(X * sw[:, None])
    d = np.abs(np.diag(R))
    if d.size == 0 or d.min() <= RANK_TOL * d.max():
        shape = (X.shape[1],) + y.shape[1:]
        return np.full(shape, np.nan), RANK_DEFICIENT
    rhs = Q.T @ (y * sw if y.ndim == 1 else y * sw[:, None])
    return solve_triangular(R, rhs), OK


def _logistic_deviance(eta, y, w):
    # log(1 + e^eta) - y*eta, written to avoid overflow
    loss = np.logaddexp(0.0, eta) - y * eta
    return 2.0 * np.dot(w, loss)


def _newton_direction(X, y, w, eta):
    mu = expit(eta)
    W = w * mu * (1.0 - mu)
    H = X.T @ (W[:, None] * X)
    g = X.T @ (w * (y - mu))
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        return None
    if np.any(np.diag(L) ** 2 <= 1e-14 * np.diag(H)):
        return None
    z = solve_triangular(L, g, lower=True)
    return solve_triangular(L.T, z, lower=False)


def irls_logistic(X, y, w, beta0=None, maxit=50, tol_dev=1e-10, tol_step=1e-8):
    """Logistic regression by IRLS (Newton) with step halving.

    Returns ``(beta, iterations, status, deviance)``.
    """
    n, p = X.shape
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=float)
    eta = X @ beta
    dev = _logistic_deviance(eta, y, w)
    decreasing = True
    for it in range(1, maxit + 1):
        delta = _newton_direction(X, y, w, eta)
        if delta is None:
            status = SEPARATED if np.max(np.abs(eta)) > ETA_SEPARATION else RANK_DEFICIENT
            return beta, it, status, dev
        step = 1.0
        for _ in range(40):
            new_beta = beta + step * delta
            new_eta = X @ new_beta
            new_dev = _logistic_deviance(new_eta, y, w)
            if new_dev <= dev + 1e-9 * (abs(dev) + 1.0):
                break
            step *= 0.5
        change = abs(dev - new_dev) / (abs(new_dev) + 0.1)
        max_step = np.max(np.abs(step * delta))
        decreasing = new_dev < dev
        beta, eta, dev = new_beta, new_eta, new_dev
        if change < tol_dev or max_step < tol_step:
            # one full Newton step drives the score to rounding level
            delta = _newton_direction(X, y, w, eta)
            if delta is not None:
                beta = beta + delta
                eta = X @ beta
                dev = _logistic_deviance(eta, y, w)
            if np.max(np.abs(eta)) > ETA_SEPARATION:
                return beta, it, SEPARATED, dev
            return beta, it, OK, dev
    if decreasing and np.max(np.abs(eta)) > ETA_SEPARATION:
        return beta, maxit, SEPARATED, dev
    return beta, maxit, NONCONVERGED, dev


def fit_coef(family, X, y, w, beta0=None):
    """Coefficients only; ``family`` 0 = linear, 1 = logistic."""
    if family == 0:
        return wls(X, y, w)
    beta, _, status, _ = irls_logistic(X, y, w, beta0)
    return beta, status


def rc_batch(cal_X, cal_Y, cohort_cal_X, out_X, exp_cols, y, w, family, idx_cal, idx_out, beta0=None):
    """Refit calibration and outcome model on each resample.

    Row ``b`` of ``idx_cal`` indexes the calibration rows (``cal_X``,
    ``cal_Y``); row ``b`` of ``idx_out`` indexes cohort rows.  The outcome
    design takes the calibrated values in columns ``exp_cols``; ``beta0``
    warm-starts the logistic fits.  Returns ``(betas (B, p), status (B,))``.
    """
    B = idx_out.shape[0]
    p = out_X.shape[1]
    betas = np.full((B, p), np.nan)
    status = np.zeros(B, dtype=np.int64)
    ones = np.ones(idx_cal.shape[1])
    for b in range(B):
        ic = idx_cal[b]
        theta, st = wls(cal_X[ic], cal_Y[ic], ones)
        if st != OK:
            status[b] = st
            continue
        rows = idx_out[b]
        Xo = out_X[rows]
        Xo[:, exp_cols] = cohort_cal_X[rows] @ theta
        beta, st = fit_coef(family, Xo, y[rows], w[rows], beta0)
        status[b] = st
        if st == OK:
            betas[b] = beta
    return betas, status
