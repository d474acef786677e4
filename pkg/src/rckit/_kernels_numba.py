"""numba-compiled hot kernels.

Loop-fused counterparts of ``_kernels_numpy``; keep the two in step.
"""

from __future__ import annotations

import numpy as np
from numba import njit

OK = 0
NONCONVERGED = 1
SEPARATED = 2
RANK_DEFICIENT = 3

RANK_TOL = 1e-10
ETA_SEPARATION = 30.0


@njit(cache=True, nogil=True)
def _back_substitute(R, rhs):
    p = R.shape[0]
    k = rhs.shape[1]
    out = np.empty((p, k))
    for c in range(k):
        for i in range(p - 1, -1, -1):
            s = rhs[i, c]
            for j in range(i + 1, p):
                s -= R[i, j] * out[j, c]
            out[i, c] = s / R[i, i]
    return out


@njit(cache=True, nogil=True)
def wls2(X, Y, w):
    """Weighted least squares for a 2-d response block via QR."""
    n, p = X.shape
    k = Y.shape[1]
    A = np.empty((n, p))
    B = np.empty((n, k))
    for i in range(n):
        s = np.sqrt(w[i])
        for j in range(p):
            A[i, j] = X[i, j] * s
        for c in range(k):
            B[i, c] = Y[i, c] * s
    Q, R = np.linalg.qr(A)
    dmax = 0.0
    dmin = np.inf
    for j in range(p):
        d = abs(R[j, j])
        dmax = max(dmax, d)
        dmin = min(dmin, d)
    if p == 0 or dmin <= RANK_TOL * dmax:
        return np.full((p, k), np.nan), RANK_DEFICIENT
    return _back_substitute(R, np.ascontiguousarray(Q.T) @ B), OK


def wls(X, y, w):
    X = np.ascontiguousarray(X, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    if y.ndim == 1:
        beta, status = wls2(X, np.ascontiguousarray(y, dtype=np.float64).reshape(-1, 1), w)
        return beta[:, 0], status
    return wls2(X, np.ascontiguousarray(y, dtype=np.float64), w)


@njit(cache=True, nogil=True)
def _evaluate(X, beta, y, w, eta, mu):
    """Fill eta and mu for ``beta``; return the deviance.

    sum w*log(1 + e) is taken as logs of chunked products of (1 + e)^w:
    each factor lies in [1, 2], so a chunk of 16 cannot overflow and one log
    per chunk replaces one log1p per row.  Non-unit weights fall back to
    log1p per row.
    """
    n, p = X.shape
    lin = 0.0
    logsum = 0.0
    prod = 1.0
    count = 0
    for i in range(n):
        s = 0.0
        for j in range(p):
            s += X[i, j] * beta[j]
        eta[i] = s
        e = np.exp(-abs(s))
        if s >= 0.0:
            mu[i] = 1.0 / (1.0 + e)
        else:
            mu[i] = e / (1.0 + e)
        wi = w[i]
        if wi == 0.0:
            continue
        lin += wi * ((s if s > 0.0 else 0.0) - y[i] * s)
        if wi == 1.0:
            prod *= 1.0 + e
            count += 1
            if count == 16:
                logsum += np.log(prod)
                prod = 1.0
                count = 0
        else:
            logsum += wi * np.log1p(e)
    logsum += np.log(prod)
    return 2.0 * (lin + logsum)


@njit(cache=True, nogil=True)
def _newton_direction(X, y, w, mu, delta):
    n, p = X.shape
    H = np.zeros((p, p))
    g = np.zeros(p)
    for i in range(n):
        if w[i] == 0.0:
            continue
        wi = w[i] * mu[i] * (1.0 - mu[i])
        ri = w[i] * (y[i] - mu[i])
        for a in range(p):
            xa = X[i, a]
            g[a] += xa * ri
            xw = wi * xa
            for b in range(a + 1):
                H[a, b] += xw * X[i, b]
    L = np.zeros((p, p))
    for j in range(p):
        s = H[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if s <= 1e-14 * H[j, j] or s <= 0.0:
            return False
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, p):
            t = H[i, j]
            for k in range(j):
                t -= L[i, k] * L[j, k]
            L[i, j] = t / L[j, j]
    z = np.empty(p)
    for i in range(p):
        t = g[i]
        for k in range(i):
            t -= L[i, k] * z[k]
        z[i] = t / L[i, i]
    for i in range(p - 1, -1, -1):
        t = z[i]
        for k in range(i + 1, p):
            t -= L[k, i] * delta[k]
        delta[i] = t / L[i, i]
    return True


@njit(cache=True, nogil=True)
def _max_abs(v):
    m = 0.0
    for x in v:
        m = max(m, abs(x))
    return m


@njit(cache=True, nogil=True)
def irls_logistic_impl(X, y, w, beta0, maxit, tol_dev, tol_step):
    n, p = X.shape
    beta = beta0.copy()
    new_beta = np.empty(p)
    delta = np.empty(p)
    eta = np.empty(n)
    mu = np.empty(n)
    new_eta = np.empty(n)
    new_mu = np.empty(n)
    dev = _evaluate(X, beta, y, w, eta, mu)
    decreasing = True
    for it in range(1, maxit + 1):
        if not _newton_direction(X, y, w, mu, delta):
            if _max_abs(eta) > ETA_SEPARATION:
                return beta, it, SEPARATED, dev
            return beta, it, RANK_DEFICIENT, dev
        step = 1.0
        new_dev = dev
        for _ in range(40):
            for j in range(p):
                new_beta[j] = beta[j] + step * delta[j]
            new_dev = _evaluate(X, new_beta, y, w, new_eta, new_mu)
            if new_dev <= dev + 1e-9 * (abs(dev) + 1.0):
                break
            step *= 0.5
        change = abs(dev - new_dev) / (abs(new_dev) + 0.1)
        max_step = step * _max_abs(delta)
        decreasing = new_dev < dev
        beta[:] = new_beta
        eta[:] = new_eta
        mu[:] = new_mu
        dev = new_dev
        if change < tol_dev or max_step < tol_step:
            # one full Newton step drives the score to rounding level
            if _newton_direction(X, y, w, mu, delta):
                for j in range(p):
                    beta[j] += delta[j]
                dev = _evaluate(X, beta, y, w, eta, mu)
            if _max_abs(eta) > ETA_SEPARATION:
                return beta, it, SEPARATED, dev
            return beta, it, OK, dev
    if decreasing and _max_abs(eta) > ETA_SEPARATION:
        return beta, maxit, SEPARATED, dev
    return beta, maxit, NONCONVERGED, dev


def irls_logistic(X, y, w, beta0=None, maxit=50, tol_dev=1e-10, tol_step=1e-8):
    X = np.ascontiguousarray(X, dtype=np.float64)
    b0 = np.zeros(X.shape[1]) if beta0 is None else np.ascontiguousarray(beta0, dtype=np.float64)
    return irls_logistic_impl(
        X,
        np.ascontiguousarray(y, dtype=np.float64),
        np.ascontiguousarray(w, dtype=np.float64),
        b0,
        maxit,
        tol_dev,
        tol_step,
    )


@njit(cache=True, nogil=True)
def _fit_coef(family, X, y, w, beta0):
    if family == 0:
        beta, status = wls2(X, y.reshape(-1, 1), w)
        return beta[:, 0].copy(), status
    beta, _, status, _ = irls_logistic_impl(X, y, w, beta0, 50, 1e-10, 1e-8)
    return beta, status


def fit_coef(family, X, y, w, beta0=None):
    X = np.ascontiguousarray(X, dtype=np.float64)
    b0 = np.zeros(X.shape[1]) if beta0 is None else np.ascontiguousarray(beta0, dtype=np.float64)
    return _fit_coef(
        family,
        X,
        np.ascontiguousarray(y, dtype=np.float64),
        np.ascontiguousarray(w, dtype=np.float64),
        b0,
    )


@njit(cache=True, nogil=True)
def rc_batch_impl(cal_X, cal_Y, cohort_cal_X, out_X, exp_cols, y, w, family, idx_cal, idx_out, beta0):
    B, n = idx_out.shape
    n_cal = idx_cal.shape[1]
    q = cal_X.shape[1]
    k = cal_Y.shape[1]
    p = out_X.shape[1]
    betas = np.full((B, p), np.nan)
    status = np.zeros(B, dtype=np.int64)
    Xc = np.empty((n_cal, q))
    Yc = np.empty((n_cal, k))
    ones = np.ones(n_cal)
    Xo = np.empty((n, p))
    yo = np.empty(n)
    wo = np.empty(n)
    for b in range(B):
        for i in range(n_cal):
            r = idx_cal[b, i]
            for j in range(q):
                Xc[i, j] = cal_X[r, j]
            for c in range(k):
                Yc[i, c] = cal_Y[r, c]
        theta, st = wls2(Xc, Yc, ones)
        if st != OK:
            status[b] = st
            continue
        for i in range(n):
            r = idx_out[b, i]
            for j in range(p):
                Xo[i, j] = out_X[r, j]
            for c in range(k):
                s = 0.0
                for j in range(q):
                    s += cohort_cal_X[r, j] * theta[j, c]
                Xo[i, exp_cols[c]] = s
            yo[i] = y[r]
            wo[i] = w[r]
        beta, st = _fit_coef(family, Xo, yo, wo, beta0)
        status[b] = st
        if st == OK:
            betas[b, :] = beta
    return betas, status


def rc_batch(cal_X, cal_Y, cohort_cal_X, out_X, exp_cols, y, w, family, idx_cal, idx_out, beta0=None):
    f = lambda a: np.ascontiguousarray(a, dtype=np.float64)  # noqa: E731
    return rc_batch_impl(
        f(cal_X),
        f(cal_Y),
        f(cohort_cal_X),
        f(out_X),
        np.ascontiguousarray(exp_cols, dtype=np.int64),
        f(y),
        f(w),
        int(family),
        np.ascontiguousarray(idx_cal, dtype=np.int64),
        np.ascontiguousarray(idx_out, dtype=np.int64),
        np.zeros(out_X.shape[1]) if beta0 is None else f(beta0),
    )
