import os
import subprocess
import sys

import numpy as np
import pytest

from rckit import _kernels_numpy as kn
from rckit import kernels

numba_only = pytest.mark.skipif(kernels.numba_backend is None, reason="numba backend unavailable")


def _problem(seed=0, n=400, n_val=80):
    g = np.random.default_rng(seed)
    xs = g.normal(size=n)
    z = g.normal(size=n)
    x = 0.6 * xs + 0.3 * z + 0.5 * g.normal(size=n)
    y = (g.random(n) < 1 / (1 + np.exp(-(-0.5 + 0.7 * x + 0.2 * z)))).astype(float)
    cal_X = np.column_stack([np.ones(n_val), xs[:n_val], z[:n_val]])
    cal_Y = (x[:n_val] + 0.3 * g.normal(size=n_val))[:, None]
    cohort_cal_X = np.column_stack([np.ones(n), xs, z])
    out_X = np.column_stack([np.ones(n), np.zeros(n), z])
    idx_cal = g.integers(0, n_val, size=(6, n_val))
    idx_out = g.integers(0, n, size=(6, n))
    return cal_X, cal_Y, cohort_cal_X, out_X, np.array([1]), y, np.ones(n), idx_cal, idx_out


@numba_only
def test_wls_agreement():
    g = np.random.default_rng(1)
    X = np.column_stack([np.ones(50), g.normal(size=(50, 3))])
    y = g.normal(size=50)
    w = g.uniform(0.1, 2, 50)
    b1, s1 = kernels.numba_backend.wls(X, y, w)
    b0, s0 = kn.wls(X, y, w)
    assert s0 == s1 == kernels.OK
    np.testing.assert_allclose(b1, b0, atol=1e-12)


@numba_only
@pytest.mark.parametrize("seed", range(5))
def test_irls_agreement(seed):
    g = np.random.default_rng(seed)
    X = np.column_stack([np.ones(300), g.normal(size=(300, 2))])
    y = (g.random(300) < 1 / (1 + np.exp(-(X @ [0.2, 1.0, -0.5])))).astype(float)
    w = g.uniform(0.5, 1.5, 300) if seed % 2 else np.ones(300)
    b1, it1, s1, d1 = kernels.numba_backend.irls_logistic(X, y, w)
    b0, it0, s0, d0 = kn.irls_logistic(X, y, w)
    assert s0 == s1 == kernels.OK
    np.testing.assert_allclose(b1, b0, atol=1e-9)
    assert d1 == pytest.approx(d0, rel=1e-10)


@numba_only
@pytest.mark.parametrize("family", [0, 1])
def test_rc_batch_agreement(family):
    args = list(_problem())
    if family == 0:
        args[5] = args[5] + np.random.default_rng(2).normal(size=args[5].size)
    cal_X, cal_Y, ccx, out_X, ec, y, w, ic, io = args
    b1, s1 = kernels.numba_backend.rc_batch(cal_X, cal_Y, ccx, out_X, ec, y, w, family, ic, io)
    b0, s0 = kn.rc_batch(cal_X, cal_Y, ccx, out_X, ec, y, w, family, ic, io)
    np.testing.assert_array_equal(s1, s0)
    np.testing.assert_allclose(b1, b0, atol=1e-9)


def test_rc_batch_matches_direct_refit():
    cal_X, cal_Y, ccx, out_X, ec, y, w, ic, io = _problem(3)
    betas, status = kernels.rc_batch(cal_X, cal_Y, ccx, out_X, ec, y, w, 1, ic, io)
    for r in range(ic.shape[0]):
        theta = np.linalg.lstsq(cal_X[ic[r]], cal_Y[ic[r]], rcond=None)[0]
        X = out_X.copy()
        X[:, 1] = (ccx @ theta)[:, 0]
        b, *_ = kn.irls_logistic(X[io[r]], y[io[r]], w[io[r]])
        np.testing.assert_allclose(betas[r], b, atol=1e-8)
    assert np.all(status == kernels.OK)


def test_separation_status():
    x = np.array([-2.0, -1, -0.5, 0.5, 1, 2])
    X = np.column_stack([np.ones(6), x])
    _, _, status, _ = kernels.irls_logistic(X, (x > 0).astype(float), np.ones(6))
    assert status == kernels.SEPARATED


def test_env_flag_selects_numpy_backend():
    code = "from rckit import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, RC_KIT_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
