import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rckit import glm
from rckit.dataset import DesignMatrix
from rckit.errors import DimensionMismatch, InputError, RankDeficient, Separation
from rckit.glm import ModelFamily


def newton_oracle(X, y, iters=100):
    """Textbook Newton-Raphson, no step control, coded independently of the package."""
    b = np.zeros(X.shape[1])
    for _ in range(iters):
        p = 1.0 / (1.0 + np.exp(-(X @ b)))
        grad = X.T @ (y - p)
        hess = (X * (p * (1 - p))[:, None]).T @ X
        b = b + np.linalg.solve(hess, grad)
    return b


def test_linear_exact_interpolation():
    x = np.arange(5.0)
    fit = glm.fit("linear", 3 + 2 * x, np.column_stack([np.ones(5), x]))
    np.testing.assert_allclose(fit.coefficients, [3, 2], atol=1e-12)


def test_logistic_matches_newton_oracle(logistic_fixture):
    X, y, held_out = logistic_fixture
    fit = glm.fit("logistic", y, X)
    oracle = newton_oracle(X, y)
    np.testing.assert_allclose(fit.coefficients, oracle, atol=1e-8, rtol=0)
    p_oracle = 1 / (1 + np.exp(-(held_out @ oracle)))
    np.testing.assert_allclose(glm.predict(fit, held_out), p_oracle, atol=1e-8)


def test_logistic_score_at_optimum(logistic_fixture):
    X, y, _ = logistic_fixture
    fit = glm.fit("logistic", y, X)
    assert np.max(np.abs(glm.score(fit, y, X))) < 1e-8


def test_logistic_symmetric_design_zero_intercept():
    x = np.array([-3.0, -2, -1, 1, 2, 3, -2.5, 2.5])
    y = np.array([0.0, 1, 0, 1, 0, 1, 0, 1])
    fit = glm.fit("logistic", y, np.column_stack([np.ones(8), x]))
    assert abs(fit.coefficients[0]) < 1e-8


def test_weighted_linear_equals_row_replication(rng):
    X = np.column_stack([np.ones(30), rng.normal(size=30)])
    y = X @ [1.0, -2.0] + rng.normal(size=30)
    w = rng.integers(1, 4, size=30).astype(float)
    wfit = glm.fit("linear", y, X, w)
    rep = np.repeat(np.arange(30), w.astype(int))
    ufit = glm.fit("linear", y[rep], X[rep])
    np.testing.assert_allclose(wfit.coefficients, ufit.coefficients, atol=1e-10)


def test_weighted_logistic_score(logistic_fixture):
    X, y, _ = logistic_fixture
    w = np.linspace(0.5, 2.0, X.shape[0])
    fit = glm.fit("logistic", y, X, w)
    assert fit.weights_used
    assert np.max(np.abs(glm.score(fit, y, X, w))) < 1e-8


@settings(max_examples=25, deadline=None)
@given(c=st.floats(min_value=0.1, max_value=10.0), family=st.sampled_from(["linear", "logistic"]))
def test_affine_equivariance(c, family):
    g = np.random.default_rng(3)
    X = np.column_stack([np.ones(60), g.normal(size=60), g.normal(size=60)])
    y = (g.random(60) < 0.5).astype(float) if family == "logistic" else g.normal(size=60)
    a = glm.fit(family, y, X)
    Xs = X.copy()
    Xs[:, 1] *= c
    b = glm.fit(family, y, Xs)
    assert abs(b.coefficients[1] - a.coefficients[1] / c) < 1e-10 * max(1.0, abs(a.coefficients[1] / c))
    np.testing.assert_allclose(glm.predict(b, Xs), glm.predict(a, X), atol=1e-10)


def test_vcov_symmetric_psd(logistic_fixture):
    X, y, _ = logistic_fixture
    for fam, resp in (("logistic", y), ("linear", X[:, 1] + y)):
        v = glm.fit(fam, resp, X).vcov_model
        np.testing.assert_array_equal(v, v.T)
        assert np.linalg.eigvalsh(v).min() > 0


def test_linear_normal_equations(rng):
    X = np.column_stack([np.ones(40), rng.normal(size=(40, 3))])
    y = rng.normal(size=40)
    w = rng.uniform(0.2, 3, size=40)
    fit = glm.fit("linear", y, X, w)
    np.testing.assert_allclose(X.T @ (w * (y - X @ fit.coefficients)), 0, atol=1e-10)


def test_separation_detected():
    x = np.array([-3.0, -2, -1, -0.5, 0.5, 1, 2, 3])
    y = (x > 0).astype(float)
    with pytest.raises(Separation):
        glm.fit("logistic", y, np.column_stack([np.ones(8), x]))


def test_rank_deficient():
    x = np.arange(6.0)
    with pytest.raises(RankDeficient):
        glm.fit("linear", x, np.column_stack([np.ones(6), x, 2 * x]))
    with pytest.raises(RankDeficient):
        glm.fit("linear", x[:2], np.column_stack([np.ones(2), x[:2], x[:2] ** 2]))


def test_input_checks():
    X = np.column_stack([np.ones(4), np.arange(4.0)])
    with pytest.raises(InputError):
        glm.fit("logistic", np.array([0, 1, 2, 1.0]), X)
    with pytest.raises(InputError):
        glm.fit("linear", np.array([0, 1, np.nan, 1.0]), X)
    with pytest.raises(InputError):
        glm.fit("linear", np.arange(4.0), X, weights=-np.ones(4))
    with pytest.raises(DimensionMismatch):
        glm.fit("linear", np.arange(3.0), X)


def test_predict_examples():
    lin = glm.GlmFit(ModelFamily.LINEAR, np.array([3.0, 2.0]), np.eye(2), ("(intercept)", "x"), 5, True, 1, False)
    assert glm.predict(lin, np.array([[1.0, 4.0]]))[0] == 11.0
    logit = glm.GlmFit(ModelFamily.LOGISTIC, np.array([0.0, 1.0]), np.eye(2), ("(intercept)", "x"), 5, True, 1, False)
    d = DesignMatrix(np.array([[1.0, 0.0]]), ("(intercept)", "x"))
    assert glm.predict(logit, d, "linear-predictor")[0] == 0.0
    assert glm.predict(logit, d)[0] == 0.5
    with pytest.raises(DimensionMismatch):
        glm.predict(lin, np.ones((2, 3)))


def test_fit_labels_and_coef():
    d = DesignMatrix(np.column_stack([np.ones(5), np.arange(5.0)]), ("(intercept)", "x"))
    fit = glm.fit("linear", 1 + np.arange(5.0), d)
    assert fit.coef("x") == pytest.approx(1.0, abs=1e-12)
    assert fit.to_dict()["labels"] == ["(intercept)", "x"]
