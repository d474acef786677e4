import json

import numpy as np
import pytest
from scipy import stats

from rckit import glm, simulate
from rckit.calibration import (
    CalibrationModel,
    CalibrationSpec,
    berkson_check,
    calibrate,
    covariate_contribution_test,
    fit_calibration,
    identity_model,
    spline_basis,
)
from rckit.dataset import AnalysisDataset, split_validation
from rckit.errors import InputError, InsufficientValidationRows, RankDeficient, RoleConflict, TooFewDistinctValues

FULL = CalibrationSpec(exposure="xstar", confounders=("z", "v"), dependent="xss")


def _plain(cols):
    return AnalysisDataset.from_columns(cols, require_outcome=False)


def test_perfect_measurement():
    x = np.random.default_rng(1).normal(size=50)
    m = fit_calibration(_plain({"x": x, "xs": x.copy()}), CalibrationSpec(exposure="xs", dependent="x"))
    np.testing.assert_allclose(m.coefficients[:, 0], [0, 1], atol=1e-10)
    assert m.r_squared[0] == pytest.approx(1.0, abs=1e-10)


def test_insufficient_rows():
    ds = _plain({"x": [1.0, 2.0], "xs": [1.0, 3.0]})
    with pytest.raises(InsufficientValidationRows):
        fit_calibration(ds, CalibrationSpec(exposure="xs", dependent="x"))


def test_spec_validation():
    with pytest.raises(RoleConflict):
        CalibrationSpec(exposure="xs")
    with pytest.raises(RoleConflict):
        CalibrationSpec(exposure="xs", mode="replicate", replicates=("a",))
    with pytest.raises(InputError):
        CalibrationSpec(exposure="xs", dependent="x", dependent_transform="spline")
    with pytest.raises(InputError):
        CalibrationSpec(exposure="xs", dependent="x", mode="other")


def test_hand_prediction():
    fit = glm.GlmFit(glm.ModelFamily.LINEAR, np.array([0.4, 0.5, 0.5, 0.2]), np.zeros((4, 4)),
                     ("(intercept)", "xstar", "z", "v"), 0, True, 1, False)
    model = CalibrationModel(FULL, (fit,), (0.5,))
    ds = _plain({"xstar": [1.0], "z": [1.0], "v": [1.0]})
    assert calibrate(model, ds)["xhat"][0] == pytest.approx(1.6, abs=1e-12)


def test_identity_model_returns_exposure(cohort):
    out = calibrate(identity_model("xstar"), cohort)
    np.testing.assert_array_equal(out["xhat"], cohort["xstar"])


def test_spline_basis_shape_and_linear_tails():
    x = np.random.default_rng(2).normal(size=300)
    for k in (3, 4, 5):
        B, knots = spline_basis(x, k)
        assert B.shape == (300, k - 1)
        np.testing.assert_array_equal(B[:, 0], x)
        h = 1e-3
        for x0 in (knots[-1] + 0.01, knots[-1] + 2.0, knots[0] - 0.5, knots[0] - 3.0):
            pts = np.array([x0 - h, x0, x0 + h])
            V, _ = spline_basis(pts, knots=knots)
            second = (V[0] - 2 * V[1] + V[2]) / h**2
            assert np.max(np.abs(second)) < 1e-6


def test_spline_too_few_values():
    with pytest.raises(TooFewDistinctValues):
        spline_basis(np.ones(20), 3)
    with pytest.raises(TooFewDistinctValues):
        spline_basis(np.array([0.0, 1.0] * 10), 3)


def test_spline_calibration_outputs(cohort):
    val, _ = split_validation(cohort)
    spec = CalibrationSpec(exposure="xstar", confounders=("z",), dependent="xss",
                           dependent_transform="spline", n_knots=3)
    m = fit_calibration(val, spec)
    out = calibrate(m, cohort)
    assert m.output_columns == ("xhat_1", "xhat_2")
    assert set(out.columns) - set(cohort.columns) == {"xhat_1", "xhat_2"}


def test_berkson_in_sample(cohort):
    val, _ = split_validation(cohort)
    m = fit_calibration(val, FULL)
    d = berkson_check(m, val)
    assert abs(d.residual_mean) < 1e-10
    assert set(d.residual_covariate_correlations) == {"xstar", "z", "v"}
    assert max(abs(c) for c in d.residual_covariate_correlations.values()) < 1e-10
    assert not d.out_of_sample
    design_y = val["xss"]
    resid = design_y - calibrate(m, val)["xhat"]
    r2 = 1 - np.sum(resid**2) / np.sum((design_y - design_y.mean()) ** 2)
    assert d.r_squared == pytest.approx(r2, abs=1e-12)
    assert m.r_squared[0] == pytest.approx(r2, abs=1e-12)


def test_berkson_out_of_sample(table_a1):
    val, _ = split_validation(simulate.gen_cohort(table_a1, 0))
    m = fit_calibration(val, CalibrationSpec(exposure="xstar", confounders=("z",), dependent="xss"))
    shifted = table_a1.replace(means=(0.0, 1.0, 0.0), correlations=(0.6, 0.0, 0.5))
    other, _ = split_validation(simulate.gen_cohort(shifted, 1))
    d = berkson_check(m, other)
    assert d.out_of_sample
    assert max(abs(c) for c in d.residual_covariate_correlations.values()) > 1e-3


def test_population_coefficients(table_a1):
    target = simulate.calibration_limit(table_a1)
    est = np.array([
        fit_calibration(split_validation(simulate.gen_cohort(table_a1, i))[0], FULL).coefficients[1:, 0]
        for i in range(200)
    ])
    z = (est.mean(0) - target) / (est.std(0, ddof=1) / np.sqrt(len(est)))
    assert np.all(np.abs(z) < 3)


def test_contribution_null_uniform():
    g = np.random.default_rng(7)
    spec = CalibrationSpec(exposure="xs", confounders=("c",), dependent="x")
    pvals = []
    for _ in range(2000):
        xs = g.normal(size=40)
        ds = _plain({"x": 0.5 * xs + g.normal(size=40), "xs": xs, "c": g.normal(size=40)})
        pvals.append(covariate_contribution_test(ds, spec, "c").p_value)
    assert stats.kstest(pvals, "uniform").pvalue > 0.01


def test_contribution_v_matters(table_a1):
    val, _ = split_validation(simulate.gen_cohort(table_a1, 0))
    t = covariate_contribution_test(val, FULL, "v")
    assert t.delta_r2 > 0 and t.df_num == 1
    with pytest.raises(InputError):
        covariate_contribution_test(val, FULL, "y")


def test_contribution_duplicate_rank_deficient(cohort):
    val, _ = split_validation(cohort)
    dup = val.with_columns({"z2": val["z"] * 1.0})
    spec = CalibrationSpec(exposure="xstar", confounders=("z", "z2"), dependent="xss")
    with pytest.raises(RankDeficient):
        covariate_contribution_test(dup, spec, "z2")


def test_json_round_trip(cohort):
    val, _ = split_validation(cohort)
    m = fit_calibration(val, FULL)
    back = CalibrationModel.from_json(m.to_json())
    np.testing.assert_array_equal(back.coefficients, m.coefficients)
    np.testing.assert_array_equal(calibrate(back, cohort)["xhat"], calibrate(m, cohort)["xhat"])
    assert json.loads(m.to_json())["predictor_labels"] == ["(intercept)", "xstar", "z", "v"]


def test_replicate_mode_matches_reference_mode():
    g = np.random.default_rng(11)
    ref, rep = [], []
    for _ in range(30):
        n = 5000
        x = g.normal(size=n)
        z = 0.5 * x + g.normal(size=n)
        x1 = x + 0.7 * g.normal(size=n)
        x2 = x + 0.7 * g.normal(size=n)
        ds = _plain({"x": x, "x1": x1, "x2": x2, "z": z})
        ref.append(fit_calibration(ds, CalibrationSpec(exposure="x2", confounders=("z",), dependent="x")).coefficients[1, 0])
        rep.append(fit_calibration(ds, CalibrationSpec(exposure="x2", confounders=("z",), mode="replicate",
                                                       replicates=("x1", "x2"))).coefficients[1, 0])
    diff = np.array(ref) - np.array(rep)
    assert abs(diff.mean()) < 3 * diff.std(ddof=1) / np.sqrt(diff.size) + 1e-12
