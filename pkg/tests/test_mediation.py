import warnings

import numpy as np
import pytest

from rckit import simulate
from rckit.dataset import AnalysisDataset, split_validation
from rckit.errors import InputError, InvalidR2, MissingReplicates, ZeroDenominator
from rckit.glm import ModelFamily
from rckit.mediation import (
    BiasOracleInputs,
    MediationFit,
    MediationSpec,
    bias_expanded_rc,
    bias_standard_rc,
    compare_three_methods,
    midthune_total_effect,
)
from rckit.variance import BootstrapSpec

LINEAR = MediationSpec("y", "xstar", "m", ("x1", "x2"), family=ModelFamily.LINEAR)


def _oracle(**kw):
    base = dict(beta_m=0.5, alpha_x=0.5, alpha_m=0.3, sigma_x2=1.0, sigma_m2=1.0, sigma_xm=0.5, gamma_x=0.4)
    base.update(kw)
    return BiasOracleInputs(**base)


def test_step5_arithmetic():
    fit = MediationFit(0.4, 0.2, 0.5, ModelFamily.LINEAR)
    assert fit.total_effect == pytest.approx(0.4, abs=1e-15)
    assert not fit.approximate


def test_standard_rc_oracle():
    assert bias_standard_rc(_oracle()) == pytest.approx(0.5 * 0.3 * 0.75 / 0.65, abs=1e-12)
    assert bias_standard_rc(_oracle()) == pytest.approx(0.17308, abs=5e-6)
    assert bias_standard_rc(_oracle(beta_m=0.0)) == 0.0
    assert bias_standard_rc(_oracle(alpha_m=0.0)) == 0.0
    with pytest.raises(ZeroDenominator):
        bias_standard_rc(_oracle(alpha_x=0.0, alpha_m=0.0))


def test_expanded_rc_oracle():
    assert bias_expanded_rc(_oracle(r2_expanded=0.8)) == pytest.approx(0.05, abs=1e-12)
    assert bias_expanded_rc(_oracle(r2_expanded=1.0)) == 0.0
    assert bias_expanded_rc(_oracle(gamma_x=0.0, r2_expanded=0.5)) == 0.0
    with pytest.raises(InvalidR2):
        bias_expanded_rc(_oracle(r2_expanded=0.0))
    with pytest.raises(InputError):
        _oracle(sigma_xm=2.0)


def test_fit_additivity_bit_exact():
    ds = simulate.gen_mediation_cohort(simulate.MediationScenario(), 0)
    fit = midthune_total_effect(ds, LINEAR)
    assert fit.total_effect == fit.beta_x_hat + fit.beta_m_hat * fit.gamma_x_hat
    assert fit.to_dict()["total_effect"] == fit.total_effect


def test_large_sample_consistency():
    sc = simulate.MediationScenario(n_main=100_000, n_validation=20_000)
    fit = midthune_total_effect(simulate.gen_mediation_cohort(sc, 0), LINEAR)
    assert abs(fit.total_effect - sc.total_effect) < 0.01
    assert abs(fit.gamma_x_hat - sc.gamma_x) < 0.02


def test_linear_simulation_unbiased():
    res = simulate.run_mediation_scenario(n_sims=300)
    assert abs(res.meta["z_scores"]["midthune"]) < 3
    assert abs(res.meta["z_scores"]["standard_rc"]) < 3
    assert abs(res.meta["z_scores"]["expanded_rc"]) < 3


def test_no_mediator_effect():
    sc = simulate.MediationScenario(beta_m=0.0)
    rows = [compare_three_methods(simulate.gen_mediation_cohort(sc, i), LINEAR) for i in range(300)]
    est = np.array([[r.estimate for r in rs] for rs in rows])
    for a, b in ((0, 1), (0, 2), (1, 2)):
        diff = est[:, a] - est[:, b]
        assert abs(diff.mean()) < 3 * diff.std(ddof=1) / np.sqrt(300) + 1e-12


def test_no_mediation_all_agree():
    sc = simulate.MediationScenario(gamma_x=0.0, alpha_m=0.0, sigma_mres2=1.0)
    est = np.array([[r.estimate for r in compare_three_methods(simulate.gen_mediation_cohort(sc, i), LINEAR)]
                    for i in range(100)])
    mc = est.std(axis=0, ddof=1) / 10
    assert np.all(np.abs(est.mean(axis=0) - sc.total_effect) < 3 * mc)


def test_three_method_ordering():
    sc = simulate.MediationScenario()
    est = np.array([[r.estimate for r in compare_three_methods(simulate.gen_mediation_cohort(sc, i), LINEAR)]
                    for i in range(100)])
    include, omit, mid = est.mean(axis=0)
    assert omit > mid > include
    assert abs(mid - sc.total_effect) < 3 * est[:, 2].std(ddof=1) / 10


def test_bootstrap_and_or():
    ds = simulate.gen_mediation_cohort(simulate.MediationScenario(), 0)
    rows = compare_three_methods(ds, LINEAR, boot=BootstrapSpec(n_replicates=50, seed=1), or_factor=2.0)
    assert [r.method for r in rows] == ["include_mediator", "omit_mediator", "midthune"]
    for r in rows:
        assert r.se > 0 and r.ci[0] < r.ci[1]
        assert r.odds_ratio == pytest.approx(np.exp(r.estimate * np.log(2.0)))


def test_logistic_flags_approximation():
    sc = simulate.MediationScenario()
    d = simulate.gen_mediation_arrays(sc, 0)
    d["y"] = (d["y"] > np.median(d["y"])).astype(float)
    ds = AnalysisDataset.from_columns(d, simulate.MEDIATION_ROLE_MAP)
    with pytest.warns(UserWarning):
        fit = midthune_total_effect(ds, MediationSpec("y", "xstar", "m", ("x1", "x2")))
    assert fit.approximate and fit.notes


def test_missing_replicates():
    with pytest.raises(MissingReplicates):
        MediationSpec("y", "xstar", "m", ("x1",))
    d = simulate.gen_mediation_arrays(simulate.MediationScenario(), 0)
    d.pop("x2")
    roles = {k: v for k, v in simulate.MEDIATION_ROLE_MAP.items() if k != "x2"}
    ds = AnalysisDataset.from_columns(d, roles)
    with pytest.raises(MissingReplicates):
        midthune_total_effect(ds, LINEAR)


def test_known_error_variance_mode():
    sc = simulate.MediationScenario(n_main=20_000, n_validation=5000)
    ds = simulate.gen_mediation_cohort(sc, 0)
    spec = MediationSpec("y", "xstar", "m", ("x1",), family=ModelFamily.LINEAR, known_error_variance=sc.sigma_rep2)
    fit = midthune_total_effect(ds, spec)
    assert abs(fit.gamma_x_hat - sc.gamma_x) < 0.05
    assert any("known error variance" in n for n in fit.notes)


def test_external_validation():
    sc = simulate.MediationScenario()
    main = simulate.gen_mediation_cohort(sc, 0)
    val, _ = split_validation(simulate.gen_mediation_cohort(sc, 1))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fit = midthune_total_effect(main, LINEAR, validation=val, boot=BootstrapSpec(n_replicates=30, seed=2))
    assert fit.se_total > 0
