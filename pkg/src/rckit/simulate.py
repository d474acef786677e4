"""Scenario generators and Monte Carlo experiment runners.

Every simulated cohort is a pure function of ``(seed, sim_index)``; runners
fan simulations out over threads and reduce in simulation order, so results
do not depend on the worker count.

Draw order within one simulation: standard-normal covariate block (n, 3),
then the X* noise, the X** noise and one uniform per row for the Bernoulli
(or normal, for the linear family) outcome.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import expit

from . import kernels
from .calibration import CalibrationSpec, fit_calibration
from .dataset import AnalysisDataset, split_validation
from .errors import InputError
from .glm import ModelFamily
from .mediation import BiasOracleInputs, bias_expanded_rc, bias_standard_rc, _Arrays, _estimates
from .parallel import pmap, substream
from .rc import OutcomeSpec, build_problem, naive_fit, problem_point_estimate, rc_fit
from .variance import BootstrapSpec, bootstrap_problem, percentile_ci

SIM_STREAM = 0x51
MED_SIM_STREAM = 0x52
Z975 = 1.959963984540054


@dataclass(frozen=True)
class ScenarioSpec:
    """Covariates (X, Z, V), measurement models and outcome model.

    ``correlations`` are (cor(X,Z), cor(X,V), cor(Z,V)).  ``a`` holds
    (a0, a1, a2, a3) of X* = a0 + a1 X + a2 Z + a3 V + e, ``b`` the outcome
    coefficients on (1, X, Z, V).
    """

    n_cohort: int = 2500
    n_validation: int = 250
    means: tuple[float, float, float] = (0.0, 0.0, 0.0)
    variances: tuple[float, float, float] = (1.0, 1.0, 1.0)
    correlations: tuple[float, float, float] = (0.5, 0.5, 0.5)
    a: tuple[float, float, float, float] = (0.4, 0.5, 0.5, 0.2)
    sigma_eps2: float = 0.49
    sigma_delta2: float = 0.7
    b: tuple[float, float, float, float] = (-1.0, math.log(1.5), -math.log(1.3), math.log(1.75))
    family: ModelFamily = ModelFamily.LOGISTIC
    outcome_sigma2: float = 1.0
    seed: int = 20240101
    n_sims: int = 1000

    def __post_init__(self):
        for name in ("means", "variances", "correlations", "a", "b"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        object.__setattr__(self, "family", ModelFamily(self.family))
        if len(self.means) != 3 or len(self.variances) != 3 or len(self.correlations) != 3:
            raise InputError("means, variances and correlations need three entries each")
        if len(self.a) != 4 or len(self.b) != 4:
            raise InputError("a and b need four coefficients each")
        if min(self.variances) <= 0:
            raise InputError("covariate variances must be positive")
        if self.sigma_eps2 < 0 or self.sigma_delta2 < 0 or self.outcome_sigma2 <= 0:
            raise InputError("error variances must be non-negative")
        if not 0 < self.n_validation <= self.n_cohort:
            raise InputError("n_validation must lie in [1, n_cohort]")
        if np.linalg.eigvalsh(self.covariance).min() <= 0:
            raise InputError("covariance of (X, Z, V) is not positive definite")

    @property
    def covariance(self) -> np.ndarray:
        sd = np.sqrt(self.variances)
        r = np.eye(3)
        r[0, 1] = r[1, 0] = self.correlations[0]
        r[0, 2] = r[2, 0] = self.correlations[1]
        r[1, 2] = r[2, 1] = self.correlations[2]
        return r * np.outer(sd, sd)

    @property
    def truth(self) -> float:
        return self.b[1]

    def replace(self, **kw) -> "ScenarioSpec":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(kw)
        return ScenarioSpec(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["family"] = self.family.value
        for k in ("means", "variances", "correlations", "a", "b"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScenarioSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InputError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**d)


def default_table_a1() -> ScenarioSpec:
    return ScenarioSpec()


def gen_arrays(spec: ScenarioSpec, sim_index: int = 0) -> dict[str, np.ndarray]:
    rng = substream(spec.seed, SIM_STREAM, sim_index)
    n = spec.n_cohort
    L = np.linalg.cholesky(spec.covariance)
    cov = rng.standard_normal((n, 3)) @ L.T + np.asarray(spec.means)
    x, z, v = cov[:, 0], cov[:, 1], cov[:, 2]
    a0, a1, a2, a3 = spec.a
    xstar = a0 + a1 * x + a2 * z + a3 * v + math.sqrt(spec.sigma_eps2) * rng.standard_normal(n)
    xss = x + math.sqrt(spec.sigma_delta2) * rng.standard_normal(n)
    b0, b1, b2, b3 = spec.b
    eta = b0 + b1 * x + b2 * z + b3 * v
    if spec.family is ModelFamily.LOGISTIC:
        y = (rng.random(n) < expit(eta)).astype(float)
    else:
        y = eta + math.sqrt(spec.outcome_sigma2) * rng.standard_normal(n)
    val = np.zeros(n)
    val[: spec.n_validation] = 1.0
    xss[spec.n_validation :] = np.nan
    return {"x": x, "z": z, "v": v, "xstar": xstar, "xss": xss, "y": y, "val": val}


ROLE_MAP = {
    "y": "outcome",
    "xstar": "exposure",
    "xss": "reference",
    "z": "confounder",
    "v": "confounder",
    "val": "validation",
    "x": "plain",
}


def gen_cohort(spec: ScenarioSpec, sim_index: int = 0) -> AnalysisDataset:
    """Simulated cohort; the first ``n_validation`` rows carry X** and val=1."""
    cols = gen_arrays(spec, sim_index)
    tag = f"simulate(seed={spec.seed}, sim={sim_index})"
    return AnalysisDataset.from_columns(cols, ROLE_MAP, provenance=dict.fromkeys(cols, tag))


# --- summaries -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MethodSummary:
    """Per-method Monte Carlo summary computed from the raw per-sim values."""

    method: str
    truth: float
    estimates: np.ndarray
    ses: np.ndarray | None = None
    ci: np.ndarray | None = None  # (n_sims, 2)

    @property
    def n_sims(self) -> int:
        return int(self.estimates.size)

    @property
    def mean(self) -> float:
        return float(np.mean(self.estimates))

    @property
    def empirical_se(self) -> float:
        return float(np.std(self.estimates, ddof=1))

    @property
    def se_of_mean(self) -> float:
        return self.empirical_se / math.sqrt(self.n_sims)

    @property
    def bias(self) -> float:
        return self.mean - self.truth

    @property
    def pct_bias(self) -> float:
        return 100.0 * (self.mean - self.truth) / self.truth if self.truth != 0 else math.nan

    @property
    def average_se(self) -> float | None:
        return None if self.ses is None else float(np.mean(self.ses))

    @property
    def coverage(self) -> float | None:
        if self.ci is None:
            return None
        return float(np.mean((self.ci[:, 0] <= self.truth) & (self.truth <= self.ci[:, 1])))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "n_sims": self.n_sims,
            "mean": self.mean,
            "empirical_se": self.empirical_se,
            "se_of_mean": self.se_of_mean,
            "pct_bias": self.pct_bias,
            "average_se": self.average_se,
            "coverage": self.coverage,
        }


@dataclass(frozen=True, eq=False)
class ExperimentSummary:
    name: str
    truth: float
    rows: tuple[MethodSummary, ...]
    meta: dict = field(default_factory=dict)

    def row(self, method: str) -> MethodSummary:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)

    def to_dict(self) -> dict:
        return {
            "experiment": self.name,
            "truth": self.truth,
            "rows": [r.to_dict() for r in self.rows],
            "meta": self.meta,
        }

    def dump_csv(self, path: str | Path) -> None:
        """Raw per-sim estimates, one line per (sim, method)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sim", "method", "estimate", "se", "ci_lower", "ci_upper"])
            for r in self.rows:
                for i in range(r.n_sims):
                    se = "" if r.ses is None else repr(float(r.ses[i]))
                    lo, hi = ("", "") if r.ci is None else (repr(float(r.ci[i, 0])), repr(float(r.ci[i, 1])))
                    w.writerow([i, r.method, repr(float(r.estimates[i])), se, lo, hi])


def _wald(est, se):
    est, se = np.asarray(est), np.asarray(se)
    return np.column_stack([est - Z975 * se, est + Z975 * se])


def _collect(name, truth, per_sim: Sequence[dict], methods: Sequence[str], meta) -> ExperimentSummary:
    rows = []
    for m in methods:
        est = np.array([s[m][0] for s in per_sim])
        se = np.array([s[m][1] for s in per_sim])
        ci = np.array([s[m][2] for s in per_sim]) if len(per_sim[0][m]) > 2 else _wald(est, se)
        rows.append(MethodSummary(m, truth, est, se, ci))
    return ExperimentSummary(name, truth, tuple(rows), meta)


# --- Table 1 ---------------------------------------------------------------------

TABLE1_METHODS = ("uncorrected", "correct_rc", "nonaligned_calibration", "nonaligned_outcome")


def _table1_specs(spec: ScenarioSpec):
    cal_full = CalibrationSpec(exposure="xstar", confounders=("z", "v"), dependent="xss")
    cal_nov = CalibrationSpec(exposure="xstar", confounders=("z",), dependent="xss")
    out_full = OutcomeSpec("y", "xstar", ("z", "v"), spec.family)
    out_nov = OutcomeSpec("y", "xstar", ("z",), spec.family)
    return cal_full, cal_nov, out_full, out_nov


def table1_sim(spec: ScenarioSpec, sim_index: int) -> dict:
    cal_full, cal_nov, out_full, out_nov = _table1_specs(spec)
    ds = gen_cohort(spec, sim_index)
    val, _ = split_validation(ds)
    m_full = fit_calibration(val, cal_full)
    m_nov = fit_calibration(val, cal_nov)
    fits = {
        "uncorrected": naive_fit(ds, out_full),
        "correct_rc": rc_fit(ds, m_full, out_full),
        "nonaligned_calibration": rc_fit(ds, m_nov, out_full),
        "nonaligned_outcome": rc_fit(ds, m_full, out_nov),
    }
    return {k: (f.exposure_coefficient, f.unadjusted_se) for k, f in fits.items()}


def run_table1(spec: ScenarioSpec | None = None, n_sims: int | None = None, workers: int | None = None
               ) -> ExperimentSummary:
    """Uncorrected, correct RC and the two non-aligned variants."""
    spec = spec or default_table_a1()
    n_sims = spec.n_sims if n_sims is None else n_sims
    per_sim = pmap(lambda i: table1_sim(spec, i), range(n_sims), workers)
    meta = {"scenario": spec.to_dict(), "n_sims": n_sims, "se_kind": "model-based (unadjusted)"}
    return _collect("table1", spec.truth, per_sim, TABLE1_METHODS, meta)


# --- Table 3 ---------------------------------------------------------------------


def table3_sim(spec: ScenarioSpec, sim_index: int, boot: BootstrapSpec) -> dict:
    cal_full, _, out_full, _ = _table1_specs(spec)
    problem = build_problem(gen_cohort(spec, sim_index), cal_full, out_full)
    _, fit = problem_point_estimate(problem)
    j = problem.exposure_index
    b, se = float(fit.coefficients[j]), float(fit.se[j])
    betas, status = bootstrap_problem(problem, boot, key=(sim_index,), beta0=fit.coefficients, workers=1)
    ok = status == kernels.OK
    if (~ok).sum() > boot.failure_budget * boot.n_replicates:
        from .errors import TooManyFailedReplicates

        raise TooManyFailedReplicates(f"simulation {sim_index}: {(~ok).sum()} bootstrap replicates failed")
    reps = betas[ok, j]
    return {
        "model_based": (b, se, (b - Z975 * se, b + Z975 * se)),
        "bootstrap": (b, float(np.std(reps, ddof=1)), percentile_ci(reps, boot.ci_level)),
    }


def run_table3(
    spec: ScenarioSpec | None = None,
    n_sims: int | None = None,
    boot: BootstrapSpec | None = None,
    workers: int | None = None,
) -> ExperimentSummary:
    """Model-based versus bootstrap SEs and coverage for correct RC."""
    spec = spec or default_table_a1()
    boot = boot or BootstrapSpec(seed=spec.seed)
    n_sims = spec.n_sims if n_sims is None else n_sims
    per_sim = pmap(lambda i: table3_sim(spec, i, boot), range(n_sims), workers)
    meta = {
        "scenario": spec.to_dict(),
        "n_sims": n_sims,
        "bootstrap": {"n_replicates": boot.n_replicates, "seed": boot.seed, "ci_level": boot.ci_level},
        "model_ci": "Wald",
        "bootstrap_ci": "percentile",
    }
    return _collect("table3", spec.truth, per_sim, ("model_based", "bootstrap"), meta)


# --- mediation scenario ---------------------------------------------------------------


@dataclass(frozen=True)
class MediationScenario:
    """Linear system without confounders.

    M = g0 + gamma_x X + d;  X* = alpha0 + alpha_x X + alpha_m M + e*;
    Y = beta0 + beta_x X + beta_m M + eps;  X_j** = X + e_j (validation rows).
    """

    n_main: int = 2500
    n_validation: int = 250
    sigma_x2: float = 1.0
    gamma0: float = 0.0
    gamma_x: float = 0.4
    sigma_mres2: float = 0.84
    alpha0: float = 0.2
    alpha_x: float = 0.5
    alpha_m: float = 0.3
    sigma_estar2: float = 0.5
    beta0: float = 0.0
    beta_x: float = 0.2
    beta_m: float = 0.5
    sigma_y2: float = 1.0
    sigma_rep2: float = 0.5
    seed: int = 20240707
    n_sims: int = 1000

    def replace(self, **kw) -> "MediationScenario":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(kw)
        return MediationScenario(**d)

    @property
    def total_effect(self) -> float:
        return self.beta_x + self.beta_m * self.gamma_x

    @property
    def sigma_m2(self) -> float:
        return self.gamma_x**2 * self.sigma_x2 + self.sigma_mres2

    @property
    def sigma_xm(self) -> float:
        return self.gamma_x * self.sigma_x2

    def r2_expanded(self) -> float:
        """Population R^2 of X on (X*, M)."""
        sx2, sm2, sxm = self.sigma_x2, self.sigma_m2, self.sigma_xm
        var_xs = self.alpha_x**2 * sx2 + self.alpha_m**2 * sm2 + 2 * self.alpha_x * self.alpha_m * sxm + self.sigma_estar2
        cov_xs_m = self.alpha_x * sxm + self.alpha_m * sm2
        S = np.array([[var_xs, cov_xs_m], [cov_xs_m, sm2]])
        c = np.array([self.alpha_x * sx2 + self.alpha_m * sxm, sxm])
        return float(c @ np.linalg.solve(S, c) / sx2)

    def oracle_inputs(self) -> BiasOracleInputs:
        return BiasOracleInputs(
            beta_m=self.beta_m,
            alpha_x=self.alpha_x,
            alpha_m=self.alpha_m,
            sigma_x2=self.sigma_x2,
            sigma_m2=self.sigma_m2,
            sigma_xm=self.sigma_xm,
            gamma_x=self.gamma_x,
            r2_expanded=self.r2_expanded(),
        )


def gen_mediation_arrays(sc: MediationScenario, sim_index: int = 0) -> dict[str, np.ndarray]:
    rng = substream(sc.seed, MED_SIM_STREAM, sim_index)
    n = sc.n_main
    e = rng.standard_normal((n, 6))
    x = math.sqrt(sc.sigma_x2) * e[:, 0]
    m = sc.gamma0 + sc.gamma_x * x + math.sqrt(sc.sigma_mres2) * e[:, 1]
    xstar = sc.alpha0 + sc.alpha_x * x + sc.alpha_m * m + math.sqrt(sc.sigma_estar2) * e[:, 2]
    y = sc.beta0 + sc.beta_x * x + sc.beta_m * m + math.sqrt(sc.sigma_y2) * e[:, 3]
    sr = math.sqrt(sc.sigma_rep2)
    x1 = x + sr * e[:, 4]
    x2 = x + sr * e[:, 5]
    val = np.zeros(n)
    val[: sc.n_validation] = 1.0
    x1[sc.n_validation :] = np.nan
    x2[sc.n_validation :] = np.nan
    return {"x": x, "m": m, "xstar": xstar, "y": y, "x1": x1, "x2": x2, "val": val}


MEDIATION_ROLE_MAP = {
    "y": "outcome",
    "xstar": "exposure",
    "m": "mediator",
    "x1": "replicate",
    "x2": "replicate",
    "val": "validation",
    "x": "plain",
}


def gen_mediation_cohort(sc: MediationScenario, sim_index: int = 0) -> AnalysisDataset:
    return AnalysisDataset.from_columns(gen_mediation_arrays(sc, sim_index), MEDIATION_ROLE_MAP)


def _ols_slope(x, y) -> float:
    X = np.column_stack([np.ones_like(x), x])
    beta, _ = kernels.wls(X, y, np.ones(len(y)))
    return float(beta[1])


def mediation_sim(sc: MediationScenario, sim_index: int) -> dict:
    d = gen_mediation_arrays(sc, sim_index)
    nv = sc.n_validation
    v = slice(0, nv)
    empty = np.empty((sc.n_main, 0))
    a = _Arrays(d["y"], d["xstar"], empty, d["m"], d["x1"][v], d["x2"][v], d["xstar"][v], empty[:nv], d["m"][v], None)
    est = _estimates(a, ModelFamily.LINEAR)
    # standard RC: calibrate X1** on X* only, outcome on X-hat only
    Xv = np.column_stack([np.ones(nv), d["xstar"][v]])
    theta, _ = kernels.wls(Xv, d["x1"][v], np.ones(nv))
    xhat_s = theta[0] + theta[1] * d["xstar"]
    return {
        "standard_rc": _ols_slope(xhat_s, d["y"]),
        "expanded_rc": est["omit_mediator"],
        "midthune": est["total"],
    }


def run_mediation_scenario(sc: MediationScenario | None = None, n_sims: int | None = None,
                           workers: int | None = None) -> ExperimentSummary:
    """Empirical biases of standard RC, expanded RC and Midthune against the oracles.

    ``meta["oracle"]`` holds the asymptotic bias per method and
    ``meta["z_scores"]`` (empirical bias - oracle) / MC SE.
    """
    sc = sc or MediationScenario()
    n_sims = sc.n_sims if n_sims is None else n_sims
    per_sim = pmap(lambda i: mediation_sim(sc, i), range(n_sims), workers)
    truth = sc.total_effect
    inputs = sc.oracle_inputs()
    oracle = {"standard_rc": bias_standard_rc(inputs), "expanded_rc": bias_expanded_rc(inputs), "midthune": 0.0}
    rows = tuple(MethodSummary(k, truth, np.array([s[k] for s in per_sim])) for k in oracle)
    z = {r.method: (r.bias - oracle[r.method]) / r.se_of_mean for r in rows}
    meta = {"scenario": asdict(sc), "n_sims": n_sims, "oracle": oracle, "z_scores": z,
            "r2_expanded": inputs.r2_expanded}
    return ExperimentSummary("mediation", truth, rows, meta)


# --- population-moment oracles ------------------------------------------------------


def joint_covariance(spec: ScenarioSpec) -> tuple[np.ndarray, tuple[str, ...]]:
    """Population covariance of (X, Z, V, X*, X**)."""
    S = spec.covariance
    A = np.zeros((5, 3))
    A[:3] = np.eye(3)
    A[3] = spec.a[1:]
    A[4] = (1.0, 0.0, 0.0)
    C = A @ S @ A.T
    C[3, 3] += spec.sigma_eps2
    C[4, 4] += spec.sigma_delta2
    return C, ("x", "z", "v", "xstar", "xss")


def calibration_limit(spec: ScenarioSpec, predictors: Sequence[str] = ("xstar", "z", "v")) -> np.ndarray:
    """Population slopes of E(X | predictors) (the intercept is omitted)."""
    C, names = joint_covariance(spec)
    idx = [names.index(p) for p in predictors]
    return np.linalg.solve(C[np.ix_(idx, idx)], C[idx, 0])


def linear_predictor_projection(spec: ScenarioSpec, cal_predictors=("xstar", "z", "v"), outcome_covs=("z",)) -> np.ndarray:
    """Slopes of the population projection of b1 X + b2 Z + b3 V onto (X-hat, covariates).

    X-hat is the population calibration on ``cal_predictors``.  This is the
    omitted-variable limit on the linear-predictor scale; logistic fits
    attenuate it but keep its sign.
    """
    C, names = joint_covariance(spec)
    g = np.zeros(5)
    cp = [names.index(p) for p in cal_predictors]
    g[cp] = calibration_limit(spec, cal_predictors)
    rows = [g] + [np.eye(5)[names.index(c)] for c in outcome_covs]
    R = np.vstack(rows)
    eta = np.zeros(5)
    eta[:3] = spec.b[1:]
    return np.linalg.solve(R @ C @ R.T, R @ C @ eta)


def marginal_prevalence(spec: ScenarioSpec, n_nodes: int = 80) -> float:
    """P(Y = 1) by Gauss-Hermite quadrature over the normal linear predictor."""
    b = np.asarray(spec.b[1:])
    mu = spec.b[0] + b @ np.asarray(spec.means)
    sd = math.sqrt(b @ spec.covariance @ b)
    nodes, weights = np.polynomial.hermite_e.hermegauss(n_nodes)
    return float(weights @ expit(mu + sd * nodes) / math.sqrt(2 * math.pi))


# --- survey scenario -------------------------------------------------------------------


@dataclass(frozen=True)
class SurveyScenario:
    """Stratified two-stage cluster sample with a linear outcome.

    PSU random effects enter both X and the outcome error, so rows within a
    PSU are correlated.  Base weights vary by stratum.  Every
    ``validation_every``-th row carries X**.
    """

    n_strata: int = 20
    psus_per_stratum: int = 5
    psu_size: int = 24
    validation_every: int = 6
    psu_sd_x: float = 0.5
    psu_sd_y: float = 0.5
    a: tuple[float, float, float] = (0.4, 0.5, 0.5)
    sigma_eps2: float = 0.49
    sigma_delta2: float = 0.5
    b: tuple[float, float, float] = (0.0, 0.5, -0.3)
    seed: int = 20240808

    @property
    def n(self) -> int:
        return self.n_strata * self.psus_per_stratum * self.psu_size

    @property
    def truth(self) -> float:
        return self.b[1]


SURVEY_SIM_STREAM = 0x53


def gen_survey_arrays(sc: SurveyScenario, sim_index: int = 0) -> dict[str, np.ndarray]:
    rng = substream(sc.seed, SURVEY_SIM_STREAM, sim_index)
    n_psu = sc.n_strata * sc.psus_per_stratum
    n = sc.n
    psu = np.repeat(np.arange(n_psu), sc.psu_size)
    stratum = psu // sc.psus_per_stratum
    u_x = sc.psu_sd_x * rng.standard_normal(n_psu)
    u_y = sc.psu_sd_y * rng.standard_normal(n_psu)
    e = rng.standard_normal((n, 5))
    z = e[:, 0]
    x = 0.5 * z + math.sqrt(0.75) * e[:, 1] + u_x[psu]
    xstar = sc.a[0] + sc.a[1] * x + sc.a[2] * z + math.sqrt(sc.sigma_eps2) * e[:, 2]
    xss = x + math.sqrt(sc.sigma_delta2) * e[:, 3]
    y = sc.b[0] + sc.b[1] * x + sc.b[2] * z + u_y[psu] + e[:, 4]
    val = (np.arange(n) % sc.validation_every == 0).astype(float)
    xss[val == 0] = np.nan
    weight = 1.0 + (stratum % 4)
    return {"y": y, "x": x, "z": z, "xstar": xstar, "xss": xss, "val": val,
            "stratum": stratum.astype(float), "psu": psu.astype(float), "weight": weight}


SURVEY_ROLE_MAP = {
    "y": "outcome",
    "xstar": "exposure",
    "xss": "reference",
    "z": "confounder",
    "val": "validation",
    "stratum": "stratum",
    "psu": "psu",
    "weight": "weight",
    "x": "plain",
}


def gen_survey_cohort(sc: SurveyScenario, sim_index: int = 0) -> AnalysisDataset:
    return AnalysisDataset.from_columns(gen_survey_arrays(sc, sim_index), SURVEY_ROLE_MAP)


def run_survey_coverage(sc: SurveyScenario | None = None, n_sims: int = 300, M: int = 10, R: int = 200,
                        workers: int | None = None) -> ExperimentSummary:
    """Coverage of pooled-variance Wald CIs from ``mi_rc_pipeline``."""
    from .survey import SurveyDesign, mi_rc_pipeline

    sc = sc or SurveyScenario()
    cal = CalibrationSpec(exposure="xstar", confounders=("z",), dependent="xss")
    out = OutcomeSpec("y", "xstar", ("z",), ModelFamily.LINEAR)

    def one(i):
        ds = gen_survey_cohort(sc, i)
        pooled = mi_rc_pipeline(ds, cal, out, SurveyDesign.from_dataset(ds), M=M, R=R, seed=sc.seed + i, workers=1)
        return {"mi_pooled": (pooled.estimate, pooled.se)}

    per_sim = pmap(one, range(n_sims), workers)
    meta = {"scenario": asdict(sc), "n_sims": n_sims, "M": M, "R": R}
    return _collect("survey_mi", sc.truth, per_sim, ("mi_pooled",), meta)
