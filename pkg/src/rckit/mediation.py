"""Total-effect estimation when a calibration covariate is a mediator.

Midthune's method calibrates each component of the mediation model
separately and recombines them as beta_X + beta_M * gamma_X.  The asymptotic
bias formulas for the naive alternatives (standard and expanded regression
calibration, no confounders) double as oracles for simulation checks.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dataset import AnalysisDataset, ColumnRole, build_design
from .errors import InputError, InvalidR2, MissingReplicates, NumericalError, ZeroDenominator
from .glm import ModelFamily
from .parallel import substream
from .variance import BootstrapSpec, percentile_ci

MED_STREAM = 0x3ED
APPROXIMATE_NOTE = "logistic outcome: the direct + indirect decomposition is only approximate"


@dataclass(frozen=True)
class MediationSpec:
    outcome: str
    exposure: str
    mediator: str
    replicates: tuple[str, str]
    confounders: tuple[str, ...] = ()
    family: ModelFamily = ModelFamily.LOGISTIC
    known_error_variance: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "confounders", tuple(self.confounders))
        object.__setattr__(self, "replicates", tuple(self.replicates))
        object.__setattr__(self, "family", ModelFamily(self.family))
        if len(self.replicates) != 2 and self.known_error_variance is None:
            raise MissingReplicates("mediation analysis needs two reference replicates")


@dataclass(frozen=True, eq=False)
class _Arrays:
    """Main-study and validation arrays; Z blocks already dummy-coded."""

    y: np.ndarray
    xs: np.ndarray
    z: np.ndarray
    m: np.ndarray
    v_x1: np.ndarray
    v_x2: np.ndarray
    v_xs: np.ndarray
    v_z: np.ndarray
    v_m: np.ndarray
    val_in_main: np.ndarray | None  # positions of validation rows in main (internal study)

    def take(self, main_idx, val_idx) -> "_Arrays":
        return _Arrays(
            self.y[main_idx], self.xs[main_idx], self.z[main_idx], self.m[main_idx],
            self.v_x1[val_idx], self.v_x2[val_idx], self.v_xs[val_idx], self.v_z[val_idx], self.v_m[val_idx],
            None,
        )


def _design(*cols) -> np.ndarray:
    n = len(cols[0])
    parts = [np.ones((n, 1))]
    for c in cols:
        parts.append(c[:, None] if c.ndim == 1 else c)
    return np.hstack(parts)


def _ols(X, y) -> np.ndarray:
    beta, status = kernels.wls(X, y, np.ones(len(y)))
    if status != kernels.OK:
        raise NumericalError("rank-deficient regression inside the mediation pipeline")
    return beta


def _outcome(family: ModelFamily, X, y, beta0=None) -> np.ndarray:
    beta, status = kernels.fit_coef(family.code, X, y, np.ones(len(y)), beta0)
    if status != kernels.OK:
        raise NumericalError(f"outcome fit failed (status {status})")
    return beta


def _gamma_x(a: _Arrays, known_error_variance: float | None) -> float:
    if known_error_variance is None:
        both = ~np.isnan(a.v_x2) & ~np.isnan(a.v_x1)
        if both.sum() < a.v_z.shape[1] + 3:
            raise MissingReplicates("too few validation rows with both reference replicates")
        # Step 1: X2** on X1**, Z;  Step 2: M on X-hat(1), Z
        X1 = _design(a.v_x1[both], a.v_z[both])
        xhat1 = X1 @ _ols(X1, a.v_x2[both])
        return float(_ols(_design(xhat1, a.v_z[both]), a.v_m[both])[1])
    ok = ~np.isnan(a.v_x1)
    Zd = _design(a.v_z[ok])
    resid = a.v_x1[ok] - Zd @ _ols(Zd, a.v_x1[ok])
    s2 = float(resid @ resid / (resid.size - Zd.shape[1]))
    lam = (s2 - known_error_variance) / s2
    if lam <= 0:
        raise NumericalError("known error variance exceeds the residual variance of the reference")
    slope = float(_ols(_design(a.v_x1[ok], a.v_z[ok]), a.v_m[ok])[1])
    return slope / lam


def _expanded_xhat(a: _Arrays) -> np.ndarray:
    """Step 3 calibration E(X1** | X*, Z, M) applied to the main study."""
    ok = ~np.isnan(a.v_x1)
    theta = _ols(_design(a.v_xs[ok], a.v_z[ok], a.v_m[ok]), a.v_x1[ok])
    return _design(a.xs, a.z, a.m) @ theta


def _estimates(a: _Arrays, family: ModelFamily, known_error_variance=None) -> dict:
    gamma = _gamma_x(a, known_error_variance)
    xhat = _expanded_xhat(a)
    b_in = _outcome(family, _design(xhat, a.z, a.m), a.y)
    b_out = _outcome(family, _design(xhat, a.z), a.y)
    beta_x, beta_m = float(b_in[1]), float(b_in[-1])
    return {
        "gamma_x": gamma,
        "beta_x": beta_x,
        "beta_m": beta_m,
        "total": beta_x + beta_m * gamma,
        "include_mediator": beta_x,
        "omit_mediator": float(b_out[1]),
        "outcome_coefficients": b_in,
    }


def _arrays(main: AnalysisDataset, spec: MediationSpec, validation: AnalysisDataset | None) -> _Arrays:
    x2 = spec.replicates[1] if len(spec.replicates) > 1 else None
    main_cols = [spec.outcome, spec.exposure, spec.mediator, *spec.confounders]
    main = main.complete_cases(main_cols, "mediation main study")
    val_in_main = None
    if validation is None:
        flag = main.column_with_role(ColumnRole.VALIDATION)
        if flag is None:
            raise InputError("internal validation requires a validation flag in the main study")
        val_mask = (main[flag] == 1.0) & ~np.isnan(main[spec.replicates[0]])
        val_in_main = np.flatnonzero(val_mask)
        validation = main.take(val_in_main)
    else:
        validation = validation.complete_cases([spec.replicates[0], spec.exposure, spec.mediator, *spec.confounders],
                                               "mediation validation")
    z = build_design(main, spec.confounders, intercept=False).values
    vz = build_design(validation, spec.confounders, intercept=False).values
    if x2 is None or x2 not in validation:
        if spec.known_error_variance is None:
            raise MissingReplicates(f"validation data lack the second replicate {x2!r}")
        v_x2 = np.full(validation.n_rows, np.nan)
    else:
        v_x2 = np.asarray(validation[x2], dtype=float)
    return _Arrays(
        np.asarray(main[spec.outcome], dtype=float),
        np.asarray(main[spec.exposure], dtype=float),
        z,
        np.asarray(main[spec.mediator], dtype=float),
        np.asarray(validation[spec.replicates[0]], dtype=float),
        v_x2,
        np.asarray(validation[spec.exposure], dtype=float),
        vz,
        np.asarray(validation[spec.mediator], dtype=float),
        val_in_main,
    )


def _resample(a: _Arrays, rng: np.random.Generator) -> _Arrays:
    n_val = a.v_x1.size
    n = a.y.size
    val_idx = rng.integers(0, n_val, n_val)
    if a.val_in_main is None:
        return a.take(rng.integers(0, n, n), val_idx)
    mask = np.ones(n, dtype=bool)
    mask[a.val_in_main] = False
    non = np.flatnonzero(mask)
    main_idx = np.concatenate([a.val_in_main[val_idx], non[rng.integers(0, non.size, non.size)]])
    return a.take(main_idx, val_idx)


def _bootstrap(a: _Arrays, spec: MediationSpec, boot: BootstrapSpec, keys: tuple[str, ...]) -> dict:
    draws = {k: [] for k in keys}
    failed = 0
    for r in range(boot.n_replicates):
        rng = substream(boot.seed, MED_STREAM, r)
        try:
            est = _estimates(_resample(a, rng), spec.family, spec.known_error_variance)
        except (NumericalError, InputError):
            failed += 1
            continue
        for k in keys:
            draws[k].append(est[k])
    if failed > boot.failure_budget * boot.n_replicates:
        raise NumericalError(f"{failed} of {boot.n_replicates} mediation bootstrap replicates failed")
    out = {}
    for k in keys:
        v = np.asarray(draws[k])
        out[k] = (float(np.std(v, ddof=1)), percentile_ci(v, boot.ci_level))
    out["n_failed"] = failed
    return out


@dataclass(frozen=True, eq=False)
class MediationFit:
    gamma_x_hat: float
    beta_x_hat: float
    beta_m_hat: float
    family: ModelFamily
    se_total: float | None = None
    ci_total: tuple[float, float] | None = None
    outcome_coefficients: np.ndarray = field(default=None, repr=False)
    notes: tuple[str, ...] = ()

    @property
    def total_effect(self) -> float:
        return self.beta_x_hat + self.beta_m_hat * self.gamma_x_hat

    @property
    def approximate(self) -> bool:
        return self.family is ModelFamily.LOGISTIC

    def to_dict(self) -> dict:
        return {
            "gamma_x": self.gamma_x_hat,
            "beta_x": self.beta_x_hat,
            "beta_m": self.beta_m_hat,
            "total_effect": self.total_effect,
            "se_total": self.se_total,
            "ci_total": None if self.ci_total is None else list(self.ci_total),
            "approximate_decomposition": self.approximate,
            "notes": list(self.notes),
        }


def midthune_total_effect(
    main: AnalysisDataset,
    spec: MediationSpec,
    validation: AnalysisDataset | None = None,
    boot: BootstrapSpec | None = None,
) -> MediationFit:
    """Midthune's five-step total-effect estimate.

    1. X-hat(1) = E(X2** | X1**, Z) in the validation data.
    2. gamma_X from M on (X-hat(1), Z) in the validation data.
    3. X-hat(2) = E(X1** | X*, Z, M) in the validation data.
    4. beta_X, beta_M from Y on (X-hat(2), Z, M) in the main study.
    5. total = beta_X + beta_M * gamma_X.

    With ``validation=None`` the validation rows are the flagged rows of
    ``main``.  When ``boot`` is given, the whole pipeline is bootstrapped
    (stratified on validation membership) for ``se_total``.
    """
    a = _arrays(main, spec, validation)
    est = _estimates(a, spec.family, spec.known_error_variance)
    notes = []
    if spec.family is ModelFamily.LOGISTIC:
        notes.append(APPROXIMATE_NOTE)
        warnings.warn(APPROXIMATE_NOTE, stacklevel=2)
    if spec.known_error_variance is not None:
        notes.append("gamma_X from a single replicate and a known error variance (experimental)")
    se = ci = None
    if boot is not None:
        b = _bootstrap(a, spec, boot, ("total",))
        se, ci = b["total"]
    return MediationFit(est["gamma_x"], est["beta_x"], est["beta_m"], spec.family, se, ci,
                        est["outcome_coefficients"], tuple(notes))


@dataclass(frozen=True)
class MethodRow:
    method: str
    estimate: float
    se: float | None = None
    ci: tuple[float, float] | None = None
    odds_ratio: float | None = None
    or_ci: tuple[float, float] | None = None

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["ci"] = None if self.ci is None else list(self.ci)
        d["or_ci"] = None if self.or_ci is None else list(self.or_ci)
        return d


def compare_three_methods(
    main: AnalysisDataset,
    spec: MediationSpec,
    validation: AnalysisDataset | None = None,
    boot: BootstrapSpec | None = None,
    or_factor: float | None = None,
) -> list[MethodRow]:
    """Include-mediator, omit-mediator and Midthune estimates side by side.

    Both single-model methods use the calibration that contains the mediator.
    """
    a = _arrays(main, spec, validation)
    est = _estimates(a, spec.family, spec.known_error_variance)
    keys = ("include_mediator", "omit_mediator", "total")
    names = {"include_mediator": "include_mediator", "omit_mediator": "omit_mediator", "total": "midthune"}
    b = _bootstrap(a, spec, boot, keys) if boot is not None else None
    rows = []
    for k in keys:
        se, ci = b[k] if b else (None, None)
        ratio = rci = None
        if or_factor is not None:
            c = math.log(or_factor)
            ratio = math.exp(est[k] * c)
            rci = None if ci is None else (math.exp(ci[0] * c), math.exp(ci[1] * c))
        rows.append(MethodRow(names[k], est[k], se, ci, ratio, rci))
    return rows


# --- asymptotic bias oracles (no confounders) --------------------------------


@dataclass(frozen=True)
class BiasOracleInputs:
    beta_m: float
    alpha_x: float
    alpha_m: float
    sigma_x2: float
    sigma_m2: float
    sigma_xm: float
    gamma_x: float
    r2_expanded: float = 1.0

    def __post_init__(self):
        if self.sigma_x2 <= 0 or self.sigma_m2 <= 0:
            raise InputError("variances must be positive")
        if abs(self.sigma_xm) > math.sqrt(self.sigma_x2 * self.sigma_m2) * (1 + 1e-12):
            raise InputError("|sigma_XM| cannot exceed sigma_X * sigma_M")

    @property
    def rho_xm(self) -> float:
        return self.sigma_xm / math.sqrt(self.sigma_x2 * self.sigma_m2)


def bias_standard_rc(p: BiasOracleInputs) -> float:
    """Bias of standard RC (calibration on X* only) relative to the total effect."""
    denom = p.alpha_x * p.sigma_x2 + p.alpha_m * p.sigma_xm
    if denom == 0.0:
        raise ZeroDenominator("alpha_X*sigma_X^2 + alpha_M*sigma_XM is zero")
    return p.beta_m * p.alpha_m * p.sigma_m2 * (1.0 - p.rho_xm**2) / denom


def bias_expanded_rc(p: BiasOracleInputs) -> float:
    """Bias of expanded RC (mediator in calibration only) relative to the total effect."""
    if not 0.0 < p.r2_expanded <= 1.0:
        raise InvalidR2("R^2 of X on the expanded calibration must lie in (0, 1]")
    return p.beta_m * p.gamma_x * (1.0 - p.r2_expanded) / p.r2_expanded
