"""Validation-study sizing.

The closed form targets a variance-inflation fraction ``f`` for the corrected
coefficient; the simulation mode reports empirical power of the full RC
pipeline over a grid of validation sizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Sequence

import numpy as np

from .errors import InvalidInput
from .parallel import pmap
from .variance import BootstrapSpec

_STD_NORMAL = NormalDist()


def normal_quantile(p: float) -> float:
    """Standard-normal quantile (Wichura's AS241, pure Python)."""
    if not 0.0 < p < 1.0:
        raise InvalidInput("quantile probability must lie in (0, 1)")
    return _STD_NORMAL.inv_cdf(p)


@dataclass(frozen=True)
class SampleSizeInputs:
    f: float
    alpha: float = 0.05
    power: float = 0.90
    rho: float = 0.5

    def __post_init__(self):
        if not self.f > 0:
            raise InvalidInput("f must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise InvalidInput("alpha must lie in (0, 1)")
        if not 0.0 < self.power < 1.0:
            raise InvalidInput("power must lie in (0, 1)")
        if not 0.0 < self.rho <= 1.0:
            raise InvalidInput("rho must lie in (0, 1]")

    def to_dict(self) -> dict:
        return {"f": self.f, "alpha": self.alpha, "power": self.power, "rho": self.rho}


def validation_sample_size_exact(inputs: SampleSizeInputs) -> float:
    """Unrounded value of the sizing formula."""
    z = normal_quantile(1.0 - inputs.alpha / 2.0) + normal_quantile(inputs.power)
    r2 = inputs.rho**2
    return z * z * (1.0 - r2) / (inputs.f * r2)


def validation_sample_size(inputs: SampleSizeInputs) -> int:
    """n_v = ceil((z_{1-a/2} + z_{power})^2 (1 - rho^2) / (f rho^2)).

    ``rho`` is the correlation between X* and the reference; pass the
    correlation with a noisy reference X** as is (no deattenuation).

    Examples
    --------
    >>> validation_sample_size(SampleSizeInputs(f=0.1, alpha=0.05, power=0.9, rho=0.4))
    552
    """
    return int(math.ceil(validation_sample_size_exact(inputs) - 1e-9))


@dataclass(frozen=True)
class PowerPoint:
    n_validation: int
    n_sims: int
    rejections: int

    @property
    def power(self) -> float:
        return self.rejections / self.n_sims

    @property
    def binomial_se(self) -> float:
        p = self.power
        return math.sqrt(max(p * (1 - p), 1e-12) / self.n_sims)

    def to_dict(self) -> dict:
        return {"n_validation": self.n_validation, "n_sims": self.n_sims, "power": self.power,
                "binomial_se": self.binomial_se}


def sample_size_by_simulation(
    scenario,
    grid: Sequence[int],
    n_sims: int = 200,
    boot: BootstrapSpec | None = None,
    workers: int | None = None,
    target_power: float | None = None,
) -> dict:
    """Empirical power of the RC pipeline for each validation size in ``grid``.

    H0: beta_X = 0 is rejected when the bootstrap percentile CI excludes 0.
    Returns ``{"points": [...], "smallest_meeting_target": n or None}``.
    """
    from .simulate import table3_sim

    boot = boot or BootstrapSpec(n_replicates=200, seed=scenario.seed)
    alpha = 1.0 - boot.ci_level
    points = []
    for nv in grid:
        sc = scenario.replace(n_validation=int(nv))  # common random numbers across the grid
        sims = pmap(lambda i: table3_sim(sc, i, boot)["bootstrap"][2], range(n_sims), workers)
        rej = sum(1 for lo, hi in sims if lo > 0 or hi < 0)
        points.append(PowerPoint(int(nv), n_sims, rej))
    best = None
    if target_power is not None:
        ok = [p.n_validation for p in points if p.power >= target_power]
        best = min(ok) if ok else None
    return {"alpha": alpha, "points": points, "smallest_meeting_target": best}
