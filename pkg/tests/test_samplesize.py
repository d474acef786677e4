import numpy as np
import pytest

from rckit import simulate
from rckit.errors import InvalidInput
from rckit.samplesize import (
    SampleSizeInputs,
    normal_quantile,
    sample_size_by_simulation,
    validation_sample_size,
)
from rckit.variance import BootstrapSpec


def n_v(**kw):
    return validation_sample_size(SampleSizeInputs(**kw))


def test_reference_values():
    assert n_v(f=0.1, alpha=0.05, power=0.9, rho=0.4) == 552
    assert n_v(f=0.1, alpha=0.05, power=0.9, rho=0.6) == 187
    assert n_v(f=0.1, rho=1.0) == 0


def test_quantile_accuracy():
    assert abs(normal_quantile(0.975) - 1.959964) < 1e-5
    assert abs(normal_quantile(0.9) - 1.2815515655446004) < 1e-9
    assert normal_quantile(0.5) == 0.0
    with pytest.raises(InvalidInput):
        normal_quantile(1.0)


def test_monotonicity():
    rhos = [n_v(f=0.1, rho=r) for r in np.linspace(0.1, 0.95, 18)]
    assert all(a > b for a, b in zip(rhos, rhos[1:]))
    fs = [n_v(f=f, rho=0.3) for f in np.linspace(0.02, 0.5, 15)]
    assert all(a > b for a, b in zip(fs, fs[1:]))
    pw = [n_v(f=0.05, rho=0.3, power=p) for p in np.linspace(0.5, 0.99, 12)]
    assert all(a < b for a, b in zip(pw, pw[1:]))


@pytest.mark.parametrize("kw", [dict(f=0.0), dict(f=0.1, alpha=0.0), dict(f=0.1, power=1.0), dict(f=0.1, rho=0.0),
                                dict(f=0.1, rho=1.2)])
def test_invalid_inputs(kw):
    with pytest.raises(InvalidInput):
        SampleSizeInputs(**kw)


def test_simulation_power_increases():
    sc = simulate.default_table_a1()
    res = sample_size_by_simulation(sc, [60, 500], n_sims=30, boot=BootstrapSpec(n_replicates=100, seed=1),
                                    target_power=0.5)
    p = [pt.power for pt in res["points"]]
    se = [pt.binomial_se for pt in res["points"]]
    assert p[1] >= p[0] - 2 * np.hypot(*se)
    assert res["smallest_meeting_target"] in (60, 500, None)


def test_simulation_null_type_one():
    sc = simulate.default_table_a1()
    null = sc.replace(b=(sc.b[0], 0.0, sc.b[2], sc.b[3]))
    res = sample_size_by_simulation(null, [250], n_sims=40, boot=BootstrapSpec(n_replicates=100, seed=2))
    pt = res["points"][0]
    assert pt.power <= 0.05 + 2 * np.sqrt(0.05 * 0.95 / 40)
