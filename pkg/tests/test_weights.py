import math

import numpy as np
import pytest

from artifact.errors import ConfigError, NonPositiveWeight
from artifact.geometry import EquivariantBundle, EquivariantLineBundle as E
from artifact.intersections import fourier_backend
from artifact.weights import (constant, exponential, fourier_data, hessian_condition_check, linear_combination,
                              make_weight, polynomial, sasaki, table, window)

FAMILIES = [
    constant(1.5),
    exponential(1.3),
    sasaki(0.5, m=2.0),
    polynomial([{"c": 1.0, "p": 1.0, "n": 2.0}, {"c": 2.0, "p": -1.0, "n": 0.5}]),
    table([0.0, 0.2, 0.4, 0.6, 0.8, 1.0], [1.0, 1.1, 1.3, 1.2, 1.5, 1.9]),
]


def test_closed_form_values():
    mu = np.linspace(0.0, 1.0, 11)
    v = exponential(0.7)
    assert np.allclose(v.grad(mu), 0.7 * v.value(mu), rtol=1e-15)
    assert np.allclose(v.hess(mu), 0.49 * v.value(mu), rtol=1e-15)
    p = polynomial([{"c": 1.0, "p": 1.0, "n": 2.0}])
    assert float(p.grad(np.array(0.5))) == pytest.approx(3.0, abs=1e-15)
    assert np.allclose(constant().value(mu), 1.0)


@pytest.mark.parametrize("v", FAMILIES, ids=lambda v: v.family)
def test_derivatives_match_finite_differences(v):
    # probe points stay off the spline knots of the tabulated weight
    mu = np.linspace(0.03, 0.97, 17)
    h = 1e-5
    fd1 = (v.value(mu + h) - v.value(mu - h)) / (2 * h)
    fd2 = (v.grad(mu + h) - v.grad(mu - h)) / (2 * h)
    scale = max(1.0, float(np.max(np.abs(v.grad(mu)))))
    assert np.max(np.abs(fd1 - v.grad(mu))) <= 1e-6 * scale
    scale = max(1.0, float(np.max(np.abs(v.hess(mu)))))
    assert np.max(np.abs(fd2 - v.hess(mu))) <= 1e-6 * scale


def test_make_weight_parses_every_family():
    assert make_weight({"family": "exp", "t": 2.0}).params["t"] == 2.0
    assert make_weight({"family": "sasaki", "a": 1.0}).family == "sasaki"
    assert make_weight({"family": "poly", "factors": [{"c": 1, "p": 1, "n": 1}]}).family == "poly"
    with pytest.raises(ConfigError):
        make_weight({"family": "gaussian"})
    with pytest.raises(ConfigError):
        make_weight({"family": "sasaki"})


def test_non_positive_weights_are_rejected():
    with pytest.raises(NonPositiveWeight):
        sasaki(-0.5)
    with pytest.raises(NonPositiveWeight):
        polynomial([{"c": -0.5, "p": 1.0, "n": 1.0}])
    with pytest.raises(NonPositiveWeight):
        table([0.0, 0.3, 0.6, 1.0], [1.0, -1.0, 1.0, 1.0])


def test_unvalidated_polynomial_skips_the_sweep():
    v = polynomial([{"c": 0.0, "p": 1.0, "n": 1.0}], validate=False)
    assert not v.validated
    assert float(v.value(np.array(0.25))) == 0.25


def test_hessian_condition_examples():
    flat = hessian_condition_check(constant())
    assert flat.holds and np.max(np.abs(flat.margin)) < 1e-12
    assert hessian_condition_check(exponential(1.0), n=1).holds
    # (mu + a)^(-m) with m = n is the equality case
    eq = hessian_condition_check(sasaki(0.5, m=1.0), n=1)
    assert eq.holds and np.max(np.abs(eq.margin)) < 1e-12
    eq2 = hessian_condition_check(sasaki(0.5, m=2.0), n=2)
    assert np.max(np.abs(eq2.margin)) < 1e-12
    assert not hessian_condition_check(sasaki(0.5, m=0.5), n=1).holds
    assert hessian_condition_check(polynomial([{"c": 1.0, "p": 1.0, "n": 2.0}])).log_concave
    assert not hessian_condition_check(sasaki(0.5, m=1.0)).log_concave


def test_linear_combination():
    v = linear_combination([2.0, -0.5], [exponential(1.0), constant()])
    mu = np.linspace(0.0, 1.0, 5)
    assert np.allclose(v.value(mu), 2.0 * np.exp(mu) - 0.5)


def test_window_is_one_on_the_polytope_and_zero_outside():
    t = np.array([-0.6, -0.5, 0.0, 0.5, 1.0, 1.5, 1.6])
    w = window(t, 0.5)
    assert np.allclose(w, [0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0])


def test_fourier_round_trip_for_the_constant():
    fd = fourier_data(constant())
    assert fd.roundtrip_error < 1e-6
    probe = np.linspace(0.0, 1.0, 7)
    assert np.max(np.abs(fd.extension(probe) - 1.0)) < 1e-12


@pytest.mark.parametrize("v", FAMILIES[1:4], ids=lambda v: v.family)
def test_fourier_round_trip_all_families(v):
    assert fourier_data(v).roundtrip_error < 1e-6


def test_extension_independence():
    v = exponential(1.0)
    line = EquivariantBundle.split([E(1, 0, 1)])
    a = fourier_backend("c1", line, v, fd=fourier_data(v, margin=0.5))
    b = fourier_backend("c1", line, v, fd=fourier_data(v, margin=1.0))
    assert abs(a - b) < 1e-5
    assert a == pytest.approx(math.e, abs=1e-5)


def test_fourier_transform_decays_fast():
    fd = fourier_data(exponential(1.0))
    band = (np.abs(fd.xi) > 20.0) & (np.abs(fd.xi) < 0.8 * fd.cutoff)
    bound = np.abs(fd.fhat[band]) * (1.0 + np.abs(fd.xi[band])) ** 4
    assert np.max(bound) < 1e6


def test_fourier_rejects_bad_parameters():
    with pytest.raises(ConfigError):
        fourier_data(constant(), cutoff=-1.0)
    with pytest.raises(ConfigError):
        fourier_data(constant(), step=10.0)
