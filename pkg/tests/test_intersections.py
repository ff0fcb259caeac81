import math
import warnings

import numpy as np
import pytest

from artifact.errors import BackendMismatch, DegenerateDenominator
from artifact.geometry import EquivariantBundle, EquivariantLineBundle as E, geometry, random_metric
from artifact.intersections import (TANGENT, beta_invariant, char_square_numbers, closed_char_squares,
                                    closed_degree, einstein_constant, fano_degree, fano_volume, fourier_backend,
                                    intersection_report, profile_char_squares, profile_degree, profile_volume,
                                    weighted_degree, weighted_volume)
from artifact.weights import constant, exponential, linear_combination, polynomial, sasaki

LINE = EquivariantBundle.split([E(1, 0, 1)])
TANGENT_LINE = EquivariantBundle.split([E(2, -1, 1)])


def test_volumes():
    assert weighted_volume(constant()) == pytest.approx(1.0, abs=1e-12)
    assert weighted_volume(exponential(1.0)) == pytest.approx(math.e - 1.0, abs=1e-10)
    assert fourier_backend("1", None, constant()) == pytest.approx(1.0, abs=1e-6)
    assert fourier_backend("1", None, polynomial([{"c": 1.0, "p": 1.0, "n": 2.0}])) == pytest.approx(7.0 / 3.0, abs=1e-6)


def test_einstein_constants():
    assert weighted_degree(TANGENT_LINE, constant()) == pytest.approx(2.0, abs=1e-10)
    assert weighted_degree(TANGENT_LINE, exponential(1.0)) == pytest.approx(math.e + 1.0, abs=1e-8)
    report = intersection_report(TANGENT_LINE, exponential(1.0), w=exponential(1.0))
    assert report.c_vw == pytest.approx((math.e + 1.0) / (math.e - 1.0), abs=1e-6)
    cv, cvw = einstein_constant(TANGENT_LINE, exponential(1.0), w=exponential(1.0))
    assert cv == pytest.approx(math.e + 1.0, abs=1e-8)
    assert cvw == pytest.approx((math.e + 1.0) / (math.e - 1.0), abs=1e-6)


def test_fourier_degree_of_the_hyperplane_bundle():
    assert fourier_backend("c1", LINE, exponential(1.0)) == pytest.approx(math.e, abs=1e-4)


@pytest.mark.parametrize("t", [0.5, 1.0, 2.0])
def test_c1_square_of_hyperplane_bundle(t):
    # oracle: 2t int mu e^{t mu} + t^2 int mu^2 e^{t mu}, integrated symbolically
    oracle = 2.0 * t * ((t - 1.0) * math.exp(t) + 1.0) / t**2 \
        + t**2 * (math.exp(t) * (t * t - 2.0 * t + 2.0) - 2.0) / t**3
    assert oracle == pytest.approx(t * math.exp(t), rel=1e-13)
    c1sq, _ = closed_char_squares(LINE, exponential(t))
    assert c1sq == pytest.approx(oracle, rel=1e-13)
    c1sq_p, _ = profile_char_squares(LINE, exponential(t))
    assert c1sq_p == pytest.approx(oracle, rel=1e-10)


def test_line_bundles_have_zero_c2():
    g = geometry(64)
    rng = np.random.default_rng(2)
    for line in (E(1, 0, 1), E(3, -1, 2)):
        b = EquivariantBundle.split([line])
        _, _, c2 = char_square_numbers(b, random_metric(b, g, rng), exponential(0.7))
        assert abs(c2) < 1e-10


def test_constant_weight_kills_squares():
    b = EquivariantBundle.split([E(0, 0, 0), E(2, -1, 1)])
    c1sq, ch2 = profile_char_squares(b, constant())
    assert abs(c1sq) < 1e-12 and abs(ch2) < 1e-12


def test_representative_independence_against_reference():
    g = geometry(96)
    rng = np.random.default_rng(4)
    b = EquivariantBundle.split([E(0, 0, 0), E(2, -1, 1)])
    v = sasaki(0.5)
    ref = (profile_degree(b, v), *profile_char_squares(b, v))
    for _ in range(2):
        m = random_metric(b, g, rng)
        got = (profile_degree(b, v, m), *profile_char_squares(b, v, m))
        assert np.max(np.abs(np.subtract(got, ref))) < 1e-8


def test_linearity_in_the_weight():
    b = EquivariantBundle.split([E(1, 0, 1), E(2, -1, 1)], couplings="none")
    v1, v2 = exponential(0.5), polynomial([{"c": 1.0, "p": 1.0, "n": 2.0}])
    combo = linear_combination([2.0, 3.0], [v1, v2])
    lhs = profile_degree(b, combo)
    rhs = 2.0 * profile_degree(b, v1) + 3.0 * profile_degree(b, v2)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_classical_limit():
    b = EquivariantBundle.split([E(1, 0, 1), E(2, -1, 1)], couplings="none")
    report = intersection_report(b, constant())
    assert report.weighted_volume == pytest.approx(1.0, abs=1e-12)
    assert report.weighted_degree == pytest.approx(3.0, abs=1e-10)
    assert abs(report.c1sq_v) < 1e-12 and abs(report.ch2_v) < 1e-12
    assert report.summand_degrees == [pytest.approx(1.0), pytest.approx(2.0)]


def test_report_cross_checks_closed_forms():
    b = EquivariantBundle.split([E(3, 0, 3), E(0, 4, 4)])
    v = sasaki(1.0, m=2.0)
    report = intersection_report(b, v)
    assert report.weighted_degree == pytest.approx(closed_degree(b, v), abs=1e-9)
    assert report.backend_disagreement < 1e-4
    assert set(report.backends["c1sq_v"]) == {"profile", "closed_form", "fourier"}


def test_backend_gate_raises():
    # a tolerance below the Fourier error forces the gate to trip
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(BackendMismatch):
            intersection_report(LINE, exponential(1.0), tol=1e-14)


def test_profile_volume_matches_quadrature():
    v = sasaki(0.5)
    assert profile_volume(v) == pytest.approx(math.log(3.0), abs=1e-12)


def test_beta_examples():
    sub = E(1, 0, 1)
    assert beta_invariant(sub, True, 0.0).beta == pytest.approx(1.0, abs=1e-14)
    for s in (0.3, 1.0):
        rep = beta_invariant(sub, True, s)
        assert rep.beta == pytest.approx(2.0 / (math.exp(2.0 * s) + 1.0), abs=1e-12)
        assert rep.denominator == pytest.approx(math.exp(s) + math.exp(-s), abs=1e-12)
        assert rep.beta_min == rep.beta < 1.0


def test_beta_denominator_has_a_profile_cross_check():
    rep = beta_invariant(E(1, 0, 1), True, 0.7)
    assert rep.denominator_profile == pytest.approx(rep.denominator, rel=1e-10)


def test_beta_non_liftable_needs_higher_dimension():
    with pytest.raises(DegenerateDenominator):
        beta_invariant(E(1, 0, 1), False, 0.0, n=1)
    rep = beta_invariant(E(1, 0, 1), False, 0.0, n=2)
    assert rep.beta == pytest.approx(2.0 * (1.0 - 0.5), abs=1e-14)


def test_fano_data():
    assert fano_degree(TANGENT, 0.0) == 2.0
    assert fano_volume(0.0) == 2.0
    assert fano_volume(1.0) == pytest.approx(math.e - 1.0 / math.e, abs=1e-14)
