import math
from fractions import Fraction

import numpy as np
import pytest

from artifact.errors import FitDiverged, NegativeTwist
from artifact.geometry import EquivariantBundle, EquivariantLineBundle as E
from artifact.stability import (candidate_slope, chi_v, dyadic, enumerate_candidates, euler_expansion_check,
                                gieseker_compare, stability_verdict, weight_spectrum)
from artifact.weights import constant, exponential, polynomial, sasaki

EQUAL = EquivariantBundle.split([E(1, 0, 1), E(1, 0, 1)])
TWISTED = EquivariantBundle.split([E(1, 0, 1), E(1, -1, 0)])
CLASSICAL = EquivariantBundle.split([E(0, 0, 0), E(2, -1, 1)])
IDENTITY = polynomial([{"c": 0.0, "p": 1.0, "n": 1.0}], validate=False)


def test_candidates():
    assert [c.indices for c in enumerate_candidates(EQUAL) if not c.pruned] == [(0,), (1,)]
    rank3 = EquivariantBundle.split([E(0, 0, 0)] * 3, couplings="none")
    assert len({c.indices for c in enumerate_candidates(rank3)}) == 6


def test_twisted_candidates_never_win():
    v = exponential(1.0)
    for cand in enumerate_candidates(CLASSICAL, v, max_twist=2):
        if cand.pruned:
            base = [c for c in enumerate_candidates(CLASSICAL, v) if c.indices == cand.indices and not c.pruned][0]
            assert cand.slope < base.slope


def test_verdict_examples():
    for v in (constant(), exponential(1.0), sasaki(0.5)):
        assert stability_verdict(EQUAL, v).verdict == "polystable"
        classical = stability_verdict(CLASSICAL, v)
        assert classical.verdict == "unstable" and classical.witness.indices == (1,)
        v0, v1 = v.value(np.array([0.0, 1.0]))
        assert classical.witness.slope == pytest.approx(v0 + v1, abs=1e-14)
    assert stability_verdict(TWISTED, constant()).verdict == "polystable"
    twisted = stability_verdict(TWISTED, exponential(1.0))
    assert twisted.verdict == "unstable" and twisted.witness.indices == (0,)
    assert twisted.witness.slope == pytest.approx(math.e, abs=1e-14)
    assert stability_verdict(EquivariantBundle.split([E(1, 0, 1)]), constant()).verdict == "stable"


def test_candidate_slope_is_the_boundary_formula():
    cand = [c for c in enumerate_candidates(TWISTED) if c.indices == (1,) and not c.pruned][0]
    assert candidate_slope(cand, exponential(2.0)) == pytest.approx(1.0, abs=1e-14)


def test_weight_spectrum_examples():
    assert weight_spectrum(EquivariantBundle.split([E(1, 0, 1)]), 1) == [[0, 1, 2]]
    assert weight_spectrum(EquivariantBundle.split([E(0, 0, 0)]), 2) == [[0, Fraction(1, 2), 1]]
    with pytest.raises(NegativeTwist):
        weight_spectrum(EquivariantBundle.split([E(-3, 0, -3)]), 2)


def test_weight_containment_shrinks():
    b = EquivariantBundle.split([E(2, -1, 1)])
    for k in (4, 16, 64):
        pts = [float(w) for w in weight_spectrum(b, k)[0]]
        assert min(pts) == pytest.approx(-1.0 / k) and max(pts) == pytest.approx(1.0 + 1.0 / k)


@pytest.mark.parametrize("d", [0, 1, 3])
def test_chi_examples(d):
    b = EquivariantBundle.split([E(d, 0, d)])
    for k in (1, 5, 8):
        assert chi_v(b, constant(), k) == pytest.approx(d + k + 1, abs=1e-12)
        assert chi_v(b, IDENTITY, k) == pytest.approx((k + d) * (k + d + 1) / (2 * k), abs=1e-12)
    line = EquivariantBundle.split([E(1, 0, 1)])
    assert chi_v(line, exponential(1.0), 4) == pytest.approx(math.fsum(math.exp(j / 4) for j in range(6)), abs=1e-13)


@pytest.mark.parametrize("d", [0, 2])
def test_euler_expansion_examples(d):
    b = EquivariantBundle.split([E(d, 0, d)])
    s = euler_expansion_check(b, IDENTITY, volume=0.5)
    assert s.A == pytest.approx(0.5, abs=1e-9) and s.B == pytest.approx(d + 0.5, abs=1e-9)
    s = euler_expansion_check(b, constant())
    assert s.exact and s.A == pytest.approx(1.0, abs=1e-12) and s.B == pytest.approx(d + 1.0, abs=1e-9)
    trivial = EquivariantBundle.split([E(0, 0, 0)])
    s = euler_expansion_check(trivial, exponential(1.0))
    assert s.passed
    assert abs(s.B - (1.0 + math.e) / 2.0) <= 5.0 / 64


def test_euler_residuals_decay_like_one_over_k():
    s = euler_expansion_check(CLASSICAL, exponential(1.0), dyadic(64, 1024))
    assert s.passed and abs(s.decay_exponent + 1.0) <= 0.2
    assert len(s.rows()) == 5


def test_euler_fit_needs_a_long_range():
    with pytest.raises(FitDiverged):
        euler_expansion_check(CLASSICAL, constant(), [8, 16, 32])


def test_gieseker_examples():
    assert gieseker_compare(TWISTED, exponential(1.0)).verdict == "gieseker-unstable"
    assert gieseker_compare(TWISTED, constant()).verdict == "equal through O(1), refine"
    assert gieseker_compare(CLASSICAL, constant()).verdict == "gieseker-unstable"
    assert gieseker_compare(EquivariantBundle.split([E(1, 0, 1), E(0, 0, 0)], couplings="none"),
                            constant()).verdict == "gieseker-unstable"


def test_slope_instability_implies_gieseker_instability():
    for b in (TWISTED, CLASSICAL, EquivariantBundle.split([E(3, 0, 3), E(0, 4, 4)])):
        for v in (exponential(1.0), sasaki(0.5)):
            verdict = stability_verdict(b, v)
            if verdict.verdict != "unstable":
                continue
            report = gieseker_compare(b, v)
            entry = [e for e in report.entries if tuple(e["indices"]) == verdict.witness.indices][0]
            assert entry["eventual"] == "destabilizes"
