import math

import numpy as np
import pytest

from artifact.errors import ConfigError, DeformationStuck, NewtonDiverged, NotSolvable
from artifact.geometry import (EndomorphismProfile, EquivariantBundle, EquivariantLineBundle as E, geometry,
                               inverse_and_logdet, frame, random_metric, reference_metric, weighted_laplacian,
                               weighted_laplacian_matrix)
from artifact.solver import (SolverConfig, closed_form_moment, continuity_run, discrete_einstein_constant,
                             line_bundle_whe, log_endomorphism, moment_profile, perturbed_operator, starting_point,
                             weight_deformation_run, weighted_laplace_solve, whe_residual)
from artifact.weights import constant, exponential, sasaki

G64 = geometry(64)


def split(*lines, couplings="auto"):
    return EquivariantBundle.split(list(lines), couplings=couplings)


def test_laplace_solve_examples():
    assert np.max(np.abs(weighted_laplace_solve(constant(), np.zeros(G64.n), G64))) < 1e-14
    f = weighted_laplace_solve(constant(), 4.0 * math.pi * (G64.mu - 0.5), G64)
    assert np.max(np.abs(f - (G64.mu - 0.5))) < 1e-10


def test_laplace_solve_manufactured_solution():
    v = exponential(1.0)
    target = np.cos(3.0 * G64.mu)
    target -= float(G64.integrate(target))
    g = weighted_laplacian(v, target, G64)
    assert np.max(np.abs(weighted_laplace_solve(v, g, G64) - target)) < 1e-8


def test_laplace_solve_rejects_non_zero_mean():
    with pytest.raises(NotSolvable):
        weighted_laplace_solve(constant(), np.ones(G64.n), G64)


@pytest.mark.parametrize("line, v, cv", [
    (E(1, 0, 1), constant(), 1.0),
    (E(1, 0, 1), exponential(1.0), math.e),
    (E(0, 1, 1), exponential(1.0), math.e - 1.0),
])
def test_line_bundle_closed_forms(line, v, cv):
    b = split(line)
    metric = line_bundle_whe(b, v, G64)
    phi = moment_profile(metric)[:, 0, 0].real
    assert np.max(np.abs(phi - closed_form_moment(line, v, G64.mu))) < 1e-7
    assert whe_residual(b, metric, v) < 1e-8
    assert discrete_einstein_constant(b, v, G64) == pytest.approx(cv, abs=1e-12)
    assert G64.endpoint_values(phi)[1] == pytest.approx(line.w1, abs=1e-9)


def test_fubini_study_and_exponential_profiles():
    mu = G64.mu
    assert np.allclose(closed_form_moment(E(1, 0, 1), constant(), mu), mu, atol=1e-15)
    assert np.allclose(closed_form_moment(E(1, 0, 1), exponential(1.0), mu), math.e * mu * np.exp(-mu), atol=1e-14)
    assert np.allclose(closed_form_moment(E(0, 1, 1), exponential(1.0), mu),
                       ((math.e - 1.0) * mu + 1.0) * np.exp(-mu), atol=1e-14)


def test_perturbed_operator_at_identity_is_the_trace_free_curvature():
    b = split(E(0, 0, 0), E(2, -1, 1))
    h0 = reference_metric(b, G64)
    eye = EndomorphismProfile(np.broadcast_to(np.eye(2), (G64.n, 2, 2)).astype(complex), True)
    a = perturbed_operator(b, constant(), eye, 0.0, h0).values
    c = perturbed_operator(b, constant(), eye, 0.7, h0).values
    assert np.max(np.abs(a - c)) < 1e-14
    assert abs(float(G64.integrate(np.real(np.trace(a, axis1=1, axis2=2))))) < 1e-10


def test_perturbed_operator_scalar_reduction():
    b = split(E(1, 0, 1))
    h0 = reference_metric(b, G64)
    u = 0.3 * np.sin(3.0 * G64.mu) + 0.2 * G64.mu**2
    one = EndomorphismProfile(np.ones((G64.n, 1, 1), dtype=complex), True)
    K0 = perturbed_operator(b, constant(), one, 0.0, h0).values[:, 0, 0].real
    f = EndomorphismProfile(np.exp(u)[:, None, None].astype(complex), True)
    got = perturbed_operator(b, constant(), f, 0.4, h0).values[:, 0, 0].real
    expected = K0 + weighted_laplacian_matrix(G64, np.ones(G64.n)) @ u / (2.0 * math.pi) + 0.4 * u
    assert np.max(np.abs(got - expected)) < 1e-9


def test_trace_identity_for_coupled_bundles():
    b = split(E(0, 0, 0), E(2, -1, 1))
    v = exponential(1.0)
    h0, _, _ = starting_point(b, v, SolverConfig(init="random", seed=2))
    m = random_metric(b, G64, np.random.default_rng(0))
    f = EndomorphismProfile(np.linalg.solve(h0.matrix(), m.matrix()), True)
    L = perturbed_operator(b, v, f, 0.3, h0).values
    tr_log = np.trace(log_endomorphism(b, f, h0, v), axis1=1, axis2=2).real
    fr = frame(b, G64)
    _, ld0 = inverse_and_logdet(fr, h0.matrix())
    _, ld1 = inverse_and_logdet(fr, m.matrix())
    assert np.max(np.abs(tr_log - (ld1 - ld0))) < 1e-10
    lap = weighted_laplacian_matrix(G64, v.value(G64.mu))
    assert np.max(np.abs(np.trace(L, axis1=1, axis2=2).real - (lap @ tr_log / (2.0 * math.pi) + 0.3 * tr_log))) < 1e-8


def test_start_solves_the_epsilon_one_equation():
    b = split(E(0, 0, 0), E(2, -1, 1))
    h0, f1, _ = starting_point(b, constant(), SolverConfig(init="random", seed=1))
    assert np.max(np.abs(perturbed_operator(b, constant(), f1, 1.0, h0).values)) < 1e-8


def test_continuity_converges_on_equal_lifts():
    b = split(E(1, 0, 1), E(1, 0, 1))
    v = exponential(1.0)
    out = continuity_run(b, v, SolverConfig(init="random", seed=5))
    assert out.status == "converged" and out.final_residual < 1e-8
    phi = moment_profile(out.metric)
    for i in range(2):
        assert np.max(np.abs(phi[:, i, i].real - closed_form_moment(E(1, 0, 1), v, G64.mu))) < 1e-7
    assert not out.violations
    assert all(row["det_error"] < 1e-9 for row in out.trail)


def test_continuity_finds_the_classical_destabilizer():
    b = split(E(0, 0, 0), E(2, -1, 1))
    out = continuity_run(b, constant(), SolverConfig(init="random", seed=3))
    assert out.status == "destabilized"
    assert out.projector["image"] == [1] and out.projector["rank"] == 1
    assert out.projector["image_slope"] == pytest.approx(2.0)


def test_continuity_finds_the_weight_twisted_destabilizer():
    b = split(E(1, 0, 1), E(1, -1, 0))
    out = continuity_run(b, exponential(1.0), SolverConfig(init="random", seed=3))
    assert out.status == "destabilized"
    assert out.projector["image"] == [0]
    assert out.projector["image_slope"] == pytest.approx(math.e)


def test_newton_failure_is_distinct_from_destabilization():
    # a single Newton step per solve cannot track the schedule from a rough start
    b = split(E(1, 0, 1), E(1, 0, 1))
    cfg = SolverConfig(init="random", seed=1, init_amplitude=2.0, max_newton=1, newton_tol=1e-14)
    with pytest.raises(NewtonDiverged) as info:
        continuity_run(b, exponential(1.0), cfg)
    assert info.value.last_state is None or info.value.last_state.m_eps <= 1.0


def test_solver_config_validation():
    with pytest.raises(ConfigError):
        SolverConfig(eps_ratio=1.5)
    with pytest.raises(ConfigError):
        SolverConfig(init="zero")
    schedule = SolverConfig(eps_floor=0.1).schedule()
    assert schedule[0] == 1.0 and schedule[-1] == 0.1
    assert all(a > b for a, b in zip(schedule, schedule[1:]))


def test_deformation_examples():
    b = split(E(1, 0, 1))
    res = weight_deformation_run(b, exponential, 0.0, 1.0)
    phi = moment_profile(res.metrics[-1])[:, 0, 0].real
    assert res.t_values[-1] == 1.0
    assert np.max(np.abs(phi - closed_form_moment(E(1, 0, 1), exponential(1.0), G64.mu))) < 1e-7
    assert max(res.residuals) < 1e-8

    res = weight_deformation_run(b, lambda t: sasaki(1.0, 1.0, t), 0.0, 0.5)
    for t, metric in zip(res.t_values, res.metrics):
        phi = moment_profile(metric)[:, 0, 0].real
        assert np.max(np.abs(phi - closed_form_moment(E(1, 0, 1), sasaki(1.0, 1.0, t), G64.mu))) < 1e-7

    start = line_bundle_whe(b, constant(), G64)
    same = weight_deformation_run(b, exponential, 0.0, 0.0, initial=start)
    assert same.metrics == [start]


def test_deformation_reports_stuck_steps():
    b = split(E(1, 0, 1))
    with pytest.raises(DeformationStuck) as info:
        weight_deformation_run(b, exponential, 0.0, 1.0, max_newton=0, min_step=0.1)
    assert info.value.last_t == 0.0


def test_accepted_states_have_unit_determinant_pointwise():
    # near blow-up the eigenvalue route measured |det f - 1| above 1e-9 for seed 3
    b = split(E(0, 0, 0), E(2, -1, 1))
    out = continuity_run(b, constant(), SolverConfig(init="random", seed=3))
    assert out.status == "destabilized" and not out.violations
    assert max(row["det_error"] for row in out.trail) < 1e-10
