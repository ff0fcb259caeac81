"""Weighted Donaldson functional by integrating its first variation along paths.

The value M_v(h, h_ref) is the integral over t of

    int tr(h_t^{-1} dh_t/dt (K_v(h_t) - c_v Id)) dmu

along a path from h_ref to h.  The sign is fixed so that the functional is
convex along geodesics h_t = h exp(t Psi) with the profile convention
K_v(e^u h) = K_v(h) + Delta_v u / 2 pi.  Paths are piecewise geodesic
(default) or linear in the metric matrix; every evaluation batches all
quadrature nodes of a leg into one curvature computation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import EquivariantBundle, MetricProfile, metric_from_matrix
from .solver import _System, _herm
from .weights import WeightFunction
from .weights import constant as constant_weight


@dataclass
class DonaldsonEvaluation:
    path: list
    value: float
    derivative_samples: list = field(default_factory=list)
    second_differences: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "value": self.value,
            "derivative_samples": self.derivative_samples,
            "second_differences": self.second_differences,
        }


def _unitary_pair(system: _System, G0, G1):
    """Cholesky factor C of G0 and the eigendecomposition of C^{-1} G1 C^{-H}."""
    fr = system.fr
    G0u = fr.unitary(G0)
    G1u = fr.unitary(G1)
    C = np.linalg.cholesky(0.5 * (G0u + _herm(G0u)))
    Cinv = np.linalg.inv(C)
    S = Cinv @ G1u @ _herm(Cinv)
    lam, Q = np.linalg.eigh(0.5 * (S + _herm(S)))
    return C, Cinv, lam, Q


class _Geodesic:
    """h_t = h0 exp(t Psi) with Psi = log(h0^{-1} h1); both stored as G matrices."""

    def __init__(self, system: _System, G0, G1=None, psi_unitary=None):
        self.system = system
        fr = system.fr
        G0u = fr.unitary(G0)
        self.C = np.linalg.cholesky(0.5 * (G0u + _herm(G0u)))
        if psi_unitary is None:
            _, _, lam, Q = _unitary_pair(system, G0, G1)
            self.lam_log, self.Q = np.log(lam), Q
        else:
            P = 0.5 * (psi_unitary + _herm(psi_unitary))
            self.lam_log, self.Q = np.linalg.eigh(P)
        Ch = _herm(self.C)
        # Psi in the H_can-unitary frame: C^{-H} Q log(lam) Q^H C^H
        Psi_u = np.linalg.solve(Ch, (self.Q * self.lam_log[..., None, :]) @ _herm(self.Q) @ Ch)
        self.psi = fr.from_unitary(Psi_u)

    def metrics(self, ts):
        ts = np.asarray(ts, dtype=float)
        E = np.exp(ts[:, None, None] * self.lam_log[None])
        Gu = self.C @ ((self.Q * E[..., None, :]) @ _herm(self.Q)) @ _herm(self.C)
        Gu = 0.5 * (Gu + _herm(Gu))
        return self.system.fr.from_unitary(Gu)

    def rates(self, ts):
        return np.broadcast_to(self.psi, (len(ts),) + self.psi.shape)


class _Linear:
    def __init__(self, system: _System, G0, G1):
        self.G0, self.G1 = G0, G1
        self.dG = G1 - G0
        self.system = system

    def metrics(self, ts):
        ts = np.asarray(ts, dtype=float)[:, None, None, None]
        return (1.0 - ts) * self.G0[None] + ts * self.G1[None]

    def rates(self, ts):
        G = self.metrics(ts)
        return np.linalg.solve(G, np.broadcast_to(self.dG, G.shape))


def _derivative(system: _System, leg, ts) -> np.ndarray:
    """First variation at the parameters ``ts`` of one leg."""
    G = leg.metrics(ts)
    K, _ = system.contraction(G)
    R = leg.rates(ts)
    integrand = np.trace(R @ (K - system.c * system.eye), axis1=-2, axis2=-1).real
    return system.geom.integrate(integrand.T)


def _leg_value(system: _System, leg, nodes: int) -> tuple:
    x, w = np.polynomial.legendre.leggauss(nodes)
    ts = 0.5 * (x + 1.0)
    d = _derivative(system, leg, ts)
    return float(np.dot(0.5 * w, d)), ts, d


def _matrix(m):
    return m.matrix() if isinstance(m, MetricProfile) else np.asarray(m)


def donaldson_functional(bundle: EquivariantBundle, v: WeightFunction, h, h_ref, path="geodesic",
                         via=(), nodes: int = 24, samples: int = 0) -> DonaldsonEvaluation:
    """M_v(h, h_ref) along a path from h_ref through ``via`` to h.

    ``path`` is "geodesic" (piecewise geodesic through the via points) or
    "linear" (piecewise linear in the metric matrix).  With ``samples > 0``
    and a single geodesic leg, the value is also tabulated at equally spaced
    t and the second differences are reported.
    """
    geom = (h.geom if isinstance(h, MetricProfile) else h_ref.geom)
    system = _System(bundle, v, geom)
    points = [_matrix(h_ref)] + [_matrix(p) for p in via] + [_matrix(h)]
    make = _Geodesic if path == "geodesic" else _Linear
    total, derivs, desc = 0.0, [], []
    for k, (a, b) in enumerate(zip(points[:-1], points[1:])):
        leg = make(system, a, b)
        val, ts, d = _leg_value(system, leg, nodes)
        total += val
        derivs += [{"leg": k, "t": float(t), "derivative": float(x)} for t, x in zip(ts, d)]
        desc.append({"leg": k, "kind": path, "value": val})
    second = []
    if samples > 0 and len(points) == 2:
        leg = make(system, points[0], points[1])
        second = _second_differences(system, leg, samples, nodes)
    return DonaldsonEvaluation(desc, total, derivs, second)


def _cumulative(system, leg, grid, nodes):
    x, w = np.polynomial.legendre.leggauss(nodes)
    vals = [0.0]
    for a, b in zip(grid[:-1], grid[1:]):
        ts = a + (b - a) * 0.5 * (x + 1.0)
        vals.append(vals[-1] + 0.5 * (b - a) * float(np.dot(w, _derivative(system, leg, ts))))
    return np.array(vals)


def _second_differences(system, leg, samples, nodes):
    grid = np.linspace(0.0, 1.0, samples + 1)
    M = _cumulative(system, leg, grid, nodes)
    return (M[2:] - 2.0 * M[1:-1] + M[:-2]).tolist()


def geodesic_profile(bundle, v, h: MetricProfile, psi_unitary, t_max: float = 1.0,
                     samples: int = 10, nodes: int = 16):
    """Values of t -> M_v(h exp(t Psi), h) and their second differences.

    ``psi_unitary`` is Psi written in the h-unitary frame (a Hermitian matrix
    profile), which makes h exp(t Psi) positive for every t.
    """
    system = _System(bundle, v, h.geom)
    leg = _Geodesic(system, h.matrix(), psi_unitary=psi_unitary)
    grid = np.linspace(0.0, t_max, samples + 1)
    M = _cumulative(system, leg, grid, nodes)
    return grid, M, M[2:] - 2.0 * M[1:-1] + M[:-2]


def random_direction(bundle, geom, rng, scale: float = 0.5, degree: int = 3) -> np.ndarray:
    """Random smooth Hermitian profile respecting the coupling pattern."""
    r = bundle.rank
    basis = np.stack([geom.mu**p for p in range(degree + 1)], axis=1)
    P = np.zeros((geom.n, r, r), dtype=complex)
    for i in range(r):
        P[:, i, i] = basis @ (scale * rng.standard_normal(degree + 1))
    mu = geom.mu
    for c in bundle.couplings:
        b = basis @ (scale * (rng.standard_normal(degree + 1) + 1j * rng.standard_normal(degree + 1)))
        # the unitary-frame off-diagonal entry of a smooth invariant endomorphism
        # vanishes like |s|; impose that factor explicitly
        amp = np.sqrt(mu ** c.k * (1.0 - mu) ** c.k_prime)
        P[:, c.target, c.source] = amp * b
        P[:, c.source, c.target] = np.conj(amp * b)
    return P


def geodesic_point(bundle, v, h: MetricProfile, psi_unitary, t: float) -> MetricProfile:
    system = _System(bundle, v, h.geom)
    leg = _Geodesic(system, h.matrix(), psi_unitary=psi_unitary)
    return metric_from_matrix(bundle, h.geom, leg.metrics([t])[0])


def first_variation(bundle, v, h: MetricProfile, psi_unitary) -> float:
    """Derivative at t = 0 of M_v(h exp(t Psi), h)."""
    system = _System(bundle, v, h.geom)
    leg = _Geodesic(system, h.matrix(), psi_unitary=psi_unitary)
    return float(_derivative(system, leg, [0.0])[0])


def scale_discrepancy(h1: MetricProfile, h2: MetricProfile) -> tuple:
    """Distance of h1^{-1} h2 from a constant multiple of the identity.

    Returns (log scale, max pointwise deviation of log(h1^{-1} h2) from that
    scale in the h1-unitary frame).
    """
    bundle, geom = h1.bundle, h1.geom
    system = _System(bundle, constant_weight(), geom)
    _, _, lam, _ = _unitary_pair(system, h1.matrix(), h2.matrix())
    logs = np.log(lam)
    c = float(geom.integrate(logs.mean(axis=1)) / geom.integrate(np.ones(geom.n)))
    return c, float(np.max(np.abs(logs - c)))
