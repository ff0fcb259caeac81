"""Curvature diagnostics: Lubke inequality, exponential Yang-Mills identity,
vortex residual and the extension-of-tangent-bundle check on the sphere.

All curvature quantities are in i/2pi units on the model (volume 1), so the
mean curvature rho integrates to the degree and K_v = v rho + v' phi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .errors import PreconditionWeight, WrongFamily
from .geometry import (EndomorphismProfile, EquivariantBundle, EquivariantLineBundle, MetricProfile,
                       curvature_package, geometry, weighted_contraction)
from .intersections import TANGENT, char_square_numbers, delta_v, fano_volume, weighted_slope
from .solver import discrete_einstein_constant
from .weights import WeightFunction, constant, hessian_condition_check


def _tr(M):
    return np.real(np.trace(M, axis1=-2, axis2=-1))


def _trace_free(M):
    r = M.shape[-1]
    return M - (_tr(M) / r)[..., None, None] * np.eye(r)


def _sq(M):
    """Pointwise tr(M M) for an h-self-adjoint profile, i.e. its squared h-norm."""
    return _tr(M @ M)


# ---------------------------------------------------------------------------
# Lubke


@dataclass
class LubkeReport:
    rank: int
    c1sq: float
    ch2: float
    c2: float
    lhs: float
    rhs: float
    delta: float
    delta_profile: float
    holds: bool
    equality: bool
    trace_free_rho: float
    trace_free_phi: float
    projectively_flat: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _delta_profile(bundle, metric: MetricProfile, v: WeightFunction) -> float:
    """Delta(v) from the pointwise identity in rho, phi and K_v.

    Delta = int <(tr phi)^2 - r tr phi^2, (log v)''> v + r int v tr(rho°^2)
            - r int tr(K°^2) / v
    """
    geom = metric.geom
    mu = geom.mu
    pkg = curvature_package(bundle, metric)
    r = bundle.rank
    vv, d1, d2 = v.value(mu), v.grad(mu), v.hess(mu)
    K = weighted_contraction(pkg, v).values
    logh = d2 / vv - (d1 / vv) ** 2
    hess_term = (_tr(pkg.phi) ** 2 - r * _sq(pkg.phi)) * logh * vv
    rho0, K0 = _trace_free(pkg.rho), _trace_free(K)
    return float(geom.integrate(hess_term + r * vv * _sq(rho0) - r * _sq(K0) / vv))


def lubke_report(bundle: EquivariantBundle, metric: MetricProfile, v: WeightFunction, n: int = 1,
                 tol: float = 1e-8) -> LubkeReport:
    """Both sides of (r-1)(c1^2 . v) <= 2r (c2 . v) with the equality-case flags."""
    check = hessian_condition_check(v, n)
    if not check.holds:
        raise PreconditionWeight(
            f"weight {v.label()} violates v'' - ((n+1)/n) v'^2/v <= 0 (max {check.max_margin:.3g})")
    r = bundle.rank
    c1sq, ch2, c2 = char_square_numbers(bundle, metric, v)
    lhs, rhs = (r - 1) * c1sq, 2 * r * c2
    delta = delta_v(c1sq, ch2, r)
    pkg = curvature_package(bundle, metric)
    tf_rho = float(np.max(np.sqrt(np.maximum(_sq(_trace_free(pkg.rho)), 0.0))))
    tf_phi = float(np.max(np.sqrt(np.maximum(_sq(_trace_free(pkg.phi)), 0.0))))
    return LubkeReport(
        rank=r, c1sq=c1sq, ch2=ch2, c2=c2, lhs=lhs, rhs=rhs, delta=delta,
        delta_profile=_delta_profile(bundle, metric, v),
        holds=bool(lhs <= rhs + tol), equality=bool(abs(delta) <= tol),
        trace_free_rho=tf_rho, trace_free_phi=tf_phi,
        projectively_flat=bool(max(tf_rho, tf_phi) <= math.sqrt(tol)),
    )


# ---------------------------------------------------------------------------
# Yang-Mills


@dataclass
class YangMillsReport:
    xi: float
    rank: int
    trace_free_energy: float
    delta: float
    ym_over_4pi2: float
    identity_residual: float
    lower_bound: float
    bound_gap: float

    def to_dict(self) -> dict:
        return asdict(self)


def yang_mills_report(bundle: EquivariantBundle, metric: MetricProfile, v: WeightFunction) -> YangMillsReport:
    """int |K°|^2 / v + Delta / r against YM / 4 pi^2 for v = exp(xi mu).

    YM / 4 pi^2 = int v tr(rho°^2) since F_h = -2 pi i F_E and on a curve the
    pointwise norm of a (1,1)-form is its contraction.
    """
    if v.family not in ("exp", "constant") or (v.family == "constant" and v.params["c"] != 1.0):
        raise WrongFamily(f"Yang-Mills identity needs v = exp(xi mu), got {v.label()}")
    xi = float(v.params.get("t", 0.0))
    geom = metric.geom
    mu = geom.mu
    r = bundle.rank
    pkg = curvature_package(bundle, metric)
    vv = v.value(mu)
    K0 = _trace_free(weighted_contraction(pkg, v).values)
    energy = float(geom.integrate(_sq(K0) / vv))
    ym = float(geom.integrate(vv * _sq(_trace_free(pkg.rho))))
    c1sq, ch2, _ = char_square_numbers(bundle, metric, v)
    delta = delta_v(c1sq, ch2, r)
    return YangMillsReport(
        xi=xi, rank=r, trace_free_energy=energy, delta=delta, ym_over_4pi2=ym,
        identity_residual=abs(energy + delta / r - ym),
        lower_bound=delta / r, bound_gap=ym - delta / r,
    )


# ---------------------------------------------------------------------------
# vortex


def vortex_residual(bundle: EquivariantBundle, metric: MetricProfile, v: WeightFunction, section,
                    tau: float | None = None, w: WeightFunction | None = None) -> EndomorphismProfile:
    """2 pi K_v / v - (log w)'' phi* (x) phi - tau Id on the grid.

    ``section`` holds the e'-frame components of phi(xi) with shape (n, r);
    phi* (x) phi acts by s -> h(s, phi) phi, i.e. the matrix phi phi^H H.
    The default tau is 2 pi times the discrete Einstein constant and the
    default w is v.
    """
    geom = metric.geom
    mu = geom.mu
    w = v if w is None else w
    if tau is None:
        tau = 2.0 * math.pi * discrete_einstein_constant(bundle, v, geom)
    pkg = curvature_package(bundle, metric)
    K = weighted_contraction(pkg, v).values
    vv = v.value(mu)
    logw2 = w.hess(mu) / w.value(mu) - (w.grad(mu) / w.value(mu)) ** 2
    phi = np.asarray(section, dtype=complex).reshape(geom.n, bundle.rank)
    H = np.exp(bundle.log_h_can(mu))[:, :, None] * metric.matrix()
    coupling = phi[:, :, None] * (np.conj(phi)[:, None, :] @ H)
    R = 2.0 * math.pi * K / vv[:, None, None] - logw2[:, None, None] * coupling
    R = R - tau * np.eye(bundle.rank)
    return EndomorphismProfile(R, True)


def section_is_holomorphic(section, geom=None, tol: float = 1e-10) -> bool:
    """Invariant sections are holomorphic iff their e'-frame components are constant."""
    phi = np.asarray(section, dtype=complex)
    geom = geom or geometry(phi.shape[0])
    return bool(np.max(np.abs(geom.D @ phi)) <= tol) if phi.size else True


# ---------------------------------------------------------------------------
# extension of the tangent bundle by the trivial line (xi = 0)


EXTENSION = EquivariantBundle.split([TANGENT, EquivariantLineBundle(0, 0, 0)], couplings="none")
OMEGA_RATIO = 1.0 / math.pi  # h_omega / H_can on the tangent summand


def prescribed_gamma(n: int = 1) -> float:
    """gamma with gamma^2 = 2 pi/(n+1) * (e^{c1})(0) / (c1^n / n!)."""
    return math.sqrt(2.0 * math.pi / (n + 1) * fano_volume(0.0) / 2.0)


@dataclass
class ExtensionReport:
    gamma: float
    residual: float
    diagonal_residual: float
    offdiagonal_residual: float
    target: list
    trace_integral: float
    slope: float
    slope_expected: float

    def to_dict(self) -> dict:
        return asdict(self)


def extension_soliton_check(gamma: float, grid: int = 64, f=None, u=None, n: int = 1) -> ExtensionReport:
    """Residual of the explicit metric e^f h_omega (+) e^u on the extension.

    With the defaults f = u = 0 (the xi = 0 prescription f = 2 mu_xi,
    u = mu_xi) the contraction in the Fano normalization (volume 2, so half
    of the model contraction) must equal diag(1 - g/2pi, n g/2pi) with
    g = gamma^2.  The off-diagonal part is gamma d(u - f) up to a constant.
    """
    geom = geometry(grid)
    f = np.zeros(geom.n) if f is None else np.asarray(f, dtype=float)
    u = np.zeros(geom.n) if u is None else np.asarray(u, dtype=float)
    g2 = gamma * gamma
    diag = np.stack([OMEGA_RATIO * np.exp(f), np.exp(u)], axis=1)
    metric = MetricProfile(EXTENSION, geom, diag, {})
    rho = curvature_package(EXTENSION, metric).rho
    e = np.exp(u - f)
    block_t = 0.5 * rho[:, 0, 0].real - g2 / (2.0 * math.pi) * e
    block_o = 0.5 * rho[:, 1, 1].real + n * g2 / (2.0 * math.pi) * e
    target_t, target_o = 1.0 - g2 / (2.0 * math.pi), n * g2 / (2.0 * math.pi)
    diag_res = float(max(np.max(np.abs(block_t - target_t)), np.max(np.abs(block_o - target_o))))
    off_res = float(abs(gamma) / (2.0 * math.pi) * np.max(np.abs(geom.D @ (u - f))))
    trace_integral = float(2.0 * geom.integrate(n * block_t + block_o))
    slope = weighted_slope(EXTENSION, constant(), fourier=False)
    return ExtensionReport(
        gamma=float(gamma), residual=max(diag_res, off_res), diagonal_residual=diag_res,
        offdiagonal_residual=off_res, target=[target_t, target_o], trace_integral=trace_integral,
        slope=float(slope), slope_expected=n / (n + 1.0) * fano_volume(0.0),
    )
