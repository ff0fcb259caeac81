"""Model geometry: the round sphere of area 1 in momentum coordinates.

Everything lives on the interval mu in [0, 1].  Profiles are sampled at
Gauss-Legendre nodes, so the endpoints (the two fixed points of the circle
action) are never grid points; their values are recovered by barycentric
interpolation.

Bundle data is stored in an invariant meromorphic frame e' in which the
canonical split reference metric is diagonal,

    H_can,i(mu) = mu**(-w0_i) * (1 - mu)**(w1_i),

and its moment map is the affine profile w0_i + d_i * mu.  A general invariant
metric is written H = H_can @ G where G is a matrix profile gated by the
coupling table.  All curvature quantities are endomorphisms in that frame, in
units of i/2pi.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigError, NonPositiveMetric

DEFAULT_GRID = 64


class MomentumGeometry:
    """Quadrature grid on [0, 1] with spectral differentiation.

    ``D`` is the collocation derivative (exact on polynomials of degree < n).
    ``D_flux`` is its weak counterpart -W^{-1} D^T W; applied to profiles of
    the form sigma * p it returns the L2 projection of the derivative, which
    keeps the degenerate endpoint factor out of any boundary condition and
    makes every flux term integrate to exactly zero.
    """

    def __init__(self, n: int = DEFAULT_GRID):
        if n < 4:
            raise ConfigError("grid needs at least 4 nodes", field="grid")
        x, w = np.polynomial.legendre.leggauss(n)
        self.n = n
        self.x = x
        self.mu = 0.5 * (x + 1.0)
        self.weights = 0.5 * w
        self.sigma = self.mu * (1.0 - self.mu)

        lam = np.sqrt((1.0 - x**2) * w)
        lam[1::2] *= -1.0
        self._bary = lam
        diff = x[:, None] - x[None, :]
        np.fill_diagonal(diff, 1.0)
        Dx = (lam[None, :] / lam[:, None]) / diff
        np.fill_diagonal(Dx, 0.0)
        np.fill_diagonal(Dx, -Dx.sum(axis=1))
        self.D = 2.0 * Dx
        self.D_flux = -(self.D.T * self.weights[None, :]) / self.weights[:, None]

    # -- basic calculus -------------------------------------------------
    def integrate(self, f):
        """Quadrature over the first axis."""
        return np.tensordot(self.weights, np.asarray(f), axes=(0, 0))

    def deriv(self, f):
        return np.tensordot(self.D, np.asarray(f), axes=(1, 0))

    def flux_deriv(self, f):
        return np.tensordot(self.D_flux, np.asarray(f), axes=(1, 0))

    def interpolate(self, f, points):
        """Barycentric interpolation of nodal values (first axis) at ``points``."""
        f = np.asarray(f)
        pts = np.atleast_1d(np.asarray(points, dtype=float))
        t = 2.0 * pts - 1.0
        diff = t[:, None] - self.x[None, :]
        exact = np.isclose(diff, 0.0, atol=1e-15, rtol=0.0)
        diff[exact] = 1.0
        c = self._bary[None, :] / diff
        c = c / c.sum(axis=1, keepdims=True)
        rows, cols = np.nonzero(exact)
        c[rows, :] = 0.0
        c[rows, cols] = 1.0
        return np.tensordot(c, f, axes=(1, 0))

    def endpoint_values(self, f):
        vals = self.interpolate(f, [0.0, 1.0])
        return vals[0], vals[1]

    def inner(self, f, g):
        return float(np.real(self.integrate(np.conj(f) * g)))


@lru_cache(maxsize=16)
def geometry(n: int = DEFAULT_GRID) -> MomentumGeometry:
    return MomentumGeometry(n)


# ---------------------------------------------------------------------------
# bundles


@dataclass(frozen=True)
class EquivariantLineBundle:
    degree: int
    w0: int
    w1: int

    def __post_init__(self):
        for name in ("degree", "w0", "w1"):
            if int(getattr(self, name)) != getattr(self, name):
                raise ConfigError(f"{name} must be an integer", field=name)
        if self.w1 - self.w0 != self.degree:
            raise ConfigError(
                f"lift weights ({self.w0},{self.w1}) incompatible with degree {self.degree}",
                field="weights",
            )

    @property
    def lift_weights(self):
        return (self.w0, self.w1)

    def label(self) -> str:
        return f"O({self.degree})({self.w0},{self.w1})"

    def twisted(self, m0: int, m1: int) -> "EquivariantLineBundle":
        """Sub-line-bundle vanishing to order m0 at mu=0 and m1 at mu=1."""
        return EquivariantLineBundle(self.degree - m0 - m1, self.w0 + m0, self.w1 - m1)


@dataclass(frozen=True)
class Coupling:
    """Invariant homomorphism L_source -> L_target (monomial z**k)."""

    source: int
    target: int
    k: int
    k_prime: int

    def norm_sq(self, mu):
        mu = np.asarray(mu, dtype=float)
        return mu**self.k * (1.0 - mu) ** self.k_prime


def coupling_between(a: EquivariantLineBundle, b: EquivariantLineBundle):
    """Return (k, k') if an invariant homomorphism a -> b exists, else None."""
    k = a.w0 - b.w0
    gap = b.degree - a.degree
    if 0 <= k <= gap and gap - k == b.w1 - a.w1:
        return k, gap - k
    return None


@dataclass(frozen=True)
class EquivariantBundle:
    summands: tuple
    couplings: tuple = field(default=())

    def __post_init__(self):
        if len(self.summands) < 1:
            raise ConfigError("bundle needs at least one summand", field="summands")
        seen = set()
        for c in self.couplings:
            pair = frozenset((c.source, c.target))
            if c.source == c.target or pair in seen:
                raise ConfigError(f"duplicate or diagonal coupling {c}", field="couplings")
            seen.add(pair)
            kk = coupling_between(self.summands[c.source], self.summands[c.target])
            if kk != (c.k, c.k_prime):
                raise ConfigError(f"coupling {c.source}->{c.target} is not admissible", field="couplings")

    @classmethod
    def split(cls, summands, couplings="auto"):
        summands = tuple(summands)
        if couplings == "auto":
            found = []
            for i, j in itertools.permutations(range(len(summands)), 2):
                kk = coupling_between(summands[i], summands[j])
                if kk is None:
                    continue
                if any({c.source, c.target} == {i, j} for c in found):
                    continue
                found.append(Coupling(i, j, *kk))
            return cls(summands, tuple(found))
        if couplings in (None, "none"):
            return cls(summands, ())
        out = []
        for entry in couplings:
            if isinstance(entry, dict):
                i, j = entry.get("source"), entry.get("target")
            else:
                i, j = entry
            if not (isinstance(i, int) and isinstance(j, int)) or not (
                0 <= i < len(summands) and 0 <= j < len(summands)
            ):
                raise ConfigError(f"coupling indices out of range: {entry}", field="couplings")
            kk = coupling_between(summands[i], summands[j])
            if kk is None:
                raise ConfigError(f"coupling {i}->{j} is not admissible", field="couplings")
            out.append(Coupling(i, j, *kk))
        return cls(summands, tuple(out))

    @classmethod
    def from_spec(cls, spec: dict) -> "EquivariantBundle":
        try:
            summands = [
                EquivariantLineBundle(int(s["degree"]), int(s["weights"][0]), int(s["weights"][1]))
                for s in spec["summands"]
            ]
        except (KeyError, IndexError, TypeError) as exc:
            raise ConfigError(f"malformed summand: {exc}", field="summands") from None
        return cls.split(summands, spec.get("couplings", "auto"))

    def to_spec(self) -> dict:
        return {
            "summands": [{"degree": s.degree, "weights": [s.w0, s.w1]} for s in self.summands],
            "couplings": [[c.source, c.target] for c in self.couplings],
        }

    @property
    def rank(self) -> int:
        return len(self.summands)

    @property
    def degree(self) -> int:
        return sum(s.degree for s in self.summands)

    def label(self) -> str:
        return " + ".join(s.label() for s in self.summands)

    def mask(self) -> np.ndarray:
        r = self.rank
        m = np.eye(r, dtype=bool)
        for c in self.couplings:
            m[c.source, c.target] = m[c.target, c.source] = True
        return m

    def mask_closed(self) -> bool:
        """True if masked matrices form an algebra (needed by the solver)."""
        m = self.mask().astype(int)
        return bool(np.all((m @ m > 0) <= (m > 0)))

    def sub(self, indices) -> "EquivariantBundle":
        indices = list(indices)
        return EquivariantBundle.split([self.summands[i] for i in indices], couplings="none")

    # -- canonical reference data ------------------------------------------
    def log_h_can(self, mu) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        w0 = np.array([s.w0 for s in self.summands], dtype=float)
        w1 = np.array([s.w1 for s in self.summands], dtype=float)
        return -w0[None, :] * np.log(mu)[:, None] + w1[None, :] * np.log1p(-mu)[:, None]

    def canonical_moment(self, mu) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        w0 = np.array([s.w0 for s in self.summands], dtype=float)
        d = np.array([s.degree for s in self.summands], dtype=float)
        return w0[None, :] + d[None, :] * mu[:, None]


# ---------------------------------------------------------------------------
# frames


class Frame:
    """Per-grid scaling between the e' frame and the h_can-unitary frame."""

    def __init__(self, bundle: EquivariantBundle, geom: MomentumGeometry):
        self.bundle = bundle
        self.geom = geom
        half = 0.5 * bundle.log_h_can(geom.mu)
        self.scale = np.exp(half[:, :, None] - half[:, None, :])
        self.norm_sq = {
            (c.source, c.target): c.norm_sq(geom.mu) for c in bundle.couplings
        }

    def unitary(self, M):
        return M * self.scale

    def from_unitary(self, Mu):
        return Mu / self.scale

    def hermitian_part(self, S):
        """Make an e'-frame matrix exactly h_can-self-adjoint.

        Keeps the well-conditioned entries (real diagonal and the bounded
        lower entry of each coupling) and rebuilds the remaining entry.
        """
        out = np.zeros_like(S, dtype=complex)
        r = S.shape[-1]
        idx = np.arange(r)
        out[:, idx, idx] = S[:, idx, idx].real
        for (i, j), ns in self.norm_sq.items():
            out[:, j, i] = S[:, j, i]
            out[:, i, j] = ns * np.conj(S[:, j, i])
        return out


def frame(bundle: EquivariantBundle, geom: MomentumGeometry) -> Frame:
    return Frame(bundle, geom)


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricProfile:
    """Invariant metric H = H_can @ G.

    ``diag[:, i]`` is the positive ratio H_ii / H_can,ii and ``offdiag`` maps
    each coupling (source, target) to its complex coefficient profile b, with
    G[source, target] = |s|^2 b and G[target, source] = conj(b).
    """

    bundle: EquivariantBundle
    geom: MomentumGeometry
    diag: np.ndarray
    offdiag: dict = field(default_factory=dict)

    def matrix(self) -> np.ndarray:
        return metric_matrix(self.bundle, self.geom, self.diag, self.offdiag)

    def scaled(self, u) -> "MetricProfile":
        """Conformal change e^u h for a scalar profile u."""
        eu = np.exp(np.asarray(u, dtype=float))
        return MetricProfile(
            self.bundle,
            self.geom,
            self.diag * eu[:, None],
            {key: b * eu for key, b in self.offdiag.items()},
        )

    def check_positive(self):
        G = self.matrix()
        unitary_cholesky(frame(self.bundle, self.geom), G)
        return True


def metric_matrix(bundle, geom, diag, offdiag) -> np.ndarray:
    n, r = geom.n, bundle.rank
    G = np.zeros((n, r, r), dtype=complex)
    idx = np.arange(r)
    G[:, idx, idx] = diag
    for c in bundle.couplings:
        b = offdiag.get((c.source, c.target))
        if b is None:
            continue
        G[:, c.source, c.target] = c.norm_sq(geom.mu) * b
        G[:, c.target, c.source] = np.conj(b)
    return G


def metric_from_matrix(bundle, geom, G) -> MetricProfile:
    r = bundle.rank
    idx = np.arange(r)
    diag = G[:, idx, idx].real.copy()
    off = {(c.source, c.target): np.conj(G[:, c.target, c.source]) for c in bundle.couplings}
    return MetricProfile(bundle, geom, diag, off)


def reference_metric(bundle: EquivariantBundle, geom: MomentumGeometry | None = None) -> MetricProfile:
    """Canonical split reference metric: moment profiles w0_i + d_i mu."""
    geom = geom or geometry()
    return MetricProfile(bundle, geom, np.ones((geom.n, bundle.rank)), {})


def random_metric(bundle, geom, rng, amplitude=0.3, degree=3, offdiag_scale=0.2) -> MetricProfile:
    """Smooth random invariant metric (polynomial log-diagonal, small couplings)."""
    mu = geom.mu
    basis = np.stack([mu**p for p in range(degree + 1)], axis=1)
    r = bundle.rank
    diag = np.exp(basis @ (amplitude * rng.standard_normal((degree + 1, r))))
    off = {}
    for c in bundle.couplings:
        coef = rng.standard_normal((degree + 1, 2)) * offdiag_scale / (degree + 1)
        b = basis @ coef[:, 0] + 1j * (basis @ coef[:, 1])
        i, j = c.source, c.target
        off[(i, j)] = b * np.sqrt(diag[:, i] * diag[:, j]) / max(1, r - 1)
    m = MetricProfile(bundle, geom, diag, off)
    m.check_positive()
    return m


def unitary_cholesky(fr: Frame, G):
    Gu = fr.unitary(G)
    Gu = 0.5 * (Gu + np.conj(np.swapaxes(Gu, -1, -2)))
    try:
        return np.linalg.cholesky(Gu)
    except np.linalg.LinAlgError:
        raise NonPositiveMetric("metric is not positive definite on the grid") from None


def inverse_and_logdet(fr: Frame, G):
    """G^{-1} and log det G, computed through the unitary form."""
    C = unitary_cholesky(fr, G)
    r = G.shape[-1]
    Cinv = np.linalg.solve(C, np.broadcast_to(np.eye(r), C.shape))
    Gu_inv = np.conj(np.swapaxes(Cinv, -1, -2)) @ Cinv
    logdet = 2.0 * np.sum(np.log(np.real(np.diagonal(C, axis1=-2, axis2=-1))), axis=-1)
    return fr.from_unitary(Gu_inv), logdet


# ---------------------------------------------------------------------------
# curvature


@dataclass
class EndomorphismProfile:
    values: np.ndarray
    hermitian: bool = True

    def trace(self):
        return np.real(np.trace(self.values, axis1=-2, axis2=-1))


@dataclass
class CurvaturePackage:
    """Mean curvature rho and moment map phi in i/2pi units (e' frame)."""

    mean_curvature: np.ndarray
    moment_map: np.ndarray
    geom: MomentumGeometry
    bundle: EquivariantBundle

    @property
    def rho(self):
        return self.mean_curvature

    @property
    def phi(self):
        return self.moment_map


def _weighted_flux(geom, bundle, G, v_vals, fr=None):
    """Raw pieces of the weighted contraction for the matrix profile G.

    Returns (K, vphi, Ginv) with K = d/dmu (v phi) where
    phi = G^{-1} Phi_can G - sigma X and X = G^{-1} G' with its trace replaced
    by the derivative of log det G.  The trace of K is then the exact scalar
    expression D(v tr Phi_can) + D_flux(-v sigma D log det G).
    """
    fr = fr or frame(bundle, geom)
    r = bundle.rank
    Ginv, logdet = inverse_and_logdet(fr, G)
    Phi = bundle.canonical_moment(geom.mu)
    A = Ginv @ (Phi[:, :, None] * G)
    Y = Ginv @ geom.deriv(G)
    trY = np.trace(Y, axis1=-2, axis2=-1)
    X = Y + ((geom.deriv(logdet) - trY) / r)[:, None, None] * np.eye(r)
    v = np.asarray(v_vals, dtype=float)[:, None, None]
    s = geom.sigma[:, None, None]
    K = geom.deriv(v * A) + geom.flux_deriv(-v * s * X)
    return K, A - s * X, Ginv


def symmetrize(fr: Frame, G, Ginv, M):
    """Exactly h-self-adjoint version of M (h = H_can G), trace preserved."""
    r = M.shape[-1]
    S = Ginv @ fr.hermitian_part(G @ M)
    fix = (np.real(np.trace(M, axis1=-2, axis2=-1)) - np.real(np.trace(S, axis1=-2, axis2=-1))) / r
    return S + fix[:, None, None] * np.eye(r)


def contraction_matrix(geom, bundle, G, v_vals):
    """Weighted contraction K_v for metric matrix G, symmetrized."""
    fr = frame(bundle, geom)
    K, _, Ginv = _weighted_flux(geom, bundle, G, v_vals, fr)
    return symmetrize(fr, G, Ginv, K)


def curvature_package(bundle: EquivariantBundle, metric: MetricProfile) -> CurvaturePackage:
    geom = metric.geom
    G = metric.matrix()
    fr = frame(bundle, geom)
    rho, phi, Ginv = _weighted_flux(geom, bundle, G, np.ones(geom.n), fr)
    return CurvaturePackage(
        symmetrize(fr, G, Ginv, rho), symmetrize(fr, G, Ginv, phi), geom, bundle
    )


def weighted_contraction(pkg: CurvaturePackage, v) -> EndomorphismProfile:
    """K_v = v rho + v' phi."""
    mu = pkg.geom.mu
    vals = v.value(mu)[:, None, None] * pkg.rho + v.grad(mu)[:, None, None] * pkg.phi
    return EndomorphismProfile(vals, True)


def weighted_laplacian_matrix(geom: MomentumGeometry, v_vals) -> np.ndarray:
    """Matrix of Delta_v f = -2 pi d/dmu(sigma v f') in weak form."""
    v = np.asarray(v_vals, dtype=float)
    return -2.0 * np.pi * geom.D_flux @ ((geom.sigma * v)[:, None] * geom.D)


def weighted_laplacian(v, f, geom: MomentumGeometry | None = None):
    geom = geom or geometry()
    return weighted_laplacian_matrix(geom, v.value(geom.mu)) @ np.asarray(f)


def weighted_atiyah_bott_pairing(v, a, b, geom: MomentumGeometry | None = None) -> float:
    """Omega_v(a, b) for invariant 1-form profiles.

    ``a`` and ``b`` are pairs (radial, angular) of skew-Hermitian matrix
    profiles of shape (n, r, r), the components along d(mu) and d(theta).
    """
    geom = geom or geometry()
    a_mu, a_th = (np.asarray(x) for x in a)
    b_mu, b_th = (np.asarray(x) for x in b)
    wedge = np.trace(a_mu @ b_th - a_th @ b_mu, axis1=-2, axis2=-1)
    return float(np.real(-geom.integrate(v.value(geom.mu) * wedge) / (4.0 * np.pi)))
