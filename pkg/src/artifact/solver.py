"""Weighted Hermite-Einstein solver on the model sphere.

Rank one reduces to a linear weighted Laplace problem.  Higher rank uses the
perturbed continuity family

    L_eps(f) = K_v(h0 f) - c_v Id + eps log f = 0,   eps: 1 -> 0,

with h0 chosen so that f = exp(-K0(h')) solves the eps = 1 equation exactly.
The unknown is the metric matrix G = H_can^{-1} H, packed as log-diagonal
entries and complex coupling coefficients; Newton steps use a finite
difference Jacobian evaluated in one batched pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    DeformationStuck,
    NewtonDiverged,
    NonPositiveMetric,
    NotSolvable,
)
from .geometry import (
    EndomorphismProfile,
    EquivariantBundle,
    MetricProfile,
    frame,
    geometry,
    metric_from_matrix,
    random_metric,
    reference_metric,
    weighted_laplacian_matrix,
)
from .intersections import slope_closed
from .weights import WeightFunction

SLOPE_TOL = 1e-10
DET_TOL = 1e-9
BOUND_SLACK = 1e-6


# ---------------------------------------------------------------------------
# scalar problems


def weighted_laplace_solve(v: WeightFunction, g, geom=None, tol: float = 1e-9):
    """Solve Delta_v f = g with integral of f equal to zero."""
    geom = geom or geometry()
    g = np.asarray(g, dtype=float)
    mean = float(geom.integrate(g))
    if abs(mean) > tol * max(1.0, float(np.max(np.abs(g)))):
        raise NotSolvable(f"right-hand side has nonzero integral {mean:.3e}")
    return _laplace_solve(geom, v.value(geom.mu), g)


def _laplace_solve(geom, v_vals, g):
    """Bordered solve of A f + lam = g, sum w f = 0 (lam absorbs the mean)."""
    n = geom.n
    A = weighted_laplacian_matrix(geom, v_vals)
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = A
    M[:n, n] = 1.0
    M[n, :n] = geom.weights
    rhs = np.concatenate([g, [0.0]])
    return np.linalg.solve(M, rhs)[:n]


def discrete_einstein_constant(bundle: EquivariantBundle, v: WeightFunction, geom) -> float:
    """c_v as the integral of d/dmu(v tr Phi_can) on the grid, divided by rank.

    This is the value the discrete weighted contraction integrates to, so the
    equations below are exactly solvable on the grid.
    """
    phi = bundle.canonical_moment(geom.mu).sum(axis=1)
    return float(geom.integrate(geom.deriv(v.value(geom.mu) * phi))) / bundle.rank


def line_bundle_whe(bundle: EquivariantBundle, v: WeightFunction, geom=None) -> MetricProfile:
    """Weighted Hermite-Einstein metric on a line bundle by one Laplace solve."""
    geom = geom or geometry()
    if bundle.rank != 1:
        raise ConfigError("line_bundle_whe needs a rank one bundle", field="summands")
    ref = reference_metric(bundle, geom)
    system = _System(bundle, v, geom)
    K0 = system.k0(ref.matrix()[None])[0]
    u = _laplace_solve(geom, system.v_vals, -2.0 * np.pi * K0[:, 0, 0].real)
    return ref.scaled(u)


def closed_form_moment(line, v: WeightFunction, mu):
    """phi*(mu) = (c_v mu + w0 v(0)) / v(mu) for a line bundle with lifts (w0, w1)."""
    v0, v1 = (float(x) for x in v.value(np.array([0.0, 1.0])))
    cv = v1 * line.w1 - v0 * line.w0
    mu = np.asarray(mu, dtype=float)
    return (cv * mu + line.w0 * v0) / v.value(mu)


# ---------------------------------------------------------------------------
# batched kernels


def _herm(M):
    return np.conj(np.swapaxes(M, -1, -2))


class _System:
    """Weighted contraction and continuity residual for batches of G."""

    def __init__(self, bundle: EquivariantBundle, v: WeightFunction, geom):
        if not bundle.mask_closed():
            raise ConfigError("coupling pattern is not closed under composition", field="couplings")
        self.bundle = bundle
        self.geom = geom
        self.fr = frame(bundle, geom)
        self.r = bundle.rank
        self.set_weight(v)
        self.phi_can = bundle.canonical_moment(geom.mu)
        self.pairs = [(c.source, c.target) for c in bundle.couplings]
        self.ns = [self.fr.norm_sq[p] for p in self.pairs]
        self.eye = np.eye(self.r)

    def set_weight(self, v: WeightFunction):
        self.v = v
        self.v_vals = v.value(self.geom.mu)
        self.c = discrete_einstein_constant(self.bundle, v, self.geom)

    # -- packing -----------------------------------------------------------
    @property
    def size(self) -> int:
        return self.geom.n * (self.r + 2 * len(self.pairs))

    def pack(self, G):
        r = self.r
        idx = np.arange(r)
        parts = [np.log(G[:, idx, idx].real).T.ravel()]
        for s, t in self.pairs:
            b = np.conj(G[:, t, s])
            parts += [b.real, b.imag]
        return np.concatenate(parts)

    def unpack(self, X):
        """X has shape (..., size); returns G of shape (..., n, r, r)."""
        n, r = self.geom.n, self.r
        lead = X.shape[:-1]
        G = np.zeros(lead + (n, r, r), dtype=complex)
        d = np.exp(X[..., : n * r].reshape(lead + (r, n)))
        for i in range(r):
            G[..., i, i] = d[..., i, :]
        off = n * r
        for (s, t), ns in zip(self.pairs, self.ns):
            b = X[..., off:off + n] + 1j * X[..., off + n:off + 2 * n]
            off += 2 * n
            G[..., s, t] = ns * b
            G[..., t, s] = np.conj(b)
        return G

    # -- calculus ----------------------------------------------------------
    @staticmethod
    def _apply(Dm, F, axis=-3):
        """Apply a grid operator along the node axis (-3 for matrices, -1 for scalars).

        The operator is real, so complex data is handled through a float view
        and one broadcast matrix product without copies.
        """
        F = np.ascontiguousarray(F)
        n = Dm.shape[0]
        if axis == -1:
            F = F[..., None]
        lead = F.shape[: F.ndim - 3] if axis == -3 else F.shape[:-2]
        tail = F.shape[F.ndim - 2:] if axis == -3 else F.shape[-1:]
        is_complex = np.iscomplexobj(F)
        X = F.view(np.float64) if is_complex else F
        X = X.reshape((-1, n, X.size // (n * max(1, int(np.prod(lead))))))
        out = np.matmul(Dm, X).reshape(lead + (n,) + tail[:-1] + ((tail[-1] * 2,) if is_complex else tail[-1:]))
        if is_complex:
            out = out.view(np.complex128)
        return out[..., 0] if axis == -1 else out

    def _d(self, F):
        return self._apply(self.geom.D, F)

    def _dflux(self, F):
        return self._apply(self.geom.D_flux, F)

    def _hermitian_part(self, S):
        out = np.zeros_like(S, dtype=complex)
        idx = np.arange(self.r)
        out[..., idx, idx] = S[..., idx, idx].real
        for (s, t), ns in zip(self.pairs, self.ns):
            out[..., t, s] = S[..., t, s]
            out[..., s, t] = ns * np.conj(S[..., t, s])
        return out

    def cholesky(self, G):
        return self._local(G, self.fr.scale)["C"]

    def _local(self, G, scale, L0inv=None, L0h=None):
        """Pointwise factorizations of G (and of f = F0^{-1} G when L0inv is given).

        ``scale`` must broadcast against G; passing the rows of the frame
        scaling for selected nodes lets callers evaluate single nodes.
        """
        Gu = G * scale
        Gu = 0.5 * (Gu + _herm(Gu))
        try:
            C = np.linalg.cholesky(Gu)
        except np.linalg.LinAlgError:
            raise NonPositiveMetric("metric is not positive definite on the grid") from None
        Cinv = np.linalg.inv(C)
        out = {
            "C": C,
            "Cinv": Cinv,
            "Ginv": (_herm(Cinv) @ Cinv) / scale,
            "logdet": 2.0 * np.sum(np.log(np.diagonal(C, axis1=-2, axis2=-1).real), axis=-1),
        }
        if L0inv is not None:
            S = L0inv @ Gu @ _herm(L0inv)
            S = 0.5 * (S + _herm(S))
            lam, Q = np.linalg.eigh(S)
            if np.any(lam <= 0.0):
                raise NonPositiveMetric("f is not positive definite")
            ll = np.log(lam)
            W = _herm(L0inv) @ Q
            out["ll"] = ll
            out["W"] = W
            out["logf"] = ((W * ll[..., None, :]) @ _herm(Q) @ L0h) / scale
        return out

    def contraction(self, G, loc=None):
        """Symmetrized weighted contraction K_v(G) and the local factorizations."""
        r = self.r
        loc = self._local(G, self.fr.scale) if loc is None else loc
        Ginv, logdet = loc["Ginv"], loc["logdet"]
        A = Ginv @ (self.phi_can[:, :, None] * G)
        Y = Ginv @ self._d(G)
        trY = np.trace(Y, axis1=-2, axis2=-1)
        dlog = self._apply(self.geom.D, logdet, axis=-1)
        X = Y + ((dlog - trY) / r)[..., None, None] * self.eye
        v = self.v_vals[:, None, None]
        s = self.geom.sigma[:, None, None]
        K = self._d(v * A) + self._dflux(-v * s * X)
        S = Ginv @ self._hermitian_part(G @ K)
        fix = (np.trace(K, axis1=-2, axis2=-1).real - np.trace(S, axis1=-2, axis2=-1).real) / r
        return S + fix[..., None, None] * self.eye, loc

    def k0(self, G):
        K, _ = self.contraction(G)
        return K - self.c * self.eye

    def h_unitary(self, M, loc):
        """Hermitian matrix whose Frobenius norm is the h-norm of M (h = H_can G)."""
        return _herm(loc["C"]) @ (M * self.fr.scale) @ _herm(loc["Cinv"])

    def comps(self, Hm):
        idx = np.arange(self.r)
        parts = [np.swapaxes(Hm[..., idx, idx].real, -1, -2).reshape(Hm.shape[:-3] + (-1,))]
        for s, t in self.pairs:
            parts += [Hm[..., t, s].real, Hm[..., t, s].imag]
        return np.concatenate(parts, axis=-1)

    @staticmethod
    def pointwise_norm(Hm):
        return np.sqrt(np.maximum(np.sum(np.abs(Hm) ** 2, axis=(-1, -2)), 0.0))


class _Continuity(_System):
    """Residual of L_eps relative to a fixed base metric F0 = h0."""

    def __init__(self, bundle, v, geom, F0):
        super().__init__(bundle, v, geom)
        self.F0 = F0
        self.logdet_F0 = np.linalg.slogdet(F0)[1]
        self.jac_cache = None
        L0 = self.cholesky(F0[None])[0]
        self.L0inv = np.linalg.inv(L0)
        self.L0h = _herm(L0)

    def local(self, G):
        return self._local(G, self.fr.scale, self.L0inv, self.L0h)

    def log_f(self, G):
        """log f for f = F0^{-1} G, with log-eigenvalues and eigenvectors.

        Eigenvectors are columns of W in the H_can-unitary frame, orthonormal
        for h0; f = W diag(exp(ll)) W^{-1} with W^{-1} = Q^H L0^H.
        """
        loc = self.local(G)
        return loc["logf"], loc["ll"], loc["W"]

    def operator(self, G, eps, loc=None):
        loc = self.local(G) if loc is None else loc
        K, _ = self.contraction(G, loc)
        M = K - self.c * self.eye
        if eps != 0.0:
            M = M + eps * loc["logf"]
        return M, loc

    def residual(self, X, eps, loc=None):
        G = self.unpack(X)
        M, loc = self.operator(G, eps, loc)
        return self.comps(self.h_unitary(M, loc))

    def jacobian(self, x, eps, h=1e-7):
        """Forward-difference Jacobian, one column per unknown.

        Each unknown lives at a single grid node, so the pointwise
        factorizations are recomputed only at that node and spliced into
        the base values; the derivative operators then act on full profiles.
        """
        n, size = self.geom.n, x.size
        base = self.local(self.unpack(x[None])[0])
        R0 = self.residual(x[None], eps, {k: val[None] for k, val in base.items()})[0]
        Xb = x[None, :] + h * np.eye(size)
        Gb = self.unpack(Xb)
        nodes = np.arange(size) % n
        rows = np.arange(size)
        part = self._local(Gb[rows, nodes], self.fr.scale[nodes], self.L0inv[nodes], self.L0h[nodes])
        loc = {}
        for key, val in base.items():
            full = np.broadcast_to(val, (size,) + val.shape).copy()
            full[rows, nodes] = part[key]
            loc[key] = full
        Rb = self.residual(Xb, eps, loc)
        return (Rb - R0[None, :]).T / h, R0

    def log_det_f(self, G):
        """log det f = log det G - log det F0 by LU.

        Summing log-eigenvalues of f loses about eps_mach * cond(f), which is
        large near blow-up; the LU determinant of G does not.
        """
        return np.linalg.slogdet(G)[1] - self.logdet_F0

    def normalize_det(self, x):
        G = self.unpack(x[None])[0]
        s = float(self.geom.integrate(self.log_det_f(G))) / self.r
        return self.shift(x, -s)

    def shift(self, x, s):
        """Multiply G by exp(s)."""
        y = x.copy()
        n, r = self.geom.n, self.r
        y[: n * r] += s
        y[n * r:] *= math.exp(s)
        return y


# ---------------------------------------------------------------------------
# configuration and state


@dataclass
class SolverConfig:
    grid: int = 64
    newton_tol: float = 1e-10
    converge_tol: float = 1e-9
    eps_start: float = 1.0
    eps_ratio: float = 0.7
    eps_floor: float = 1e-6
    m_max: float = 25.0
    max_iterations: int = 2000
    max_newton: int = 10
    polish_trigger: float = 1e-1
    init: str = "split"
    init_amplitude: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.eps_ratio < 1.0):
            raise ConfigError("eps ratio must lie in (0, 1)", field="eps_ratio")
        if not (0.0 < self.eps_floor < self.eps_start <= 1.0):
            raise ConfigError("need 0 < eps floor < eps start <= 1", field="eps_floor")
        for name in ("newton_tol", "converge_tol", "m_max", "polish_trigger"):
            if not getattr(self, name) > 0.0:
                raise ConfigError(f"{name} must be positive", field=name)
        if self.grid < 8:
            raise ConfigError("solver grid needs at least 8 nodes", field="grid")
        if self.init not in ("reference", "split", "random"):
            raise ConfigError("init must be 'reference', 'split' or 'random'", field="init")

    def schedule(self):
        out, eps = [], self.eps_start
        while eps > self.eps_floor:
            out.append(eps)
            eps *= self.eps_ratio
        out.append(self.eps_floor)
        return out

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ContinuityState:
    epsilon: float
    f: EndomorphismProfile
    residual: float
    det_profile: np.ndarray
    m_eps: float
    K0_max: float
    newton_iterations: int = 0

    @property
    def det_error(self) -> float:
        return float(np.max(np.abs(self.det_profile - 1.0)))

    def violations(self) -> list:
        out = []
        if self.det_error >= DET_TOL:
            out.append(f"det-one violated at eps={self.epsilon:.3e}: {self.det_error:.3e}")
        if self.epsilon > 0.0 and self.m_eps > self.K0_max / self.epsilon + BOUND_SLACK:
            out.append(
                f"a-priori bound violated at eps={self.epsilon:.3e}: "
                f"m={self.m_eps:.6g} > {self.K0_max / self.epsilon:.6g}"
            )
        return out

    def row(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "residual": self.residual,
            "m_eps": self.m_eps,
            "det_error": self.det_error,
            "K0_max": self.K0_max,
            "newton_iterations": self.newton_iterations,
        }


@dataclass
class SolveOutcome:
    status: str
    bundle: EquivariantBundle
    metric: MetricProfile | None = None
    projector: dict | None = None
    trail: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    final_residual: float | None = None
    message: str = ""

    def to_dict(self) -> dict:
        out = {
            "status": self.status,
            "bundle": self.bundle.label(),
            "final_residual": self.final_residual,
            "projector": self.projector,
            "violations": self.violations,
            "trail": self.trail,
            "message": self.message,
        }
        return out


# ---------------------------------------------------------------------------
# Newton machinery


def _newton(system: _Continuity, x, eps, tol, max_iter, normalize=True):
    """Damped Newton on L_eps; returns (x, residual, iterations, converged).

    The finite-difference Jacobian is cached on the system and refreshed only
    when the residual stops contracting quickly, which keeps the long eps
    schedule cheap.  At eps = 0 the operator has the scaling directions in its
    kernel, so steps are least-squares minimum-norm solutions.
    """
    lstsq = eps == 0.0
    if normalize and not lstsq:
        try:
            x = system.normalize_det(x)
        except NonPositiveMetric:
            return x, math.inf, 0, False
    try:
        R = system.residual(x[None], eps)[0]
    except NonPositiveMetric:
        return x, math.inf, 0, False
    if not np.all(np.isfinite(R)):
        return x, math.inf, 0, False
    norm = float(np.max(np.abs(R)))
    cache = system.jac_cache
    fresh = False
    for it in range(1, max_iter + 1):
        if norm <= tol:
            return x, norm, it - 1, True
        if cache is None:
            J, R = system.jacobian(x, eps)
            cache = (J, eps)
            system.jac_cache = cache
            fresh = True
        J = cache[0]
        if lstsq:
            dx = np.linalg.lstsq(J, -R, rcond=1e-12)[0]
        else:
            try:
                dx = np.linalg.solve(J, -R)
            except np.linalg.LinAlgError:
                dx = np.linalg.lstsq(J, -R, rcond=None)[0]
        base = float(np.linalg.norm(R))
        alpha, accepted = 1.0, False
        while alpha >= 1.0 / 64:
            trial = x + alpha * dx
            try:
                if normalize and not lstsq:
                    trial = system.normalize_det(trial)
                Rt = system.residual(trial[None], eps)[0]
            except NonPositiveMetric:
                alpha *= 0.5
                continue
            if np.all(np.isfinite(Rt)) and np.linalg.norm(Rt) < base:
                x, R, accepted = trial, Rt, True
                break
            alpha *= 0.5
        if not accepted:
            if fresh:
                return x, norm, it, False
            cache = None
            continue
        new = float(np.max(np.abs(R)))
        if new > 0.1 * norm and not fresh:
            cache = None
        fresh = False
        norm = new
    return x, norm, max_iter, norm <= tol


def _state(system: _Continuity, x, eps, K0_max, residual, iters) -> ContinuityState:
    G = system.unpack(x[None])
    _, ll, W = system.log_f(G)
    ll, W = ll[0], W[0]
    f_u = (W * np.exp(ll)[:, None, :]) @ np.linalg.inv(W)
    m = float(np.max(np.sqrt(np.sum(ll**2, axis=-1))))
    det = np.exp(system.log_det_f(G[0]))
    f = EndomorphismProfile(system.fr.from_unitary(f_u), True)
    return ContinuityState(eps, f, residual, det, m, K0_max, iters)


def split_metric(bundle: EquivariantBundle, v: WeightFunction, geom) -> MetricProfile:
    """Direct sum of the weighted Hermite-Einstein metrics of the summands."""
    diag = np.stack(
        [line_bundle_whe(EquivariantBundle.split([s]), v, geom).diag[:, 0] for s in bundle.summands],
        axis=1,
    )
    return MetricProfile(bundle, geom, diag, {})


def _initial_metric(bundle, v, geom, config: SolverConfig) -> np.ndarray:
    if config.init == "reference":
        return reference_metric(bundle, geom).matrix()
    base = split_metric(bundle, v, geom)
    if config.init == "split":
        return base.matrix()
    rng = np.random.default_rng(config.seed)
    pert = random_metric(bundle, geom, rng, amplitude=config.init_amplitude)
    root = np.sqrt(base.diag)
    off = {(i, j): b * root[:, i] * root[:, j] for (i, j), b in pert.offdiag.items()}
    return MetricProfile(bundle, geom, base.diag * pert.diag, off).matrix()


def _base_metric(system: _System, Gp):
    """Conformally normalize h' so tr K0 = 0, then h0 = h' exp(K0(h'))."""
    geom, r = system.geom, system.r
    K0 = system.k0(Gp[None])[0]
    tr = np.trace(K0, axis1=-2, axis2=-1).real
    u = _laplace_solve(geom, system.v_vals, -(2.0 * np.pi / r) * tr)
    Gp = Gp * np.exp(u)[:, None, None]
    K0 = system.k0(Gp[None])[0]
    loc = system._local(Gp, system.fr.scale)
    C = loc["C"]
    Hk = system.h_unitary(K0, loc)
    Hk = 0.5 * (Hk + _herm(Hk))
    lam, Q = np.linalg.eigh(Hk)
    E = (Q * np.exp(lam)[..., None, :]) @ _herm(Q)
    # exp(K) in the unitary frame is C^{-H} E C^H; G0u = G'u exp(K_u) = C E C^H
    G0u = C @ E @ _herm(C)
    G0u = 0.5 * (G0u + _herm(G0u))
    G0 = system.fr.from_unitary(G0u)
    G0 = metric_from_matrix(system.bundle, geom, G0).matrix()
    # exp(K) has trace exp(0) only up to roundoff, which the Laplacian would
    # amplify; one conformal correction restores tr K0(h0) = 0 to roundoff.
    tr = np.trace(system.k0(G0[None])[0], axis1=-2, axis2=-1).real
    G0 = G0 * np.exp(_laplace_solve(geom, system.v_vals, -(2.0 * np.pi / r) * tr))[:, None, None]
    return Gp, G0


def k0_norm(system: _System, G) -> np.ndarray:
    K0 = system.k0(G[None])[0]
    loc = system._local(G, system.fr.scale)
    return _System.pointwise_norm(system.h_unitary(K0, loc))


GAP_FRACTION = 0.2


def _extract_projector(system: _Continuity, x, v) -> dict:
    """Destabilizing projector from the normalized limit of f.

    f is normalized pointwise by its largest eigenvalue; directions whose
    normalized log-eigenvalue sits below a spectral gap span the image of
    pi = Id - f_inf.  Every gap of at least GAP_FRACTION times the largest
    gap defines one piece of a filtration; pieces are mapped to summands by
    averaged overlap and the piece of largest weighted slope is reported.
    """
    bundle = system.bundle
    G = system.unpack(x[None])
    _, ll, W = system.log_f(G)
    ll, W = ll[0], W[0]
    normalized = ll - ll[:, -1:]
    mean = system.geom.integrate(normalized)
    gaps = np.diff(mean)
    biggest = float(np.max(gaps))
    pieces = []
    for k in np.flatnonzero(gaps >= GAP_FRACTION * biggest):
        rank = int(k) + 1
        V = W[:, :, :rank]
        P = V @ np.linalg.solve(_herm(V) @ V, _herm(V))
        overlap = system.geom.integrate(np.real(np.diagonal(P, axis1=-2, axis2=-1)))
        image = sorted(int(i) for i in np.argsort(-overlap, kind="stable")[:rank])
        sub = bundle.sub(image)
        pieces.append({
            "rank": rank,
            "image": image,
            "image_label": sub.label(),
            "image_slope": slope_closed(sub, v),
            "gap": float(gaps[k]),
            "overlap": overlap.tolist(),
        })
    best = max(pieces, key=lambda p: (p["image_slope"], -p["rank"]))
    return {
        **best,
        "bundle_slope": slope_closed(bundle, v),
        "normalized_log_eigenvalues": mean.tolist(),
        "filtration": pieces,
    }


# ---------------------------------------------------------------------------
# continuity method


def continuity_run(bundle: EquivariantBundle, v: WeightFunction, config: SolverConfig | None = None,
                   initial: MetricProfile | None = None) -> SolveOutcome:
    config = config or SolverConfig()
    geom = geometry(config.grid)
    system = _Continuity.__new__(_Continuity)
    _System.__init__(system, bundle, v, geom)
    Gi = initial.matrix() if initial is not None else _initial_metric(bundle, v, geom, config)
    Gp, G0 = _base_metric(system, Gi)
    _Continuity.__init__(system, bundle, v, geom, G0)
    K0_max = float(np.max(k0_norm(system, G0)))

    outcome = SolveOutcome("budget_exhausted", bundle)
    x = system.pack(Gp)
    x_prev = None
    total = 0
    last_polish = math.inf
    last_state = None

    def accept(xs, eps, res, iters):
        nonlocal last_state
        st = _state(system, xs, eps, K0_max, res, iters)
        outcome.trail.append(st.row())
        outcome.violations.extend(st.violations())
        last_state = st
        return st

    def try_polish(xs):
        xp, res, iters, ok = _newton(system, xs, 0.0, config.newton_tol, config.max_newton)
        Gs = system.unpack(xp[None])[0]
        l0 = float(np.max(k0_norm(system, Gs)))
        return xp, l0, iters, ok or l0 <= config.converge_tol

    def finish_converged(xp, l0, iters):
        xp = system.normalize_det(xp)
        accept(xp, 0.0, l0, iters)
        outcome.status = "converged"
        outcome.metric = metric_from_matrix(bundle, geom, system.unpack(xp[None])[0])
        outcome.final_residual = l0
        return outcome

    def advance(target):
        guesses = [x] if x_prev is None else [2.0 * x - x_prev, x]
        for guess in guesses:
            xs, res, iters, ok = _newton(system, guess, target, config.newton_tol, config.max_newton)
            if ok:
                return xs, res, iters
        return None

    def blowup(eps, why):
        outcome.status = "destabilized"
        outcome.projector = _extract_projector(system, x, v)
        outcome.message = why
        return outcome

    schedule = config.schedule()
    for step, eps in enumerate(schedule):
        solved = advance(eps)
        if solved is None and step > 0:
            # two step reductions in log(eps) before giving up
            prev = schedule[step - 1]
            for frac in (0.5, 0.25):
                mid = prev * (eps / prev) ** frac
                part = advance(mid)
                if part is None:
                    continue
                accept(part[0], mid, part[1], part[2])
                x_prev, x = x, part[0]
                solved = advance(eps)
                break
        if solved is None:
            if last_state is not None and last_state.m_eps > 1.0:
                return blowup(eps, f"Newton failed after two step reductions at eps={eps:.3e}")
            raise NewtonDiverged(f"Newton failed at eps={eps:.3e}", last_state=last_state)
        xs, res, iters = solved
        total += iters
        st = accept(xs, eps, res, iters)
        x_prev, x = x, xs
        if st.m_eps > config.m_max:
            return blowup(eps, f"m_eps={st.m_eps:.4g} exceeded {config.m_max:g} at eps={eps:.3e}")
        if eps * st.m_eps <= config.polish_trigger and eps <= 0.1 * last_polish:
            last_polish = eps
            xp, l0, iters, ok = try_polish(x)
            total += iters
            if ok:
                return finish_converged(xp, l0, iters)
        if total > config.max_iterations:
            outcome.message = "iteration budget exhausted"
            return outcome
    xp, l0, iters, ok = try_polish(x)
    if ok:
        return finish_converged(xp, l0, iters)
    outcome.message = f"eps floor reached with L0 residual {l0:.3e}"
    outcome.final_residual = l0
    return outcome


def perturbed_operator(bundle: EquivariantBundle, v: WeightFunction, f: EndomorphismProfile,
                       epsilon: float, h0: MetricProfile | None = None) -> EndomorphismProfile:
    """L_eps(f) = K_v(h0 f) - c_v Id + eps log f as an endomorphism profile."""
    geom = h0.geom if h0 is not None else geometry()
    h0 = h0 or reference_metric(bundle, geom)
    F0 = h0.matrix()
    system = _Continuity(bundle, v, geom, F0)
    G = F0 @ np.asarray(f.values)
    M, _ = system.operator(G[None], float(epsilon))
    return EndomorphismProfile(M[0], True)


def log_endomorphism(bundle, f: EndomorphismProfile, h0: MetricProfile, v: WeightFunction) -> np.ndarray:
    system = _Continuity(bundle, v, h0.geom, h0.matrix())
    logf, _, _ = system.log_f((h0.matrix() @ f.values)[None])
    return logf[0]


def starting_point(bundle, v, config: SolverConfig | None = None, initial=None):
    """(h0, f1, K0 at h') for the eps = 1 start."""
    config = config or SolverConfig()
    geom = geometry(config.grid)
    system = _System(bundle, v, geom)
    Gi = initial.matrix() if initial is not None else _initial_metric(bundle, v, geom, config)
    Gp, G0 = _base_metric(system, Gi)
    h0 = metric_from_matrix(bundle, geom, G0)
    f1 = np.linalg.solve(G0, Gp)
    return h0, EndomorphismProfile(f1, True), metric_from_matrix(bundle, geom, Gp)


def whe_residual(bundle, metric: MetricProfile, v: WeightFunction) -> float:
    """Sup over the grid of |K_v(h) - c_v Id|_h."""
    system = _System(bundle, v, metric.geom)
    return float(np.max(k0_norm(system, metric.matrix())))


def moment_profile(metric: MetricProfile) -> np.ndarray:
    from .geometry import curvature_package

    return curvature_package(metric.bundle, metric).phi


# ---------------------------------------------------------------------------
# weight deformation


@dataclass
class DeformationResult:
    t_values: list
    metrics: list
    residuals: list

    def to_dict(self) -> dict:
        return {"t_values": self.t_values, "residuals": self.residuals}


def weight_deformation_run(bundle: EquivariantBundle, v_path, t_start: float, t_end: float,
                           initial: MetricProfile | None = None, steps: int = 8,
                           tol: float = 1e-10, min_step: float = 1e-4,
                           max_newton: int = 20) -> DeformationResult:
    """Continue a weighted Hermite-Einstein metric along t -> v_path(t)."""
    geom = initial.geom if initial is not None else geometry()
    v0 = v_path(t_start)
    if initial is None:
        initial = continuity_run(bundle, v0, SolverConfig(grid=geom.n)).metric if bundle.rank > 1 \
            else line_bundle_whe(bundle, v0, geom)
        if initial is None:
            raise DeformationStuck("no solution at the starting weight", t_start)
    result = DeformationResult([t_start], [initial], [whe_residual(bundle, initial, v0)])
    if t_end == t_start:
        return result
    system = _Continuity(bundle, v0, geom, initial.matrix())
    x = system.pack(initial.matrix())
    t = t_start
    dt = (t_end - t_start) / steps
    while (t_end - t) * np.sign(dt) > 1e-14:
        t_next = t + dt
        if (t_end - t_next) * np.sign(dt) < 0:
            t_next = t_end
        system.set_weight(v_path(t_next))
        xs, res, _, ok = _newton(system, x, 0.0, tol, max_newton, normalize=False)
        if not ok:
            dt *= 0.5
            if abs(dt) < min_step:
                raise DeformationStuck(f"step size fell below {min_step:g} after t={t:.6g}", t)
            continue
        x, t = xs, t_next
        metric = metric_from_matrix(bundle, geom, system.unpack(x[None])[0])
        result.t_values.append(t)
        result.metrics.append(metric)
        result.residuals.append(whe_residual(bundle, metric, v_path(t)))
    return result
