"""Weight functions on the moment interval and their Fourier data."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConfigError, InversionMismatch, NonPositiveWeight

TAU_FT = 1e-6
_SWEEP = np.linspace(0.0, 1.0, 2001)


@dataclass(frozen=True, eq=False)
class WeightFunction:
    """Positive weight v(mu) with first and second derivatives.

    The evaluators accept any real argument; outside [0, 1] they continue the
    family analytically (or by spline extrapolation for tables), which is what
    the Fourier extension and the lattice sums use.
    """

    family: str
    params: dict
    value: Callable
    grad: Callable
    hess: Callable
    singular_point: float | None = None
    validated: bool = True
    meta: dict = field(default_factory=dict)

    def __call__(self, mu):
        return self.value(mu)

    def to_spec(self) -> dict:
        return {"family": self.family, **self.params}

    def label(self) -> str:
        if self.family == "constant":
            return f"constant({self.params.get('c', 1.0):g})"
        if self.family == "exp":
            return f"exp(t={self.params.get('t', 1.0):g})"
        if self.family == "sasaki":
            p = self.params
            return f"sasaki(xi={p.get('xi', 1.0):g},a={p['a']:g},m={p.get('m', 1):g})"
        if self.family == "poly":
            parts = [f"({f['c']:g}+{f['p']:g}mu)^{f['n']:g}" for f in self.params["factors"]]
            return "poly" + "".join(parts)
        return self.family


def _as_float(x):
    return np.asarray(x, dtype=float)


def constant(c: float = 1.0) -> WeightFunction:
    c = float(c)
    return _finish(WeightFunction(
        "constant", {"c": c},
        lambda mu: np.full_like(_as_float(mu), c),
        lambda mu: np.zeros_like(_as_float(mu)),
        lambda mu: np.zeros_like(_as_float(mu)),
    ))


def exponential(t: float = 1.0) -> WeightFunction:
    """v(mu) = exp(t mu), the soliton-type weight with generator t."""
    t = float(t)
    return _finish(WeightFunction(
        "exp", {"t": t},
        lambda mu: np.exp(t * _as_float(mu)),
        lambda mu: t * np.exp(t * _as_float(mu)),
        lambda mu: t * t * np.exp(t * _as_float(mu)),
    ))


def sasaki(a: float, m: float = 1.0, xi: float = 1.0) -> WeightFunction:
    """v(mu) = (xi mu + a)^(-m)."""
    a, m, xi = float(a), float(m), float(xi)
    if min(a, xi + a) <= 0.0:
        raise NonPositiveWeight(f"sasaki base xi*mu+a must stay positive on [0,1] (a={a}, xi={xi})")

    def base(mu):
        return xi * _as_float(mu) + a

    return _finish(WeightFunction(
        "sasaki", {"a": a, "m": m, "xi": xi},
        lambda mu: base(mu) ** (-m),
        lambda mu: -m * xi * base(mu) ** (-m - 1.0),
        lambda mu: m * (m + 1.0) * xi * xi * base(mu) ** (-m - 2.0),
        singular_point=(-a / xi if xi != 0 else None),
    ))


def polynomial(factors, validate: bool = True) -> WeightFunction:
    """v(mu) = prod (c + p mu)^n over the given factors."""
    facs = [(float(f["c"]), float(f["p"]), float(f["n"])) for f in factors]
    if not facs:
        raise ConfigError("polynomial weight needs at least one factor", field="factors")

    def logs(mu):
        mu = _as_float(mu)
        terms = [(c + p * mu, p, n) for c, p, n in facs]
        return mu, terms

    def value(mu):
        mu, terms = logs(mu)
        out = np.ones_like(mu)
        for b, _, n in terms:
            out = out * b**n
        return out

    def grad(mu):
        mu, terms = logs(mu)
        out = np.zeros_like(mu)
        for idx, (b, p, n) in enumerate(terms):
            piece = n * p * b ** (n - 1.0)
            for jdx, (b2, _, n2) in enumerate(terms):
                if jdx != idx:
                    piece = piece * b2**n2
            out = out + piece
        return out

    def hess(mu):
        mu, terms = logs(mu)
        out = np.zeros_like(mu)
        for idx, (bi, pi, ni) in enumerate(terms):
            for jdx, (bj, pj, nj) in enumerate(terms):
                if idx == jdx:
                    piece = ni * (ni - 1.0) * pi * pi * bi ** (ni - 2.0) if ni != 1.0 else np.zeros_like(mu)
                else:
                    piece = ni * pi * bi ** (ni - 1.0) * nj * pj * bj ** (nj - 1.0)
                for kdx, (bk, _, nk) in enumerate(terms):
                    if kdx not in (idx, jdx):
                        piece = piece * bk**nk
                out = out + piece
        return out

    w = WeightFunction(
        "poly", {"factors": [{"c": c, "p": p, "n": n} for c, p, n in facs]},
        value, grad, hess, validated=validate,
    )
    return _finish(w) if validate else w


def table(points, values) -> WeightFunction:
    """Cubic spline (not-a-knot) through tabulated samples."""
    x = np.asarray(points, dtype=float)
    y = np.asarray(values, dtype=float)
    if x.ndim != 1 or x.shape != y.shape or x.size < 4:
        raise ConfigError("table weight needs matching 1-D points/values with at least 4 entries", field="points")
    if np.any(np.diff(x) <= 0):
        raise ConfigError("table points must be strictly increasing", field="points")
    if x[0] > 0.0 or x[-1] < 1.0:
        raise ConfigError("table points must cover [0, 1]", field="points")
    spline = CubicSpline(x, y, bc_type="not-a-knot", extrapolate=True)
    d1, d2 = spline.derivative(1), spline.derivative(2)
    return _finish(WeightFunction(
        "table", {"points": x.tolist(), "values": y.tolist()},
        lambda mu: spline(_as_float(mu)),
        lambda mu: d1(_as_float(mu)),
        lambda mu: d2(_as_float(mu)),
    ))


def linear_combination(coeffs, weights) -> WeightFunction:
    """sum_i a_i v_i, used for linearity checks of intersection numbers."""
    coeffs = [float(a) for a in coeffs]
    weights = list(weights)

    def comb(attr):
        return lambda mu: sum(a * getattr(w, attr)(mu) for a, w in zip(coeffs, weights))

    return _finish(WeightFunction(
        "sum", {"coeffs": coeffs, "terms": [w.to_spec() for w in weights]},
        comb("value"), comb("grad"), comb("hess"),
    ))


def _finish(w: WeightFunction) -> WeightFunction:
    vals = w.value(_SWEEP)
    if not np.all(np.isfinite(vals)) or np.min(vals) <= 0.0:
        raise NonPositiveWeight(f"weight {w.family} is not positive on [0,1] (min {np.min(vals):.3g})")
    return w


def make_weight(spec: dict) -> WeightFunction:
    """Build a weight from its JSON description."""
    if not isinstance(spec, dict) or "family" not in spec:
        raise ConfigError("weight spec must be an object with a 'family'", field="weight")
    fam = spec["family"]
    try:
        if fam == "constant":
            return constant(spec.get("c", 1.0))
        if fam == "exp":
            return exponential(spec.get("t", 1.0))
        if fam == "sasaki":
            return sasaki(spec["a"], spec.get("m", 1.0), spec.get("xi", 1.0))
        if fam == "poly":
            return polynomial(spec["factors"], validate=spec.get("validate", True))
        if fam == "table":
            return table(spec["points"], spec["values"])
    except KeyError as exc:
        raise ConfigError(f"missing weight parameter {exc}", field="weight") from None
    raise ConfigError(f"unknown weight family {fam!r}", field="weight.family")


# ---------------------------------------------------------------------------
# admissibility


@dataclass
class HessianCheck:
    holds: bool
    margin: np.ndarray
    log_concave: bool
    log_hessian: np.ndarray
    max_margin: float


def hessian_condition_check(v: WeightFunction, n: int = 1, mu=None, tol: float = 1e-12) -> HessianCheck:
    """Evaluate v'' - ((n+1)/n) v'^2 / v and the log-concavity of v."""
    mu = np.linspace(0.0, 1.0, 401) if mu is None else np.asarray(mu, dtype=float)
    val, g, h = v.value(mu), v.grad(mu), v.hess(mu)
    margin = h - ((n + 1.0) / n) * g * g / val
    logh = h / val - (g / val) ** 2
    return HessianCheck(
        holds=bool(np.max(margin) <= tol),
        margin=margin,
        log_concave=bool(np.max(logh) <= tol),
        log_hessian=logh,
        max_margin=float(np.max(margin)),
    )


# ---------------------------------------------------------------------------
# Fourier machinery


def _psi(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def smoothstep(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    a, b = _psi(t), _psi(1.0 - np.asarray(t, dtype=float))
    return a / (a + b)


def window(t, margin: float):
    t = np.asarray(t, dtype=float)
    out = np.ones_like(t)
    left = t < 0
    right = t > 1
    out[left] = smoothstep((t[left] + margin) / margin)
    out[right] = smoothstep((1.0 + margin - t[right]) / margin)
    return out


def max_margin(v: WeightFunction, requested: float) -> float:
    """Margin capped below the distance to a singularity of the family."""
    s = v.singular_point
    if s is None:
        return requested
    dist = -s if s < 0 else s - 1.0
    if dist <= 0:
        raise NonPositiveWeight("weight singular inside [0,1]")
    return min(requested, 0.8 * dist)


@dataclass
class FourierData:
    """Windowed extension and its sampled Fourier transform.

    ``fhat[k]`` approximates int v_ext(t) exp(-i xi_k t) dt; integrals against
    it use the dual measure d(xi)/2pi.
    """

    weight: WeightFunction
    margin: float
    cutoff: float
    step: float
    xi: np.ndarray
    fhat: np.ndarray
    roundtrip_error: float
    tail_estimate: float

    def extension(self, t):
        return self.weight.value(t) * window(t, self.margin)

    def pair(self, kernel_values) -> complex:
        return complex(np.sum(kernel_values * self.fhat) * self.step / (2.0 * np.pi))

    def inverse(self, mu):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        phase = np.exp(1j * np.outer(mu, self.xi))
        return np.real(phase @ self.fhat) * self.step / (2.0 * np.pi)


def _transform(xi, t, ext, h, chunk=256):
    out = np.empty(xi.size, dtype=complex)
    for i in range(0, xi.size, chunk):
        out[i:i + chunk] = (np.exp(-1j * np.outer(xi[i:i + chunk], t)) @ ext) * h
    return out


def fourier_data(
    v: WeightFunction,
    cutoff: float | None = None,
    step: float | None = None,
    margin: float = 0.5,
    samples: int | None = None,
    tol: float = TAU_FT,
    tail_tol: float = 1e-7,
    max_cutoff: float = 3200.0,
) -> FourierData:
    """Sample the Fourier transform of the windowed extension of ``v``.

    With ``cutoff=None`` the band limit starts at 400 and doubles until the
    estimated tail (weighted by 1 + |xi| so that derivative kernels are
    covered) falls below ``tail_tol`` or ``max_cutoff`` is reached.
    """
    if (cutoff is not None and cutoff <= 0) or (step is not None and step <= 0):
        raise ConfigError("cutoff and step must be positive", field="fourier")
    m = max_margin(v, margin)
    if step is None:
        step = min(0.5 * math.pi, 2.0 * math.pi / (1.0 + 2.0 * m) * 0.9)
    # the support of the extension has length 1 + 2m; aliasing needs 2pi/step > that
    if 2.0 * math.pi / step <= 1.0 + 2.0 * m:
        raise ConfigError("frequency step too coarse for the extension support", field="fourier.step")
    adaptive = cutoff is None
    cut = 400.0 if adaptive else float(cutoff)
    while True:
        n_t = samples or max(4096, int(2 * cut * (1.0 + 2.0 * m)))
        kmax = int(math.floor(cut / step))
        xi = step * np.arange(-kmax, kmax + 1)
        t = np.linspace(-m, 1.0 + m, n_t + 1)
        h = t[1] - t[0]
        ext = v.value(t) * window(t, m)
        ext[0] = ext[-1] = 0.0
        fhat = _transform(xi, t, ext, h)
        band = np.abs(xi) > 0.8 * cut
        tail = float(np.sum(np.abs(fhat[band]) * (1.0 + np.abs(xi[band]))) * step / (2.0 * np.pi))
        if not adaptive or tail < tail_tol or 2 * cut > max_cutoff:
            break
        cut *= 2.0
    fd = FourierData(v, m, cut, float(step), xi, fhat, 0.0, tail)
    probe = np.linspace(0.0, 1.0, 41)
    err = float(np.max(np.abs(fd.inverse(probe) - v.value(probe))))
    fd.roundtrip_error = err
    if err > tol:
        raise InversionMismatch(f"Fourier round trip error {err:.3g} exceeds {tol:g}")
    return fd
