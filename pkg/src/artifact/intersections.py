"""Weighted equivariant intersection numbers on the model sphere.

Three independent backends compute each number:

* ``profile``      quadrature of curvature/moment-map integrands for a metric,
* ``closed_form``  evaluation of the boundary (fixed point) formula,
* ``fourier``      frequency integral of the equivariant kernel against the
                   Fourier transform of a windowed extension of the weight.

Every public function returns the profile value and raises BackendMismatch if
the backends disagree by more than ``tol``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import BackendMismatch, DegenerateDenominator, TruncationWarning
from .geometry import (
    EquivariantBundle,
    EquivariantLineBundle,
    MetricProfile,
    contraction_matrix,
    curvature_package,
    geometry,
    reference_metric,
)
from .weights import FourierData, WeightFunction, exponential, fourier_data

TAU_BACKEND = 1e-4


@lru_cache(maxsize=64)
def _fourier(v: WeightFunction, margin: float = 0.5) -> FourierData:
    return fourier_data(v, margin=margin)


def _endpoints(v: WeightFunction):
    vals = v.value(np.array([0.0, 1.0]))
    ders = v.grad(np.array([0.0, 1.0]))
    return vals, ders


def _lifts(bundle: EquivariantBundle):
    w0 = np.array([s.w0 for s in bundle.summands], dtype=float)
    w1 = np.array([s.w1 for s in bundle.summands], dtype=float)
    return w0, w1


def _trace(M):
    return np.real(np.trace(M, axis1=-2, axis2=-1))


def _gate(name, values: dict, tol: float):
    vals = [x for x in values.values() if x is not None]
    gap = max(vals) - min(vals) if vals else 0.0
    if gap > tol:
        raise BackendMismatch(f"{name}: backends disagree by {gap:.3g} ({values})")
    return gap


# ---------------------------------------------------------------------------
# closed forms


def closed_volume_exp(t: float) -> float:
    return 1.0 if t == 0 else math.expm1(t) / t


def closed_degree(bundle: EquivariantBundle, v: WeightFunction) -> float:
    (v0, v1), _ = _endpoints(v)
    w0, w1 = _lifts(bundle)
    return float(math.fsum(v1 * w1 - v0 * w0))


def closed_char_squares(bundle: EquivariantBundle, v: WeightFunction):
    _, (d0, d1) = _endpoints(v)
    w0, w1 = _lifts(bundle)
    c1sq = d1 * w1.sum() ** 2 - d0 * w0.sum() ** 2
    ch2 = 0.5 * math.fsum(d1 * w1**2 - d0 * w0**2)
    return float(c1sq), float(ch2)


# ---------------------------------------------------------------------------
# Fourier backend


def _kernel(selector: str, bundle: EquivariantBundle | None, xi: np.ndarray) -> np.ndarray:
    ixi = 1j * xi
    e = np.exp(ixi)
    if selector == "1":
        out = np.ones_like(ixi)
        nz = xi != 0
        out[nz] = (e[nz] - 1.0) / ixi[nz]
        return out
    w0, w1 = _lifts(bundle)
    if selector == "c1":
        return w1.sum() * e - w0.sum()
    if selector == "c1sq":
        return ixi * (w1.sum() ** 2 * e - w0.sum() ** 2)
    if selector == "ch2":
        return 0.5 * ixi * ((w1**2).sum() * e - (w0**2).sum())
    raise ValueError(f"unknown selector {selector!r}")


def fourier_backend(selector: str, bundle: EquivariantBundle | None, v: WeightFunction,
                    fd: FourierData | None = None, tol: float = TAU_BACKEND) -> float:
    """Frequency-integral value of (beta . v(alpha)) for beta in {1, c1, c1sq, ch2}."""
    fd = fd or _fourier(v)
    kern = _kernel(selector, bundle, fd.xi)
    value = fd.pair(kern)
    tail = np.abs(fd.xi) > 0.8 * fd.cutoff
    estimate = float(np.sum(np.abs(kern[tail] * fd.fhat[tail])) * fd.step / (2.0 * np.pi))
    if estimate > tol:
        warnings.warn(
            f"Fourier integral for {selector} truncated at {fd.cutoff:g}; tail estimate {estimate:.2g}",
            TruncationWarning,
            stacklevel=2,
        )
    return float(value.real)


# ---------------------------------------------------------------------------
# profile backend


def profile_volume(v: WeightFunction, geom=None) -> float:
    geom = geom or geometry()
    return float(geom.integrate(v.value(geom.mu)))


def profile_degree(bundle, v, metric: MetricProfile | None = None) -> float:
    metric = metric or reference_metric(bundle)
    geom = metric.geom
    K = contraction_matrix(geom, bundle, metric.matrix(), v.value(geom.mu))
    return float(geom.integrate(_trace(K)))


def profile_char_squares(bundle, v, metric: MetricProfile | None = None):
    metric = metric or reference_metric(bundle)
    geom = metric.geom
    pkg = curvature_package(bundle, metric)
    mu = geom.mu
    d1, d2 = v.grad(mu), v.hess(mu)
    tphi, trho = _trace(pkg.phi), _trace(pkg.rho)
    c1sq = geom.integrate(2.0 * d1 * tphi * trho + d2 * tphi**2)
    ch2 = geom.integrate(d1 * _trace(pkg.rho @ pkg.phi) + 0.5 * d2 * _trace(pkg.phi @ pkg.phi))
    return float(c1sq), float(ch2)


# ---------------------------------------------------------------------------
# public operations


def weighted_volume(v: WeightFunction, geom=None, tol: float = TAU_BACKEND, fourier: bool = True) -> float:
    prof = profile_volume(v, geom)
    values = {"profile": prof}
    if v.family == "exp":
        values["closed_form"] = closed_volume_exp(v.params["t"])
    if fourier:
        values["fourier"] = fourier_backend("1", None, v, tol=tol)
    _gate("weighted_volume", values, tol)
    return prof


def weighted_degree(bundle, v, metric=None, tol: float = TAU_BACKEND, fourier: bool = True) -> float:
    prof = profile_degree(bundle, v, metric)
    values = {"profile": prof, "closed_form": closed_degree(bundle, v)}
    if fourier:
        values["fourier"] = fourier_backend("c1", bundle, v, tol=tol)
    _gate("weighted_degree", values, tol)
    return prof


def weighted_slope(bundle, v, metric=None, **kw) -> float:
    if isinstance(bundle, EquivariantLineBundle):
        bundle = EquivariantBundle.split([bundle])
    return weighted_degree(bundle, v, metric, **kw) / bundle.rank


def slope_closed(bundle, v) -> float:
    if isinstance(bundle, EquivariantLineBundle):
        bundle = EquivariantBundle.split([bundle])
    return closed_degree(bundle, v) / bundle.rank


def einstein_constant(bundle, v, w: WeightFunction | None = None, **kw):
    """(c_v, c_{v,w}); the model has unit volume."""
    cv = weighted_degree(bundle, v, **kw) / bundle.rank
    cvw = None if w is None else cv / weighted_volume(w, **{k: x for k, x in kw.items() if k == "tol"})
    return cv, cvw


def char_square_numbers(bundle, metric, v, tol: float = TAU_BACKEND, reference=None):
    """(c1sq_v, ch2_v, c2_v) from the profile integrals of ``metric``.

    The value from ``reference`` (default: the canonical reference metric) is
    used as a second representative; both must agree with the closed form.
    """
    c1sq, ch2 = profile_char_squares(bundle, v, metric)
    c1sq_ref, ch2_ref = profile_char_squares(bundle, v, reference)
    c1sq_cf, ch2_cf = closed_char_squares(bundle, v)
    _gate("c1sq", {"metric": c1sq, "reference": c1sq_ref, "closed_form": c1sq_cf}, tol)
    _gate("ch2", {"metric": ch2, "reference": ch2_ref, "closed_form": ch2_cf}, tol)
    return c1sq, ch2, (c1sq - 2.0 * ch2) / 2.0


def delta_v(c1sq: float, ch2: float, rank: int) -> float:
    return c1sq - 2.0 * rank * ch2


@dataclass
class IntersectionReport:
    weighted_volume: float
    weighted_degree: float
    slope: float
    einstein_constant: float
    c_vw: float | None
    c1sq_v: float
    ch2_v: float
    c2_v: float
    delta_v: float
    summand_degrees: list
    backend_disagreement: float
    backends: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "weighted_volume": self.weighted_volume,
            "weighted_degree": self.weighted_degree,
            "slope": self.slope,
            "einstein_constant": self.einstein_constant,
            "c_vw": self.c_vw,
            "c1sq_v": self.c1sq_v,
            "ch2_v": self.ch2_v,
            "c2_v": self.c2_v,
            "delta_v": self.delta_v,
            "summand_degrees": self.summand_degrees,
            "backend_disagreement": self.backend_disagreement,
            "backends": self.backends,
            "provenance": self.provenance,
        }


def intersection_report(bundle: EquivariantBundle, v: WeightFunction, w: WeightFunction | None = None,
                        metric: MetricProfile | None = None, tol: float = TAU_BACKEND) -> IntersectionReport:
    """All numbers with per-backend values; raises BackendMismatch above ``tol``."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", TruncationWarning)
        vol = {"profile": profile_volume(v), "fourier": fourier_backend("1", None, v, tol=tol)}
        deg = {
            "profile": profile_degree(bundle, v, metric),
            "closed_form": closed_degree(bundle, v),
            "fourier": fourier_backend("c1", bundle, v, tol=tol),
        }
        c1p, chp = profile_char_squares(bundle, v, metric)
        c1c, chc = closed_char_squares(bundle, v)
        c1sq = {"profile": c1p, "closed_form": c1c, "fourier": fourier_backend("c1sq", bundle, v, tol=tol)}
        ch2 = {"profile": chp, "closed_form": chc, "fourier": fourier_backend("ch2", bundle, v, tol=tol)}
    if v.family == "exp":
        vol["analytic_continuation"] = closed_volume_exp(v.params["t"])
    gaps = [_gate(name, vals, tol) for name, vals in
            (("weighted_volume", vol), ("weighted_degree", deg), ("c1sq", c1sq), ("ch2", ch2))]
    r = bundle.rank
    cv = deg["profile"] / r
    cvw = None
    if w is not None:
        cvw = cv / weighted_volume(w, tol=tol)
    provenance = {
        "volume": "quadrature cross-checked by Fourier",
        "degree": "metric curvature integral vs fixed-point boundary formula vs Fourier",
        "fourier_cutoff": _fourier(v).cutoff,
        "fourier_step": _fourier(v).step,
        "fourier_margin": _fourier(v).margin,
        "truncation_warnings": [str(c.message) for c in caught],
    }
    if v.family == "exp":
        provenance["analytic_continuation"] = "closed forms evaluated on the entire extension of exp"
    return IntersectionReport(
        weighted_volume=vol["profile"],
        weighted_degree=deg["profile"],
        slope=cv,
        einstein_constant=cv,
        c_vw=cvw,
        c1sq_v=c1sq["profile"],
        ch2_v=ch2["profile"],
        c2_v=(c1sq["profile"] - 2.0 * ch2["profile"]) / 2.0,
        delta_v=delta_v(c1sq["profile"], ch2["profile"], r),
        summand_degrees=[closed_degree(bundle.sub([i]), v) for i in range(r)],
        backend_disagreement=max(gaps),
        backends={"weighted_volume": vol, "weighted_degree": deg, "c1sq_v": c1sq, "ch2_v": ch2},
        provenance=provenance,
    )


# ---------------------------------------------------------------------------
# beta invariant on the Fano sphere

TANGENT = EquivariantLineBundle(2, -1, 1)


def fano_weight(s: float) -> WeightFunction:
    """exp(s mu_F) with mu_F = 2 mu - 1 the Fano-normalized moment map."""
    base = exponential(2.0 * s)
    scale = math.exp(-s)
    return WeightFunction(
        "exp", {"t": 2.0 * s, "scale": scale},
        lambda mu: scale * base.value(mu),
        lambda mu: scale * base.grad(mu),
        lambda mu: scale * base.hess(mu),
    )


def fano_degree(line: EquivariantLineBundle, s: float) -> float:
    """(c1(F)_T . e^{c1(X)_T})(s) by the boundary formula on [-1, 1]."""
    return line.w1 * math.exp(s) - line.w0 * math.exp(-s)


def fano_volume(s: float) -> float:
    """(e^{c1(X)_T})(s), the weighted volume of the Fano sphere."""
    return 2.0 if s == 0 else (math.exp(s) - math.exp(-s)) / s


@dataclass
class BetaReport:
    xi: float
    beta: float
    beta_min: float
    liftable: bool
    numerator: float
    denominator: float
    denominator_profile: float
    gamma_sq: float


def beta_invariant(subsheaf: EquivariantLineBundle, liftable: bool, xi: float, n: int = 1,
                   tangent: EquivariantLineBundle = TANGENT) -> BetaReport:
    rk = 1
    if liftable:
        pref = (n + 1.0) / (n + 1.0 - rk)
    else:
        if n - rk == 0:
            raise DegenerateDenominator(
                f"non-liftable case needs n > rk(F); here n = {n} and rk(F) = {rk}"
            )
        pref = n / (n - rk)
    num = fano_degree(subsheaf, xi)
    den = fano_degree(tangent, xi)
    den_profile = profile_degree(EquivariantBundle.split([tangent]), fano_weight(xi))
    beta = pref * (1.0 - num / den)
    gamma_sq = 2.0 * math.pi / (n + 1.0) * fano_volume(xi) / 2.0
    return BetaReport(xi, beta, min(1.0, beta), liftable, num, den, den_profile, gamma_sq)
