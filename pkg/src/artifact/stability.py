"""Weighted slope and Gieseker stability for split equivariant bundles."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import FitDiverged, Inconclusive, NegativeTwist
from .geometry import EquivariantBundle, EquivariantLineBundle
from .weights import WeightFunction

SLOPE_TOL = 1e-10


def _line_degree(line: EquivariantLineBundle, v0: float, v1: float) -> float:
    return v1 * line.w1 - v0 * line.w0


@dataclass
class SubsheafCandidate:
    indices: tuple
    twists: tuple
    lines: tuple
    pruned: bool = False
    slope: float | None = None

    @property
    def rank(self) -> int:
        return len(self.indices)

    def label(self) -> str:
        return " + ".join(l.label() for l in self.lines)

    def to_dict(self) -> dict:
        return {
            "indices": list(self.indices),
            "twists": [list(t) for t in self.twists],
            "lines": [l.label() for l in self.lines],
            "pruned": self.pruned,
            "slope": self.slope,
        }


def candidate_slope(cand: SubsheafCandidate, v: WeightFunction) -> float:
    v0, v1 = (float(x) for x in v.value(np.array([0.0, 1.0])))
    return math.fsum(_line_degree(l, v0, v1) for l in cand.lines) / cand.rank


def enumerate_candidates(bundle: EquivariantBundle, v: WeightFunction | None = None,
                         max_twist: int = 1) -> list:
    """Proper summand subsets, plus endpoint-twisted variants marked as pruned.

    A twist (m0, m1) replaces L by L(-m0 p0 - m1 p1) with lifts
    (w0 + m0, w1 - m1); its weighted degree drops by v(0) m0 + v(1) m1 > 0,
    so twisted candidates never maximize the slope.
    """
    r = bundle.rank
    out = []
    options = [(m0, m1) for m0 in range(max_twist + 1) for m1 in range(max_twist + 1)]
    for size in range(1, r):
        for idx in itertools.combinations(range(r), size):
            for tw in itertools.product(options, repeat=size):
                lines = tuple(bundle.summands[i].twisted(*t) for i, t in zip(idx, tw))
                cand = SubsheafCandidate(idx, tuple(tw), lines, pruned=any(t != (0, 0) for t in tw))
                if v is not None:
                    cand.slope = candidate_slope(cand, v)
                out.append(cand)
    return out


@dataclass
class StabilityVerdict:
    verdict: str
    bundle_slope: float
    witness: SubsheafCandidate | None
    witness_set: list
    slope_table: list
    summand_slopes: list

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "bundle_slope": self.bundle_slope,
            "witness": None if self.witness is None else self.witness.to_dict(),
            "witness_set": [c.to_dict() for c in self.witness_set],
            "slope_table": [c.to_dict() for c in self.slope_table],
            "summand_slopes": self.summand_slopes,
        }


def stability_verdict(bundle: EquivariantBundle, v: WeightFunction, tol: float = SLOPE_TOL) -> StabilityVerdict:
    v0, v1 = (float(x) for x in v.value(np.array([0.0, 1.0])))
    degs = [_line_degree(s, v0, v1) for s in bundle.summands]
    mu_e = math.fsum(degs) / bundle.rank
    scale = tol * max(1.0, abs(mu_e))
    cands = [c for c in enumerate_candidates(bundle, v) if not c.pruned]
    if bundle.rank == 1:
        return StabilityVerdict("stable", mu_e, None, [], [], degs)
    above = [c for c in cands if c.slope > mu_e + scale]
    touching = [c for c in cands if abs(c.slope - mu_e) <= scale]
    if above:
        witness = max(above, key=lambda c: (c.slope, -c.rank, [-i for i in c.indices]))
        verdict = "unstable"
    elif all(abs(d - mu_e) <= scale for d in degs):
        witness, verdict = None, "polystable"
    elif touching:
        witness, verdict = touching[0], "semistable-not-stable"
    else:
        witness, verdict = None, "stable"
    return StabilityVerdict(verdict, mu_e, witness, above, cands, degs)


# ---------------------------------------------------------------------------
# weighted Euler characteristic


def weight_spectrum(bundle: EquivariantBundle, k: int) -> list:
    """Scaled torus weights of H^0(E (x) L^k) as exact fractions, per summand."""
    if k < 1:
        raise NegativeTwist(f"k must be positive, got {k}")
    out = []
    for s in bundle.summands:
        top = s.degree + k
        if top < 0:
            raise NegativeTwist(f"summand {s.label()} has d + k = {top} < 0")
        out.append([Fraction(s.w0 + j, k) for j in range(top + 1)])
    return out


def chi_v(bundle: EquivariantBundle, v: WeightFunction, k: int) -> float:
    total = []
    for weights in weight_spectrum(bundle, k):
        pts = np.array([float(w) for w in weights])
        total.extend(np.asarray(v.value(pts), dtype=float).tolist())
    return math.fsum(total)


def _chi_fast(bundle, v, k) -> float:
    """Same sum as chi_v without building Fractions (used for long sweeps)."""
    total = []
    for s in bundle.summands:
        top = s.degree + k
        if top < 0:
            raise NegativeTwist(f"summand {s.label()} has d + k = {top} < 0")
        pts = (s.w0 + np.arange(top + 1, dtype=float)) / k
        total.extend(np.asarray(v.value(pts), dtype=float).tolist())
    return math.fsum(total)


def dyadic(kmin: int = 64, kmax: int = 1024) -> list:
    out, k = [], kmin
    while k <= kmax:
        out.append(k)
        k *= 2
    return out


@dataclass
class EulerSeries:
    k_values: list
    chi_values: list
    A: float
    B: float
    A_expected: float
    B_expected: float
    residuals: list
    decay_exponent: float | None
    exact: bool
    outside_unit_interval: int
    passed: bool
    checks: dict = field(default_factory=dict)
    C: float = 0.0

    def rows(self):
        return [
            {"k": k, "chi_v": c, "residual": r}
            for k, c, r in zip(self.k_values, self.chi_values, self.residuals)
        ]


def euler_expansion_check(bundle: EquivariantBundle, v: WeightFunction, k_values=None,
                          volume: float | None = None) -> EulerSeries:
    """Fit chi_v(E_k)/rk = A k + B and compare with the predicted coefficients."""
    from .intersections import profile_volume, slope_closed

    ks = list(k_values or dyadic())
    if max(ks) < 256:
        raise FitDiverged("k range must reach at least 256")
    if len(set(ks)) < 3:
        raise FitDiverged("the fit needs at least three distinct k values")
    r = bundle.rank
    chis = [_chi_fast(bundle, v, k) for k in ks]
    y = np.array(chis) / r
    kk = np.array(ks, dtype=float)
    # the expansion continues with a C/k term; fitting it keeps that term out of B
    A, B, C = np.linalg.lstsq(np.stack([kk, np.ones_like(kk), 1.0 / kk], axis=1), y, rcond=None)[0]
    v0, v1 = (float(x) for x in v.value(np.array([0.0, 1.0])))
    A_exp = profile_volume(v) if volume is None else volume
    B_exp = slope_closed(bundle, v) + 0.5 * (v0 + v1)
    res = y - A_exp * kk - B_exp
    if not np.all(np.isfinite(res)):
        raise FitDiverged("non-finite residuals")
    scale = np.abs(y)
    exact = bool(np.all(np.abs(res) <= 1e-12 * np.maximum(scale, 1.0)))
    expo = None
    if not exact:
        mask = np.abs(res) > 1e-12 * np.maximum(scale, 1.0)
        if mask.sum() >= 2:
            expo = float(np.polyfit(np.log(kk[mask]), np.log(np.abs(res[mask])), 1)[0])
            if expo > 0:
                raise FitDiverged(f"residuals grow with k (exponent {expo:.3g})")
    tol = 5.0 / min(ks)
    checks = {
        "A": bool(abs(A - A_exp) <= tol),
        "B": bool(abs(B - B_exp) <= tol),
        "decay": exact or (expo is not None and abs(expo + 1.0) <= 0.2),
    }
    outside = 0
    for s in bundle.summands:
        for k in ks:
            pts = (s.w0 + np.arange(s.degree + k + 1)) / k
            outside += int(np.sum((pts < 0) | (pts > 1)))
    return EulerSeries(ks, chis, float(A), float(B), float(A_exp), float(B_exp), res.tolist(),
                       expo, exact, outside, all(checks.values()), checks, float(C))


# ---------------------------------------------------------------------------
# Gieseker comparison


@dataclass
class GiesekerReport:
    k_values: list
    entries: list
    verdict: str

    def to_dict(self) -> dict:
        return {"k_values": self.k_values, "entries": self.entries, "verdict": self.verdict}


def gieseker_compare(bundle: EquivariantBundle, v: WeightFunction, k_values=None, tail_fraction: float = 0.5) -> GiesekerReport:
    """Compare chi_v(F_k)/rk F with chi_v(E_k)/rk E for all summand subsets."""
    ks = list(k_values or dyadic(8, 1024))
    chi_e = np.array([_chi_fast(bundle, v, k) for k in ks]) / bundle.rank
    entries = []
    ntail = max(2, int(math.ceil(tail_fraction * len(ks))))
    for cand in enumerate_candidates(bundle):
        if cand.pruned:
            continue
        sub = EquivariantBundle.split(list(cand.lines), couplings="none")
        chi_f = np.array([_chi_fast(sub, v, k) for k in ks]) / sub.rank
        diff = chi_f - chi_e
        tol = 1e-12 * np.maximum(1.0, np.abs(chi_e))
        signs = np.where(np.abs(diff) <= tol, 0, np.sign(diff)).astype(int)
        tail = signs[-ntail:]
        if len(set(tail.tolist())) != 1:
            raise Inconclusive(
                f"ordering of {cand.label()} against E changes sign in the tail of the k range"
            )
        final = int(tail[-1])
        start = len(signs) - 1
        while start > 0 and signs[start - 1] == final:
            start -= 1
        entries.append({
            "indices": list(cand.indices),
            "candidate": cand.label(),
            "differences": diff.tolist(),
            "signs": signs.tolist(),
            "eventual": {1: "destabilizes", 0: "equal", -1: "below"}[final],
            "stable_from_k": ks[start],
        })
    finals = [e["eventual"] for e in entries]
    if "destabilizes" in finals:
        verdict = "gieseker-unstable"
    elif "equal" in finals:
        verdict = "equal through O(1), refine"
    else:
        verdict = "gieseker-stable"
    return GiesekerReport(ks, entries, verdict)
