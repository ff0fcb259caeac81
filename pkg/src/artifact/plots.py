"""Static SVG plots with a fixed viewport and no timestamps.

Coordinates are printed with three decimals so that identical input gives
byte-identical files.
"""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .errors import EmptySeries

WIDTH, HEIGHT = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 70, 20, 40, 50
COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
KINDS = ("profile", "convergence", "polytope-weight")


def _n(x: float) -> str:
    s = f"{x:.3f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def _nice_ticks(lo: float, hi: float, count: int = 5) -> list:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / count
    mag = 10.0 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    start = math.ceil(lo / step - 1e-9) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks


def _label(x: float) -> str:
    return f"{x:.6g}"


class _Axes:
    def __init__(self, xlim, ylim, logx=False, logy=False):
        self.logx, self.logy = logx, logy
        self.x0, self.x1 = (math.log10(v) for v in xlim) if logx else xlim
        self.y0, self.y1 = (math.log10(v) for v in ylim) if logy else ylim
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 <= self.y0:
            pad = max(abs(self.y0), 1.0) * 0.05
            self.y0, self.y1 = self.y0 - pad, self.y1 + pad

    def px(self, x):
        x = math.log10(x) if self.logx else x
        return LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)

    def py(self, y):
        y = math.log10(y) if self.logy else y
        return HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)

    def ticks(self, axis):
        lo, hi, log = (self.x0, self.x1, self.logx) if axis == "x" else (self.y0, self.y1, self.logy)
        if log:
            return [10.0 ** e for e in range(math.ceil(lo - 1e-9), math.floor(hi + 1e-9) + 1)]
        return _nice_ticks(lo, hi)


def _frame(ax: _Axes, title: str, xlabel: str, ylabel: str) -> list:
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{LEFT}" y="{TOP}" width="{WIDTH - LEFT - RIGHT}" height="{HEIGHT - TOP - BOTTOM}" '
        'fill="none" stroke="black"/>',
    ]
    for t in ax.ticks("x"):
        x = ax.px(t)
        out.append(f'<line x1="{_n(x)}" y1="{HEIGHT - BOTTOM}" x2="{_n(x)}" y2="{HEIGHT - BOTTOM + 5}" stroke="black"/>')
        out.append(f'<text x="{_n(x)}" y="{HEIGHT - BOTTOM + 18}" text-anchor="middle">{_label(t)}</text>')
    for t in ax.ticks("y"):
        y = ax.py(t)
        out.append(f'<line x1="{LEFT - 5}" y1="{_n(y)}" x2="{LEFT}" y2="{_n(y)}" stroke="black"/>')
        out.append(f'<text x="{LEFT - 8}" y="{_n(y + 4)}" text-anchor="end">{_label(t)}</text>')
    out.append(f'<text x="{(LEFT + WIDTH - RIGHT) // 2}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{(TOP + HEIGHT - BOTTOM) // 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {(TOP + HEIGHT - BOTTOM) // 2})">{escape(ylabel)}</text>')
    return out


def _polyline(ax: _Axes, xs, ys, color: str, dash: str | None = None) -> str:
    pts = " ".join(f"{_n(ax.px(x))},{_n(ax.py(y))}" for x, y in zip(xs, ys))
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"{extra}/>'


def _legend(names, colors) -> list:
    out = []
    for i, (name, c) in enumerate(zip(names, colors)):
        y = TOP + 14 + 16 * i
        x = WIDTH - RIGHT - 170
        out.append(f'<line x1="{x}" y1="{y - 4}" x2="{x + 20}" y2="{y - 4}" stroke="{c}" stroke-width="2"/>')
        out.append(f'<text x="{x + 26}" y="{y}">{escape(name)}</text>')
    return out


def _curves(series):
    """Normalize the input to a list of (name, x, y) with finite data."""
    if isinstance(series, dict) and "x" in series:
        series = [series]
    out = []
    for i, s in enumerate(series or []):
        x = np.asarray(s.get("x", []), dtype=float)
        y = np.asarray(s.get("y", []), dtype=float)
        if x.size == 0 or x.size != y.size:
            continue
        out.append((s.get("name", f"series {i}"), x, y))
    if not out:
        raise EmptySeries("plot needs at least one non-empty (x, y) series")
    return out


def render(series, kind: str = "profile", title: str | None = None, xlabel: str | None = None,
           ylabel: str | None = None) -> str:
    """SVG text for the series; see ``emit_plot``."""
    if kind not in KINDS:
        raise ValueError(f"unknown plot kind {kind!r}")
    curves = _curves(series)
    names = [c[0] for c in curves]
    colors = [COLORS[i % len(COLORS)] for i in range(len(curves))]
    if kind == "convergence":
        curves = [(nm, x[(x > 0) & (y > 0)], y[(x > 0) & (y > 0)]) for nm, x, y in curves]
        if not any(x.size for _, x, _ in curves):
            raise EmptySeries("convergence plot needs positive data")
        xs = np.concatenate([x for _, x, _ in curves])
        ys = np.concatenate([y for _, _, y in curves])
        i0 = int(np.argmax(xs))
        # 1/eps guide through the point with the largest epsilon
        gx = np.array([xs.min(), xs.max()])
        gy = ys[i0] * xs[i0] / gx
        ylo = 10.0 ** math.floor(math.log10(min(ys.min(), gy.min())))
        yhi = 10.0 ** math.ceil(math.log10(max(ys.max(), gy.max())))
        xlo = 10.0 ** math.floor(math.log10(xs.min()))
        xhi = 10.0 ** math.ceil(math.log10(xs.max()))
        ax = _Axes((xlo, xhi), (ylo, yhi), logx=True, logy=True)
        body = _frame(ax, title or "continuity convergence", xlabel or "epsilon", ylabel or "m_eps")
        body.append(_polyline(ax, gx, gy, "#7f7f7f", dash="6,4"))
        names, colors = names + ["1/epsilon guide"], colors + ["#7f7f7f"]
    else:
        xs = np.concatenate([x for _, x, _ in curves])
        ys = np.concatenate([y for _, _, y in curves])
        if kind == "polytope-weight":
            xlim = (min(0.0, xs.min()), max(1.0, xs.max()))
            ylim = (min(0.0, ys.min()), ys.max() * 1.05)
        else:
            xlim = (xs.min(), xs.max())
            pad = 0.05 * (ys.max() - ys.min() or 1.0)
            ylim = (ys.min() - pad, ys.max() + pad)
        ax = _Axes(xlim, ylim)
        default_title = "weight on the moment polytope" if kind == "polytope-weight" else "moment profile"
        body = _frame(ax, title or default_title, xlabel or "mu", ylabel or ("v(mu)" if kind == "polytope-weight" else "phi(mu)"))
        if kind == "polytope-weight":
            for end in (0.0, 1.0):
                x = _n(ax.px(end))
                body.append(f'<line x1="{x}" y1="{TOP}" x2="{x}" y2="{HEIGHT - BOTTOM}" stroke="#444" stroke-dasharray="2,3"/>')
    for (nm, x, y), c in zip(curves, colors):
        body.append(_polyline(ax, x, y, c))
        if kind == "convergence":
            for xi, yi in zip(x, y):
                body.append(f'<circle cx="{_n(ax.px(xi))}" cy="{_n(ax.py(yi))}" r="2" fill="{c}"/>')
    body += _legend(names, colors)
    body.append("</svg>")
    return "\n".join(body) + "\n"


def emit_plot(series, kind: str, path, **labels) -> Path:
    """Write the SVG for ``series`` (dict or list of dicts with x, y, name)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render(series, kind, **labels))
    return path
