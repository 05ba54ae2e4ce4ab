"""Minimal standalone SVG line plots."""

from __future__ import annotations

import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 420
MARGIN = (70, 30, 30, 60)  # left, right, top, bottom
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

# kind -> (log x, log y, fit a line)
PLOT_KINDS = {
    "relax-scaling": (True, True, True),
    "shell": (False, False, True),
    "collapse": (False, False, False),
    "gap": (True, False, False),
    "line": (False, False, False),
}


class PlotError(ValueError):
    pass


@dataclass
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.shape != self.y.shape:
            raise PlotError(f"series {self.label!r}: x and y lengths differ")


def fit_line(x, y) -> tuple[float, float]:
    """Least-squares slope and intercept."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if len(x) < 2 or np.ptp(x) == 0:
        raise PlotError("need two distinct abscissae to fit a line")
    slope, icpt = np.polyfit(x, y, 1)
    return float(slope), float(icpt)


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    step = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(step))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= step), default=step)
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-9 * step:
        out.append(round(v, 12))
        v += step
    return out


def _fmt_tick(v: float, log: bool) -> str:
    if log:
        return f"{10 ** v:.3g}"
    return f"{v:.3g}"


def emit_plot(series, kind: str, title: str = "", xlabel: str = "x", ylabel: str = "y") -> str:
    """Standalone SVG for ``series`` (a list of :class:`Series` or ``(label, x, y)`` tuples).

    For kinds that fit a line, the first series gets a least-squares overlay in
    the plotted coordinates and a ``slope = ...`` annotation.
    """
    if kind not in PLOT_KINDS:
        raise PlotError(f"unknown plot kind {kind!r}")
    logx, logy, fit = PLOT_KINDS[kind]
    ss = [s if isinstance(s, Series) else Series(*s) for s in series]
    ss = [s for s in ss if len(s.x)]
    if not ss:
        raise PlotError("nothing to plot: empty series")

    def tx(s):
        x, y = s.x, s.y
        keep = np.isfinite(x) & np.isfinite(y)
        if logx:
            keep &= x > 0
        if logy:
            keep &= y > 0
        x, y = x[keep], y[keep]
        return (np.log10(x) if logx else x), (np.log10(y) if logy else y)

    pts = [tx(s) for s in ss]
    allx = np.concatenate([p[0] for p in pts])
    ally = np.concatenate([p[1] for p in pts])
    if len(allx) == 0:
        raise PlotError("no finite points to plot")
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = float(ally.min()), float(ally.max())
    if x1 == x0:
        raise PlotError("degenerate x range")
    if y1 == y0:
        # a flat curve is legitimate; widen the range symmetrically
        pad = abs(y0) * 0.1 or 1.0
        y0, y1 = y0 - pad, y1 + pad
    L, R, T, B = MARGIN
    pw, ph = WIDTH - L - R, HEIGHT - T - B

    def px(v):
        return L + (v - x0) / (x1 - x0) * pw

    def py(v):
        return T + (1 - (v - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{L}" y="{T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for v in _ticks(x0, x1):
        X = px(v)
        out.append(f'<line x1="{X:.2f}" y1="{T + ph}" x2="{X:.2f}" y2="{T + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{X:.2f}" y="{T + ph + 18}" text-anchor="middle">{_fmt_tick(v, logx)}</text>')
    for v in _ticks(y0, y1):
        Y = py(v)
        out.append(f'<line x1="{L - 5}" y1="{Y:.2f}" x2="{L}" y2="{Y:.2f}" stroke="black"/>')
        out.append(f'<text x="{L - 8}" y="{Y + 4:.2f}" text-anchor="end">{_fmt_tick(v, logy)}</text>')
    out.append(f'<text x="{L + pw / 2}" y="{HEIGHT - 15}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="15" y="{T + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 15 {T + ph / 2})">{escape(ylabel)}</text>')
    if title:
        out.append(f'<text x="{L + pw / 2}" y="{T - 10}" text-anchor="middle">{escape(title)}</text>')

    for k, (s, (x, y)) in enumerate(zip(ss, pts)):
        col = COLORS[k % len(COLORS)]
        if len(x) > 1:
            path = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
            out.append(f'<polyline points="{path}" fill="none" stroke="{col}" stroke-width="1.5"/>')
        for a, b in zip(x, y):
            out.append(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="3" fill="{col}"/>')
        out.append(f'<text x="{L + 10}" y="{T + 16 + 14 * k}" fill="{col}">{escape(s.label)}</text>')

    if fit:
        x, y = pts[0]
        slope, icpt = fit_line(x, y)
        out.append(f'<line x1="{px(x0):.2f}" y1="{py(slope * x0 + icpt):.2f}" x2="{px(x1):.2f}" '
                   f'y2="{py(slope * x1 + icpt):.2f}" stroke="gray" stroke-dasharray="5,4"/>')
        out.append(f'<text x="{L + pw - 10}" y="{T + 16}" text-anchor="end">slope = {slope:.3f}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
