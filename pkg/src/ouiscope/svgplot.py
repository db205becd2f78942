"""Minimal deterministic SVG line charts.

Output depends only on the data: no timestamps, ids or random colors, so
regenerating a plot from the same logs gives byte-identical files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf", "#7f7f7f", "#bcbd22"]

MAX_POINTS = 800


@dataclass
class Series:
    label: str
    x: Sequence[float]
    y: Sequence[float]
    lower: Optional[Sequence[float]] = None
    upper: Optional[Sequence[float]] = None
    right_axis: bool = False
    dashed: bool = False


@dataclass
class Chart:
    title: str
    xlabel: str
    ylabel: str
    series: List[Series] = field(default_factory=list)
    ylabel_right: Optional[str] = None


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _tick_label(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.1e}"
    return f"{v:.4g}"


def _thin(x, *ys):
    x = np.asarray(x, dtype=float)
    if x.size <= MAX_POINTS:
        return (x,) + tuple(None if y is None else np.asarray(y, dtype=float) for y in ys)
    idx = np.unique(np.linspace(0, x.size - 1, MAX_POINTS).astype(int))
    return (x[idx],) + tuple(None if y is None else np.asarray(y, dtype=float)[idx] for y in ys)


def _range(arrays):
    vals = np.concatenate([a[np.isfinite(a)] for a in arrays if a is not None and a.size]) if arrays else np.array([])
    if vals.size == 0:
        return 0.0, 1.0
    lo, hi = float(vals.min()), float(vals.max())
    if lo == hi:
        pad = abs(lo) * 0.05 or 0.5
        return lo - pad, hi + pad
    pad = 0.04 * (hi - lo)
    return lo - pad, hi + pad


def _polyline(xs, ys, sx, sy, color, dashed):
    pts = []
    segments = []
    for x, y in zip(xs, ys):
        if not (math.isfinite(x) and math.isfinite(y)):
            if pts:
                segments.append(pts)
            pts = []
            continue
        pts.append(f"{_fmt(sx(x))},{_fmt(sy(y))}")
    if pts:
        segments.append(pts)
    dash = ' stroke-dasharray="5,3"' if dashed else ""
    return [
        f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{" ".join(seg)}"/>'
        for seg in segments
    ]


def render(charts: Sequence[Chart], width: int = 720, panel_height: int = 300) -> str:
    """Stack ``charts`` vertically into one SVG document."""
    left, right, top, bottom = 70, 70, 30, 45
    legend_w = 0
    height = panel_height * len(charts)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for p, chart in enumerate(charts):
        y0 = p * panel_height
        pw = width - left - right - legend_w
        ph = panel_height - top - bottom
        thinned = [_thin(s.x, s.y, s.lower, s.upper) for s in chart.series]
        xlo, xhi = _range([t[0] for t in thinned])
        lo_l, hi_l = _range([a for s, t in zip(chart.series, thinned) if not s.right_axis for a in t[1:]])
        lo_r, hi_r = _range([a for s, t in zip(chart.series, thinned) if s.right_axis for a in t[1:]])

        def sx(v):
            return left + (v - xlo) / (xhi - xlo) * pw

        def sy_factory(lo, hi):
            return lambda v: y0 + top + (1.0 - (v - lo) / (hi - lo)) * ph

        sy_l, sy_r = sy_factory(lo_l, hi_l), sy_factory(lo_r, hi_r)

        out.append(f'<text x="{width / 2:.1f}" y="{y0 + 18}" text-anchor="middle" font-size="13">{escape(chart.title)}</text>')
        out.append(
            f'<rect x="{left}" y="{y0 + top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>'
        )
        for i in range(6):
            fx = xlo + (xhi - xlo) * i / 5
            fy = lo_l + (hi_l - lo_l) * i / 5
            px, py = sx(fx), sy_l(fy)
            out.append(f'<line x1="{_fmt(px)}" y1="{y0 + top + ph}" x2="{_fmt(px)}" y2="{y0 + top + ph + 4}" stroke="#333"/>')
            out.append(f'<text x="{_fmt(px)}" y="{y0 + top + ph + 16}" text-anchor="middle">{_tick_label(fx)}</text>')
            out.append(f'<line x1="{left - 4}" y1="{_fmt(py)}" x2="{left}" y2="{_fmt(py)}" stroke="#333"/>')
            out.append(f'<line x1="{left}" y1="{_fmt(py)}" x2="{left + pw}" y2="{_fmt(py)}" stroke="#eee"/>')
            out.append(f'<text x="{left - 6}" y="{_fmt(py + 4)}" text-anchor="end">{_tick_label(fy)}</text>')
            if chart.ylabel_right:
                fr = lo_r + (hi_r - lo_r) * i / 5
                out.append(f'<text x="{left + pw + 6}" y="{_fmt(sy_r(fr) + 4)}">{_tick_label(fr)}</text>')
        out.append(f'<text x="{left + pw / 2:.1f}" y="{y0 + panel_height - 8}" text-anchor="middle">{escape(chart.xlabel)}</text>')
        cy = y0 + top + ph / 2
        out.append(f'<text transform="translate(16,{cy:.1f}) rotate(-90)" text-anchor="middle">{escape(chart.ylabel)}</text>')
        if chart.ylabel_right:
            out.append(
                f'<text transform="translate({width - 12},{cy:.1f}) rotate(90)" text-anchor="middle">{escape(chart.ylabel_right)}</text>'
            )

        for k, (s, (x, y, lower, upper)) in enumerate(zip(chart.series, thinned)):
            color = PALETTE[k % len(PALETTE)]
            sy = sy_r if s.right_axis else sy_l
            if lower is not None and upper is not None:
                ok = np.isfinite(lower) & np.isfinite(upper)
                if ok.any():
                    pts = [f"{_fmt(sx(a))},{_fmt(sy(b))}" for a, b in zip(x[ok], upper[ok])]
                    pts += [f"{_fmt(sx(a))},{_fmt(sy(b))}" for a, b in zip(x[ok][::-1], lower[ok][::-1])]
                    out.append(f'<polygon fill="{color}" fill-opacity="0.18" stroke="none" points="{" ".join(pts)}"/>')
            out.extend(_polyline(x, y, sx, sy, color, s.dashed))
            ly = y0 + top + 14 + 14 * k
            out.append(f'<line x1="{left + 8}" y1="{ly - 4}" x2="{left + 26}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{left + 30}" y="{ly}">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
