"""Minimal static SVG line plots, so reports need no plotting package."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"]


def _axis(values, log):
    v = np.asarray(values, dtype=float)
    if log:
        if np.any(v <= 0):
            raise ValueError("log axis needs positive values")
        v = np.log10(v)
    return v


def _ticks(lo, hi, log, count=5):
    if log:
        a, b = int(np.floor(lo)), int(np.ceil(hi))
        return [(t, f"1e{t}") for t in range(a, b + 1) if lo - 1e-9 <= t <= hi + 1e-9]
    return [(t, f"{t:.3g}") for t in np.linspace(lo, hi, count)]


def line_plot_svg(series: dict, xlabel: str = "", ylabel: str = "", title: str = "",
                  logx: bool = False, logy: bool = False, width: int = 640, height: int = 420) -> str:
    """Render ``{label: (x, y)}`` as an SVG document string."""
    if not series:
        raise ValueError("nothing to plot")
    left, right, top, bottom = 70, 150, 30, 50
    xs = [_axis(x, logx) for x, _ in series.values()]
    ys = [_axis(y, logy) for _, y in series.values()]
    x0, x1 = min(v.min() for v in xs), max(v.max() for v in xs)
    y0, y1 = min(v.min() for v in ys), max(v.max() for v in ys)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = width - left - right, height - top - bottom

    def px(v):
        return left + (v - x0) / (x1 - x0) * pw

    def py(v):
        return top + ph - (v - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for t, lab in _ticks(x0, x1, logx):
        out.append(f'<line x1="{px(t):.1f}" y1="{top + ph}" x2="{px(t):.1f}" y2="{top + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{px(t):.1f}" y="{top + ph + 16}" text-anchor="middle">{lab}</text>')
    for t, lab in _ticks(y0, y1, logy):
        out.append(f'<line x1="{left - 4}" y1="{py(t):.1f}" x2="{left}" y2="{py(t):.1f}" stroke="black"/>')
        out.append(f'<text x="{left - 6}" y="{py(t) + 4:.1f}" text-anchor="end">{lab}</text>')
    for i, ((label, _), x, y) in enumerate(zip(series.items(), xs, ys)):
        color = COLORS[i % len(COLORS)]
        pts = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(x, y))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = top + 14 * (i + 1)
        out.append(f'<line x1="{width - right + 10}" y1="{ly - 4}" x2="{width - right + 30}" '
                   f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{width - right + 34}" y="{ly}">{escape(str(label))}</text>')
    if title:
        out.append(f'<text x="{left + pw / 2}" y="{top - 10}" text-anchor="middle">{escape(title)}</text>')
    if xlabel:
        out.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="14" y="{top + ph / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {top + ph / 2})">{escape(ylabel)}</text>')
    out.append("</svg>")
    return "\n".join(out)


def write_line_plot(path, series: dict, **kw) -> None:
    with open(path, "w") as fh:
        fh.write(line_plot_svg(series, **kw))
