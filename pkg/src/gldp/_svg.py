"""Minimal hand-written SVG charts: line plots and heat maps."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

_W, _H = 640, 420
_PAD_L, _PAD_R, _PAD_T, _PAD_B = 70, 150, 40, 50
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def _span(vals):
    lo, hi = float(np.min(vals)), float(np.max(vals))
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def line_plot(series, *, title: str, xlabel: str, ylabel: str,
              logx: bool = False, logy: bool = False, hlines=()) -> str:
    """``series``: iterable of ``(label, xs, ys)``. Non-finite points are skipped."""
    prepared = []
    for label, xs, ys in series:
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        ok = np.isfinite(xs) & np.isfinite(ys)
        if logx:
            ok &= xs > 0
        if logy:
            ok &= ys > 0
        xs, ys = xs[ok], ys[ok]
        if logx:
            xs = np.log10(xs)
        if logy:
            ys = np.log10(ys)
        prepared.append((label, xs, ys))
    extra = [float(v) for _, v in hlines if math.isfinite(v)]
    all_x = np.concatenate([p[1] for p in prepared] + [np.zeros(0)])
    all_y = np.concatenate([p[2] for p in prepared] + [np.asarray(extra, dtype=float)])
    if all_x.size == 0 or all_y.size == 0:
        all_x, all_y = np.array([0.0, 1.0]), np.array([0.0, 1.0])
    x0, x1 = _span(all_x)
    y0, y1 = _span(all_y)
    pw, ph = _W - _PAD_L - _PAD_R, _H - _PAD_T - _PAD_B

    def px(v):
        return _PAD_L + (v - x0) / (x1 - x0) * pw

    def py(v):
        return _PAD_T + (1.0 - (v - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
           f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
           f'<rect width="{_W}" height="{_H}" fill="white"/>',
           f'<text x="{_W / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
           f'<rect x="{_PAD_L}" y="{_PAD_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for i in range(5):
        fx = x0 + (x1 - x0) * i / 4
        fy = y0 + (y1 - y0) * i / 4
        lx = _fmt(10 ** fx) if logx else _fmt(fx)
        ly = _fmt(10 ** fy) if logy else _fmt(fy)
        out.append(f'<text x="{px(fx):.1f}" y="{_H - _PAD_B + 18}" text-anchor="middle">{lx}</text>')
        out.append(f'<text x="{_PAD_L - 6}" y="{py(fy) + 4:.1f}" text-anchor="end">{ly}</text>')
        out.append(f'<line x1="{_PAD_L}" y1="{py(fy):.1f}" x2="{_PAD_L + pw}" y2="{py(fy):.1f}" '
                   f'stroke="#ddd"/>')
    out.append(f'<text x="{_PAD_L + pw / 2:.1f}" y="{_H - 10}" text-anchor="middle">'
               f'{escape(xlabel)}{" (log)" if logx else ""}</text>')
    out.append(f'<text x="16" y="{_PAD_T + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {_PAD_T + ph / 2:.1f})">{escape(ylabel)}'
               f'{" (log)" if logy else ""}</text>')
    for (label, v) in hlines:
        if math.isfinite(v):
            out.append(f'<line x1="{_PAD_L}" y1="{py(v):.1f}" x2="{_PAD_L + pw}" y2="{py(v):.1f}" '
                       f'stroke="black" stroke-dasharray="5,4"/>')
            out.append(f'<text x="{_PAD_L + pw + 6}" y="{py(v) + 4:.1f}">{escape(label)}</text>')
    for i, (label, xs, ys) in enumerate(prepared):
        col = _COLORS[i % len(_COLORS)]
        if xs.size:
            pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(xs, ys))
            out.append(f'<polyline points="{pts}" fill="none" stroke="{col}" stroke-width="1.5"/>')
            if xs.size <= 40:
                out.extend(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="3" fill="{col}"/>'
                           for a, b in zip(xs, ys))
        ly = _PAD_T + 14 + 18 * i
        out.append(f'<line x1="{_W - _PAD_R + 10}" y1="{ly}" x2="{_W - _PAD_R + 30}" y2="{ly}" '
                   f'stroke="{col}" stroke-width="2"/>')
        out.append(f'<text x="{_W - _PAD_R + 35}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def heatmap(t_nodes, x_nodes, values, *, title: str, max_cells: int = 80) -> str:
    """Field ``values[t, x]`` as a coloured grid, time on the horizontal axis."""
    values = np.asarray(values, dtype=float)
    ti = np.unique(np.linspace(0, values.shape[0] - 1, min(max_cells, values.shape[0])).astype(int))
    xi = np.unique(np.linspace(0, values.shape[1] - 1, min(max_cells, values.shape[1])).astype(int))
    sub = values[np.ix_(ti, xi)]
    lo, hi = _span(sub[np.isfinite(sub)] if np.any(np.isfinite(sub)) else np.zeros(1))
    pw, ph = _W - _PAD_L - _PAD_R, _H - _PAD_T - _PAD_B
    cw, ch = pw / ti.size, ph / xi.size
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
           f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
           f'<rect width="{_W}" height="{_H}" fill="white"/>',
           f'<text x="{_W / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>']
    for a in range(ti.size):
        for b in range(xi.size):
            v = sub[a, b]
            s = 0.5 if not math.isfinite(v) else (v - lo) / (hi - lo)
            r, g, bl = int(255 * s), int(80 + 100 * (1 - abs(2 * s - 1))), int(255 * (1 - s))
            out.append(f'<rect x="{_PAD_L + a * cw:.2f}" y="{_PAD_T + (xi.size - 1 - b) * ch:.2f}" '
                       f'width="{cw + 0.05:.2f}" height="{ch + 0.05:.2f}" fill="rgb({r},{g},{bl})"/>')
    t_nodes, x_nodes = np.asarray(t_nodes), np.asarray(x_nodes)
    out.append(f'<text x="{_PAD_L}" y="{_H - _PAD_B + 18}">t={_fmt(t_nodes[0])}</text>')
    out.append(f'<text x="{_PAD_L + pw}" y="{_H - _PAD_B + 18}" text-anchor="end">t={_fmt(t_nodes[-1])}</text>')
    out.append(f'<text x="{_PAD_L - 6}" y="{_PAD_T + ph}" text-anchor="end">x={_fmt(x_nodes[0])}</text>')
    out.append(f'<text x="{_PAD_L - 6}" y="{_PAD_T + 10}" text-anchor="end">x={_fmt(x_nodes[-1])}</text>')
    out.append(f'<text x="{_W - _PAD_R + 10}" y="{_PAD_T + 14}">max {_fmt(hi)}</text>')
    out.append(f'<text x="{_W - _PAD_R + 10}" y="{_PAD_T + ph}">min {_fmt(lo)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
