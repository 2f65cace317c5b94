"""Dependency-free SVG line charts with deterministic output bytes."""

from __future__ import annotations

import math

import numpy as np

WIDTH, HEIGHT = 800, 600
MARGIN = (70, 30, 30, 60)  # left, right, top, bottom
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
N_TICKS = 5


def _num(x: float) -> str:
    """Short, stable label for tick values."""
    return f"{x:.6g}"


def _coord(x: float) -> str:
    return f"{x:.2f}"


def _range(values: list[np.ndarray]) -> tuple[float, float]:
    finite = [v[np.isfinite(v)] for v in values]
    finite = [v for v in finite if v.size]
    if not finite:
        return 0.0, 1.0
    lo = min(float(v.min()) for v in finite)
    hi = max(float(v.max()) for v in finite)
    if lo == hi:
        pad = abs(lo) * 0.5 or 0.5
        lo, hi = lo - pad, hi + pad
    return lo, hi


def line_chart(series, x_label: str = "x", y_label: str = "y", title: str = "") -> str:
    """SVG text for ``series``: a list of ``(name, xs, ys)``.

    Non-finite points break a polyline into separate segments.
    """
    series = [(name, np.asarray(xs, float), np.asarray(ys, float)) for name, xs, ys in series]
    x_lo, x_hi = _range([s[1] for s in series])
    y_lo, y_hi = _range([s[2] for s in series])
    left, right, top, bottom = MARGIN
    pw, ph = WIDTH - left - right, HEIGHT - top - bottom

    def px(x):
        return left + (x - x_lo) / (x_hi - x_lo) * pw

    def py(y):
        return top + (y_hi - y) / (y_hi - y_lo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for i in range(N_TICKS):
        f = i / (N_TICKS - 1)
        xv = x_lo + f * (x_hi - x_lo)
        yv = y_lo + f * (y_hi - y_lo)
        gx, gy = px(xv), py(yv)
        out.append(f'<line x1="{_coord(gx)}" y1="{top + ph}" x2="{_coord(gx)}" y2="{top + ph + 6}" stroke="black"/>')
        out.append(f'<line x1="{left - 6}" y1="{_coord(gy)}" x2="{left}" y2="{_coord(gy)}" stroke="black"/>')
        out.append(
            f'<text x="{_coord(gx)}" y="{top + ph + 20}" font-size="12" text-anchor="middle">{_num(xv)}</text>'
        )
        out.append(
            f'<text x="{left - 8}" y="{_coord(gy + 4)}" font-size="12" text-anchor="end">{_num(yv)}</text>'
        )
    out.append(
        f'<text x="{left + pw / 2:.1f}" y="{HEIGHT - 15}" font-size="14" text-anchor="middle">{_esc(x_label)}</text>'
    )
    out.append(
        f'<text x="18" y="{top + ph / 2:.1f}" font-size="14" text-anchor="middle" '
        f'transform="rotate(-90 18 {top + ph / 2:.1f})">{_esc(y_label)}</text>'
    )
    if title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="20" font-size="14" text-anchor="middle">{_esc(title)}</text>')
    for k, (name, xs, ys) in enumerate(series):
        color = COLORS[k % len(COLORS)]
        for seg in _segments(xs, ys):
            pts = " ".join(f"{_coord(px(x))},{_coord(py(y))}" for x, y in seg)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        ly = top + 16 + 18 * k
        out.append(f'<line x1="{left + pw - 150}" y1="{ly}" x2="{left + pw - 125}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw - 120}" y="{ly + 4}" font-size="12">{_esc(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _segments(xs, ys):
    seg = []
    for x, y in zip(xs.tolist(), ys.tolist()):
        if math.isfinite(x) and math.isfinite(y):
            seg.append((x, y))
        elif seg:
            yield seg
            seg = []
    if seg:
        yield seg


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
