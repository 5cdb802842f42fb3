"""Minimal static SVG line plots (no plotting library needed)."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")
WIDTH, HEIGHT = 640, 360
MARGIN = dict(left=64, right=140, top=32, bottom=44)
MAX_POINTS = 1500


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=raw)
    start = np.ceil(lo / step) * step
    return [start + i * step for i in range(int(np.floor((hi - start) / step)) + 1)]


def _decimate(x, y):
    if len(x) <= MAX_POINTS:
        return x, y
    idx = np.linspace(0, len(x) - 1, MAX_POINTS).round().astype(int)
    return x[idx], y[idx]


def line_plot(path, series, title="", xlabel="", ylabel="") -> Path:
    """Write an SVG with one polyline per ``(x, y, label)`` in ``series``."""
    path = Path(path)
    finite = [(np.asarray(x, float), np.asarray(y, float), lab) for x, y, lab in series]
    xs = np.concatenate([x[np.isfinite(y)] for x, y, _ in finite] or [np.zeros(1)])
    ys = np.concatenate([y[np.isfinite(y)] for _, y, _ in finite] or [np.zeros(1)])
    if xs.size == 0:
        xs = ys = np.zeros(1)
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 <= x0:
        x1 = x0 + 1.0
    pad = 0.05 * (y1 - y0) if y1 > y0 else 0.5
    y0, y1 = y0 - pad, y1 + pad
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(v):
        return MARGIN["left"] + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return MARGIN["top"] + (y1 - v) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2:.1f}" y="18" text-anchor="middle" font-size="13">'
           f'{escape(title)}</text>']
    for tx in _ticks(x0, x1):
        out.append(f'<line x1="{sx(tx):.1f}" y1="{MARGIN["top"]}" x2="{sx(tx):.1f}" '
                   f'y2="{MARGIN["top"] + ph}" stroke="#eee"/>')
        out.append(f'<text x="{sx(tx):.1f}" y="{MARGIN["top"] + ph + 14}" '
                   f'text-anchor="middle">{tx:g}</text>')
    for ty in _ticks(y0, y1):
        out.append(f'<line x1="{MARGIN["left"]}" y1="{sy(ty):.1f}" x2="{MARGIN["left"] + pw}" '
                   f'y2="{sy(ty):.1f}" stroke="#eee"/>')
        out.append(f'<text x="{MARGIN["left"] - 6}" y="{sy(ty) + 4:.1f}" '
                   f'text-anchor="end">{ty:.4g}</text>')
    out.append(f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
               'fill="none" stroke="black"/>')
    out.append(f'<text x="{MARGIN["left"] + pw / 2:.1f}" y="{HEIGHT - 8}" '
               f'text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{MARGIN["top"] + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 14 {MARGIN["top"] + ph / 2:.1f})">{escape(ylabel)}</text>')
    for i, (x, y, label) in enumerate(finite):
        color = COLORS[i % len(COLORS)]
        ok = np.isfinite(y)
        xd, yd = _decimate(x[ok], y[ok])
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(xd, yd))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" '
                   f'points="{pts}"/>')
        ly = MARGIN["top"] + 12 + 16 * i
        lx = MARGIN["left"] + pw + 10
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 24}" y="{ly}">{escape(str(label))}</text>')
    out.append("</svg>")
    path.write_text("\n".join(out) + "\n")
    return path
