"""Deterministic SVG scatter plots of channel charts."""

from __future__ import annotations

from pathlib import Path
from typing import Optional
from xml.sax.saxutils import escape

import numpy as np

# corner colours of the position colormap: (min x, min y), (max x, min y), (min x, max y), (max x, max y)
_CORNERS = np.array([[0.10, 0.35, 0.90], [0.95, 0.20, 0.20], [0.10, 0.75, 0.30], [0.95, 0.80, 0.10]])


def position_colors(x: np.ndarray) -> np.ndarray:
    """Bilinear 2D colormap over the bounding box of ``x``; RGB in [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(axis=0), x.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    u, v = ((x - lo) / span).T
    w = np.stack([(1 - u) * (1 - v), u * (1 - v), (1 - u) * v, u * v], axis=1)
    return w @ _CORNERS


def _hex(rgb) -> str:
    r, g, b = (int(round(255 * c)) for c in np.clip(rgb, 0.0, 1.0))
    return f"#{r:02x}{g:02x}{b:02x}"


def _ticks(lo: float, hi: float, n: int = 5):
    span = hi - lo
    if span <= 0:
        return [lo]
    raw = span / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = np.ceil(lo / step) * step
    return [float(t) for t in np.arange(start, hi + 1e-9 * span, step)]


def render_svg(z: np.ndarray, colors_from: Optional[np.ndarray] = None, radius: float = 2.0,
               size: int = 480, title: str = "") -> str:
    """SVG text of a scatter of ``z`` (meters); points coloured by ``colors_from`` positions."""
    z = np.asarray(z, dtype=np.float64)
    cols = position_colors(colors_from if colors_from is not None else z)
    margin = 48
    lo, hi = z.min(axis=0), z.max(axis=0)
    span = float(max(hi - lo)) or 1.0
    scale = (size - 2 * margin) / span
    px = margin + (z[:, 0] - lo[0]) * scale
    py = size - margin - (z[:, 1] - lo[1]) * scale
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{size / 2:.1f}" y="20" text-anchor="middle" font-size="14">'
                   f"{escape(title)}</text>")
    x0, y0, x1 = margin, size - margin, size - margin
    out.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>')
    out.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{margin}" stroke="black"/>')
    for t in _ticks(lo[0], lo[0] + span):
        p = margin + (t - lo[0]) * scale
        out.append(f'<text x="{p:.1f}" y="{y0 + 16}" text-anchor="middle" font-size="10">{t:g}</text>')
    for t in _ticks(lo[1], lo[1] + span):
        p = size - margin - (t - lo[1]) * scale
        out.append(f'<text x="{x0 - 6}" y="{p + 3:.1f}" text-anchor="end" font-size="10">{t:g}</text>')
    out.append(f'<text x="{size / 2:.1f}" y="{size - 10}" text-anchor="middle" font-size="12">'
               "z1 [m]</text>")
    out.append(f'<text x="14" y="{size / 2:.1f}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90 14 {size / 2:.1f})">z2 [m]</text>')
    out.append('<g stroke="none">')
    for a, b, c in zip(px, py, cols):
        out.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="{radius:g}" fill="{_hex(c)}"/>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def save_svg(path, z, colors_from=None, radius: float = 2.0, title: str = "") -> None:
    Path(path).write_text(render_svg(z, colors_from, radius, title=title), encoding="utf-8")
