"""Standalone SVG line plots with confidence bands, no plotting dependency."""

from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

MAX_POINTS = 512
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


@dataclass(frozen=True)
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None


def downsample(n: int, limit: int = MAX_POINTS) -> np.ndarray:
    """Indices of at most ``limit`` evenly spread points, always keeping both ends."""
    if n <= limit:
        return np.arange(n)
    return np.unique(np.round(np.linspace(0, n - 1, limit)).astype(int))


def render(series: list[Series], *, title: str = "", xlabel: str = "t", ylabel: str = "",
           width: int = 720, height: int = 440) -> str:
    if not series:
        raise ValueError("nothing to plot")
    left, right, top, bottom = 70, 150, 40, 50
    pw, ph = width - left - right, height - top - bottom
    xs = np.concatenate([s.x for s in series])
    ys = np.concatenate([np.concatenate([s.y] + [b for b in (s.lo, s.hi) if b is not None]) for s in series])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(v):
        return left + (np.asarray(v) - x0) / (x1 - x0) * pw

    def py(v):
        return top + (y1 - np.asarray(v)) / (y1 - y0) * ph

    def pts(xv, yv):
        return " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px(xv), py(yv)))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>',
    ]
    for v in np.linspace(x0, x1, 6):
        out.append(f'<text x="{px(v):.2f}" y="{top + ph + 18}" text-anchor="middle">{v:.3g}</text>')
    for v in np.linspace(y0, y1, 6):
        out.append(f'<text x="{left - 6}" y="{py(v) + 4:.2f}" text-anchor="end">{v:.3g}</text>')
        out.append(f'<line x1="{left}" x2="{left + pw}" y1="{py(v):.2f}" y2="{py(v):.2f}" stroke="#eee"/>')
    if title:
        out.append(f'<text x="{left + pw / 2}" y="{top - 14}" text-anchor="middle" font-size="14">'
                   f'{escape(title)}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="16" y="{top + ph / 2}" transform="rotate(-90 16 {top + ph / 2})" '
                   f'text-anchor="middle">{escape(ylabel)}</text>')
    for i, s in enumerate(series):
        colour = PALETTE[i % len(PALETTE)]
        idx = downsample(len(s.x))
        x, y = np.asarray(s.x)[idx], np.asarray(s.y)[idx]
        if s.lo is not None and s.hi is not None:
            lo, hi = np.asarray(s.lo)[idx], np.asarray(s.hi)[idx]
            band = pts(x, hi) + " " + pts(x[::-1], lo[::-1])
            out.append(f'<polygon points="{band}" fill="{colour}" fill-opacity="0.2" stroke="none"/>')
        out.append(f'<polyline points="{pts(x, y)}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
        ly = top + 16 + 18 * i
        out.append(f'<line x1="{left + pw + 10}" x2="{left + pw + 30}" y1="{ly}" y2="{ly}" '
                   f'stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 34}" y="{ly + 4}">{escape(s.label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, series: list[Series], **kwargs) -> None:
    with open(path, "w") as fh:
        fh.write(render(series, **kwargs))
