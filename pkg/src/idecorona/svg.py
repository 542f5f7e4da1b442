"""Minimal deterministic SVG line charts (no plotting backend required)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from html import escape
from typing import Sequence

import numpy as np

__all__ = ["Series", "Panel", "render", "write_svg"]

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")
PANEL_W, PANEL_H = 520, 320
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 20, 34, 46
MAX_POINTS = 2000


@dataclass
class Series:
    label: str
    x: np.ndarray
    y: np.ndarray
    dashed: bool = False


@dataclass
class Panel:
    title: str
    series: list[Series] = field(default_factory=list)
    xlabel: str = "t"
    ylabel: str = ""
    logy: bool = False


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step + 1e-9) + 1)]


def _thin(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if x.size <= MAX_POINTS:
        return x, y
    idx = np.unique(np.linspace(0, x.size - 1, MAX_POINTS).round().astype(int))
    return x[idx], y[idx]


def _panel(p: Panel, ox: float, oy: float) -> list[str]:
    out = []
    pw, ph = PANEL_W - MARGIN_L - MARGIN_R, PANEL_H - MARGIN_T - MARGIN_B
    data = []
    for s in p.series:
        x, y = np.asarray(s.x, dtype=float), np.asarray(s.y, dtype=float)
        if p.logy:
            keep = y > 0
            x, y = x[keep], np.log10(y[keep])
        keep = np.isfinite(x) & np.isfinite(y)
        data.append(_thin(x[keep], y[keep]))
    xs = np.concatenate([d[0] for d in data]) if data else np.zeros(1)
    ys = np.concatenate([d[1] for d in data]) if data else np.zeros(1)
    if xs.size == 0:
        xs, ys = np.zeros(1), np.zeros(1)
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(v):
        return ox + MARGIN_L + (v - x0) / (x1 - x0) * pw

    def py(v):
        return oy + MARGIN_T + (y1 - v) / (y1 - y0) * ph

    out.append(f'<rect x="{ox + MARGIN_L:.2f}" y="{oy + MARGIN_T:.2f}" width="{pw:.2f}" '
               f'height="{ph:.2f}" fill="none" stroke="#333" stroke-width="1"/>')
    out.append(f'<text x="{ox + PANEL_W / 2:.2f}" y="{oy + 20:.2f}" text-anchor="middle" '
               f'font-size="14">{escape(p.title)}</text>')
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{px(t):.2f}" y1="{oy + MARGIN_T + ph:.2f}" x2="{px(t):.2f}" '
                   f'y2="{oy + MARGIN_T + ph + 4:.2f}" stroke="#333"/>')
        out.append(f'<text x="{px(t):.2f}" y="{oy + MARGIN_T + ph + 17:.2f}" text-anchor="middle" '
                   f'font-size="11">{t:g}</text>')
    for t in _ticks(y0, y1):
        label = f"1e{t:g}" if p.logy else f"{t:.3g}"
        out.append(f'<line x1="{ox + MARGIN_L - 4:.2f}" y1="{py(t):.2f}" x2="{ox + MARGIN_L + pw:.2f}" '
                   f'y2="{py(t):.2f}" stroke="#ddd"/>')
        out.append(f'<text x="{ox + MARGIN_L - 7:.2f}" y="{py(t) + 4:.2f}" text-anchor="end" '
                   f'font-size="11">{label}</text>')
    out.append(f'<text x="{ox + MARGIN_L + pw / 2:.2f}" y="{oy + PANEL_H - 8:.2f}" '
               f'text-anchor="middle" font-size="12">{escape(p.xlabel)}</text>')
    if p.ylabel:
        cy = oy + MARGIN_T + ph / 2
        out.append(f'<text x="{ox + 16:.2f}" y="{cy:.2f}" text-anchor="middle" font-size="12" '
                   f'transform="rotate(-90 {ox + 16:.2f} {cy:.2f})">{escape(p.ylabel)}</text>')
    for i, (s, (x, y)) in enumerate(zip(p.series, data)):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
        dash = ' stroke-dasharray="6,4"' if s.dashed else ""
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.4"{dash}/>')
        ly = oy + MARGIN_T + 14 + 15 * i
        lx = ox + MARGIN_L + pw - 130
        out.append(f'<line x1="{lx:.2f}" y1="{ly - 4:.2f}" x2="{lx + 20:.2f}" y2="{ly - 4:.2f}" '
                   f'stroke="{color}" stroke-width="2"{dash}/>')
        out.append(f'<text x="{lx + 25:.2f}" y="{ly:.2f}" font-size="11">{escape(s.label)}</text>')
    return out


def render(panels: Sequence[Panel], columns: int = 1) -> str:
    """SVG document with the panels laid out on a grid."""
    rows = math.ceil(len(panels) / columns)
    width, height = PANEL_W * columns, PANEL_H * rows
    body = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif">',
            f'<rect width="{width}" height="{height}" fill="white"/>']
    for i, p in enumerate(panels):
        body += _panel(p, PANEL_W * (i % columns), PANEL_H * (i // columns))
    body.append("</svg>")
    return "\n".join(body) + "\n"


def write_svg(path, panels: Sequence[Panel], columns: int = 1) -> None:
    with open(path, "w") as fh:
        fh.write(render(panels, columns))
