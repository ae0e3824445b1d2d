"""Small deterministic SVG line plots (axes, polylines, error bars, bars).

Output depends only on the data and labels, so re-rendering the same CSV
gives a byte-identical file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f4e9c", "#c0392b", "#2e8b57", "#8e44ad", "#d68910", "#555555")


@dataclass
class Series:
    x: Sequence[float]
    y: Sequence[float]
    label: str = ""
    yerr: Optional[Sequence[float]] = None
    style: str = "line"  # line | bars | points
    color: Optional[str] = None


@dataclass
class Panel:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    series: list = field(default_factory=list)
    hline: Optional[float] = None

    def add(self, *args, **kwargs) -> "Panel":
        self.series.append(Series(*args, **kwargs))
        return self


def _nice_ticks(lo: float, hi: float, n: int = 5):
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    first = math.ceil(lo / step) * step
    ticks = []
    v = first
    while v <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(v) < 1e-12 * step else v)
        v += step
    return ticks


def _num(v: float) -> str:
    return f"{v:.2f}"


def _label(v: float) -> str:
    return f"{v:.6g}"


def _limits(panel: Panel):
    xs, ys = [], []
    for s in panel.series:
        x = np.asarray(s.x, dtype=float)
        y = np.asarray(s.y, dtype=float)
        e = np.zeros_like(y) if s.yerr is None else np.nan_to_num(np.asarray(s.yerr, dtype=float))
        ok = np.isfinite(x) & np.isfinite(y)
        xs.extend(x[ok])
        ys.extend((y - e)[ok])
        ys.extend((y + e)[ok])
        if s.style == "bars":
            ys.append(0.0)
    if panel.hline is not None:
        ys.append(panel.hline)
    if not xs:
        return 0.0, 1.0, 0.0, 1.0
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    pad = 0.05 * (y1 - y0) if y1 > y0 else 0.5
    return x0, x1, y0 - pad, y1 + pad


def _panel_svg(panel: Panel, ox: float, oy: float, w: float, h: float) -> list:
    ml, mr, mt, mb = 70.0, 15.0, 30.0, 45.0
    pw, ph = w - ml - mr, h - mt - mb
    x0, x1, y0, y1 = _limits(panel)

    def sx(x):
        return ox + ml + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return oy + mt + (1 - (y - y0) / (y1 - y0)) * ph

    out = [
        f'<rect x="{_num(ox + ml)}" y="{_num(oy + mt)}" width="{_num(pw)}" height="{_num(ph)}" '
        'fill="none" stroke="#000" stroke-width="1"/>'
    ]
    for t in _nice_ticks(x0, x1):
        px = sx(t)
        out.append(f'<line x1="{_num(px)}" y1="{_num(oy + mt + ph)}" x2="{_num(px)}" y2="{_num(oy + mt + ph + 4)}" stroke="#000"/>')
        out.append(
            f'<text x="{_num(px)}" y="{_num(oy + mt + ph + 16)}" font-size="10" text-anchor="middle">{_label(t)}</text>'
        )
    for t in _nice_ticks(y0, y1):
        py = sy(t)
        out.append(f'<line x1="{_num(ox + ml - 4)}" y1="{_num(py)}" x2="{_num(ox + ml)}" y2="{_num(py)}" stroke="#000"/>')
        out.append(
            f'<text x="{_num(ox + ml - 6)}" y="{_num(py + 3)}" font-size="10" text-anchor="end">{_label(t)}</text>'
        )
    if panel.title:
        out.append(f'<text x="{_num(ox + ml + pw / 2)}" y="{_num(oy + 18)}" font-size="13" text-anchor="middle">{escape(panel.title)}</text>')
    if panel.xlabel:
        out.append(
            f'<text x="{_num(ox + ml + pw / 2)}" y="{_num(oy + h - 8)}" font-size="11" text-anchor="middle">{escape(panel.xlabel)}</text>'
        )
    if panel.ylabel:
        cx, cy = ox + 16, oy + mt + ph / 2
        out.append(
            f'<text x="{_num(cx)}" y="{_num(cy)}" font-size="11" text-anchor="middle" '
            f'transform="rotate(-90 {_num(cx)} {_num(cy)})">{escape(panel.ylabel)}</text>'
        )
    if panel.hline is not None and y0 <= panel.hline <= y1:
        py = sy(panel.hline)
        out.append(
            f'<line x1="{_num(ox + ml)}" y1="{_num(py)}" x2="{_num(ox + ml + pw)}" y2="{_num(py)}" '
            'stroke="#888" stroke-dasharray="4 3"/>'
        )

    for k, s in enumerate(panel.series):
        color = s.color or PALETTE[k % len(PALETTE)]
        x = np.asarray(s.x, dtype=float)
        y = np.asarray(s.y, dtype=float)
        ok = np.isfinite(x) & np.isfinite(y)
        if s.style == "bars":
            bw = pw / max(len(x), 1) * 0.8 if len(x) < 2 else abs(sx(x[1]) - sx(x[0])) * 0.8
            for xi, yi in zip(x[ok], y[ok]):
                top, base = sy(max(yi, 0.0)), sy(min(yi, 0.0))
                out.append(
                    f'<rect x="{_num(sx(xi) - bw / 2)}" y="{_num(top)}" width="{_num(bw)}" '
                    f'height="{_num(base - top)}" fill="{color}" fill-opacity="0.5" stroke="{color}"/>'
                )
        elif s.style == "points":
            for xi, yi in zip(x[ok], y[ok]):
                out.append(f'<circle cx="{_num(sx(xi))}" cy="{_num(sy(yi))}" r="2" fill="{color}"/>')
        else:
            pts = " ".join(f"{_num(sx(a))},{_num(sy(b))}" for a, b in zip(x[ok], y[ok]))
            if pts:
                out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.2"/>')
        if s.yerr is not None:
            e = np.asarray(s.yerr, dtype=float)
            step = max(1, int(ok.sum()) // 60)  # keep error bars legible on dense curves
            for xi, yi, ei in list(zip(x[ok], y[ok], e[ok]))[::step]:
                if not math.isfinite(ei):
                    continue
                out.append(
                    f'<line x1="{_num(sx(xi))}" y1="{_num(sy(yi - ei))}" x2="{_num(sx(xi))}" '
                    f'y2="{_num(sy(yi + ei))}" stroke="{color}" stroke-width="0.8"/>'
                )
        if s.label:
            ly = oy + mt + 14 + 14 * k
            lx = ox + ml + pw - 130
            out.append(f'<line x1="{_num(lx)}" y1="{_num(ly - 4)}" x2="{_num(lx + 18)}" y2="{_num(ly - 4)}" stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{_num(lx + 22)}" y="{_num(ly)}" font-size="10">{escape(s.label)}</text>')
    return out


def render(panels: Sequence[Panel], width: float = 640.0, panel_height: float = 360.0) -> str:
    """Stack ``panels`` vertically into one SVG document."""
    height = panel_height * len(panels)
    body = []
    for i, p in enumerate(panels):
        body.extend(_panel_svg(p, 0.0, i * panel_height, width, panel_height))
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_num(width)}" height="{_num(height)}" '
        f'viewBox="0 0 {_num(width)} {_num(height)}" font-family="sans-serif">'
    )
    return "\n".join([head, '<rect width="100%" height="100%" fill="#fff"/>', *body, "</svg>"]) + "\n"
