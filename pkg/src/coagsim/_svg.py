"""Minimal deterministic SVG line/scatter plots.

Hand-rolled so that identical inputs produce byte-identical files; every
coordinate goes through one fixed-precision formatter and nothing depends
on locale, fonts, or a plotting library.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

__all__ = ["Series", "plot"]

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_GUIDE_COLOR = "#777777"

_W, _H = 720, 460
_ML, _MR, _MT, _MB = 78, 24, 42, 58


@dataclass
class Series:
    label: str
    x: tuple
    y: tuple
    marker: bool = False
    dashed: bool = False
    color: str = ""


def _fmt(v: float) -> str:
    return format(float(v), ".4f")


def _tick_label(v: float) -> str:
    return format(float(v), ".4g")


def _finite_pairs(s: Series):
    return [
        (float(a), float(b))
        for a, b in zip(s.x, s.y)
        if math.isfinite(a) and math.isfinite(b)
    ]


def _axis_ticks(lo: float, hi: float, log: bool) -> list[float]:
    if log:
        lo_d = math.floor(math.log10(lo) - 1e-9)
        hi_d = math.ceil(math.log10(hi) + 1e-9)
        return [10.0**k for k in range(int(lo_d), int(hi_d) + 1)]
    span = hi - lo
    step = 10.0 ** math.floor(math.log10(span / 4.0))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if span / (step * mult) <= 6:
            step *= mult
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-12 * span:
        ticks.append(round(t / step) * step)
        t += step
    return ticks


def plot(
    path,
    title: str,
    xlabel: str,
    ylabel: str,
    series: list[Series],
    *,
    xlog: bool = False,
    ylog: bool = False,
    config: dict | None = None,
) -> None:
    pts_all = [p for s in series for p in _finite_pairs(s) if not s.dashed]
    if not pts_all:
        pts_all = [p for s in series for p in _finite_pairs(s)]
    if not pts_all:
        raise ValueError("nothing to plot")
    xs = [p[0] for p in pts_all]
    ys = [p[1] for p in pts_all]
    if xlog and min(xs) <= 0:
        raise ValueError("log x axis needs positive data")
    if ylog:
        ys = [y for y in ys if y > 0] or [1.0]

    def bounds(vals, log):
        lo, hi = min(vals), max(vals)
        if log:
            pad = (hi / lo) ** 0.05 if hi > lo else 2.0
            return lo / pad, hi * pad
        pad = 0.05 * (hi - lo) if hi > lo else max(abs(hi), 1.0) * 0.1
        return lo - pad, hi + pad

    x0, x1 = bounds(xs, xlog)
    y0, y1 = bounds(ys, ylog)

    def sx(v: float) -> float:
        t = (
            (math.log10(v) - math.log10(x0)) / (math.log10(x1) - math.log10(x0))
            if xlog
            else (v - x0) / (x1 - x0)
        )
        return _ML + t * (_W - _ML - _MR)

    def sy(v: float) -> float:
        if ylog:
            if v <= 0:
                return float("nan")
            t = (math.log10(v) - math.log10(y0)) / (math.log10(y1) - math.log10(y0))
        else:
            t = (v - y0) / (y1 - y0)
        return _H - _MB - t * (_H - _MT - _MB)

    out = []
    out.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">'
    )
    if config is not None:
        blob = json.dumps(config, sort_keys=True).replace("--", "- -")
        out.append(f"<!-- config: {blob} -->")
    out.append(f'<rect width="{_W}" height="{_H}" fill="#ffffff"/>')
    out.append(
        f'<text x="{_W // 2}" y="24" font-family="monospace" font-size="15" '
        f'text-anchor="middle">{title}</text>'
    )

    # Axes, ticks, grid.
    ax = (
        f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" '
        'stroke="#000000"/>'
        f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" stroke="#000000"/>'
    )
    out.append(ax)
    for t in _axis_ticks(x0, x1, xlog):
        if not x0 <= t <= x1:
            continue
        px = _fmt(sx(t))
        out.append(
            f'<line x1="{px}" y1="{_MT}" x2="{px}" y2="{_H - _MB}" '
            'stroke="#dddddd"/>'
            f'<text x="{px}" y="{_H - _MB + 18}" font-family="monospace" '
            f'font-size="11" text-anchor="middle">{_tick_label(t)}</text>'
        )
    for t in _axis_ticks(y0, y1, ylog):
        if not y0 <= t <= y1:
            continue
        py = _fmt(sy(t))
        out.append(
            f'<line x1="{_ML}" y1="{py}" x2="{_W - _MR}" y2="{py}" '
            'stroke="#dddddd"/>'
            f'<text x="{_ML - 6}" y="{py}" font-family="monospace" font-size="11" '
            f'text-anchor="end" dominant-baseline="middle">{_tick_label(t)}</text>'
        )
    out.append(
        f'<text x="{(_ML + _W - _MR) // 2}" y="{_H - 14}" font-family="monospace" '
        f'font-size="13" text-anchor="middle">{xlabel}</text>'
    )
    out.append(
        f'<text x="20" y="{(_MT + _H - _MB) // 2}" font-family="monospace" '
        f'font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 20 {(_MT + _H - _MB) // 2})">{ylabel}</text>'
    )

    color_i = 0
    legend_y = _MT + 6
    for s in series:
        color = s.color
        if not color:
            color = _GUIDE_COLOR if s.dashed else _PALETTE[color_i % len(_PALETTE)]
            if not s.dashed:
                color_i += 1
        pts = _finite_pairs(s)
        if ylog:
            pts = [(a, b) for a, b in pts if b > 0]
        if not pts:
            continue
        coords = " ".join(f"{_fmt(sx(a))},{_fmt(sy(b))}" for a, b in pts)
        dash = ' stroke-dasharray="6,4"' if s.dashed else ""
        if s.marker:
            for a, b in pts:
                out.append(
                    f'<circle cx="{_fmt(sx(a))}" cy="{_fmt(sy(b))}" r="2.5" '
                    f'fill="{color}" fill-opacity="0.7"/>'
                )
        if len(pts) > 1 and not s.marker:
            out.append(
                f'<polyline points="{coords}" fill="none" stroke="{color}" '
                f'stroke-width="1.6"{dash}/>'
            )
        if s.label:
            out.append(
                f'<line x1="{_W - _MR - 150}" y1="{legend_y}" '
                f'x2="{_W - _MR - 126}" y2="{legend_y}" stroke="{color}"'
                f'{dash} stroke-width="1.6"/>'
                f'<text x="{_W - _MR - 120}" y="{legend_y + 4}" '
                f'font-family="monospace" font-size="11">{s.label}</text>'
            )
            legend_y += 16
    out.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(out) + "\n")
