"""Deterministic log-log SVG of a rates table.

The root element carries ``data-xmap`` and ``data-ymap`` attributes
``"a b"`` such that pixel = a + b * log10(value), so the figure can be read
back numerically.
"""
from __future__ import annotations

import math

from .csvio import RATES_SCHEMA, read_csv

WIDTH, HEIGHT = 480, 360
MARGIN = 60
SERIES = (("mean_E", "#1f77b4"), ("q50", "#2ca02c"), ("q90", "#d62728"))
GUIDE_SLOPES = (1, 2)


def _fmt(v):
    return format(v, ".6f").rstrip("0").rstrip(".")


def _range(vals):
    lo, hi = math.log10(min(vals)), math.log10(max(vals))
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def rates_svg(rows):
    if not rows:
        raise ValueError("rates table has no rows")
    taus = [float(r["tau"]) for r in rows]
    xkey = "tau" if len(set(taus)) > 1 else "h"
    xs = [float(r[xkey]) for r in rows]
    ys = [float(r[s]) for r in rows for s, _ in SERIES]
    if min(xs) <= 0 or min(ys) <= 0:
        raise ValueError("log-log plot needs positive values")
    x0, x1 = _range(xs)
    y0, y1 = _range(ys)
    bx = (WIDTH - 2 * MARGIN) / (x1 - x0)
    ax = MARGIN - bx * x0
    by = -(HEIGHT - 2 * MARGIN) / (y1 - y0)
    ay = HEIGHT - MARGIN - by * y0

    def px(v):
        return ax + bx * math.log10(v)

    def py(v):
        return ay + by * math.log10(v)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" data-xkey="{xkey}" '
        f'data-xmap="{ax!r} {bx!r}" data-ymap="{ay!r} {by!r}">',
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{WIDTH - 2 * MARGIN}" '
        f'height="{HEIGHT - 2 * MARGIN}" fill="none" stroke="#000"/>',
        f'<text x="{WIDTH // 2}" y="{HEIGHT - 15}" text-anchor="middle">log10 {xkey}</text>',
        f'<text x="15" y="{HEIGHT // 2}" transform="rotate(-90 15 {HEIGHT // 2})" '
        f'text-anchor="middle">log10 E</text>',
    ]
    # guides pass through the first mean_E point
    gx, gy = xs[0], float(rows[0]["mean_E"])
    for k in GUIDE_SLOPES:
        xa, xb = min(xs), max(xs)
        ya = gy * (xa / gx) ** k
        yb = gy * (xb / gx) ** k
        out.append(f'<path class="guide" data-slope="{k}" d="M {px(xa)!r} {py(ya)!r} '
                   f'L {px(xb)!r} {py(yb)!r}" stroke="#888" stroke-dasharray="4 3" fill="none"/>')
    for name, colour in SERIES:
        pts = [(px(x), py(float(r[name]))) for x, r in zip(xs, rows)]
        d = " ".join(("M" if i == 0 else "L") + f" {_fmt(a)} {_fmt(b)}"
                     for i, (a, b) in enumerate(pts))
        out.append(f'<g class="series" data-series="{name}">')
        out.append(f'<path d="{d}" stroke="{colour}" fill="none"/>')
        for a, b in pts:
            out.append(f'<circle class="marker" cx="{_fmt(a)}" cy="{_fmt(b)}" r="3" '
                       f'fill="{colour}"/>')
        out.append("</g>")
    for i, (name, colour) in enumerate(SERIES):
        out.append(f'<text x="{WIDTH - MARGIN - 70}" y="{MARGIN + 15 + 15 * i}" '
                   f'fill="{colour}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plot(rates_csv, svg_path):
    rows = read_csv(rates_csv, RATES_SCHEMA)
    text = rates_svg(rows)
    with open(svg_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return svg_path
