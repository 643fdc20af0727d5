"""Minimal deterministic SVG writers for training curves and class scatters.

Hand-rolled on purpose: every byte of an emitted figure is a pure function of
the plotted data, which keeps run outputs reproducible bit-for-bit.
"""
from __future__ import annotations

from pathlib import Path

WIDTH = 640
HEIGHT = 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 60, 20, 30, 45

CLASS_COLORS = ("#d62728", "#1f77b4")


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (count - 1)
    return [lo + i * step for i in range(count)]


def _scale(value: float, lo: float, hi: float, pix_lo: float, pix_hi: float) -> float:
    if hi <= lo:
        return (pix_lo + pix_hi) / 2.0
    return pix_lo + (value - lo) / (hi - lo) * (pix_hi - pix_lo)


def _frame(title: str, x_label: str, y_label: str,
           x_lo: float, x_hi: float, y_lo: float, y_hi: float) -> list[str]:
    x0, x1 = MARGIN_L, WIDTH - MARGIN_R
    y0, y1 = HEIGHT - MARGIN_B, MARGIN_T
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="monospace" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="18" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<text x="{(x0 + x1) / 2:.1f}" y="{HEIGHT - 8}" text-anchor="middle">{x_label}</text>',
        f'<text x="14" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 14 {(y0 + y1) / 2:.1f})">{y_label}</text>',
    ]
    for tx in _ticks(x_lo, x_hi):
        px = _scale(tx, x_lo, x_hi, x0, x1)
        parts.append(f'<line x1="{px:.2f}" y1="{y0}" x2="{px:.2f}" y2="{y0 + 4}" stroke="black"/>')
        parts.append(f'<text x="{px:.2f}" y="{y0 + 18}" text-anchor="middle">{tx:g}</text>')
    for ty in _ticks(y_lo, y_hi):
        py = _scale(ty, y_lo, y_hi, y0, y1)
        parts.append(f'<line x1="{x0 - 4}" y1="{py:.2f}" x2="{x0}" y2="{py:.2f}" stroke="black"/>')
        parts.append(f'<text x="{x0 - 8}" y="{py + 4:.2f}" text-anchor="end">{ty:.3g}</text>')
        parts.append(f'<line x1="{x0}" y1="{py:.2f}" x2="{x1}" y2="{py:.2f}" stroke="#dddddd"/>')
    return parts


def line_chart(path, series, title: str = "", x_label: str = "epoch", y_label: str = "") -> None:
    """Write a multi-series line chart.

    series: list of (label, color, xs, ys) with equal-length xs/ys.
    """
    xs_all = [x for _, _, xs, _ in series for x in xs]
    ys_all = [y for _, _, _, ys in series for y in ys]
    if not xs_all:
        Path(path).write_text(
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}">'
            f'<text x="20" y="20">no data</text></svg>\n'
        )
        return
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if y_hi <= y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    parts = _frame(title, x_label, y_label, x_lo, x_hi, y_lo, y_hi)
    x0, x1 = MARGIN_L, WIDTH - MARGIN_R
    y0, y1 = HEIGHT - MARGIN_B, MARGIN_T
    for li, (label, color, xs, ys) in enumerate(series):
        pts = " ".join(
            f"{_scale(x, x_lo, x_hi, x0, x1):.2f},{_scale(y, y_lo, y_hi, y0, y1):.2f}"
            for x, y in zip(xs, ys)
        )
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = MARGIN_T + 14 + 16 * li
        parts.append(f'<line x1="{x1 - 110}" y1="{ly - 4}" x2="{x1 - 90}" y2="{ly - 4}" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{x1 - 84}" y="{ly}">{label}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def scatter_chart(path, points, labels, class_names, title: str = "") -> None:
    """Write a 2-class scatter of the first two point coordinates."""
    if len(points) != len(labels):
        raise ValueError("points and labels must have equal length")
    if not len(points):
        line_chart(path, [])
        return
    xs = [float(p[0]) for p in points]
    ys = [float(p[1]) for p in points]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi <= x_lo:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    if y_hi <= y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    parts = _frame(title, "dim 1", "dim 2", x_lo, x_hi, y_lo, y_hi)
    x0, x1 = MARGIN_L, WIDTH - MARGIN_R
    y0, y1 = HEIGHT - MARGIN_B, MARGIN_T
    for (x, y), label in zip(zip(xs, ys), labels):
        color = CLASS_COLORS[int(label) % len(CLASS_COLORS)]
        parts.append(
            f'<circle cx="{_scale(x, x_lo, x_hi, x0, x1):.2f}" '
            f'cy="{_scale(y, y_lo, y_hi, y0, y1):.2f}" r="3" fill="{color}" fill-opacity="0.7"/>'
        )
    for li, name in enumerate(class_names):
        ly = MARGIN_T + 14 + 16 * li
        parts.append(f'<circle cx="{x1 - 104}" cy="{ly - 4}" r="4" fill="{CLASS_COLORS[li]}"/>')
        parts.append(f'<text x="{x1 - 94}" y="{ly}">{name}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
