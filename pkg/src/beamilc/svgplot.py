"""Minimal deterministic SVG line plots (byte-identical across reruns)."""
from __future__ import annotations

import math

WIDTH = 640
PANEL_H = 260
MARGIN_L = 70
MARGIN_R = 20
MARGIN_T = 34
MARGIN_B = 46

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(x):
    return f"{x:.6g}"


def _ticks(lo, hi, n=5):
    if not math.isfinite(lo) or not math.isfinite(hi) or hi <= lo:
        return [lo]
    span = hi - lo
    raw = span / max(n - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    start = math.ceil(lo / step) * step
    out = []
    t = start
    while t <= hi + 1e-12 * span:
        out.append(0.0 if abs(t) < 1e-12 * span else t)
        t += step
    return out or [lo]


class Panel:
    """One axes area with labelled line series."""

    def __init__(self, title="", xlabel="", ylabel="", logy=False):
        self.title = title
        self.xlabel = xlabel
        self.ylabel = ylabel
        self.logy = logy
        self.series = []

    def line(self, x, y, label=""):
        pts = [(float(a), float(b)) for a, b in zip(x, y)]
        self.series.append((label, pts))
        return self


def render(panels, path):
    """Write stacked panels to an SVG file (LF endings, fixed formatting)."""
    height = MARGIN_T + len(panels) * PANEL_H
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
           f'height="{height}" viewBox="0 0 {WIDTH} {height}">',
           f'<rect width="{WIDTH}" height="{height}" fill="white"/>']
    for idx, panel in enumerate(panels):
        top = MARGIN_T + idx * PANEL_H
        plot_w = WIDTH - MARGIN_L - MARGIN_R
        plot_h = PANEL_H - MARGIN_T - MARGIN_B
        xs = [p[0] for _, pts in panel.series for p in pts]
        ys = [p[1] for _, pts in panel.series for p in pts]
        if panel.logy:
            ys = [y for y in ys if y > 0]
        if not xs or not ys:
            xs, ys = [0.0, 1.0], [0.0, 1.0]
        x_lo, x_hi = min(xs), max(xs)
        y_lo, y_hi = min(ys), max(ys)
        if x_hi == x_lo:
            x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
        if panel.logy:
            y_lo, y_hi = math.log10(y_lo), math.log10(y_hi)
        if y_hi == y_lo:
            y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
        pad = 0.05 * (y_hi - y_lo)
        y_lo, y_hi = y_lo - pad, y_hi + pad

        def to_px(x, y):
            px = MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w
            yy = math.log10(y) if panel.logy else y
            py = top + plot_h - (yy - y_lo) / (y_hi - y_lo) * plot_h
            return px, py

        out.append(f'<rect x="{MARGIN_L}" y="{top}" width="{plot_w}" '
                   f'height="{plot_h}" fill="none" stroke="#444"/>')
        if panel.title:
            out.append(f'<text x="{MARGIN_L + plot_w/2:.1f}" y="{top - 8}" '
                       f'text-anchor="middle" font-size="13" font-family="sans-serif">'
                       f'{panel.title}</text>')
        for t in _ticks(x_lo, x_hi):
            px, _ = to_px(t, math.pow(10, y_lo) if panel.logy else y_lo)
            out.append(f'<line x1="{px:.1f}" y1="{top + plot_h}" x2="{px:.1f}" '
                       f'y2="{top + plot_h + 4}" stroke="#444"/>')
            out.append(f'<text x="{px:.1f}" y="{top + plot_h + 16}" text-anchor="middle" '
                       f'font-size="10" font-family="sans-serif">{_fmt(t)}</text>')
        tick_vals = _ticks(y_lo, y_hi)
        for t in tick_vals:
            disp = 10.0 ** t if panel.logy else t
            _, py = to_px(x_lo, disp)
            out.append(f'<line x1="{MARGIN_L - 4}" y1="{py:.1f}" x2="{MARGIN_L}" '
                       f'y2="{py:.1f}" stroke="#444"/>')
            label = f"1e{t:.0f}" if panel.logy else _fmt(t)
            out.append(f'<text x="{MARGIN_L - 7}" y="{py + 3:.1f}" text-anchor="end" '
                       f'font-size="10" font-family="sans-serif">{label}</text>')
        if panel.xlabel:
            out.append(f'<text x="{MARGIN_L + plot_w/2:.1f}" y="{top + plot_h + 32}" '
                       f'text-anchor="middle" font-size="11" font-family="sans-serif">'
                       f'{panel.xlabel}</text>')
        if panel.ylabel:
            cx, cy = 16, top + plot_h / 2
            out.append(f'<text x="{cx}" y="{cy:.1f}" text-anchor="middle" font-size="11" '
                       f'font-family="sans-serif" transform="rotate(-90 {cx} {cy:.1f})">'
                       f'{panel.ylabel}</text>')
        for si, (label, pts) in enumerate(panel.series):
            color = PALETTE[si % len(PALETTE)]
            shown = [(x, y) for x, y in pts if (not panel.logy) or y > 0]
            if not shown:
                continue
            coords = " ".join(f"{to_px(x, y)[0]:.2f},{to_px(x, y)[1]:.2f}"
                              for x, y in shown)
            out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                       f'stroke-width="1.5"/>')
            if label:
                lx = MARGIN_L + plot_w - 8
                ly = top + 14 + 13 * si
                out.append(f'<line x1="{lx - 28}" y1="{ly - 4}" x2="{lx - 10}" '
                           f'y2="{ly - 4}" stroke="{color}" stroke-width="1.5"/>')
                out.append(f'<text x="{lx - 34}" y="{ly}" text-anchor="end" '
                           f'font-size="10" font-family="sans-serif">{label}</text>')
    out.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(out) + "\n")
