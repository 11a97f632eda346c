"""Hand-written SVG charts: training curves, activation histograms, proportion sweeps."""

from __future__ import annotations

import datetime
from xml.sax.saxutils import escape

import numpy as np

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd")


def _svg(width: int, height: int, body: list[str], timestamp: bool = False) -> str:
    head = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">']
    if timestamp:
        head.append(f"<!-- generated {datetime.datetime.now().isoformat(timespec='seconds')} -->")
    head.append(f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>')
    return "\n".join(head + body + ["</svg>", ""])


def _text(x, y, s, anchor="middle", size=11, extra=""):
    return f'<text x="{x:.1f}" y="{y:.1f}" text-anchor="{anchor}" font-size="{size}"{extra}>{escape(str(s))}</text>'


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1000:
        return f"{v / 1000:g}k"
    return f"{v:.3g}"


def curves_svg(curves, n_segments: int, cycle_length: int | None = None, title: str = "",
               segment_labels=None, timestamp: bool = False) -> str:
    """One panel per segment: evaluation value against environment steps.

    ``curves`` holds ``(segment, env_step, value)`` with 1-based segments. A
    dashed divider separates cycles when ``cycle_length`` is given.
    """
    by_seg: dict[int, list] = {i: [] for i in range(1, n_segments + 1)}
    for seg, step, value in curves:
        by_seg.setdefault(int(seg), []).append((float(step), float(value)))
    values = [v for pts in by_seg.values() for _, v in pts]
    y_lo = min(0.0, min(values, default=0.0))
    y_hi = max(1.0, max(values, default=1.0))
    panel_w, panel_h, gap = 170, 200, 12
    left, top, bottom = 50, 40, 45
    width = left + n_segments * (panel_w + gap) + 10
    height = top + panel_h + bottom
    body = []
    if title:
        body.append(_text(width / 2, 20, title, size=13))
    body.append(_text(14, top + panel_h / 2, "evaluation", extra=f' transform="rotate(-90 14 {top + panel_h / 2})"'))
    for k in range(n_segments):
        seg = k + 1
        x0 = left + k * (panel_w + gap)
        pts = sorted(by_seg.get(seg, []))
        x_max = max([p[0] for p in pts], default=1.0) or 1.0
        body.append(f'<g class="panel" data-segment="{seg}">')
        body.append(f'<rect x="{x0}" y="{top}" width="{panel_w}" height="{panel_h}" fill="none" stroke="#888"/>')
        for frac in (0.0, 0.5, 1.0):
            yv = y_lo + frac * (y_hi - y_lo)
            yy = top + panel_h - frac * panel_h
            body.append(f'<line x1="{x0}" y1="{yy:.1f}" x2="{x0 + panel_w}" y2="{yy:.1f}" stroke="#eee"/>')
            if k == 0:
                body.append(_text(x0 - 4, yy + 4, _fmt(yv), anchor="end"))
        if pts:
            coords = " ".join(f"{x0 + p[0] / x_max * panel_w:.1f},{top + panel_h - (p[1] - y_lo) / (y_hi - y_lo) * panel_h:.1f}"
                              for p in pts)
            body.append(f'<polyline points="{coords}" fill="none" stroke="{COLORS[0]}" stroke-width="1.8"/>')
        label = segment_labels[k] if segment_labels else f"segment {seg}"
        body.append(_text(x0 + panel_w / 2, top - 6, label, size=10))
        body.append(_text(x0, top + panel_h + 14, "0", anchor="start", size=9))
        body.append(_text(x0 + panel_w, top + panel_h + 14, _fmt(x_max), anchor="end", size=9))
        body.append("</g>")
        if cycle_length and seg % cycle_length == 0 and seg < n_segments:
            xd = x0 + panel_w + gap / 2
            body.append(f'<line class="cycle-divider" x1="{xd:.1f}" y1="{top - 4}" x2="{xd:.1f}" '
                        f'y2="{top + panel_h + 4}" stroke="black" stroke-dasharray="5,4"/>')
    body.append(_text(width / 2, height - 8, "environment steps"))
    return _svg(width, height, body, timestamp)


def histogram_svg(high, low, bins: int = 30, title: str = "", labels=("goal reached", "goal missed"),
                  timestamp: bool = False) -> str:
    """Overlaid activation histograms for above- and below-average goal proximity steps."""
    high = np.asarray(high, dtype=np.float64)
    low = np.asarray(low, dtype=np.float64)
    both = np.concatenate([high, low]) if high.size + low.size else np.zeros(1)
    lo, hi = float(both.min()), float(both.max())
    if hi == lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    counts = [np.histogram(v, edges)[0] if v.size else np.zeros(bins, dtype=int) for v in (high, low)]
    c_max = max(1, max(int(c.max()) for c in counts))
    w, h, left, top, bottom = 520, 300, 55, 40, 50
    pw, ph = w - left - 20, h - top - bottom
    body = []
    if title:
        body.append(_text(w / 2, 20, title, size=13))
    body.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>')
    bar_w = pw / bins
    for s, (cnt, values, label, color) in enumerate(zip(counts, (high, low), labels, COLORS)):
        mean = repr(float(values.mean())) if values.size else "nan"
        body.append(f'<g class="series" data-label="{escape(label)}" data-mean="{mean}" fill="{color}" '
                    f'fill-opacity="0.5">')
        for b, c in enumerate(cnt):
            if c == 0:
                continue
            bh = c / c_max * ph
            body.append(f'<rect x="{left + b * bar_w:.1f}" y="{top + ph - bh:.1f}" width="{bar_w:.1f}" '
                        f'height="{bh:.1f}"/>')
        body.append("</g>")
        body.append(f'<rect x="{left + pw - 130}" y="{top + 8 + 16 * s}" width="10" height="10" fill="{color}" '
                    f'fill-opacity="0.5"/>')
        body.append(_text(left + pw - 115, top + 17 + 16 * s, f"{label} (n={int(cnt.sum())})", anchor="start"))
    body.append(_text(left, top + ph + 16, _fmt(lo), anchor="start"))
    body.append(_text(left + pw, top + ph + 16, _fmt(hi), anchor="end"))
    body.append(_text(left - 6, top + 10, str(c_max), anchor="end"))
    body.append(_text(left + pw / 2, h - 10, "activation"))
    return _svg(w, h, body, timestamp)


def sweep_svg(rows, title: str = "", timestamp: bool = False) -> str:
    """Mean ASR against skill-neuron proportion with one-std error bars.

    ``rows`` holds ``(proportion, mean, std)``.
    """
    rows = sorted((float(p), float(m), float(s)) for p, m, s in rows)
    w, h, left, top, bottom = 480, 300, 55, 40, 50
    pw, ph = w - left - 25, h - top - bottom
    xs = [r[0] for r in rows] or [0.0, 1.0]
    x_lo, x_hi = min(xs), max(xs)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 0.05, x_hi + 0.05
    y_lo = min([0.0] + [r[1] - r[2] for r in rows])
    y_hi = max([1.0] + [r[1] + r[2] for r in rows])

    def px(x):
        return left + (x - x_lo) / (x_hi - x_lo) * pw

    def py(y):
        return top + ph - (y - y_lo) / (y_hi - y_lo) * ph

    body = []
    if title:
        body.append(_text(w / 2, 20, title, size=13))
    body.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>')
    if rows:
        coords = " ".join(f"{px(p):.1f},{py(m):.1f}" for p, m, _ in rows)
        body.append(f'<polyline class="series" points="{coords}" fill="none" stroke="{COLORS[0]}" stroke-width="2"/>')
    for p, m, s in rows:
        x = px(p)
        body.append(f'<g class="errorbar" data-proportion="{p:g}" stroke="{COLORS[0]}">'
                    f'<line x1="{x:.1f}" y1="{py(m - s):.1f}" x2="{x:.1f}" y2="{py(m + s):.1f}"/>'
                    f'<line x1="{x - 4:.1f}" y1="{py(m - s):.1f}" x2="{x + 4:.1f}" y2="{py(m - s):.1f}"/>'
                    f'<line x1="{x - 4:.1f}" y1="{py(m + s):.1f}" x2="{x + 4:.1f}" y2="{py(m + s):.1f}"/></g>')
        body.append(f'<circle cx="{x:.1f}" cy="{py(m):.1f}" r="3" fill="{COLORS[0]}"/>')
        body.append(_text(x, top + ph + 16, f"{p:g}", size=10))
    for frac in (0.0, 0.5, 1.0):
        yv = y_lo + frac * (y_hi - y_lo)
        body.append(_text(left - 6, py(yv) + 4, _fmt(yv), anchor="end"))
    body.append(_text(left + pw / 2, h - 10, "skill-neuron proportion"))
    body.append(_text(14, top + ph / 2, "ASR", extra=f' transform="rotate(-90 14 {top + ph / 2})"'))
    return _svg(w, h, body, timestamp)
