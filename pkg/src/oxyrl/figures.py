"""Standalone SVG renderings of the report's curve and histograms.

Hand-assembled vector graphics: each data bin becomes one element carrying
a `data-bin` attribute, which keeps the files structurally checkable."""

from __future__ import annotations

WIDTH, HEIGHT = 720, 440
MARGIN_LEFT, MARGIN_RIGHT = 70, 20
MARGIN_TOP, MARGIN_BOTTOM = 40, 60
PLOT_W = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
PLOT_H = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM


def _esc(text):
    return (str(text).replace("&", "&amp;").replace("<", "&lt;")
            .replace(">", "&gt;"))


def _header(title):
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
        f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="16">{_esc(title)}</text>',
    ]


def _axes(x_label, y_label):
    x0, y0 = MARGIN_LEFT, MARGIN_TOP + PLOT_H
    return [
        f'<line x1="{x0}" y1="{y0}" x2="{x0 + PLOT_W}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{MARGIN_TOP}" x2="{x0}" y2="{y0}" stroke="black"/>',
        f'<text x="{x0 + PLOT_W / 2}" y="{HEIGHT - 12}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13">{_esc(x_label)}</text>',
        f'<text x="18" y="{MARGIN_TOP + PLOT_H / 2}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13" '
        f'transform="rotate(-90 18 {MARGIN_TOP + PLOT_H / 2})">{_esc(y_label)}</text>',
    ]


def _x_scale(lo, hi):
    span = hi - lo or 1.0
    return lambda v: MARGIN_LEFT + (v - lo) / span * PLOT_W


def _y_scale(hi):
    hi = hi or 1.0
    return lambda v: MARGIN_TOP + PLOT_H - v / hi * PLOT_H


def _x_ticks(parts, xs, lo, hi, step):
    y0 = MARGIN_TOP + PLOT_H
    v = lo
    while v <= hi + 1e-9:
        parts.append(f'<line x1="{xs(v):.1f}" y1="{y0}" x2="{xs(v):.1f}" '
                     f'y2="{y0 + 5}" stroke="black"/>')
        parts.append(f'<text x="{xs(v):.1f}" y="{y0 + 20}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{v:g}</text>')
        v += step


def render_curve(points, title="Observed 7-day mortality vs flow difference"):
    """Difference-mortality curve with a shaded confidence band."""
    pts = [p for p in points if p.count > 0]
    if not pts:
        raise ValueError("no curve points to draw")
    lo = min(p.low for p in pts)
    hi = max(p.high for p in pts)
    top = max(max(p.ci_high for p in pts), 1e-6) * 1.15
    xs, ys = _x_scale(lo, hi), _y_scale(top)
    parts = _header(title)
    parts += _axes("recommended - logged flow (L/min)", "observed 7-day mortality")
    band_upper = [f"{xs(p.center):.1f},{ys(p.ci_high):.1f}" for p in pts]
    band_lower = [f"{xs(p.center):.1f},{ys(p.ci_low):.1f}" for p in reversed(pts)]
    parts.append(f'<polygon points="{" ".join(band_upper + band_lower)}" '
                 f'fill="#9ecae1" fill-opacity="0.5" stroke="none"/>')
    line = " ".join(f"{xs(p.center):.1f},{ys(p.observed_mortality):.1f}" for p in pts)
    parts.append(f'<polyline points="{line}" fill="none" stroke="#1f77b4" '
                 f'stroke-width="2"/>')
    for p in pts:
        fill = "#aaaaaa" if p.low_support else "#1f77b4"
        parts.append(f'<circle cx="{xs(p.center):.1f}" '
                     f'cy="{ys(p.observed_mortality):.1f}" r="3.5" fill="{fill}" '
                     f'data-bin="{p.center:g}"/>')
    _x_ticks(parts, xs, lo, hi, max(5.0, (hi - lo) / 12))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_histogram(edges, series, title, x_label, colors=("#ff7f0e", "#1f77b4")):
    """Grouped bar chart; `series` maps label -> counts per bin."""
    labels = list(series)
    counts = [series[label] for label in labels]
    n_bins = len(edges) - 1
    peak = max((max(c) for c in counts if len(c)), default=1) or 1
    xs = _x_scale(edges[0], edges[-1])
    ys = _y_scale(float(peak))
    parts = _header(title)
    parts += _axes(x_label, "decision points")
    group_w = PLOT_W / n_bins
    bar_w = group_w / max(len(labels), 1) * 0.85
    for b in range(n_bins):
        for k, label in enumerate(labels):
            value = float(counts[k][b])
            x = xs(edges[b]) + k * bar_w
            y = ys(value)
            h = MARGIN_TOP + PLOT_H - y
            parts.append(
                f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w:.1f}" '
                f'height="{h:.1f}" fill="{colors[k % len(colors)]}" '
                f'fill-opacity="0.85" data-bin="{edges[b]:g}" '
                f'data-series="{_esc(label)}"/>')
    for k, label in enumerate(labels):
        x = MARGIN_LEFT + PLOT_W - 140
        y = MARGIN_TOP + 16 * (k + 1)
        parts.append(f'<rect x="{x}" y="{y - 10}" width="12" height="12" '
                     f'fill="{colors[k % len(colors)]}"/>')
        parts.append(f'<text x="{x + 18}" y="{y}" font-family="sans-serif" '
                     f'font-size="12">{_esc(label)}</text>')
    _x_ticks(parts, xs, edges[0], edges[-1], max(5.0, (edges[-1] - edges[0]) / 12))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
