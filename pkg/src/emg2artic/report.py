"""Static SVG figures and text summaries for runs and sweeps.

Figures are hand-emitted SVG primitives: a bar chart for correlation
reports and a labeled grid for electrode heatmaps. The heatmap ramp is
monotone in the cell value; display normalization clamps to the data's
[0, max] range so negative drops render at the cold end without
rescaling the data itself.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

from .ablation import Heatmap
from .eval_metrics import REPORT_ROWS, CorrelationReport

FONT = "font-family=\"Helvetica, Arial, sans-serif\""


def _ramp(v: float, lo: float, hi: float) -> str:
    """Monotone cold-to-warm color for v in [lo, hi] (clamped)."""
    if hi <= lo:
        t = 0.0
    else:
        t = (float(v) - lo) / (hi - lo)
    t = min(max(t, 0.0), 1.0)
    # dark blue (cold) through orange to near-white yellow (warm)
    r = int(round(40 + t * (255 - 40)))
    g = int(round(40 + t * (200 - 40)))
    b = int(round(90 + t * (40 - 90)))
    return f"rgb({r},{g},{b})"


def svg_bar_chart(labels, values, title: str, y_label: str = "r") -> str:
    """Vertical bar chart with per-bar value labels; returns SVG text."""
    labels = list(labels)
    values = [float(v) for v in values]
    if len(labels) != len(values):
        raise ValueError("labels and values must align")
    if not labels:
        raise ValueError("nothing to plot")
    bar_w, gap, left, top = 34, 10, 60, 50
    plot_h = 220
    v_hi = max(1.0, max(values))
    v_lo = min(0.0, min(values))
    span = v_hi - v_lo
    width = left + len(labels) * (bar_w + gap) + 30
    height = top + plot_h + 70

    def y_of(v):
        return top + (v_hi - v) / span * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" '
        f'font-size="15" {FONT}>{escape(title)}</text>',
        f'<text x="18" y="{top + plot_h / 2:.1f}" text-anchor="middle" '
        f'font-size="12" {FONT} transform="rotate(-90 18 '
        f'{top + plot_h / 2:.1f})">{escape(y_label)}</text>',
    ]
    # axis and zero line
    parts.append(
        f'<line x1="{left - 6}" y1="{top}" x2="{left - 6}" '
        f'y2="{top + plot_h}" stroke="black" stroke-width="1"/>'
    )
    zero_y = y_of(0.0)
    parts.append(
        f'<line x1="{left - 6}" y1="{zero_y:.1f}" '
        f'x2="{width - 20}" y2="{zero_y:.1f}" stroke="#888" stroke-width="1"/>'
    )
    for tick in (v_lo, 0.0, v_hi) if v_lo < 0 else (0.0, v_hi / 2, v_hi):
        ty = y_of(tick)
        parts.append(
            f'<text x="{left - 10}" y="{ty + 4:.1f}" text-anchor="end" '
            f'font-size="10" {FONT}>{tick:.2f}</text>'
        )
    for i, (lab, v) in enumerate(zip(labels, values)):
        x = left + i * (bar_w + gap)
        y0, y1 = sorted((y_of(v), zero_y))
        h = max(y1 - y0, 0.5)
        parts.append(
            f'<rect x="{x}" y="{y0:.1f}" width="{bar_w}" height="{h:.1f}" '
            f'fill="{_ramp(v, v_lo, v_hi)}" stroke="#333" stroke-width="0.5"/>'
        )
        vy = y0 - 4 if v >= 0 else y1 + 12
        parts.append(
            f'<text x="{x + bar_w / 2:.1f}" y="{vy:.1f}" text-anchor="middle" '
            f'font-size="9" {FONT}>{v:.2f}</text>'
        )
        lx, ly = x + bar_w / 2, top + plot_h + 12
        parts.append(
            f'<text x="{lx:.1f}" y="{ly:.1f}" text-anchor="end" font-size="10" '
            f'{FONT} transform="rotate(-45 {lx:.1f} {ly:.1f})">{escape(lab)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def svg_heatmap(heatmap: Heatmap, title: str) -> str:
    """Electrode-by-feature grid with numeric cell labels.

    Columns are the six EMA sensors plus pitch and loudness; rows are
    electrode ids.
    """
    cols = list(heatmap.sensors) + ["pitch", "loud"]
    data = np.column_stack(
        [heatmap.matrix, heatmap.pitch[:, None], heatmap.loudness[:, None]]
    )
    n_rows, n_cols = data.shape
    cell, left, top = 52, 90, 60
    width = left + n_cols * cell + 30
    height = top + n_rows * cell + 40
    # display range [0, max]; negative cells clamp to the cold end
    hi = max(float(data.max()), 1e-12)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="26" text-anchor="middle" '
        f'font-size="15" {FONT}>{escape(title)}</text>',
    ]
    for j, name in enumerate(cols):
        parts.append(
            f'<text x="{left + j * cell + cell / 2:.1f}" y="{top - 8}" '
            f'text-anchor="middle" font-size="11" {FONT}>{escape(name)}</text>'
        )
    for i in range(n_rows):
        parts.append(
            f'<text x="{left - 10}" y="{top + i * cell + cell / 2 + 4:.1f}" '
            f'text-anchor="end" font-size="11" {FONT}>'
            f'electrode {heatmap.electrode_ids[i]}</text>'
        )
        for j in range(n_cols):
            v = float(data[i, j])
            x, y = left + j * cell, top + i * cell
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="{_ramp(v, 0.0, hi)}" stroke="white" stroke-width="1"/>'
            )
            # readable label on both light and dark cells
            t = 0.0 if hi <= 0 else min(max(v / hi, 0.0), 1.0)
            color = "#000" if t > 0.55 else "#fff"
            parts.append(
                f'<text x="{x + cell / 2:.1f}" y="{y + cell / 2 + 4:.1f}" '
                f'text-anchor="middle" font-size="10" fill="{color}" '
                f'{FONT}>{v:.2f}</text>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_correlation_svg(report: CorrelationReport, title: str) -> str:
    rows = [name for name in REPORT_ROWS]
    return svg_bar_chart(rows, [report.r(n) for n in rows], title)


def correlation_summary(report: CorrelationReport) -> str:
    lines = [
        f"utterances: {report.n_utterances}   "
        f"skipped zero-variance pairs: {report.n_skipped}",
        f"{'feature':<10} {'r':>8} {'ci_low':>8} {'ci_high':>8}",
    ]
    for name in REPORT_ROWS:
        e = report.entries[name]
        lines.append(
            f"{name:<10} {e['r']:>8.4f} {e['ci_low']:>8.4f} {e['ci_high']:>8.4f}"
        )
    return "\n".join(lines) + "\n"


def heatmap_summary(heatmap: Heatmap) -> str:
    unit = "drop rate" if heatmap.kind == "remove" else "correlation"
    cols = list(heatmap.sensors) + ["pitch", "loud"]
    data = np.column_stack(
        [heatmap.matrix, heatmap.pitch[:, None], heatmap.loudness[:, None]]
    )
    lines = [f"{heatmap.kind} family ({unit} per electrode x feature)"]
    lines.append("electrode " + " ".join(f"{c:>7}" for c in cols))
    for i, eid in enumerate(heatmap.electrode_ids):
        lines.append(
            f"{eid:>9} " + " ".join(f"{v:>7.3f}" for v in data[i])
        )
    argmaxes = ", ".join(
        f"{c}->e{int(np.argmax(data[:, j])) + 1}" for j, c in enumerate(cols)
    )
    lines.append(f"strongest electrode per feature: {argmaxes}")
    return "\n".join(lines) + "\n"
