"""Static SVG figures: confusion heatmap and clutter-bin bar chart."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np


def _svg(width, height, body) -> str:
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="9">\n'
        + "\n".join(body)
        + "\n</svg>\n"
    )


def _grey(v, vmax):
    level = 255 - int(round(255 * (min(max(v, 0.0), vmax) / vmax if vmax > 0 else 0.0)))
    return f"rgb({level},{level},255)"


def heatmap_svg(values, labels, column_sums=None, cell=8) -> str:
    """Matrix cells shaded by value with a column-sum histogram underneath."""
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    margin = 90
    hist_h = 80
    width = margin + n * cell + 10
    height = margin + n * cell + hist_h + 20
    vmax = float(values.max()) if values.size else 0.0
    body = []
    for i, name in enumerate(labels):
        y = margin + i * cell + cell - 1
        body.append(f'<text x="{margin - 2}" y="{y}" text-anchor="end">{escape(str(name))}</text>')
        x = margin + i * cell + cell - 1
        body.append(
            f'<text x="{x}" y="{margin - 2}" transform="rotate(-90 {x} {margin - 2})">{escape(str(name))}</text>'
        )
    for i in range(n):
        for j in range(n):
            body.append(
                f'<rect x="{margin + j * cell}" y="{margin + i * cell}" width="{cell}" height="{cell}" '
                f'fill="{_grey(values[i, j], vmax)}"><title>{escape(str(labels[i]))} as '
                f"{escape(str(labels[j]))}: {values[i, j]:.2f}</title></rect>"
            )
    sums = values.sum(axis=0) if column_sums is None else np.asarray(column_sums, dtype=np.float64)
    smax = float(sums.max()) if sums.size else 0.0
    base = margin + n * cell + hist_h + 10
    for j, s in enumerate(sums):
        h = 0.0 if smax <= 0 else hist_h * s / smax
        body.append(
            f'<rect x="{margin + j * cell}" y="{base - h:.2f}" width="{cell - 1}" height="{h:.2f}" fill="#444">'
            f"<title>{escape(str(labels[j]))}: {s:.2f}</title></rect>"
        )
    return _svg(width, height, body)


def bar_chart_svg(labels, values, ylabel="mAP50") -> str:
    """Vertical bars, one per label; ``None`` values are drawn as empty slots."""
    n = len(labels)
    bar, gap, left, top, plot_h = 40, 16, 50, 20, 200
    width = left + n * (bar + gap) + gap
    height = top + plot_h + 40
    vals = [0.0 if v is None else float(v) for v in values]
    vmax = max([100.0] + vals)
    body = [
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>',
        f'<line x1="{left}" y1="{top + plot_h}" x2="{width}" y2="{top + plot_h}" stroke="black"/>',
        f'<text x="12" y="{top + plot_h / 2}" transform="rotate(-90 12 {top + plot_h / 2})">{escape(ylabel)}</text>',
    ]
    for i, (name, v) in enumerate(zip(labels, values)):
        x = left + gap + i * (bar + gap)
        if v is not None:
            h = plot_h * float(v) / vmax
            body.append(
                f'<rect x="{x}" y="{top + plot_h - h:.2f}" width="{bar}" height="{h:.2f}" fill="#4a7ab5"/>'
            )
            body.append(f'<text x="{x + bar / 2}" y="{top + plot_h - h - 3:.2f}" text-anchor="middle">{float(v):.1f}</text>')
        body.append(f'<text x="{x + bar / 2}" y="{top + plot_h + 14}" text-anchor="middle">{escape(str(name))}</text>')
    return _svg(width, height, body)
