"""Minimal standalone SVG charts.

Hand-written so the output depends on nothing but the numbers: fixed
formatting, no timestamps, no font metrics.  Same input, same bytes.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

W, H = 480, 300
PAD = 48
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def _f(v: float) -> str:
    return f"{v:.2f}"


def _doc(title: str, body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">\n'
            f'<rect width="{W}" height="{H}" fill="white"/>\n'
            f'<text x="{W // 2}" y="20" text-anchor="middle" font-family="sans-serif" font-size="13">'
            f'{escape(title)}</text>\n')
    return head + "\n".join(body) + "\n</svg>\n"


def _axes(ylabel: str, lo: float, hi: float) -> list[str]:
    out = [f'<line x1="{PAD}" y1="{H - PAD}" x2="{W - PAD // 2}" y2="{H - PAD}" stroke="black"/>',
           f'<line x1="{PAD}" y1="{PAD // 2 + 8}" x2="{PAD}" y2="{H - PAD}" stroke="black"/>',
           f'<text x="12" y="{H // 2}" font-family="sans-serif" font-size="11" '
           f'transform="rotate(-90 12 {H // 2})" text-anchor="middle">{escape(ylabel)}</text>']
    for frac in (0.0, 0.5, 1.0):
        y = H - PAD - frac * (H - 1.5 * PAD - 8)
        out.append(f'<text x="{PAD - 4}" y="{_f(y + 4)}" font-family="sans-serif" font-size="10" '
                   f'text-anchor="end">{lo + frac * (hi - lo):.3g}</text>')
    return out


def line_plot(title: str, series: dict[str, list[float]], log_y: bool = True) -> str:
    """Loss traces; nonpositive values are floored at 1e-16 on a log axis."""
    vals = {k: [max(v, 1e-16) if log_y else v for v in s] for k, s in series.items() if s}
    flat = [v for s in vals.values() for v in s]
    tr = (lambda v: math.log10(v)) if log_y else (lambda v: v)
    lo, hi = min(map(tr, flat)), max(map(tr, flat))
    if hi - lo < 1e-12:
        hi = lo + 1.0
    n = max(len(s) for s in vals.values())
    body = _axes("log10 loss" if log_y else "loss", lo, hi)
    span_x = W - 1.5 * PAD
    span_y = H - 1.5 * PAD - 8
    for c, (name, s) in enumerate(sorted(vals.items())):
        pts = " ".join(f"{_f(PAD + span_x * i / max(n - 1, 1))},{_f(H - PAD - span_y * (tr(v) - lo) / (hi - lo))}"
                       for i, v in enumerate(s))
        color = PALETTE[c % len(PALETTE)]
        body.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        body.append(f'<text x="{W - PAD}" y="{40 + 14 * c}" font-family="sans-serif" font-size="11" '
                    f'fill="{color}" text-anchor="end">{escape(name)}</text>')
    body.append(f'<text x="{W // 2}" y="{H - 12}" font-family="sans-serif" font-size="11" '
                f'text-anchor="middle">iteration (0..{n - 1})</text>')
    return _doc(title, body)


def bar_chart(title: str, groups: dict[str, list[float]], labels: list[str] | None = None) -> str:
    """Side-by-side bars, one colour per group."""
    names = list(groups)
    n = max(len(v) for v in groups.values())
    hi = max(max(v) for v in groups.values()) or 1.0
    body = _axes("probability", 0.0, hi)
    span_x = W - 1.5 * PAD
    span_y = H - 1.5 * PAD - 8
    slot = span_x / n
    bw = 0.8 * slot / len(names)
    for g, name in enumerate(names):
        color = PALETTE[g % len(PALETTE)]
        for i, v in enumerate(groups[name]):
            h = span_y * v / hi
            x = PAD + slot * i + 0.1 * slot + g * bw
            body.append(f'<rect x="{_f(x)}" y="{_f(H - PAD - h)}" width="{_f(bw)}" height="{_f(h)}" fill="{color}"/>')
        body.append(f'<text x="{W - PAD}" y="{40 + 14 * g}" font-family="sans-serif" font-size="11" '
                    f'fill="{color}" text-anchor="end">{escape(name)}</text>')
    if labels and n <= 24:
        for i, lab in enumerate(labels):
            x = PAD + slot * (i + 0.5)
            body.append(f'<text x="{_f(x)}" y="{H - PAD + 14}" font-family="sans-serif" font-size="9" '
                        f'text-anchor="middle">{escape(lab)}</text>')
    return _doc(title, body)


def heatmap(title: str, matrix: list[list[float]]) -> str:
    """Greyscale heatmap, white = 0, black = max entry."""
    rows, cols = len(matrix), len(matrix[0])
    top = max(max(r) for r in matrix) or 1.0
    cw = (W - 1.5 * PAD) / cols
    ch = (H - 1.5 * PAD - 8) / rows
    body = []
    for i, row in enumerate(matrix):
        for j, v in enumerate(row):
            shade = int(round(255 * (1 - v / top)))
            body.append(f'<rect x="{_f(PAD + j * cw)}" y="{_f(PAD // 2 + 8 + i * ch)}" width="{_f(cw)}" '
                        f'height="{_f(ch)}" fill="rgb({shade},{shade},{shade})"/>')
    body.append(f'<text x="{W // 2}" y="{H - 12}" font-family="sans-serif" font-size="11" '
                f'text-anchor="middle">{rows} x {cols}, max {top:.3g}</text>')
    return _doc(title, body)
