"""Grouped bar charts with confidence whiskers, written as plain SVG."""
from __future__ import annotations

from xml.sax.saxutils import escape

PALETTE = ("#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860")


def bar_chart(groups, series: dict, title: str = "", ylabel: str = "success rate",
              width: int = 640, height: int = 360) -> str:
    """``series`` maps a legend name to one (value, low, high) triple per group;
    values are fractions in [0, 1]."""
    left, right, top, bottom = 60, 20, 40, 50
    pw, ph = width - left - right, height - top - bottom
    names = list(series)
    slot = pw / max(len(groups), 1)
    bw = slot * 0.8 / max(len(names), 1)
    y = lambda v: top + ph * (1.0 - min(max(v, 0.0), 1.0))  # noqa: E731
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="12">',
           f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>']
    for tick in range(6):
        v = tick / 5
        out.append(f'<line x1="{left}" x2="{left + pw}" y1="{y(v):.1f}" y2="{y(v):.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{left - 6}" y="{y(v) + 4:.1f}" text-anchor="end">{v:.1f}</text>')
    out.append(f'<text x="14" y="{top + ph / 2:.1f}" transform="rotate(-90 14 {top + ph / 2:.1f})" '
               f'text-anchor="middle">{escape(ylabel)}</text>')
    for gi, g in enumerate(groups):
        x0 = left + gi * slot + slot * 0.1
        out.append(f'<text x="{left + (gi + 0.5) * slot:.1f}" y="{top + ph + 20}" text-anchor="middle">{escape(str(g))}</text>')
        for si, name in enumerate(names):
            v, lo, hi = series[name][gi]
            x = x0 + si * bw
            color = PALETTE[si % len(PALETTE)]
            out.append(f'<rect x="{x:.1f}" y="{y(v):.1f}" width="{bw * 0.9:.1f}" height="{top + ph - y(v):.1f}" fill="{color}"/>')
            cx = x + bw * 0.45
            out.append(f'<line x1="{cx:.1f}" x2="{cx:.1f}" y1="{y(hi):.1f}" y2="{y(lo):.1f}" stroke="#222"/>')
            for yy in (y(lo), y(hi)):
                out.append(f'<line x1="{cx - 4:.1f}" x2="{cx + 4:.1f}" y1="{yy:.1f}" y2="{yy:.1f}" stroke="#222"/>')
    for si, name in enumerate(names):
        lx = left + 10 + si * 110
        out.append(f'<rect x="{lx}" y="{height - 18}" width="10" height="10" fill="{PALETTE[si % len(PALETTE)]}"/>')
        out.append(f'<text x="{lx + 14}" y="{height - 9}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
