"""Minimal deterministic SVG charts (no plotting dependency)."""

from __future__ import annotations

from pathlib import Path

WIDTH, HEIGHT = 640, 400
MARGIN = 60
PALETTE = ("#2564ad", "#d1642e", "#3e9444", "#a43f9c", "#777777")


def _scale(values, lo, hi, out_lo, out_hi):
    span = (hi - lo) or 1.0
    return [out_lo + (v - lo) / span * (out_hi - out_lo) for v in values]


def _frame(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.0f}" y="24" text-anchor="middle" font-size="16" font-family="sans-serif">{title}</text>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
    ]


def line_chart(path, series: dict, title: str = "", x_label: str = "", y_label: str = "") -> None:
    """series: name -> (xs, ys)."""
    parts = _frame(title)
    all_x = [x for xs, _ in series.values() for x in xs]
    all_y = [y for _, ys in series.values() for y in ys]
    if not all_x:
        all_x, all_y = [0.0, 1.0], [0.0, 1.0]
    x_lo, x_hi = min(all_x), max(all_x)
    y_lo, y_hi = min(min(all_y), 0.0), max(all_y)
    for i, (name, (xs, ys)) in enumerate(sorted(series.items())):
        color = PALETTE[i % len(PALETTE)]
        px = _scale(xs, x_lo, x_hi, MARGIN, WIDTH - MARGIN)
        py = _scale(ys, y_lo, y_hi, HEIGHT - MARGIN, MARGIN)
        pts = " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(px, py))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        parts.append(
            f'<text x="{WIDTH - MARGIN + 4}" y="{MARGIN + 18 * i}" font-size="12" fill="{color}" font-family="sans-serif">{name}</text>'
        )
    parts.append(
        f'<text x="{WIDTH / 2:.0f}" y="{HEIGHT - 16}" text-anchor="middle" font-size="12" font-family="sans-serif">{x_label}</text>'
    )
    parts.append(
        f'<text x="18" y="{HEIGHT / 2:.0f}" text-anchor="middle" font-size="12" font-family="sans-serif" transform="rotate(-90 18 {HEIGHT / 2:.0f})">{y_label}</text>'
    )
    parts.append(f'<text x="{MARGIN}" y="{HEIGHT - MARGIN + 16}" font-size="10" font-family="sans-serif">{x_lo:.3g}</text>')
    parts.append(f'<text x="{WIDTH - MARGIN}" y="{HEIGHT - MARGIN + 16}" text-anchor="end" font-size="10" font-family="sans-serif">{x_hi:.3g}</text>')
    parts.append(f'<text x="{MARGIN - 6}" y="{HEIGHT - MARGIN}" text-anchor="end" font-size="10" font-family="sans-serif">{y_lo:.3g}</text>')
    parts.append(f'<text x="{MARGIN - 6}" y="{MARGIN + 4}" text-anchor="end" font-size="10" font-family="sans-serif">{y_hi:.3g}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))


def bar_chart(path, labels: list, values: list, title: str = "", y_label: str = "") -> None:
    parts = _frame(title)
    n = max(len(values), 1)
    y_hi = max(max(values, default=1.0), 1e-9)
    span = (WIDTH - 2 * MARGIN) / n
    for i, (label, value) in enumerate(zip(labels, values)):
        h = (value / y_hi) * (HEIGHT - 2 * MARGIN)
        x = MARGIN + i * span + 0.15 * span
        y = HEIGHT - MARGIN - h
        parts.append(
            f'<rect x="{x:.1f}" y="{y:.1f}" width="{0.7 * span:.1f}" height="{h:.1f}" fill="{PALETTE[i % len(PALETTE)]}"/>'
        )
        parts.append(
            f'<text x="{x + 0.35 * span:.1f}" y="{HEIGHT - MARGIN + 16}" text-anchor="middle" font-size="11" font-family="sans-serif">{label}</text>'
        )
        parts.append(
            f'<text x="{x + 0.35 * span:.1f}" y="{y - 4:.1f}" text-anchor="middle" font-size="10" font-family="sans-serif">{value:.3g}</text>'
        )
    parts.append(
        f'<text x="18" y="{HEIGHT / 2:.0f}" text-anchor="middle" font-size="12" font-family="sans-serif" transform="rotate(-90 18 {HEIGHT / 2:.0f})">{y_label}</text>'
    )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))
