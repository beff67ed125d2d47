"""Minimal self-contained SVG line plots (success-vs-distance curves).

One transparent polyline per seed, one solid mean line per series; no
plotting dependency, output is deterministic."""

from __future__ import annotations

import dataclasses


@dataclasses.dataclass
class Series:
    label: str
    color: str
    per_seed: list  # list of y-vectors, one per seed
    mean: list


_W, _H = 640, 440
_L, _R, _T, _B = 70, 30, 40, 60


def _sx(x, x0, x1):
    span = (x1 - x0) or 1.0
    return _L + (x - x0) / span * (_W - _L - _R)


def _sy(y):
    return _H - _B - y * (_H - _T - _B)


def _poly(xs, ys, x0, x1, color, width, opacity):
    pts = " ".join(f"{_sx(x, x0, x1):.2f},{_sy(y):.2f}" for x, y in zip(xs, ys))
    return (
        f'<polyline points="{pts}" fill="none" stroke="{color}" '
        f'stroke-width="{width}" stroke-opacity="{opacity}"/>'
    )


def write_success_svg(path, xs, series: list[Series], title: str, xlabel: str = "goal distance (steps)"):
    x0, x1 = float(min(xs)), float(max(xs))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.0f}" y="24" text-anchor="middle" font-size="16" '
        f'font-family="sans-serif">{title}</text>',
    ]
    # axes
    parts.append(
        f'<line x1="{_L}" y1="{_sy(0):.2f}" x2="{_W - _R}" y2="{_sy(0):.2f}" stroke="black"/>'
    )
    parts.append(f'<line x1="{_L}" y1="{_sy(0):.2f}" x2="{_L}" y2="{_sy(1):.2f}" stroke="black"/>')
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = _sy(frac)
        parts.append(f'<line x1="{_L - 4}" y1="{y:.2f}" x2="{_L}" y2="{y:.2f}" stroke="black"/>')
        parts.append(
            f'<text x="{_L - 8}" y="{y + 4:.2f}" text-anchor="end" font-size="11" '
            f'font-family="sans-serif">{frac:g}</text>'
        )
    for x in xs:
        px = _sx(x, x0, x1)
        parts.append(
            f'<line x1="{px:.2f}" y1="{_sy(0):.2f}" x2="{px:.2f}" y2="{_sy(0) + 4:.2f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{px:.2f}" y="{_sy(0) + 18:.2f}" text-anchor="middle" font-size="11" '
            f'font-family="sans-serif">{x:g}</text>'
        )
    parts.append(
        f'<text x="{(_L + _W - _R) / 2:.0f}" y="{_H - 14}" text-anchor="middle" font-size="13" '
        f'font-family="sans-serif">{xlabel}</text>'
    )
    parts.append(
        f'<text x="18" y="{(_T + _H - _B) / 2:.0f}" text-anchor="middle" font-size="13" '
        f'font-family="sans-serif" transform="rotate(-90 18 {(_T + _H - _B) / 2:.0f})">success rate</text>'
    )
    for si, s in enumerate(series):
        for line in s.per_seed:
            parts.append(_poly(xs, line, x0, x1, s.color, 1.5, 0.35))
        parts.append(_poly(xs, s.mean, x0, x1, s.color, 3, 1.0))
        ly = _T + 16 * si
        parts.append(
            f'<line x1="{_W - _R - 120}" y1="{ly}" x2="{_W - _R - 96}" y2="{ly}" '
            f'stroke="{s.color}" stroke-width="3"/>'
        )
        parts.append(
            f'<text x="{_W - _R - 90}" y="{ly + 4}" font-size="12" '
            f'font-family="sans-serif">{s.label}</text>'
        )
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts) + "\n")
