"""Static SVG charts: PVF bars with CI whiskers and PVF-vs-count lines.

Hand-written markup keeps the output dependency-free and byte-stable. On a
log axis zero values (and zero lower CI bounds) are drawn at the axis floor.
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

from .report import ReportDocument, ReportError

W, H = 720, 360
LEFT, RIGHT, TOP, BOTTOM = 70, 20, 40, 80


class _Axis:
    def __init__(self, values: Sequence[float], log: bool):
        self.log = log
        hi = max(values) if values else 1.0
        if log:
            pos = [v for v in values if v > 0]
            lo = min(pos) if pos else 1e-6
            self.lo = 10.0 ** math.floor(math.log10(lo))
            self.hi = 10.0 ** math.ceil(math.log10(max(hi, self.lo * 10)))
        else:
            self.lo, self.hi = 0.0, (hi * 1.1 if hi > 0 else 1.0)

    def y(self, v: float) -> float:
        span = H - TOP - BOTTOM
        if self.log:
            v = max(v, self.lo)
            t = (math.log10(v) - math.log10(self.lo)) / (math.log10(self.hi) - math.log10(self.lo))
        else:
            t = (v - self.lo) / (self.hi - self.lo)
        return H - BOTTOM - t * span

    def ticks(self) -> list[float]:
        if self.log:
            a, b = round(math.log10(self.lo)), round(math.log10(self.hi))
            return [10.0 ** e for e in range(a, b + 1)]
        return [self.hi * i / 5 for i in range(6)]


def _frame(axis: _Axis, title: str, ylabel: str) -> list[str]:
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<text x="14" y="{(TOP + H - BOTTOM) / 2:.1f}" text-anchor="middle" '
           f'transform="rotate(-90 14 {(TOP + H - BOTTOM) / 2:.1f})">{escape(ylabel)}</text>',
           f'<line x1="{LEFT}" y1="{H - BOTTOM}" x2="{W - RIGHT}" y2="{H - BOTTOM}" stroke="black"/>',
           f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{H - BOTTOM}" stroke="black"/>']
    for t in axis.ticks():
        y = axis.y(t)
        out.append(f'<line x1="{LEFT - 4}" y1="{y:.1f}" x2="{W - RIGHT}" y2="{y:.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{LEFT - 6}" y="{y + 4:.1f}" text-anchor="end">{t:.3g}</text>')
    return out


def _whisker(x: float, lo: float, hi: float) -> str:
    return (f'<path class="ci" d="M{x:.1f},{lo:.1f} V{hi:.1f} M{x - 4:.1f},{lo:.1f} H{x + 4:.1f} '
            f'M{x - 4:.1f},{hi:.1f} H{x + 4:.1f}" stroke="black" fill="none"/>')


def svg_bars(doc: ReportDocument, log: bool = False, title: str | None = None) -> str:
    """One bar per estimate row, each with its CI whisker."""
    rows = doc.estimates
    if not rows:
        raise ReportError("no estimates to plot")
    axis = _Axis([r.ci_high for r in rows] + [r.pvf for r in rows], log)
    out = _frame(axis, title or f"{doc.model}: PVF", "PVF")
    slot = (W - LEFT - RIGHT) / len(rows)
    bw = max(1.0, slot * 0.7)
    base = H - BOTTOM
    for i, r in enumerate(rows):
        cx = LEFT + slot * (i + 0.5)
        top = axis.y(r.pvf) if r.pvf > 0 or not log else base
        out.append(f'<rect class="bar" x="{cx - bw / 2:.1f}" y="{top:.1f}" width="{bw:.1f}" '
                   f'height="{base - top:.1f}" fill="#4c72b0"><title>{escape(r.label)}: {r.pvf:.6g} '
                   f'[{r.ci_low:.6g}, {r.ci_high:.6g}] D={r.D} N={r.N}</title></rect>')
        out.append(_whisker(cx, axis.y(r.ci_low), axis.y(r.ci_high)))
        label = str(r.bit) if r.bit is not None else r.label
        out.append(f'<text x="{cx:.1f}" y="{base + 12}" text-anchor="end" '
                   f'transform="rotate(-45 {cx:.1f} {base + 12})">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def svg_lines(doc: ReportDocument, log: bool = False, title: str | None = None) -> str:
    """PVF against flip/burst count (log2 x axis), one line per fault family."""
    rows = [r for r in doc.estimates if r.count is not None and r.count > 0]
    if not rows:
        raise ReportError("no count-indexed estimates to plot")
    axis = _Axis([r.ci_high for r in rows] + [r.pvf for r in rows], log)
    out = _frame(axis, title or f"{doc.model}: PVF vs flip count", "PVF")
    xs = sorted({r.count for r in rows})
    lx = [math.log2(c) for c in xs]
    span = (lx[-1] - lx[0]) or 1.0

    def x_of(c):
        return LEFT + 20 + (math.log2(c) - lx[0]) / span * (W - LEFT - RIGHT - 40)

    for c in xs:
        out.append(f'<text x="{x_of(c):.1f}" y="{H - BOTTOM + 16}" text-anchor="middle">{c}</text>')
    colours = ["#4c72b0", "#dd8452", "#55a868", "#c44e52"]
    families: dict[str, list] = {}
    for r in rows:
        families.setdefault(f"{r.target} {r.fault.split(':')[0]}", []).append(r)
    for k, (name, fam) in enumerate(sorted(families.items())):
        fam.sort(key=lambda r: r.count)
        col = colours[k % len(colours)]
        pts = " ".join(f"{x_of(r.count):.1f},{axis.y(r.pvf):.1f}" for r in fam)
        out.append(f'<polyline class="series" points="{pts}" fill="none" stroke="{col}" stroke-width="2"/>')
        for r in fam:
            out.append(f'<circle cx="{x_of(r.count):.1f}" cy="{axis.y(r.pvf):.1f}" r="3" fill="{col}"/>')
            out.append(_whisker(x_of(r.count), axis.y(r.ci_low), axis.y(r.ci_high)))
        out.append(f'<text x="{W - RIGHT - 4}" y="{TOP + 14 * (k + 1)}" text-anchor="end" fill="{col}">'
                   f'{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_svg_bars(doc: ReportDocument, path, log: bool = False, title: str | None = None) -> None:
    Path(path).write_text(svg_bars(doc, log, title))


def emit_svg_lines(doc: ReportDocument, path, log: bool = False, title: str | None = None) -> None:
    Path(path).write_text(svg_lines(doc, log, title))
