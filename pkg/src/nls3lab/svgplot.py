"""Minimal SVG writer: axes with ticks, linear or log scales, line series,
vertical markers and heat maps.  Output is plain text and deterministic."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")
WIDTH, HEIGHT = 640, 420
MARGIN = {"left": 72, "right": 150, "top": 36, "bottom": 52}


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _nice_ticks(lo: float, hi: float, count: int = 6) -> list[float]:
    if not np.isfinite(lo) or not np.isfinite(hi) or hi <= lo:
        return [lo]
    raw = (hi - lo) / max(count - 1, 1)
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks


def _label(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.0e}"
    return f"{v:g}"


@dataclass
class Axes:
    """Data-to-pixel map for one panel."""

    xlim: tuple
    ylim: tuple
    logy: bool = False
    logx: bool = False
    parts: list = field(default_factory=list)

    def _t(self, v, lim, log):
        if log:
            v = math.log10(v)
            lim = (math.log10(lim[0]), math.log10(lim[1]))
        span = lim[1] - lim[0] or 1.0
        return (v - lim[0]) / span

    def px(self, x: float) -> float:
        w = WIDTH - MARGIN["left"] - MARGIN["right"]
        return MARGIN["left"] + w * self._t(x, self.xlim, self.logx)

    def py(self, y: float) -> float:
        h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
        return HEIGHT - MARGIN["bottom"] - h * self._t(y, self.ylim, self.logy)


def _limits(values, log: bool):
    v = np.asarray([x for x in values if np.isfinite(x) and (x > 0 or not log)], dtype=float)
    if v.size == 0:
        return (1.0, 10.0) if log else (0.0, 1.0)
    lo, hi = float(v.min()), float(v.max())
    if log:
        lo, hi = 10 ** math.floor(math.log10(lo)), 10 ** math.ceil(math.log10(hi))
        return (lo, hi if hi > lo else lo * 10)
    if hi == lo:
        pad = abs(hi) * 0.1 or 1.0
        return (lo - pad, hi + pad)
    pad = 0.05 * (hi - lo)
    return (lo - pad, hi + pad)


def _frame(ax: Axes, title: str, xlabel: str, ylabel: str) -> list[str]:
    x0, x1 = ax.px(ax.xlim[0]), ax.px(ax.xlim[1])
    y0, y1 = ax.py(ax.ylim[0]), ax.py(ax.ylim[1])
    out = [f'<rect x="{_fmt(x0)}" y="{_fmt(y1)}" width="{_fmt(x1 - x0)}" height="{_fmt(y0 - y1)}" fill="none" stroke="black"/>']
    xt = _nice_ticks(*ax.xlim) if not ax.logx else [10.0**k for k in range(math.ceil(math.log10(ax.xlim[0])), math.floor(math.log10(ax.xlim[1])) + 1)]
    for t in xt:
        if not ax.xlim[0] <= t <= ax.xlim[1]:
            continue
        X = ax.px(t)
        out.append(f'<line x1="{_fmt(X)}" y1="{_fmt(y0)}" x2="{_fmt(X)}" y2="{_fmt(y0 + 5)}" stroke="black"/>')
        out.append(f'<text x="{_fmt(X)}" y="{_fmt(y0 + 18)}" font-size="11" text-anchor="middle">{escape(_label(t))}</text>')
    if ax.logy:
        yt = [10.0**k for k in range(math.ceil(math.log10(ax.ylim[0])), math.floor(math.log10(ax.ylim[1])) + 1)]
        if len(yt) > 8:
            stride = math.ceil(len(yt) / 8)
            yt = yt[::stride]
    else:
        yt = _nice_ticks(*ax.ylim)
    for t in yt:
        if not ax.ylim[0] <= t <= ax.ylim[1]:
            continue
        Y = ax.py(t)
        out.append(f'<line x1="{_fmt(x0 - 5)}" y1="{_fmt(Y)}" x2="{_fmt(x0)}" y2="{_fmt(Y)}" stroke="black"/>')
        out.append(f'<text x="{_fmt(x0 - 8)}" y="{_fmt(Y + 4)}" font-size="11" text-anchor="end">{escape(_label(t))}</text>')
    out.append(f'<text x="{_fmt((x0 + x1) / 2)}" y="{HEIGHT - 12}" font-size="13" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{_fmt((y0 + y1) / 2)}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {_fmt((y0 + y1) / 2)})">{escape(ylabel)}</text>')
    out.append(f'<text x="{_fmt((x0 + x1) / 2)}" y="22" font-size="14" text-anchor="middle">{escape(title)}</text>')
    return out


def _document(body: list[str]) -> str:
    head = f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">'
    return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>', *body, "</svg>", ""])


def line_plot(path, series, title: str = "", xlabel: str = "", ylabel: str = "", logy: bool = False, markers=(), logx: bool = False) -> None:
    """Write a line chart.

    Parameters
    ----------
    series : iterable of ``(x, y, label)``
        Non-finite points (and non-positive ones on log axes) are skipped,
        splitting the polyline.
    markers : iterable of ``(x, label)``
        Dashed vertical lines, e.g. a detected blow-up time.
    """
    series = [(np.asarray(x, float), np.asarray(y, float), lab) for x, y, lab in series]
    xs = [v for x, _, _ in series for v in x] + [m[0] for m in markers]
    ys = [v for _, y, _ in series for v in y]
    ax = Axes(_limits(xs, logx), _limits(ys, logy), logy=logy, logx=logx)
    body = _frame(ax, title, xlabel, ylabel)
    for i, (x, y, lab) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        ok = np.isfinite(x) & np.isfinite(y)
        if logy:
            ok &= y > 0
        if logx:
            ok &= x > 0
        segs, cur = [], []
        for xi, yi, good in zip(x, y, ok):
            if good:
                cur.append(f"{_fmt(ax.px(xi))},{_fmt(ax.py(yi))}")
            elif cur:
                segs.append(cur)
                cur = []
        if cur:
            segs.append(cur)
        for seg in segs:
            if len(seg) == 1:
                cx, cy = seg[0].split(",")
                body.append(f'<circle cx="{cx}" cy="{cy}" r="2" fill="{color}"/>')
            else:
                body.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(seg)}"/>')
        ly = MARGIN["top"] + 16 * i + 8
        lx = WIDTH - MARGIN["right"] + 10
        body.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 18}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        body.append(f'<text x="{lx + 22}" y="{ly + 4}" font-size="11">{escape(str(lab))}</text>')
    for xm, lab in markers:
        if not np.isfinite(xm):
            continue
        X = ax.px(xm)
        body.append(f'<line x1="{_fmt(X)}" y1="{_fmt(ax.py(ax.ylim[0]))}" x2="{_fmt(X)}" y2="{_fmt(ax.py(ax.ylim[1]))}" stroke="black" stroke-dasharray="4 3"/>')
        body.append(f'<text x="{_fmt(X + 3)}" y="{_fmt(ax.py(ax.ylim[1]) + 12)}" font-size="11">{escape(str(lab))}</text>')
    with open(path, "w") as fh:
        fh.write(_document(body))


def _color(t: float) -> str:
    # blue (low) to red (high); grey for missing
    if not np.isfinite(t):
        return "#cccccc"
    t = min(max(t, 0.0), 1.0)
    r = int(round(40 + 215 * t))
    g = int(round(70 + 120 * (1 - abs(2 * t - 1))))
    b = int(round(255 - 215 * t))
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap(path, z, row_labels=(), col_labels=(), title: str = "") -> None:
    """Write a heat map of the 2D array ``z`` (rows top to bottom)."""
    z = np.asarray(z, dtype=float)
    nr, nc = z.shape
    fin = z[np.isfinite(z)]
    lo, hi = (float(fin.min()), float(fin.max())) if fin.size else (0.0, 1.0)
    span = hi - lo or 1.0
    left, top = 120, 40
    cw = (WIDTH - left - 90) / max(nc, 1)
    ch = min(40.0, (HEIGHT - top - 110) / max(nr, 1))
    body = [f'<text x="{WIDTH / 2:.2f}" y="22" font-size="14" text-anchor="middle">{escape(title)}</text>']
    for i in range(nr):
        for j in range(nc):
            x, y = left + j * cw, top + i * ch
            val = z[i, j]
            body.append(f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(cw)}" height="{_fmt(ch)}" fill="{_color((val - lo) / span)}" stroke="white"/>')
            txt = "nan" if not np.isfinite(val) else f"{val:.1f}"
            body.append(f'<text x="{_fmt(x + cw / 2)}" y="{_fmt(y + ch / 2 + 4)}" font-size="9" text-anchor="middle">{txt}</text>')
        if i < len(row_labels):
            body.append(f'<text x="{left - 6}" y="{_fmt(top + i * ch + ch / 2 + 4)}" font-size="11" text-anchor="end">{escape(str(row_labels[i]))}</text>')
    for j, lab in enumerate(col_labels[:nc]):
        x = left + j * cw + cw / 2
        y = top + nr * ch + 10
        body.append(f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-size="10" text-anchor="end" transform="rotate(-60 {_fmt(x)} {_fmt(y)})">{escape(str(lab))}</text>')
    # colour bar
    bx = WIDTH - 60
    for k in range(20):
        body.append(f'<rect x="{bx}" y="{_fmt(top + (19 - k) * 8)}" width="14" height="8" fill="{_color(k / 19)}"/>')
    body.append(f'<text x="{bx + 18}" y="{top + 8}" font-size="10">{hi:.1f}</text>')
    body.append(f'<text x="{bx + 18}" y="{top + 160}" font-size="10">{lo:.1f}</text>')
    with open(path, "w") as fh:
        fh.write(_document(body))


__all__ = ["heatmap", "line_plot"]
