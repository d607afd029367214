"""Minimal SVG output: polylines, points, arrows and axes, written as plain text."""
from __future__ import annotations

import numpy as np

WIDTH, HEIGHT, PAD = 480, 360, 40
COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


class _Frame:
    def __init__(self, xs, ys):
        xs, ys = np.asarray(xs, float), np.asarray(ys, float)
        finite = np.isfinite(xs) & np.isfinite(ys)
        xs, ys = (xs[finite], ys[finite]) if finite.any() else (np.zeros(1), np.zeros(1))
        self.x0, self.x1 = self._span(xs)
        self.y0, self.y1 = self._span(ys)

    @staticmethod
    def _span(v):
        lo, hi = float(v.min()), float(v.max())
        if hi - lo < 1e-12:
            lo, hi = lo - 0.5, hi + 0.5
        return lo, hi

    def px(self, x):
        return PAD + (np.asarray(x, float) - self.x0) / (self.x1 - self.x0) * (WIDTH - 2 * PAD)

    def py(self, y):
        return HEIGHT - PAD - (np.asarray(y, float) - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2 * PAD)


def _header(title):
    return [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}">',
            '<rect width="100%" height="100%" fill="white"/>',
            f'<text x="{WIDTH / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>']


def _axes(f, xlabel, ylabel):
    b, r = HEIGHT - PAD, WIDTH - PAD
    return [f'<line x1="{PAD}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>',
            f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{b}" stroke="black"/>',
            f'<text x="{PAD}" y="{b + 15}" font-size="10">{f.x0:.3g}</text>',
            f'<text x="{r}" y="{b + 15}" font-size="10" text-anchor="end">{f.x1:.3g}</text>',
            f'<text x="{PAD - 4}" y="{b}" font-size="10" text-anchor="end">{f.y0:.3g}</text>',
            f'<text x="{PAD - 4}" y="{PAD + 8}" font-size="10" text-anchor="end">{f.y1:.3g}</text>',
            f'<text x="{WIDTH / 2:.1f}" y="{HEIGHT - 8}" font-size="11" text-anchor="middle">{xlabel}</text>',
            f'<text x="12" y="{HEIGHT / 2:.1f}" font-size="11" transform="rotate(-90 12 {HEIGHT / 2:.1f})" '
            f'text-anchor="middle">{ylabel}</text>']


def _write(path, parts):
    with open(path, "w") as fh:
        fh.write("\n".join(parts + ["</svg>"]) + "\n")


def lines(path, series, title="", xlabel="", ylabel=""):
    """``series`` maps a label to ``(x, y)`` arrays; each becomes a polyline."""
    xs = np.concatenate([np.asarray(x, float) for x, _ in series.values()] or [np.zeros(1)])
    ys = np.concatenate([np.asarray(y, float) for _, y in series.values()] or [np.zeros(1)])
    f = _Frame(xs, ys)
    parts = _header(title) + _axes(f, xlabel, ylabel)
    for i, (label, (x, y)) in enumerate(series.items()):
        x, y = np.asarray(x, float), np.asarray(y, float)
        ok = np.isfinite(x) & np.isfinite(y)
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(f.px(x[ok]), f.py(y[ok])))
        c = COLOURS[i % len(COLOURS)]
        parts.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.2" points="{pts}"/>')
        parts.append(f'<text x="{WIDTH - PAD}" y="{PAD + 12 * i}" font-size="10" fill="{c}" '
                     f'text-anchor="end">{label}</text>')
    _write(path, parts)


def quiver(path, points, fields, title="", xlabel="", ylabel=""):
    """Arrows from each point along each field; vectors are scaled to a common length."""
    P = np.asarray(points, float)
    f = _Frame(P[:, 0], P[:, 1])
    parts = _header(title) + _axes(f, xlabel, ylabel)
    norms = [np.linalg.norm(np.asarray(V, float), axis=1) for V in fields.values()]
    top = max(float(np.max(n)) for n in norms) if norms else 1.0
    step = 0.35 * min(f.x1 - f.x0, f.y1 - f.y0) / max(np.sqrt(len(P)) - 1, 1)
    scale = step / top if top > 0 else 0.0
    for i, (label, V) in enumerate(fields.items()):
        V = np.asarray(V, float)
        c = COLOURS[i % len(COLOURS)]
        for p, v in zip(P, V):
            x0, y0 = f.px(p[0]), f.py(p[1])
            x1, y1 = f.px(p[0] + scale * v[0]), f.py(p[1] + scale * v[1])
            parts.append(f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}" '
                         f'stroke="{c}" stroke-width="1.5"/>')
            parts.append(f'<circle cx="{x1:.2f}" cy="{y1:.2f}" r="2" fill="{c}"/>')
        parts.append(f'<text x="{WIDTH - PAD}" y="{PAD + 12 * i}" font-size="10" fill="{c}" '
                     f'text-anchor="end">{label}</text>')
    _write(path, parts)
