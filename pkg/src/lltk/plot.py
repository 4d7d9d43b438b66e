"""Static SVG figures: embedding scatter, persistence diagram, persistence-vs-loss scatter.

Output is plain SVG 1.1 text built line by line, so identical inputs give
identical files apart from the single ``<!-- generated ... -->`` comment.
"""

import math
from datetime import datetime, timezone
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 480, 420
MARGIN = 48

# anchor colours of a viridis-like ramp
_RAMP = np.array([(68, 1, 84), (59, 82, 139), (33, 145, 140), (94, 201, 98), (253, 231, 37)], dtype=float)
_CATEGORICAL = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def timestamp_line() -> str:
    return f"<!-- generated {datetime.now(timezone.utc).strftime('%Y-%m-%dT%H:%M:%SZ')} -->"


def _f(x) -> str:
    return f"{x:.3f}"


def ramp(u) -> str:
    u = min(max(float(u), 0.0), 1.0)
    pos = u * (len(_RAMP) - 1)
    i = min(int(pos), len(_RAMP) - 2)
    c = _RAMP[i] + (pos - i) * (_RAMP[i + 1] - _RAMP[i])
    return "#%02x%02x%02x" % tuple(int(round(v)) for v in c)


def colour_values(values, log: bool = False):
    """Map values onto the ramp; ``log`` uses log10 (non-positive values clamp to the smallest positive)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return []
    if log:
        pos = v[v > 0]
        floor = pos.min() if pos.size else 1.0
        v = np.log10(np.maximum(v, floor))
    lo, hi = float(v.min()), float(v.max())
    span = hi - lo if hi > lo else 1.0
    return [ramp((x - lo) / span) for x in v]


class _Frame:
    """Linear map from data coordinates into the plotting area."""

    def __init__(self, xs, ys, square=False):
        xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
        self.x0, self.x1 = self._range(xs)
        self.y0, self.y1 = self._range(ys)
        if square:
            lo, hi = min(self.x0, self.y0), max(self.x1, self.y1)
            self.x0 = self.y0 = lo
            self.x1 = self.y1 = hi

    @staticmethod
    def _range(v):
        lo, hi = float(v.min()), float(v.max())
        if hi == lo:
            lo, hi = lo - 0.5, hi + 0.5
        pad = 0.04 * (hi - lo)
        return lo - pad, hi + pad

    def x(self, v):
        return MARGIN + (v - self.x0) / (self.x1 - self.x0) * (WIDTH - 2 * MARGIN)

    def y(self, v):
        return HEIGHT - MARGIN - (v - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2 * MARGIN)


def _open(title):
    return [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        timestamp_line(),
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.0f}" y="20" text-anchor="middle" font-size="13">{escape(title)}</text>',
    ]


def _close(lines):
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _axes(lines, frame, xlabel, ylabel):
    left, right = MARGIN, WIDTH - MARGIN
    top, bottom = MARGIN, HEIGHT - MARGIN
    lines.append(f'<rect x="{left}" y="{top}" width="{right - left}" height="{bottom - top}" '
                 'fill="none" stroke="#444" stroke-width="1"/>')
    for v in (frame.x0, frame.x1):
        lines.append(f'<text x="{_f(frame.x(v))}" y="{bottom + 14}" text-anchor="middle">{v:.3g}</text>')
    for v in (frame.y0, frame.y1):
        lines.append(f'<text x="{left - 4}" y="{_f(frame.y(v) + 4)}" text-anchor="end">{v:.3g}</text>')
    lines.append(f'<text x="{WIDTH / 2:.0f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    lines.append(f'<text x="14" y="{HEIGHT / 2:.0f}" text-anchor="middle" '
                 f'transform="rotate(-90 14 {HEIGHT / 2:.0f})">{escape(ylabel)}</text>')


def _no_data(title):
    lines = _open(title)
    lines.append(f'<text x="{WIDTH / 2:.0f}" y="{HEIGHT / 2:.0f}" text-anchor="middle" '
                 'font-size="16" fill="#888">no data</text>')
    return _close(lines)


def embedding_scatter(coords, values=None, log: bool = False, categorical: bool = False,
                      title: str = "embedding", label: str = "") -> str:
    """One ``<circle>`` per embedded point, coloured by ``values`` (epoch, seed or loss)."""
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2) if len(coords) else np.zeros((0, 2))
    if coords.shape[0] == 0:
        return _no_data(title)
    n = coords.shape[0]
    if values is None:
        colours = ["#1f77b4"] * n
    elif categorical:
        levels = sorted(set(values))
        colours = [_CATEGORICAL[levels.index(v) % len(_CATEGORICAL)] for v in values]
    else:
        colours = colour_values(values, log)
    frame = _Frame(coords[:, 0], coords[:, 1])
    lines = _open(title)
    _axes(lines, frame, "PHATE 1", "PHATE 2")
    if label:
        lines.append(f'<text x="{WIDTH - MARGIN}" y="{MARGIN - 6}" text-anchor="end">'
                     f'colour: {escape(label)}{" (log)" if log else ""}</text>')
    lines.append('<g stroke="none" fill-opacity="0.85">')
    for (x, y), c in zip(coords, colours):
        lines.append(f'<circle cx="{_f(frame.x(x))}" cy="{_f(frame.y(y))}" r="2.5" fill="{c}"/>')
    lines.append("</g>")
    return _close(lines)


def persistence_diagram(diagrams, title: str = "persistence diagram") -> str:
    """Birth against death with the diagonal; essential classes drawn hollow at their capped death."""
    diagrams = [d for d in diagrams if len(d)]
    if not diagrams:
        return _no_data(title)
    b = np.concatenate([d.births for d in diagrams])
    d_ = np.concatenate([d.deaths for d in diagrams])
    frame = _Frame(np.concatenate([b, d_]), np.concatenate([b, d_]), square=True)
    lines = _open(title)
    _axes(lines, frame, "birth", "death")
    lines.append(f'<line x1="{_f(frame.x(frame.x0))}" y1="{_f(frame.y(frame.y0))}" '
                 f'x2="{_f(frame.x(frame.x1))}" y2="{_f(frame.y(frame.y1))}" stroke="#999" '
                 'stroke-dasharray="4 3"/>')
    for dgm in diagrams:
        colour = _CATEGORICAL[dgm.dim % len(_CATEGORICAL)]
        lines.append(f'<g class="h{dgm.dim}">')
        for birth, death, ess in zip(dgm.births, dgm.deaths, dgm.essential):
            fill = "none" if ess else colour
            lines.append(f'<circle cx="{_f(frame.x(birth))}" cy="{_f(frame.y(death))}" r="3" '
                         f'fill="{fill}" stroke="{colour}"/>')
        lines.append("</g>")
    y = MARGIN + 14
    for dgm in diagrams:
        colour = _CATEGORICAL[dgm.dim % len(_CATEGORICAL)]
        lines.append(f'<rect x="{MARGIN + 8}" y="{y - 8}" width="8" height="8" fill="{colour}"/>')
        lines.append(f'<text x="{MARGIN + 20}" y="{y}">H{dgm.dim}</text>')
        y += 14
    return _close(lines)


def total_persistence_scatter(rows, key: str = "tp_h0", title: str = "total persistence vs test loss") -> str:
    """Test loss at the optimum against total persistence, coloured by weight decay."""
    rows = [r for r in rows if math.isfinite(float(r["test_loss"])) and math.isfinite(float(r[key]))]
    if not rows:
        return _no_data(title)
    x = np.array([float(r["test_loss"]) for r in rows])
    y = np.array([float(r[key]) for r in rows])
    decays = [float(r["weight_decay"]) for r in rows]
    levels = sorted(set(decays))
    frame = _Frame(x, y)
    lines = _open(title)
    _axes(lines, frame, "test loss at optimum", f"total persistence ({key[3:].upper()})")
    for xi, yi, wd in zip(x, y, decays):
        c = _CATEGORICAL[levels.index(wd) % len(_CATEGORICAL)]
        lines.append(f'<circle cx="{_f(frame.x(xi))}" cy="{_f(frame.y(yi))}" r="4" fill="{c}"/>')
    ly = MARGIN + 14
    for i, wd in enumerate(levels):
        lines.append(f'<rect x="{WIDTH - MARGIN - 90}" y="{ly - 8}" width="8" height="8" '
                     f'fill="{_CATEGORICAL[i % len(_CATEGORICAL)]}"/>')
        lines.append(f'<text x="{WIDTH - MARGIN - 78}" y="{ly}">wd {wd:g}</text>')
        ly += 14
    return _close(lines)
