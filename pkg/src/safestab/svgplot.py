"""Hand-rolled SVG phase portraits for planar scenarios.

No plotting dependencies: implicit curves (safe-set boundary, certificate
level set) are extracted with marching squares and written as path segments;
trajectories become polylines.  Output is a pure function of the inputs, so
repeated renders are byte-identical.
"""

from typing import List, Optional, Sequence, Tuple

import numpy as np

_CANVAS = 840.0
_PAD_FRACTION = 0.05
_PALETTE = ["#1f77b4", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf"]
_UNSAFE_COLOR = "#2ca02c"
_LEVEL_COLOR = "#ff7f0e"


def marching_squares(fn, region, resolution: int = 201) -> List[Tuple]:
    """Zero-level segments of fn over the [x-lo,hi]x[y-lo,hi] box.

    Returns ((x1, y1), (x2, y2)) tuples in grid order.  Cells whose corner
    signs are ambiguous are split by pairing crossings in edge order, which
    is stable and adequate for display purposes.
    """
    (x_lo, x_hi), (y_lo, y_hi) = region
    xs = np.linspace(x_lo, x_hi, resolution)
    ys = np.linspace(y_lo, y_hi, resolution)
    values = np.empty((resolution, resolution))
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            values[i, j] = fn(np.array([x, y]))
    segments = []
    for i in range(resolution - 1):
        for j in range(resolution - 1):
            corners = [
                (xs[i], ys[j], values[i, j]),
                (xs[i + 1], ys[j], values[i + 1, j]),
                (xs[i + 1], ys[j + 1], values[i + 1, j + 1]),
                (xs[i], ys[j + 1], values[i, j + 1]),
            ]
            crossings = []
            for k in range(4):
                xa, ya, va = corners[k]
                xb, yb, vb = corners[(k + 1) % 4]
                if (va < 0) != (vb < 0):
                    t = va / (va - vb)
                    crossings.append((xa + t * (xb - xa), ya + t * (yb - ya)))
            if len(crossings) == 2:
                segments.append((crossings[0], crossings[1]))
            elif len(crossings) == 4:
                segments.append((crossings[0], crossings[1]))
                segments.append((crossings[2], crossings[3]))
    return segments


class _Frame:
    def __init__(self, region):
        (x_lo, x_hi), (y_lo, y_hi) = region
        pad_x = _PAD_FRACTION * (x_hi - x_lo)
        pad_y = _PAD_FRACTION * (y_hi - y_lo)
        self.x_lo, self.x_hi = x_lo - pad_x, x_hi + pad_x
        self.y_lo, self.y_hi = y_lo - pad_y, y_hi + pad_y

    def to_screen(self, x, y):
        sx = (x - self.x_lo) / (self.x_hi - self.x_lo) * _CANVAS
        sy = (self.y_hi - y) / (self.y_hi - self.y_lo) * _CANVAS
        return sx, sy


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def _polyline(frame, points, color, width, dash=None, opacity=None) -> str:
    coords = " ".join(
        f"{_fmt(sx)},{_fmt(sy)}" for sx, sy in (frame.to_screen(x, y) for x, y in points)
    )
    attrs = f'fill="none" stroke="{color}" stroke-width="{width}"'
    if dash:
        attrs += f' stroke-dasharray="{dash}"'
    if opacity:
        attrs += f' stroke-opacity="{opacity}"'
    return f'<polyline points="{coords}" {attrs}/>'


def _segments_path(frame, segments, color, width, dash=None) -> str:
    parts = []
    for (xa, ya), (xb, yb) in segments:
        sa = frame.to_screen(xa, ya)
        sb = frame.to_screen(xb, yb)
        parts.append(
            f"M {_fmt(sa[0])} {_fmt(sa[1])} L {_fmt(sb[0])} {_fmt(sb[1])}"
        )
    attrs = f'fill="none" stroke="{color}" stroke-width="{width}"'
    if dash:
        attrs += f' stroke-dasharray="{dash}"'
    return f'<path d="{" ".join(parts)}" {attrs}/>'


def render_phase_svg(
    scenario,
    trajectories: Sequence[Tuple[str, np.ndarray]],
    certified_nu: Optional[float] = None,
    contour_resolution: int = 201,
) -> str:
    """SVG 1.1 phase portrait for a planar scenario.

    trajectories is a sequence of (controller label, states array) pairs;
    each distinct label gets one palette color.  The safe-set boundary is
    drawn in green; the certificate level set, when given, as a dotted
    orange curve.
    """
    if scenario.state_dim != 2:
        raise ValueError("plotting supports planar scenarios only")
    region = scenario.working_region
    frame = _Frame(region)
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{int(_CANVAS)}" height="{int(_CANVAS)}" '
        f'viewBox="0 0 {int(_CANVAS)} {int(_CANVAS)}">',
        f'<rect x="0" y="0" width="{int(_CANVAS)}" height="{int(_CANVAS)}" '
        'fill="#ffffff"/>',
    ]

    unsafe = marching_squares(scenario.cbf.value, region, contour_resolution)
    if unsafe:
        parts.append(_segments_path(frame, unsafe, _UNSAFE_COLOR, 2.5))
    if certified_nu is not None:
        level = marching_squares(
            lambda x: scenario.clf.value(x) - certified_nu, region, contour_resolution
        )
        if level:
            parts.append(_segments_path(frame, level, _LEVEL_COLOR, 2.0, dash="3,5"))

    labels = []
    for label, _ in trajectories:
        if label not in labels:
            labels.append(label)
    color_of = {label: _PALETTE[i % len(_PALETTE)] for i, label in enumerate(labels)}

    for label, states in trajectories:
        color = color_of[label]
        stride = max(1, int(np.ceil(len(states) / 1500)))
        pts = [tuple(p) for p in states[::stride]]
        if tuple(states[-1]) != pts[-1]:
            pts.append(tuple(states[-1]))
        parts.append(_polyline(frame, pts, color, 1.5, opacity="0.9"))
        sx, sy = frame.to_screen(*states[0])
        parts.append(
            f'<circle cx="{_fmt(sx)}" cy="{_fmt(sy)}" r="4" fill="{color}"/>'
        )
        tx, ty = frame.to_screen(*states[-1])
        parts.append(
            f'<rect x="{_fmt(tx - 3)}" y="{_fmt(ty - 3)}" width="6" height="6" '
            f'fill="none" stroke="{color}" stroke-width="1.5"/>'
        )

    legend_y = 24
    parts.append(
        f'<text x="12" y="{legend_y}" font-family="monospace" font-size="14" '
        f'fill="#000000">{scenario.name}</text>'
    )
    for i, label in enumerate(labels):
        y = legend_y + 18 * (i + 1)
        parts.append(
            f'<line x1="12" y1="{y - 4}" x2="36" y2="{y - 4}" '
            f'stroke="{color_of[label]}" stroke-width="3"/>'
        )
        parts.append(
            f'<text x="42" y="{y}" font-family="monospace" font-size="12" '
            f'fill="#000000">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
