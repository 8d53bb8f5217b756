"""Standalone SVG scatter plots.

The view box is the data bounding box grown by 5% on every side, in data
units, with the y axis pointing up.  Continuous values go through a fixed
piecewise-linear approximation of the viridis colormap; integer classes use
a fixed ten-colour palette, and class ``-1`` is drawn light grey.
"""

import numpy as np

from .errors import InvalidInputError

MARGIN = 0.05
PIXELS = 600

# (position, r, g, b) anchors of the continuous colormap
COLORMAP = (
    (0.00, 68, 1, 84),
    (0.25, 59, 82, 139),
    (0.50, 33, 145, 140),
    (0.75, 94, 201, 98),
    (1.00, 253, 231, 37),
)
PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)  # fmt: skip
NO_CLASS = "#d9d9d9"
DEFAULT_COLOR = "#1f77b4"


def colormap(values):
    """Hex colours for values in ``[0, 1]``."""
    t = np.clip(np.asarray(values, dtype=float), 0, 1)
    pos = np.array([a[0] for a in COLORMAP])
    chans = [np.interp(t, pos, [a[i] for a in COLORMAP]) for i in (1, 2, 3)]
    rgb = np.rint(np.stack(chans, axis=-1)).astype(int)
    return ["#%02x%02x%02x" % tuple(c) for c in np.atleast_2d(rgb)]


def _colors(colors, n):
    if colors is None:
        return [DEFAULT_COLOR] * n
    c = np.asarray(colors)
    if c.shape != (n,):
        raise InvalidInputError(f"expected {n} colour values, got shape {c.shape}")
    if np.issubdtype(c.dtype, np.integer):
        return [NO_CLASS if v < 0 else PALETTE[v % len(PALETTE)] for v in c.tolist()]
    c = c.astype(float)
    lo, hi = np.nanmin(c), np.nanmax(c)
    span = hi - lo if hi > lo else 1.0
    return colormap((c - lo) / span)


def view_box(points):
    """``(x, y, width, height)`` of the padded data bounds in SVG coordinates (y flipped)."""
    P = np.asarray(points, dtype=float)
    lo, hi = P.min(axis=0), P.max(axis=0)
    ext = hi - lo
    ext = np.where(ext > 0, ext, max(ext.max(), 1.0))
    mid = (lo + hi) / 2
    lo, hi = mid - ext / 2, mid + ext / 2
    pad = MARGIN * ext
    box = lo[0] - pad[0], -(hi[1] + pad[1]), ext[0] + 2 * pad[0], ext[1] + 2 * pad[1]
    return tuple(float(v) for v in box)


def emit_svg_scatter(points, colors=None, path=None, radius=None, title=None):
    """Write (or return, when ``path`` is None) an SVG scatter of 2-D points.

    Parameters
    ----------
    points : (n, 2) array
    colors : (n,) array, optional
        Integer classes or continuous values.
    radius : float, optional
        Circle radius in data units; defaults to 0.4% of the larger side.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim != 2 or P.shape[1] != 2 or P.shape[0] == 0:
        raise InvalidInputError("emit_svg_scatter needs a nonempty (n, 2) array")
    if not np.all(np.isfinite(P)):
        raise InvalidInputError("points must be finite")
    x0, y0, w, h = view_box(P)
    r = radius if radius is not None else 0.004 * max(w, h)
    scale = PIXELS / max(w, h)
    fills = _colors(colors, P.shape[0])
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w * scale:.1f}" '
        f'height="{h * scale:.1f}" viewBox="{x0!r} {y0!r} {w!r} {h!r}">',
    ]
    if title:
        out.append(f"<title>{title}</title>")
    out.append('<rect x="%r" y="%r" width="%r" height="%r" fill="white"/>' % (x0, y0, w, h))
    for (x, y), f in zip(P.tolist(), fills):
        out.append(f'<circle cx="{x!r}" cy="{-y!r}" r="{r!r}" fill="{f}"/>')
    out.append("</svg>")
    text = "\n".join(out) + "\n"
    if path is None:
        return text
    with open(path, "w") as fh:
        fh.write(text)
    return path
