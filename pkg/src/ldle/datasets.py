"""Point clouds, distance sources and the synthetic manifolds used for testing.

All generators are pure functions of their arguments.  Manifolds that are
naturally sampled on a parameter grid (squares, tori, strips) use grids;
the sphere and the Swiss roll draw from a seeded ``numpy`` generator.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, InvalidParameterError, ParseError


class InvalidSpecError(InvalidParameterError):
    pass


@dataclass
class PointCloud:
    """``n`` points in ``R^D`` with optional per-point colours and boundary flags."""

    points: np.ndarray
    labels: np.ndarray | None = None
    boundary_mask: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 2:
            raise InvalidInputError("a point cloud needs at least 2 points in a 2-d array")
        if not np.all(np.isfinite(pts)):
            raise InvalidInputError("point coordinates must be finite")
        self.points = pts
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=float)
            if lab.shape[0] != pts.shape[0]:
                raise InvalidInputError("labels must have one row per point")
            self.labels = lab
        if self.boundary_mask is not None:
            mask = np.asarray(self.boundary_mask, dtype=bool)
            if mask.shape != (pts.shape[0],):
                raise InvalidInputError("boundary_mask must have length n")
            self.boundary_mask = mask

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


def euclidean(a, b):
    """Pairwise Euclidean distances between the rows of ``a`` and ``b``.

    Every distance in the package goes through this one formula so that
    tree-based and brute-force neighbour searches agree bit for bit.
    """
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


class DistanceSource:
    """Euclidean distances on a point cloud, or an explicit distance matrix.

    Use :meth:`from_points` or :meth:`from_matrix`.
    """

    def __init__(self, points=None, matrix=None):
        if (points is None) == (matrix is None):
            raise InvalidParameterError("give exactly one of points or matrix")
        self.points = points
        self.matrix = matrix
        self._tree = None

    @classmethod
    def from_points(cls, points):
        if isinstance(points, PointCloud):
            points = points.points
        return cls(points=np.asarray(points, dtype=float))

    @classmethod
    def from_matrix(cls, matrix, tol=1e-9):
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidInputError("distance matrix must be square")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise InvalidInputError("distances must be finite and nonnegative")
        if np.max(np.abs(m - m.T), initial=0.0) > tol:
            raise InvalidInputError("distance matrix is not symmetric")
        if np.any(np.diag(m) != 0):
            raise InvalidInputError("distance matrix must have a zero diagonal")
        return cls(matrix=m)

    @property
    def n(self):
        src = self.points if self.points is not None else self.matrix
        return src.shape[0]

    @property
    def is_euclidean(self):
        return self.points is not None

    def pairwise(self, rows, cols=None):
        rows = np.asarray(rows, dtype=np.intp)
        cols = rows if cols is None else np.asarray(cols, dtype=np.intp)
        if self.matrix is not None:
            return self.matrix[np.ix_(rows, cols)]
        return euclidean(self.points[rows], self.points[cols])

    def tree(self):
        from scipy.spatial import cKDTree

        if self._tree is None:
            self._tree = cKDTree(self.points)
        return self._tree


def load_distance_matrix(path):
    """Read an ``n x n`` distance matrix from ``.npy`` or comma-separated text."""
    path = Path(path)
    if path.suffix == ".npy":
        m = np.load(path)
    else:
        rows = _read_csv_rows(path)
        if rows and _is_header(rows[0][1]):
            rows = rows[1:]
        m = _rows_to_array(rows)
    return DistanceSource.from_matrix(m)


# ---------------------------------------------------------------------------
# synthetic manifolds


@dataclass(frozen=True)
class ManifoldSpec:
    """Name of a synthetic manifold plus its resolution parameters.

    ``ManifoldSpec.parse("grid2d:width=1,height=1,spacing=0.02")`` builds one
    from the compact form used on the command line.
    """

    kind: str
    params: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, text):
        kind, _, rest = text.partition(":")
        params = {}
        for item in filter(None, rest.split(",")):
            key, sep, value = item.partition("=")
            if not sep:
                raise InvalidSpecError(f"malformed dataset parameter {item!r}")
            params[key.strip()] = _parse_value(value.strip())
        return cls(kind.strip(), params)

    def to_string(self):
        items = ",".join(f"{k}={v}" for k, v in sorted(self.params.items()))
        return f"{self.kind}:{items}" if items else self.kind


def _parse_value(value):
    low = value.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def _positive(name, value):
    if not value > 0:
        raise InvalidSpecError(f"{name} must be positive, got {value}")
    return value


def _axis(length, spacing):
    _positive("spacing", spacing)
    if length < 0:
        raise InvalidSpecError("extent must be nonnegative")
    count = int(round(length / spacing)) + 1
    return np.arange(count) * spacing


def grid2d(width=1.0, height=1.0, spacing=0.01):
    """Regular grid on ``[0, width] x [0, height]``."""
    x = _axis(width, spacing)
    y = _axis(height, spacing)
    xx, yy = np.meshgrid(x, y, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    return PointCloud(pts, labels=pts.copy())


def barbell(spacing=0.02, radius=1.0, bridge_length=0.5, bridge_width=0.25):
    """Two discs joined by a thin rectangular bridge, sampled on a grid."""
    _positive("spacing", spacing)
    _positive("radius", radius)
    cx = radius + bridge_length / 2
    x = np.arange(-cx - radius, cx + radius + spacing / 2, spacing)
    y = np.arange(-radius, radius + spacing / 2, spacing)
    xx, yy = np.meshgrid(x, y, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    tol = 1e-12
    left = np.hypot(pts[:, 0] + cx, pts[:, 1]) <= radius + tol
    right = np.hypot(pts[:, 0] - cx, pts[:, 1]) <= radius + tol
    bridge = (np.abs(pts[:, 0]) <= cx) & (np.abs(pts[:, 1]) <= bridge_width / 2 + tol)
    pts = pts[left | right | bridge]
    return PointCloud(pts, labels=pts.copy())


DEFAULT_SQUARE_HOLES = ((0.3, 0.3, 0.12), (0.68, 0.65, 0.15))


def square_with_holes(spacing=0.01, holes=DEFAULT_SQUARE_HOLES):
    """Unit square grid with circular holes given as ``(cx, cy, r)`` triples."""
    cloud = grid2d(1.0, 1.0, spacing)
    keep = np.ones(cloud.n, dtype=bool)
    for cx, cy, r in holes:
        keep &= np.hypot(cloud.points[:, 0] - cx, cloud.points[:, 1] - cy) > r
    return PointCloud(cloud.points[keep], labels=cloud.labels[keep])


def swiss_roll(n=5000, hole=False, seed=0, height=21.0, hole_radius=0.2):
    """Swiss roll sampled uniformly by area, scaled so the roll has radius 1.

    The intrinsic coordinates used as labels are (arc-length fraction, height
    fraction).  With ``hole=True`` a disc of radius ``hole_radius`` in those
    fractional coordinates, centred in the middle, is removed.
    """
    _positive("n", n)
    rng = np.random.default_rng(seed)
    t0, t1 = 1.5 * np.pi, 4.5 * np.pi
    u = rng.random(int(n))
    v = rng.random(int(n))
    t = np.sqrt(t0**2 + u * (t1**2 - t0**2))
    pts = np.column_stack([t * np.cos(t), height * v, t * np.sin(t)]) / t1
    labels = np.column_stack([u, v])
    if hole:
        keep = np.hypot(u - 0.5, v - 0.5) > hole_radius
        pts, labels = pts[keep], labels[keep]
    return PointCloud(pts, labels=labels)


def sphere(n=5000, hole=False, seed=0, hole_angle=np.pi / 6):
    """Uniform random points on the unit sphere; ``hole`` removes a polar cap."""
    _positive("n", n)
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((int(n), 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    polar = np.arccos(np.clip(pts[:, 2], -1.0, 1.0))
    azimuth = np.arctan2(pts[:, 1], pts[:, 0])
    labels = np.column_stack([azimuth, polar])
    if hole:
        keep = polar > hole_angle
        pts, labels = pts[keep], labels[keep]
    return PointCloud(pts, labels=labels)


def curved_torus(n_theta=150, n_phi=50, major=1.0, minor=0.35):
    """Torus of revolution in ``R^3`` sampled on an angular grid."""
    _positive("n_theta", n_theta)
    _positive("n_phi", n_phi)
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    ph = 2 * np.pi * np.arange(n_phi) / n_phi
    tt, pp = np.meshgrid(th, ph, indexing="ij")
    tt, pp = tt.ravel(), pp.ravel()
    ring = major + minor * np.cos(pp)
    pts = np.column_stack([ring * np.cos(tt), ring * np.sin(tt), minor * np.sin(pp)])
    return PointCloud(pts, labels=np.column_stack([tt, pp]))


def flat_torus(n_i=200, n_j=50):
    """Flat torus from a 2 x 0.5 rectangle embedded in ``R^4``.

    ``theta_i = 0.01 * i * pi`` and ``phi_j = 0.04 * j * pi``; the defaults
    close both circles.
    """
    _positive("n_i", n_i)
    _positive("n_j", n_j)
    th = 0.01 * np.pi * np.arange(n_i)
    ph = 0.04 * np.pi * np.arange(n_j)
    tt, pp = np.meshgrid(th, ph, indexing="ij")
    tt, pp = tt.ravel(), pp.ravel()
    pts = np.column_stack([4 * np.cos(tt), 4 * np.sin(tt), np.cos(pp), np.sin(pp)])
    pts /= 4 * np.pi
    return PointCloud(pts, labels=np.column_stack([tt, pp]))


def mobius_strip(n_theta=200, n_s=25, radius=1.0, half_width=0.25):
    """Moebius strip in ``R^3``; ``s`` runs across the strip."""
    _positive("n_theta", n_theta)
    _positive("n_s", n_s)
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    s = np.linspace(-half_width, half_width, int(n_s))
    tt, ss = np.meshgrid(th, s, indexing="ij")
    tt, ss = tt.ravel(), ss.ravel()
    ring = radius + ss * np.cos(tt / 2)
    pts = np.column_stack([ring * np.cos(tt), ring * np.sin(tt), ss * np.sin(tt / 2)])
    return PointCloud(pts, labels=np.column_stack([tt, ss]))


def klein_bottle(n_i=200, n_j=50, major=2.0, minor=0.5):
    """Klein bottle via its Moebius-tube representation in ``R^4``.

    ``theta_i = i * pi / 100`` and ``phi_j = j * pi / 25``.  With the default
    radii the grid spacing is the same in both directions.
    """
    _positive("n_i", n_i)
    _positive("n_j", n_j)
    th = np.pi * np.arange(n_i) / 100
    ph = np.pi * np.arange(n_j) / 25
    tt, pp = np.meshgrid(th, ph, indexing="ij")
    tt, pp = tt.ravel(), pp.ravel()
    ring = major + minor * np.cos(pp)
    pts = np.column_stack(
        [
            ring * np.cos(tt),
            ring * np.sin(tt),
            minor * np.sin(pp) * np.cos(tt / 2),
            minor * np.sin(pp) * np.sin(tt / 2),
        ]
    )
    return PointCloud(pts, labels=np.column_stack([tt, pp]))


def rectangle(spacing=0.02, width=4.0, height=0.25):
    return grid2d(width, height, spacing)


GENERATORS = {
    "grid2d": grid2d,
    "rectangle": rectangle,
    "barbell": barbell,
    "square_with_holes": square_with_holes,
    "swiss_roll": swiss_roll,
    "sphere": sphere,
    "curved_torus": curved_torus,
    "flat_torus": flat_torus,
    "mobius_strip": mobius_strip,
    "klein_bottle": klein_bottle,
}


def generate_manifold(spec):
    """Build the point cloud described by ``spec`` (a ManifoldSpec or its string form)."""
    if isinstance(spec, str):
        spec = ManifoldSpec.parse(spec)
    try:
        gen = GENERATORS[spec.kind]
    except KeyError:
        raise InvalidSpecError(
            f"unknown manifold {spec.kind!r}; choose from {sorted(GENERATORS)}"
        ) from None
    try:
        return gen(**spec.params)
    except TypeError as exc:
        raise InvalidSpecError(f"bad parameters for {spec.kind}: {exc}") from None


def add_noise(cloud, kind="gaussian", scale=0.0, seed=0):
    """Return a copy of ``cloud`` with additive noise in every coordinate.

    ``kind="gaussian"``: zero-mean normal noise with standard deviation
    ``scale``.  ``kind="uniform"``: noise uniform on ``[0, scale]`` (or on
    ``[lo, hi]`` when ``scale`` is a pair).
    """
    rng = np.random.default_rng(seed)
    pts = cloud.points
    if kind == "gaussian":
        if scale < 0:
            raise InvalidSpecError("sigma must be nonnegative")
        noise = rng.normal(0.0, scale, size=pts.shape) if scale > 0 else 0.0
    elif kind == "uniform":
        lo, hi = (0.0, scale) if np.isscalar(scale) else scale
        if lo < 0 or hi < lo:
            raise InvalidSpecError("uniform support must satisfy 0 <= lo <= hi")
        noise = rng.uniform(lo, hi, size=pts.shape) if hi > 0 else 0.0
    else:
        raise InvalidSpecError(f"unknown noise kind {kind!r}")
    return PointCloud(pts + noise, labels=cloud.labels, boundary_mask=cloud.boundary_mask)


# ---------------------------------------------------------------------------
# file input / output


def _read_csv_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return [(i + 1, row) for i, row in enumerate(csv.reader(fh)) if row]


def _is_header(row):
    # a header row has no numeric cells at all
    for c in row:
        try:
            float(c)
        except ValueError:
            continue
        return False
    return True


def _rows_to_array(rows):
    width = None
    out = []
    for lineno, row in rows:
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ParseError(f"expected {width} fields, found {len(row)}", row=lineno)
        try:
            out.append([float(c) for c in row])
        except ValueError:
            raise ParseError(f"non-numeric value in {row!r}", row=lineno) from None
    if not out:
        raise ParseError("no data rows")
    return np.array(out)


def load_point_cloud(path, format=None):
    """Read a point cloud from CSV or JSON.

    CSV files may start with one header line.  Columns named ``boundary``
    (0/1) and ``label`` are split off into the boundary mask and labels.
    JSON files hold ``{"points": [[...], ...], "boundary": [0, 1, ...]}``.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "json":
        return _load_json(path)
    if fmt != "csv":
        raise InvalidParameterError(f"unsupported format {fmt!r}")
    rows = _read_csv_rows(path)
    if not rows:
        raise ParseError("empty file")
    header = None
    if _is_header(rows[0][1]):
        header = [h.strip().lower() for h in rows[0][1]]
        rows = rows[1:]
    data = _rows_to_array(rows)
    if header is not None and len(header) != data.shape[1]:
        raise ParseError("header and data widths differ", row=1)
    boundary = labels = None
    if header is not None:
        cols = np.arange(data.shape[1])
        label_cols = [i for i, h in enumerate(header) if h.startswith("label")]
        special = set(label_cols)
        if "boundary" in header:
            col = header.index("boundary")
            special.add(col)
            b = data[:, col]
            if not np.all(np.isin(b, (0.0, 1.0))):
                raise ParseError("boundary column must contain 0 or 1")
            boundary = b.astype(bool)
        if label_cols:
            labels = data[:, label_cols]
            if len(label_cols) == 1:
                labels = labels[:, 0]
        data = data[:, [c for c in cols if c not in special]]
    return PointCloud(data, labels=labels, boundary_mask=boundary)


def _load_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(str(exc)) from None
    if "points" not in obj:
        raise ParseError('JSON object needs a "points" array')
    rows = [(i + 1, r) for i, r in enumerate(obj["points"])]
    pts = _rows_to_array(rows)
    boundary = obj.get("boundary")
    labels = obj.get("labels")
    return PointCloud(
        pts,
        labels=None if labels is None else np.asarray(labels, dtype=float),
        boundary_mask=None if boundary is None else np.asarray(boundary, dtype=bool),
    )


def save_point_cloud(cloud, path):
    """Write ``cloud`` as CSV with a header (``x0..``, ``label*``, ``boundary``)."""
    cols = [cloud.points]
    header = [f"x{i}" for i in range(cloud.dim)]
    if cloud.labels is not None:
        lab = cloud.labels.reshape(cloud.n, -1)
        cols.append(lab)
        header += ["label"] if lab.shape[1] == 1 else [f"label{i}" for i in range(lab.shape[1])]
    if cloud.boundary_mask is not None:
        cols.append(cloud.boundary_mask[:, None].astype(float))
        header.append("boundary")
    data = np.hstack(cols)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in data:
            w.writerow([repr(float(v)) for v in row])
