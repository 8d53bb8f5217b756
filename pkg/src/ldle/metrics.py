"""Geodesic distortion of an embedding.

Shortest paths are found once on the ambient nearest-neighbour graph.  The
embedded length of a path is the sum of embedding distances along the same
node sequence, and the distortion at a source compares the two lengths over
all targets.
"""

import csv
import json
from dataclasses import dataclass

import numpy as np

from .datasets import DistanceSource, PointCloud
from .graph import geodesic_lengths
from .local_views import DISTORTION_OVERFLOW

DEFAULT_SOURCES = 256
SUMMARY_PERCENTILES = (10, 25, 50, 75, 90)


@dataclass(frozen=True)
class DistortionReport:
    sources: np.ndarray
    values: np.ndarray

    def summary(self):
        if self.values.size == 0:
            return {"count": 0}
        out = {
            "count": int(self.values.size),
            "min": float(self.values.min()),
            "mean": float(self.values.mean()),
            "max": float(self.values.max()),
        }
        for q in SUMMARY_PERCENTILES:
            out[f"p{q}"] = float(np.percentile(self.values, q))
        out["median"] = out["p50"]
        return out


def default_sources(n, seed=0, count=DEFAULT_SOURCES):
    """Sorted random sample of ``min(n, count)`` point indices."""
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=min(n, count), replace=False))


def _path_lengths(pred, y):
    """Embedded length of every predecessor chain, by pointer doubling."""
    S, n = pred.shape
    rows = np.arange(S)[:, None]
    valid = pred >= 0
    ptr = np.where(valid, pred, np.arange(n)[None, :])
    step = y - y[ptr]
    acc = np.where(valid, np.sqrt(np.einsum("snd,snd->sn", step, step)), 0.0)
    done = ~valid
    while not done.all():
        acc = acc + np.where(done, 0.0, acc[rows, ptr])
        done = done | done[rows, ptr]
        ptr = ptr[rows, ptr]
    return acc


def geodesic_distortion(cloud, y, k=5, sources=None, seed=0):
    """Per-source ratio of largest expansion to smallest contraction of path lengths.

    Parameters
    ----------
    cloud : PointCloud, DistanceSource or (n, D) array
    y : (n, d) array
        Embedding.
    k : int
        Neighbours in the ambient graph (union-symmetrised).
    sources : int array, optional
        Defaults to :func:`default_sources` with ``seed``.
    """
    if isinstance(cloud, PointCloud):
        dist = DistanceSource.from_points(cloud.points)
    elif isinstance(cloud, DistanceSource):
        dist = cloud
    else:
        dist = DistanceSource.from_points(cloud)
    y = np.asarray(y, dtype=float)
    n = dist.n
    if sources is None:
        sources = default_sources(n, seed)
    sources = np.atleast_1d(np.asarray(sources, dtype=np.intp))
    if sources.size == 0:
        return DistortionReport(sources=sources, values=np.empty(0))
    L, pred = geodesic_lengths(dist, k, sources, return_predecessors=True)
    Lg = np.concatenate([_path_lengths(pred[i : i + 32], y) for i in range(0, sources.size, 32)])
    values = np.empty(sources.size)
    for i, s in enumerate(sources):
        mask = np.arange(n) != s
        a, g = L[i, mask], Lg[i, mask]
        if np.any(g <= 0):
            values[i] = DISTORTION_OVERFLOW
            continue
        r = g / a
        values[i] = r.max() / r.min()
    return DistortionReport(sources=sources, values=values)


def export_report(report, path, format="csv"):
    """Write one row per source; JSON output also carries the summary."""
    if format == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["source", "distortion"])
            for s, v in zip(report.sources, report.values):
                w.writerow([int(s), repr(float(v))])
    elif format == "json":
        payload = {
            "sources": [int(s) for s in report.sources],
            "distortion": [float(v) for v in report.values],
            "summary": report.summary(),
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)
    else:
        raise ValueError(f"unknown report format {format!r}")


def load_report(path):
    """Read a report written by :func:`export_report` (either format)."""
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        payload = json.loads(text)
        return DistortionReport(
            np.asarray(payload["sources"], dtype=np.intp),
            np.asarray(payload["distortion"], dtype=float),
        )
    rows = list(csv.reader(text.splitlines()))[1:]
    return DistortionReport(
        np.asarray([int(r[0]) for r in rows], dtype=np.intp),
        np.asarray([float(r[1]) for r in rows], dtype=float),
    )
