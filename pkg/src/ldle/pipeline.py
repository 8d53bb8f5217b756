"""End-to-end driver: data, Laplacian, local views, clustering, alignment, metrics.

Every stage writes its outputs to the run directory.  Arrays go into a small
binary container (see :func:`write_array`) with a CSV mirror next to it, so a
later run can resume from any stage and reproduce a fresh run exactly.
"""

import csv
import dataclasses
import inspect
import json
import logging
import os
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import alignment, clustering, graph, local_views, metrics
from .datasets import (
    GENERATORS,
    DistanceSource,
    ManifoldSpec,
    PointCloud,
    generate_manifold,
    load_distance_matrix,
    load_point_cloud,
)
from .errors import InvalidParameterError, LDLEError
from .svg import emit_svg_scatter

log = logging.getLogger("ldle")

STAGES = ("graph", "local_views", "clustering", "alignment", "metrics")
MAGIC = b"LDLE"
FORMAT_VERSION = 1


@dataclass
class PipelineConfig:
    """Resolved run configuration; defaults are the standard hyperparameters."""

    dataset: str | None = None
    input: str | None = None
    distances: str | None = None
    out: str = "ldle_run"
    seed: int = 0
    threads: int | None = None
    method: str = "finite-sum"
    k_nn: int = 49
    k_tune: int = 7
    N: int = 100
    d: int = 2
    p: float = 0.99
    k_lv: int = 25
    tau: float | list = 50.0
    delta: float | list = 0.9
    eta_min: int = 5
    to_tear: bool = True
    nu: int = 3
    N_r: int = 100
    metric_k: int = 5
    metric_sources: int = 256
    resume_from: str | None = None

    def validate(self):
        if (self.dataset is None) == (self.input is None and self.distances is None):
            raise InvalidParameterError("give exactly one of dataset or input/distances")
        ints = ("k_nn", "k_tune", "N", "d", "k_lv", "eta_min", "nu", "metric_k", "metric_sources")
        for name in ints:
            if int(getattr(self, name)) < 1:
                raise InvalidParameterError(f"{name} must be a positive integer")
        if self.N_r < 0:
            raise InvalidParameterError("N_r must be nonnegative")
        if self.k_tune > self.k_nn:
            raise InvalidParameterError(f"k_tune={self.k_tune} exceeds k_nn={self.k_nn}")
        if self.d > self.N:
            raise InvalidParameterError(f"d={self.d} exceeds N={self.N}")
        if not 0 < self.p < 1:
            raise InvalidParameterError("p must lie in (0, 1)")
        for name, lo, hi in (("tau", 0, 100), ("delta", 0, 1)):
            vals = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if vals.size not in (1, self.d):
                raise InvalidParameterError(f"{name} needs 1 or d={self.d} values")
            if np.any(vals < lo) or np.any(vals > hi) or (name == "delta" and np.any(vals == 0)):
                raise InvalidParameterError(f"{name} out of range")
        local_views.parse_method(self.method)
        if self.dataset is not None:
            spec = ManifoldSpec.parse(self.dataset)
            if spec.kind not in GENERATORS:
                raise InvalidParameterError(f"unknown dataset {spec.kind!r}")
        if self.resume_from is not None and self.resume_from not in STAGES:
            raise InvalidParameterError(f"resume_from must be one of {STAGES}")
        return self

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise InvalidParameterError(f"unknown config keys {sorted(unknown)}")
        return cls(**data)

    def hyperparameters(self):
        """The settings that determine the stage outputs (paths and resume point excluded)."""
        skip = {"out", "resume_from", "threads"}
        return {k: v for k, v in dataclasses.asdict(self).items() if k not in skip}


@dataclass
class RunArtifacts:
    out: str
    files: dict = field(default_factory=dict)
    y: np.ndarray | None = None
    basis: object = None
    params: object = None
    clustering: object = None
    embedding: object = None
    report: object = None
    timings: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# binary container


def write_array(path, array):
    """Write ``array`` as: b"LDLE", uint16 version, uint16 ndim, ndim x uint64 shape,
    then little-endian float64 values in row-major order."""
    a = np.ascontiguousarray(array, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HH", FORMAT_VERSION, a.ndim))
        fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        fh.write(a.tobytes(order="C"))
    with open(f"{path}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in np.atleast_2d(a) if a.ndim <= 2 else a.reshape(a.shape[0], -1):
            w.writerow([repr(float(x)) for x in np.atleast_1d(row)])


def read_array(path):
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) < 8 or head[:4] != MAGIC:
            raise LDLEError(f"{path} is not an array container")
        version, ndim = struct.unpack("<HH", head[4:])
        if version != FORMAT_VERSION:
            raise LDLEError(f"{path}: unsupported container version {version}")
        shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != int(np.prod(shape)):
        raise LDLEError(f"{path}: truncated container")
    return data.reshape(shape).astype(float)


# ---------------------------------------------------------------------------
# stages


def load_data(config):
    """Point cloud (or None) and distance source described by the config."""
    cloud = None
    if config.dataset is not None:
        spec = ManifoldSpec.parse(config.dataset)
        gen = GENERATORS[spec.kind]
        params = dict(spec.params)
        if "seed" in inspect.signature(gen).parameters and "seed" not in params:
            params["seed"] = config.seed
        cloud = generate_manifold(ManifoldSpec(spec.kind, params))
    elif config.input is not None:
        cloud = load_point_cloud(config.input)
    if config.distances is not None:
        dist = load_distance_matrix(config.distances)
        if cloud is not None and cloud.n != dist.n:
            raise InvalidParameterError("distance matrix and point cloud sizes differ")
    else:
        dist = DistanceSource.from_points(cloud.points)
    return cloud, dist


def _stage(name, fn, artifacts):
    t = time.perf_counter()
    log.info("stage %s: start", name)
    try:
        out = fn()
    except LDLEError as exc:
        exc.stage = name
        log.error("stage %s failed: %s: %s", name, type(exc).__name__, exc)
        raise
    artifacts.timings[name] = time.perf_counter() - t
    log.info("stage %s: done in %.3f s", name, artifacts.timings[name])
    return out


def _fmt(x):
    return repr(float(x))


def write_embedding(path, y, labels, colors):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k"] + [f"y{i}" for i in range(y.shape[1])] + ["cluster", "tear_color"])
        for k in range(y.shape[0]):
            color = "" if colors[k] < 0 else str(int(colors[k]))
            w.writerow([k] + [_fmt(v) for v in y[k]] + [int(labels[k]), color])


def read_embedding(path):
    """``(y, labels, colors)`` from an embedding CSV; missing colours become -1."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    d = sum(1 for h in header if h.startswith("y"))
    y = np.array([[float(v) for v in r[1 : 1 + d]] for r in body]).reshape(len(body), d)
    labels = np.array([int(r[1 + d]) for r in body], dtype=np.intp)
    colors = np.array([int(r[2 + d]) if r[2 + d] else -1 for r in body], dtype=np.intp)
    return y, labels, colors


def plane_coords(X):
    """First two coordinates, zero-padded for 1-D data."""
    X = np.asarray(X, dtype=float)
    if X.shape[1] >= 2:
        return X[:, :2]
    return np.column_stack([X[:, 0], np.zeros(X.shape[0])])


def _attach_log(out):
    handler = logging.FileHandler(os.path.join(out, "log.txt"), mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(name)s %(levelname)s %(message)s"))
    for name in ("ldle", "ldle.alignment"):
        logging.getLogger(name).setLevel(logging.INFO)
    logging.getLogger("ldle").addHandler(handler)
    return handler


def run_pipeline(config):
    """Run every stage and persist the artifacts in ``config.out``.

    With ``config.resume_from`` set, the stages before it are loaded from the
    run directory instead of being recomputed.  The directory must hold the
    outputs of an earlier run with the same hyperparameters.
    """
    config.validate()
    out = config.out
    resume = STAGES.index(config.resume_from) if config.resume_from else 0
    stage_dir = os.path.join(out, "stages")
    if resume:
        _check_resumable(config, out)
    os.makedirs(stage_dir, exist_ok=True)
    handler = _attach_log(out)
    try:
        return _run(config, out, stage_dir, resume)
    finally:
        logging.getLogger("ldle").removeHandler(handler)
        handler.close()


def _check_resumable(config, out):
    path = os.path.join(out, "config.json")
    if not os.path.exists(path):
        raise InvalidParameterError(f"nothing to resume in {out}")
    with open(path) as fh:
        previous = PipelineConfig.from_json(fh.read())
    if previous.hyperparameters() != config.hyperparameters():
        raise InvalidParameterError("resume needs the same hyperparameters as the saved run")


def _run(config, out, stage_dir, resume):
    art = RunArtifacts(out=out)
    log.info("config: %s", json.dumps(config.hyperparameters(), sort_keys=True))
    cfg_path = os.path.join(out, "config.json")
    with open(cfg_path, "w") as fh:
        fh.write(config.to_json())
    art.files["config"] = cfg_path

    def sp(name):
        return os.path.join(stage_dir, name + ".ldle")

    cloud, dist = _stage("data", lambda: load_data(config), art)
    n = dist.n
    method, rank = local_views.parse_method(config.method)

    def graph_stage():
        nbrs = graph.knn_search(dist, config.k_nn)
        lap = graph.build_laplacian(dist, config.k_nn, config.k_tune, nbrs)
        if resume > 0:
            basis = graph.EigenBasis(read_array(sp("eigenvalues")), read_array(sp("eigenvectors")))
        else:
            basis = graph.smallest_eigenpairs(lap, config.N)
            write_array(sp("eigenvalues"), basis.values)
            write_array(sp("eigenvectors"), basis.vectors)
        return nbrs, lap, basis

    nbrs, lap, basis = _stage("graph", graph_stage, art)
    art.basis = basis

    def views_stage():
        scales = local_views.compute_local_scales(dist, config.k_lv, config.p, config.d, nbrs)
        if resume > 1:
            params = local_views.LocalParameterization(
                read_array(sp("local_indices")).astype(np.intp),
                read_array(sp("local_scales")),
                read_array(sp("local_zeta")),
            )
            return scales, params
        params = local_views.build_local_views(
            basis, scales, lap, method, rank, config.tau, config.delta, config.d, dist
        )
        params, plog = local_views.postprocess(params, scales, basis, dist)
        log.info("postprocess: %d passes, replacements %s", plog.passes, plog.replacements)
        write_array(sp("local_indices"), params.indices)
        write_array(sp("local_scales"), params.scales)
        write_array(sp("local_zeta"), params.zeta)
        return scales, params

    scales, params = _stage("local_views", views_stage, art)
    art.params = params

    def cluster_stage():
        if resume > 2:
            labels = read_array(sp("cluster_labels")).astype(np.intp)
            seeds = read_array(sp("cluster_seeds")).astype(np.intp)
            return _clustering_from_labels(labels, seeds, params, scales, config.eta_min)
        C = clustering.cluster_views(basis.vectors, params, scales.balls, dist, config.eta_min)
        log.info("clustering: %d clusters after %d relabels", C.M, C.relabels)
        write_array(sp("cluster_labels"), C.labels)
        write_array(sp("cluster_seeds"), C.seeds)
        return C

    C = _stage("clustering", cluster_stage, art)
    art.clustering = C

    def align_stage():
        return alignment.global_align(
            basis.vectors,
            C,
            dist,
            to_tear=config.to_tear,
            nu=config.nu,
            k_lv=config.k_lv,
            n_refine=config.N_r,
            seed=config.seed,
        )

    E = _stage("alignment", align_stage, art)
    art.embedding = E
    art.y = E.y
    emb_path = os.path.join(out, "embedding.csv")
    write_embedding(emb_path, E.y, C.labels, E.tear_colors)
    art.files["embedding"] = emb_path
    log.info("tearing: %d torn view pairs", len(E.torn_pairs))

    def metric_stage():
        src = metrics.default_sources(n, config.seed, config.metric_sources)
        return metrics.geodesic_distortion(dist, E.y, config.metric_k, src)

    report = _stage("metrics", metric_stage, art)
    art.report = report
    dpath = os.path.join(out, "distortion.csv")
    metrics.export_report(report, dpath)
    art.files["distortion"] = dpath
    log.info("geodesic distortion summary: %s", json.dumps(report.summary(), sort_keys=True))

    art.files.update(_plots(out, cloud, E, C))
    return art


def _clustering_from_labels(labels, seeds, params, scales, eta_min):
    M = seeds.size
    members = [np.flatnonzero(labels == m) for m in range(M)]
    domains = [np.unique(np.concatenate([scales.balls[j] for j in mem])) for mem in members]
    return clustering.Clustering(
        labels=labels,
        members=members,
        domains=domains,
        seeds=seeds,
        indices=params.indices[seeds].copy(),
        scales=params.scales[seeds].copy(),
        eta_min=eta_min,
    )


def _plots(out, cloud, E, C):
    files = {}
    if E.tear_colors.max(initial=-1) >= 0:
        color = E.tear_colors
    elif cloud is not None and cloud.labels is not None:
        color = np.asarray(cloud.labels, dtype=float).reshape(cloud.n, -1)[:, 0]
    else:
        color = C.labels
    if cloud is not None:
        path = os.path.join(out, "input.svg")
        lab = None
        if cloud.labels is not None:
            lab = np.asarray(cloud.labels, dtype=float).reshape(cloud.n, -1)[:, 0]
        emit_svg_scatter(plane_coords(cloud.points), lab, path)
        files["input_plot"] = path
    path = os.path.join(out, "embedding.svg")
    emit_svg_scatter(plane_coords(E.y), color, path)
    files["embedding_plot"] = path
    return files


def evaluate_embedding(embedding_csv, cloud=None, dist=None, k=5, sources=None, seed=0):
    """Geodesic distortion report for a saved embedding."""
    y, _, _ = read_embedding(embedding_csv)
    if dist is None:
        dist = DistanceSource.from_points(cloud.points if isinstance(cloud, PointCloud) else cloud)
    if sources is None:
        sources = metrics.default_sources(dist.n, seed)
    return metrics.geodesic_distortion(dist, y, k, sources)
