"""Low distortion local eigenmaps: manifold embedding by registering local views.

Submodules are imported on first use so that the command line tool can set
thread counts before numpy loads.
"""

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    "PointCloud": "datasets",
    "DistanceSource": "datasets",
    "ManifoldSpec": "datasets",
    "generate_manifold": "datasets",
    "add_noise": "datasets",
    "load_point_cloud": "datasets",
    "knn_search": "graph",
    "build_laplacian": "graph",
    "smallest_eigenpairs": "graph",
    "geodesic_lengths": "graph",
    "chi2_inverse_cdf": "local_views",
    "compute_local_scales": "local_views",
    "estimate_gradient_inner_products": "local_views",
    "select_local_parameterization": "local_views",
    "distortion": "local_views",
    "build_local_views": "local_views",
    "postprocess": "local_views",
    "cluster_views": "clustering",
    "procrustes": "alignment",
    "global_align": "alignment",
    "tear_coloring": "alignment",
    "geodesic_distortion": "metrics",
    "export_report": "metrics",
    "PipelineConfig": "pipeline",
    "run_pipeline": "pipeline",
    "emit_svg_scatter": "svg",
}

__all__ = sorted(_EXPORTS)


def __getattr__(name):
    if name in _EXPORTS:
        return getattr(importlib.import_module(f".{_EXPORTS[name]}", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
