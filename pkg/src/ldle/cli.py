"""Command line interface: ``ldle {generate,embed,evaluate,plot}``.

Exit codes: 0 success, 2 invalid configuration, 3 data error, 4 numeric
failure.
"""

import argparse
import os
import sys

from .errors import InvalidParameterError, LDLEError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def _floats(text):
    vals = [float(v) for v in text.split(",")]
    return vals[0] if len(vals) == 1 else vals


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _source_args(p):
    g = p.add_argument_group("input")
    g.add_argument("--dataset", help="synthetic manifold, e.g. grid2d:spacing=0.02")
    g.add_argument("--input", help="point cloud file (.csv or .json)")
    g.add_argument("--distances", help="precomputed distance matrix (.npy or .csv)")


def _hyper_args(p):
    g = p.add_argument_group("hyperparameters")
    g.add_argument("--k-nn", type=int, default=49)
    g.add_argument("--k-tune", type=int, default=7)
    g.add_argument("--N", "--n-eig", dest="N", type=int, default=100)
    g.add_argument("--d", type=int, default=2)
    g.add_argument("--p", type=float, default=0.99)
    g.add_argument("--k-lv", type=int, default=25)
    g.add_argument("--tau", type=_floats, default=50.0, help="percentile, or one per stage")
    g.add_argument("--delta", type=_floats, default=0.9, help="fraction, or one per stage")
    g.add_argument("--eta-min", type=int, default=5)
    g.add_argument("--to-tear", type=_bool, default=True)
    g.add_argument("--nu", type=int, default=3)
    g.add_argument("--N-r", "--n-refine", dest="N_r", type=int, default=100)
    g.add_argument(
        "--method",
        default="finite-sum",
        help="finite-sum | feynman-kac | feynman-kac-lowrank=R",
    )


def build_parser():
    parser = _Parser(prog="ldle", description="Low distortion local eigenmaps")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic point cloud")
    g.add_argument("--dataset", required=True)
    g.add_argument("--out", required=True, help="output .csv or .json file")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise", choices=("gaussian", "uniform"))
    g.add_argument("--noise-scale", type=float, default=0.0)

    e = sub.add_parser("embed", help="run the full pipeline")
    _source_args(e)
    _hyper_args(e)
    e.add_argument("--out", default="ldle_run", help="run directory")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--threads", type=int, help="BLAS threads (default: all cores)")
    e.add_argument("--config", help="config.json to start from; flags given override it")
    e.add_argument("--resume-from", choices=("graph", "local_views", "clustering", "alignment", "metrics"))
    e.add_argument("--metric-sources", type=int, default=256)

    v = sub.add_parser("evaluate", help="geodesic distortion of a saved embedding")
    _source_args(v)
    v.add_argument("--embedding", required=True)
    v.add_argument("--out", required=True, help="report path (.csv or .json)")
    v.add_argument("--k", type=int, default=5)
    v.add_argument("--sources", type=int, default=256)
    v.add_argument("--seed", type=int, default=0)

    pl = sub.add_parser("plot", help="SVG scatter of an embedding or point cloud")
    pl.add_argument("--embedding", help="embedding.csv")
    pl.add_argument("--input", help="point cloud file")
    pl.add_argument("--color", choices=("cluster", "tear", "none"), default="cluster")
    pl.add_argument("--out", required=True)
    return parser


def _set_threads(n):
    if n is not None:
        if n < 1:
            raise InvalidParameterError("--threads must be positive")
        for var in THREAD_VARS:
            os.environ[var] = str(n)


def _config_from_args(args):
    from .pipeline import PipelineConfig

    if args.config:
        with open(args.config) as fh:
            cfg = PipelineConfig.from_json(fh.read())
        # flags left at their defaults do not override the file
        defaults = vars(build_parser().parse_args(["embed"]))
        for key, value in vars(args).items():
            if hasattr(cfg, key) and value != defaults.get(key):
                setattr(cfg, key, value)
        return cfg
    return PipelineConfig(
        dataset=args.dataset,
        input=args.input,
        distances=args.distances,
        out=args.out,
        seed=args.seed,
        threads=args.threads,
        method=args.method,
        k_nn=args.k_nn,
        k_tune=args.k_tune,
        N=args.N,
        d=args.d,
        p=args.p,
        k_lv=args.k_lv,
        tau=args.tau,
        delta=args.delta,
        eta_min=args.eta_min,
        to_tear=args.to_tear,
        nu=args.nu,
        N_r=args.N_r,
        metric_sources=args.metric_sources,
        resume_from=args.resume_from,
    )


def _generate(args):
    import inspect
    import json

    from .datasets import GENERATORS, ManifoldSpec, add_noise, generate_manifold, save_point_cloud

    spec = ManifoldSpec.parse(args.dataset)
    if spec.kind in GENERATORS and "seed" in inspect.signature(GENERATORS[spec.kind]).parameters:
        spec.params.setdefault("seed", args.seed)
    cloud = generate_manifold(spec)
    if args.noise:
        cloud = add_noise(cloud, args.noise, args.noise_scale, args.seed)
    if args.out.endswith(".json"):
        payload = {"points": cloud.points.tolist()}
        if cloud.labels is not None:
            payload["labels"] = cloud.labels.tolist()
        if cloud.boundary_mask is not None:
            payload["boundary"] = cloud.boundary_mask.astype(int).tolist()
        with open(args.out, "w") as fh:
            json.dump(payload, fh)
    else:
        save_point_cloud(cloud, args.out)
    print(f"wrote {cloud.n} points to {args.out}")


def _embed(args):
    from .pipeline import run_pipeline

    cfg = _config_from_args(args)
    art = run_pipeline(cfg)
    summary = art.report.summary()
    print(
        f"embedded {art.y.shape[0]} points into {art.y.shape[1]}-D using "
        f"{art.clustering.M} views; median geodesic distortion {summary.get('median', float('nan')):.4g}"
    )
    print(f"artifacts in {art.out}")


def _evaluate(args):
    from .datasets import DistanceSource, load_distance_matrix, load_point_cloud
    from .metrics import default_sources, export_report
    from .pipeline import PipelineConfig, evaluate_embedding, load_data

    if args.distances:
        dist = load_distance_matrix(args.distances)
    elif args.input:
        dist = DistanceSource.from_points(load_point_cloud(args.input).points)
    elif args.dataset:
        _, dist = load_data(PipelineConfig(dataset=args.dataset, seed=args.seed))
    else:
        raise InvalidParameterError("give --dataset, --input or --distances")
    report = evaluate_embedding(
        args.embedding, dist=dist, k=args.k, sources=default_sources(dist.n, args.seed, args.sources)
    )
    fmt = "json" if args.out.endswith(".json") else "csv"
    export_report(report, args.out, fmt)
    s = report.summary()
    print(f"median D_k {s.get('median', float('nan')):.4g} over {s['count']} sources -> {args.out}")


def _plot(args):
    from .pipeline import plane_coords, read_embedding
    from .datasets import load_point_cloud
    from .svg import emit_svg_scatter

    if args.embedding:
        y, labels, colors = read_embedding(args.embedding)
        color = {"cluster": labels, "tear": colors, "none": None}[args.color]
        emit_svg_scatter(plane_coords(y), color, args.out)
    elif args.input:
        cloud = load_point_cloud(args.input)
        lab = None if cloud.labels is None else cloud.labels.reshape(cloud.n, -1)[:, 0]
        emit_svg_scatter(plane_coords(cloud.points), lab if args.color != "none" else None, args.out)
    else:
        raise InvalidParameterError("give --embedding or --input")
    print(f"wrote {args.out}")


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "embed":
            _set_threads(args.threads)
            _embed(args)
        elif args.command == "generate":
            _generate(args)
        elif args.command == "evaluate":
            _evaluate(args)
        else:
            _plot(args)
    except LDLEError as exc:
        stage = getattr(exc, "stage", None)
        where = f" in stage {stage}" if stage else ""
        print(f"ldle: {type(exc).__name__}{where}: {exc}", file=sys.stderr)
        return exc.exit_code if exc.exit_code in (2, 3, 4) else EXIT_NUMERIC
    except OSError as exc:
        print(f"ldle: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
