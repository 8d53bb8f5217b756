import json
import os
import struct
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from ldle import cli, graph, pipeline, svg
from ldle.datasets import grid2d, load_point_cloud
from ldle.errors import ConvergenceError, InvalidInputError

TINY = [
    "--dataset", "grid2d:spacing=0.1",
    "--k-nn", "12", "--k-tune", "4", "--N", "12", "--k-lv", "6",
    "--eta-min", "3", "--nu", "2", "--N-r", "2", "--metric-sources", "40",
]  # fmt: skip


def embed(out, *extra):
    return cli.main(["embed", *TINY, "--out", str(out), *extra])


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert embed(out) == 0
    return out


def test_artifacts_present(run_dir):
    for name in ("embedding.csv", "distortion.csv", "config.json", "log.txt", "embedding.svg", "input.svg"):
        assert (run_dir / name).exists(), name
    y, labels, colors = pipeline.read_embedding(run_dir / "embedding.csv")
    assert y.shape == (121, 2) and np.all(np.isfinite(y))
    assert labels.min() == 0 and np.all(np.bincount(labels) >= 3)
    log = (run_dir / "log.txt").read_text()
    assert "stage graph: done" in log and "alignment pass 3: objective" in log


def test_embedding_csv_layout(run_dir):
    lines = (run_dir / "embedding.csv").read_text().splitlines()
    assert lines[0] == "k,y0,y1,cluster,tear_color"
    assert len(lines) == 122 and lines[1].startswith("0,")


def test_config_round_trip(run_dir):
    text = (run_dir / "config.json").read_text()
    cfg = pipeline.PipelineConfig.from_json(text)
    assert cfg.to_json() == text
    assert cfg.k_nn == 12 and cfg.tau == 50.0 and cfg.to_tear is True


def test_config_defaults_match_standard_table():
    c = pipeline.PipelineConfig()
    assert (c.k_nn, c.k_tune, c.N, c.d, c.p, c.k_lv, c.tau, c.delta) == (49, 7, 100, 2, 0.99, 25, 50.0, 0.9)
    assert (c.eta_min, c.to_tear, c.nu, c.N_r) == (5, True, 3, 100)


def test_same_seed_same_bytes(run_dir, tmp_path):
    assert embed(tmp_path) == 0
    for name in ("embedding.csv", "distortion.csv"):
        assert (tmp_path / name).read_bytes() == (run_dir / name).read_bytes()


@pytest.mark.parametrize("stage", ["graph", "local_views", "clustering", "alignment", "metrics"])
def test_resume_matches_fresh_run(run_dir, tmp_path, stage):
    import shutil

    work = tmp_path / "w"
    shutil.copytree(run_dir, work)
    (work / "embedding.csv").unlink()
    assert embed(work, "--resume-from", stage) == 0
    assert (work / "embedding.csv").read_bytes() == (run_dir / "embedding.csv").read_bytes()


def test_resume_needs_same_hyperparameters(run_dir, tmp_path):
    import shutil

    work = tmp_path / "w"
    shutil.copytree(run_dir, work)
    assert embed(work, "--resume-from", "clustering", "--eta-min", "4") == 2


def test_config_file_with_override(run_dir, tmp_path):
    out = tmp_path / "o"
    code = cli.main(["embed", "--config", str(run_dir / "config.json"), "--out", str(out), "--N-r", "1"])
    assert code == 0
    cfg = pipeline.PipelineConfig.from_json((out / "config.json").read_text())
    assert cfg.N_r == 1 and cfg.k_nn == 12


def test_invalid_config_exit_2_without_artifacts(tmp_path):
    out = tmp_path / "bad"
    assert cli.main(["embed", "--dataset", "grid2d:spacing=0.1", "--k-nn", "3", "--k-tune", "5", "--out", str(out)]) == 2
    assert not out.exists()


def test_argument_error_exit_2(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["embed", "--k-nn", "many"])
    assert info.value.code == 2


def test_missing_input_exit_3(tmp_path):
    assert cli.main(["embed", "--input", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")]) == 3


def test_malformed_input_exit_3(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("0,0\n1\n")
    assert cli.main(["embed", "--input", str(p), "--out", str(tmp_path / "o")]) == 3


def test_numeric_failure_exit_4(tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise ConvergenceError("no luck", residual=1.0)

    monkeypatch.setattr(graph, "smallest_eigenpairs", boom)
    assert embed(tmp_path / "o") == 4
    assert "stage graph" in capsys.readouterr().err
    assert "ConvergenceError" in (tmp_path / "o" / "log.txt").read_text()


def test_threads_flag_sets_environment(tmp_path, monkeypatch):
    for var in cli.THREAD_VARS:
        monkeypatch.delenv(var, raising=False)
    assert embed(tmp_path / "o", "--threads", "1", "--N-r", "0") == 0
    assert all(os.environ[v] == "1" for v in cli.THREAD_VARS)


def test_generate_evaluate_plot(run_dir, tmp_path):
    pts = tmp_path / "grid.csv"
    assert cli.main(["generate", "--dataset", "grid2d:spacing=0.1", "--out", str(pts)]) == 0
    assert load_point_cloud(pts).n == 121
    rep = tmp_path / "rep.json"
    args = ["evaluate", "--input", str(pts), "--embedding", str(run_dir / "embedding.csv"), "--out", str(rep), "--sources", "40"]
    assert cli.main(args) == 0
    data = json.loads(rep.read_text())
    want = [float(line.split(",")[1]) for line in (run_dir / "distortion.csv").read_text().splitlines()[1:]]
    np.testing.assert_allclose(data["distortion"], want, rtol=1e-12)
    fig = tmp_path / "e.svg"
    assert cli.main(["plot", "--embedding", str(run_dir / "embedding.csv"), "--out", str(fig)]) == 0
    assert fig.read_text().count("<circle") == 121


def test_generate_noise_json(tmp_path):
    out = tmp_path / "s.json"
    assert cli.main(["generate", "--dataset", "sphere:n=50", "--noise", "gaussian", "--noise-scale", "0.01", "--out", str(out)]) == 0
    assert len(json.loads(out.read_text())["points"]) == 50


def test_embed_from_distance_matrix(tmp_path):
    X = grid2d(1, 1, 0.1).points
    D = np.linalg.norm(X[:, None] - X[None], axis=-1)
    np.save(tmp_path / "d.npy", D)
    args = ["embed", *TINY[2:], "--distances", str(tmp_path / "d.npy"), "--out", str(tmp_path / "o")]
    assert cli.main(args) == 0
    assert (tmp_path / "o" / "embedding.csv").exists()


# -- binary container ----------------------------------------------------------


def test_binary_container_layout(tmp_path):
    a = np.arange(6, dtype=float).reshape(2, 3)
    path = tmp_path / "a.ldle"
    pipeline.write_array(path, a)
    raw = path.read_bytes()
    assert raw[:4] == b"LDLE"
    version, ndim = struct.unpack("<HH", raw[4:8])
    assert (version, ndim) == (1, 2)
    assert struct.unpack("<QQ", raw[8:24]) == (2, 3)
    np.testing.assert_array_equal(np.frombuffer(raw[24:], "<f8").reshape(2, 3), a)
    np.testing.assert_array_equal(pipeline.read_array(path), a)
    assert (tmp_path / "a.ldle.csv").exists()


# -- SVG ------------------------------------------------------------------------

NS = {"s": "http://www.w3.org/2000/svg"}


def parse(text):
    root = ET.fromstring(text)
    box = [float(v) for v in root.get("viewBox").split()]
    circles = [(float(c.get("cx")), float(c.get("cy")), c.get("fill")) for c in root.findall("s:circle", NS)]
    return box, circles


def test_single_point_svg():
    _, circles = parse(svg.emit_svg_scatter(np.array([[0.3, 0.4]])))
    assert len(circles) == 1


def test_corners_parse_back():
    P = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    box, circles = parse(svg.emit_svg_scatter(P, np.array([0, 1, 2, -1])))
    np.testing.assert_allclose(box, [-0.05, -1.05, 1.1, 1.1])
    got = sorted((x, -y) for x, y, _ in circles)
    assert got == sorted(map(tuple, P.tolist()))
    fills = [f for *_, f in circles]
    assert fills == [svg.PALETTE[0], svg.PALETTE[1], svg.PALETTE[2], svg.NO_CLASS]


def test_rectangle_aspect_preserved(tmp_path):
    P = grid2d(4, 0.25, 0.05).points
    path = tmp_path / "r.svg"
    svg.emit_svg_scatter(P, P[:, 0], path)
    _, circles = parse(path.read_text())
    xy = np.array([(x, y) for x, y, _ in circles])
    ext = xy.max(0) - xy.min(0)
    assert ext[0] / ext[1] == pytest.approx(16.0, rel=0.01)


def test_colormap_endpoints():
    assert svg.colormap([0.0, 1.0]) == ["#440154", "#fde725"]


@pytest.mark.parametrize("bad", [np.zeros((3, 3)), np.zeros((0, 2)), np.array([[np.nan, 0.0]])])
def test_svg_rejects_bad_points(bad):
    with pytest.raises(InvalidInputError):
        svg.emit_svg_scatter(bad)
