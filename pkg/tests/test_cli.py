import json
import time
from pathlib import Path

import numpy as np
import pytest

from kdelevel import cli
from kdelevel.field_geometry import IndicatorField, ScalarField, read_field
from kdelevel.models import BumpMixture, Gaussian2D

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_missing_config_exit_2(tmp_path):
    assert cli.main(["verify-theorem", "--config", str(tmp_path / "x.ini"), "--out", str(tmp_path)]) == 2


def test_inadmissible_gamma_names_condition(tmp_path, caplog):
    cfg = write(tmp_path, "bad.ini", "[experiment]\nt = 0.1\n[bandwidth]\ngamma = 0.6\n")
    assert cli.main(["verify-theorem", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "n h^2 / (log n)^16" in caplog.text


def test_corollary_needs_two_dimensions(tmp_path, caplog):
    cfg = write(tmp_path, "k1.ini", "[experiment]\nmode = corollary\np = 0.5\n"
                "[model]\nname = bump_mixture\ncenters = 0\nweights = 1\nradius = 1\n"
                "[bandwidth]\ngamma = 0.4\n")
    assert cli.main(["verify-corollary", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "k >= 2" in caplog.text


def test_probability_out_of_range(tmp_path):
    cfg = write(tmp_path, "p.ini", "[experiment]\nmode = corollary\np = 1.2\n")
    assert cli.main(["verify-corollary", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_mode_mismatch(tmp_path):
    assert cli.main(["verify-corollary", "--config", str(CONFIGS / "smoke_theorem.ini"),
                     "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize("cmd,name", [("verify-theorem", "smoke_theorem.ini"),
                                      ("verify-corollary", "smoke_corollary.ini")])
def test_smoke_runs(tmp_path, cmd, name):
    start = time.perf_counter()
    assert cli.main([cmd, "--config", str(CONFIGS / name), "--out", str(tmp_path)]) == 0
    assert time.perf_counter() - start < 30
    for f in ("replications.csv", "summary.csv", "plot_data.csv", "manifest.json"):
        assert (tmp_path / f).is_file()
    assert len((tmp_path / "replications.csv").read_text().splitlines()) == 4


def test_seed_override_changes_records(tmp_path):
    args = ["verify-theorem", "--config", str(CONFIGS / "smoke_theorem.ini")]
    cli.main(args + ["--out", str(tmp_path / "a")])
    cli.main(args + ["--out", str(tmp_path / "b"), "--seed-override", "99"])
    cli.main(args + ["--out", str(tmp_path / "c")])
    a, b, c = ((tmp_path / d / "replications.csv").read_text() for d in "abc")
    assert a == c and a != b


def test_workers_env_fallback(monkeypatch):
    args = cli.build_parser().parse_args(["verify-theorem", "--config", "x", "--out", "y"])
    monkeypatch.setenv("LEVELSET_WORKERS", "3")
    assert cli._workers(args) == 3
    monkeypatch.setenv("LEVELSET_WORKERS", "lots")
    assert cli._workers(args) == 1
    args.workers = 2
    assert cli._workers(args) == 2


def _cluster(tmp_path, points_path, *extra):
    out = tmp_path / "out"
    code = cli.main(["cluster", "--points", str(points_path), "--p", "0.5", "--out", str(out), *extra])
    return code, out


def test_cluster_two_bumps(tmp_path):
    pts = BumpMixture(((-1.5, 0.0), (1.5, 0.0)), (0.5, 0.5), 1.0).sample(5000, seed=3)
    pts.to_csv(tmp_path / "pts.csv")
    code, out = _cluster(tmp_path, tmp_path / "pts.csv")
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["clusters"] == 2
    labels = np.loadtxt(out / "labels.csv", delimiter=",", skiprows=1, dtype=int)
    assert set(labels[:, 1]) == {1, 2}
    assert isinstance(read_field(out / "levelset.bin"), IndicatorField)
    assert isinstance(read_field(out / "density.bin"), ScalarField)


def test_cluster_single_gaussian(tmp_path):
    Gaussian2D(1.0).sample(3000, seed=4).to_csv(tmp_path / "pts.csv")
    # at the default h = n^-0.2 the noisy rim of the level set breaks off small islands
    code, out = _cluster(tmp_path, tmp_path / "pts.csv", "--h", "0.4")
    assert code == 0
    assert json.loads((out / "report.json").read_text())["clusters"] == 1


@pytest.mark.parametrize("content", ["", "x1,x2\n", "x1,x2\n0.5,0.5\n"])
def test_cluster_rejects_too_few_points(tmp_path, content):
    code, _ = _cluster(tmp_path, write(tmp_path, "pts.csv", content))
    assert code == 2


def test_cluster_malformed_row_reports_line(tmp_path, caplog):
    path = write(tmp_path, "pts.csv", "x1,x2\n0,0\n1,abc\n2,2\n")
    code, _ = _cluster(tmp_path, path)
    assert code == 2
    assert "line 3" in caplog.text


def test_cluster_bad_arguments(tmp_path):
    path = tmp_path / "pts.csv"
    Gaussian2D(1.0).sample(50, seed=1).to_csv(path)
    assert cli.main(["cluster", "--points", str(path), "--p", "1.5", "--out", str(tmp_path)]) == 2
    assert cli.main(["cluster", "--points", str(tmp_path / "none.csv"), "--p", "0.5", "--out", str(tmp_path)]) == 2
    assert _cluster(tmp_path, path, "--h", "0.5", "--gamma", "0.2")[0] == 2
    assert _cluster(tmp_path, path, "--kernel", "cauchy")[0] == 2


def test_kernel_info(capsys):
    assert cli.main(["kernel-info", "--kernel", "epanechnikov", "--dim", "2"]) == 0
    out = capsys.readouterr().out
    assert "0.424413" in out
    assert "theorem gamma range: (0.166667, 0.5)" in out
    assert "corollary gamma range: (0.166667, 0.25)" in out
    assert cli.main(["kernel-info", "--dim", "1"]) == 0
    assert "requires k >= 2" in capsys.readouterr().out
    assert cli.main(["kernel-info", "--kernel", "cauchy"]) == 2
