import csv
import json
import math

import numpy as np
import pytest

from plateopt import cli
from plateopt.io import read_trace, read_vtk_summary, write_trace, write_vtk
from plateopt.mesh import element_measures, generate_rectangle, load_mesh
from plateopt.optimize import TraceRecord
from plateopt.rearrange import load_density

SMALL = """
[run]
name = {name}
direction = {direction}
bc = {bc}

[geometry]
kind = rectangle
width = 2
height = 1
target_h = 0.25

[materials]
densities = 1, 2
areas = 1.2, 0.8
"""


def write_spec(path, name="small", direction="maximize", bc="hinged", extra=""):
    path.write_text(SMALL.format(name=name, direction=direction, bc=bc) + extra)
    return path


def test_bundled_specs_parse():
    names = sorted(p.stem for p in cli.bundled_dir().glob("*.ini"))
    assert len(names) == 14
    for n in names:
        spec = cli.load_spec(cli.resolve_spec_path(n))
        assert spec.name == n
        area = cli.exact_area(spec.geometry, cli.scaled_params(spec))
        assert math.fsum(spec.areas) == pytest.approx(area, rel=0.01)


def test_paper_areas_in_bundled_specs():
    expected = {"example1_rect": 16.0, "example1_disk": 6.28, "example1_ellipse": 16.49,
                "example1_crescent": 6.28, "example2_disk": 6.28, "example2_holed": 2.52,
                "example3_rect_3mat": 6.0}
    for stem, area in expected.items():
        spec = cli.load_spec(cli.resolve_spec_path(stem + "_max"))
        assert cli.exact_area(spec.geometry, cli.scaled_params(spec)) == pytest.approx(area, rel=0.002)


def test_dry_run_writes_nothing(tmp_path, capsys):
    spec = write_spec(tmp_path / "s.ini")
    out = tmp_path / "out"
    assert cli.main(["run", str(spec), "--dry-run", "--output-dir", str(out), "--seed", "7"]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["config"]["seed"] == 7
    assert not out.exists()


def test_run_writes_artifacts(tmp_path):
    spec = write_spec(tmp_path / "s.ini")
    assert cli.main(["run", str(spec), "--output-dir", str(tmp_path / "o")]) == 0
    d = tmp_path / "o" / "small"
    mesh = load_mesh(d / "mesh.txt")
    areas = element_measures(mesh).areas
    rho = load_density(d / "density.txt", areas)
    assert rho.in_class()
    meta = json.loads((d / "metadata.json").read_text())
    assert meta["final_eigenvalue"] == read_trace(d / "trace.csv")[-1]["eigenvalue"]
    np.testing.assert_allclose(meta["achieved_areas"], rho.achieved_areas)
    vtk = read_vtk_summary(d / "result.vtk")
    assert vtk["cells"] == mesh.n_triangles
    assert vtk["points"] == mesh.n_vertices
    assert vtk["cell_types"] == [5]
    assert vtk["cell_scalars"] == ["density"]
    assert vtk["point_scalars"] == ["eigenfunction"]
    with open(d / "trace.csv") as fh:
        assert fh.readline().strip() == "iter,eigenvalue,delta_rho_l2,step_kind"


def test_replay_is_byte_identical(tmp_path):
    spec = write_spec(tmp_path / "s.ini", direction="minimize", extra="\n[optimizer]\ninit = random\n")
    for out in ("a", "b"):
        assert cli.main(["run", str(spec), "--seed", "3", "--output-dir", str(tmp_path / out)]) == 0
    for name in ("trace.csv", "density.txt", "result.vtk", "metadata.json", "mesh.txt"):
        assert (tmp_path / "a" / "small" / name).read_bytes() == (tmp_path / "b" / "small" / name).read_bytes()


def test_restarts_report_best(tmp_path):
    spec = write_spec(tmp_path / "s.ini", direction="minimize")
    assert cli.main(["run", str(spec), "--restarts", "3", "--output-dir", str(tmp_path)]) == 0
    meta = json.loads((tmp_path / "small" / "metadata.json").read_text())
    assert len(meta["restart_eigenvalues"]) == 3
    assert meta["final_eigenvalue"] == min(meta["restart_eigenvalues"])


def test_env_overrides_output(tmp_path, monkeypatch):
    spec = write_spec(tmp_path / "s.ini")
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env"))
    assert cli.main(["run", str(spec)]) == 0
    assert (tmp_path / "env" / "small" / "trace.csv").exists()


@pytest.mark.parametrize("edit,where", [
    (("direction = maximize", "direction = up"), "run.direction"),
    (("bc = hinged", "bc = free"), "run.bc"),
    (("kind = rectangle", "kind = star"), "geometry.kind"),
    (("width = 2", "width = wide"), "geometry.width"),
    (("areas = 1.2, 0.8", "areas = 1.2, 0.5"), "materials.areas"),
    (("densities = 1, 2", "densities = 2, 1"), "materials"),
    (("target_h = 0.25", "target_h = -1"), "geometry.target_h"),
    (("height = 1\n", ""), "geometry.height"),
])
def test_spec_errors_name_the_field(tmp_path, capsys, edit, where):
    text = SMALL.format(name="bad", direction="maximize", bc="hinged").replace(*edit)
    (tmp_path / "bad.ini").write_text(text)
    assert cli.main(["run", str(tmp_path / "bad.ini"), "--dry-run"]) == 2
    assert where in capsys.readouterr().err


def test_unknown_optimizer_key(tmp_path, capsys):
    spec = write_spec(tmp_path / "s.ini", extra="\n[optimizer]\nwarp = 9\n")
    assert cli.main(["run", str(spec), "--dry-run"]) == 2
    assert "optimizer.warp" in capsys.readouterr().err


def test_missing_spec(capsys):
    assert cli.main(["run", "no_such_spec"]) == 2


def test_solver_failure_exit_code(tmp_path):
    spec = write_spec(tmp_path / "s.ini", extra="\n[optimizer]\neig_tol = 1e-13\neig_max_iter = 1\n")
    assert cli.main(["run", str(spec), "--output-dir", str(tmp_path / "o")]) == 1
    meta = json.loads((tmp_path / "o" / "small" / "metadata.json").read_text())
    assert "error" in meta
    assert (tmp_path / "o" / "small" / "mesh.txt").exists()


def test_batch_empty_dir(tmp_path):
    (tmp_path / "specs").mkdir()
    assert cli.main(["batch", str(tmp_path / "specs"), "--output-dir", str(tmp_path / "o")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "o" / "summary.csv")))
    assert rows == []


def test_batch_duplicate_names(tmp_path, capsys):
    d = tmp_path / "specs"
    d.mkdir()
    write_spec(d / "a.ini", name="same")
    write_spec(d / "b.ini", name="same")
    assert cli.main(["batch", str(d), "--output-dir", str(tmp_path / "o")]) == 2
    assert "duplicate" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_batch_runs_each_spec(tmp_path):
    d = tmp_path / "specs"
    d.mkdir()
    write_spec(d / "a.ini", name="up", direction="maximize")
    write_spec(d / "b.ini", name="down", direction="minimize", bc="clamped")
    assert cli.main(["batch", str(d), "--workers", "2", "--output-dir", str(tmp_path / "o")]) == 0
    rows = {r["name"]: r for r in csv.DictReader(open(tmp_path / "o" / "summary.csv"))}
    assert set(rows) == {"up", "down"}
    assert rows["down"]["bc"] == "clamped"
    assert all(r["status"] == "ok" for r in rows.values())
    assert float(rows["up"]["final_eigenvalue"]) > float(rows["down"]["final_eigenvalue"]) / 10


def test_batch_records_failures_and_continues(tmp_path):
    d = tmp_path / "specs"
    d.mkdir()
    write_spec(d / "a.ini", name="fine")
    write_spec(d / "b.ini", name="broken", extra="\n[optimizer]\neig_tol = 1e-13\neig_max_iter = 1\n")
    assert cli.main(["batch", str(d), "--output-dir", str(tmp_path / "o")]) == 1
    rows = {r["name"]: r for r in csv.DictReader(open(tmp_path / "o" / "summary.csv"))}
    assert rows["fine"]["status"] == "ok"
    assert rows["broken"]["status"].startswith("error")


def test_specs_command_lists_bundled(capsys):
    assert cli.main(["specs"]) == 0
    assert "example3_rect_3mat_min" in capsys.readouterr().out


def test_vtk_rejects_wrong_sizes(tmp_path):
    m = generate_rectangle(1, 1, 0.5)
    with pytest.raises(ValueError):
        write_vtk(tmp_path / "x.vtk", m, density=np.ones(3))
    with pytest.raises(ValueError):
        write_vtk(tmp_path / "x.vtk", m, point_values=np.ones(3))


def test_trace_round_trip(tmp_path):
    recs = [TraceRecord(0, 1.0 / 3.0, 0.1, "bathtub"), TraceRecord(1, 0.2, 0.0, "stop")]
    write_trace(recs, tmp_path / "t.csv")
    back = read_trace(tmp_path / "t.csv")
    assert back[0]["eigenvalue"] == 1.0 / 3.0
    assert [r["step_kind"] for r in back] == ["bathtub", "stop"]
