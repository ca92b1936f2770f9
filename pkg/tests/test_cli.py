"""End-to-end command line tests (in-process via main)."""

import numpy as np
import pytest

from platefem.cli import main

MESH_FILE = """\
$Nodes
4
1 0.0 0.0
2 1.0 0.0
3 1.0 1.0
4 0.0 1.0
$Triangles
2
1 1 2 3
2 1 3 4
$BoundaryEdges
4
1 1 2 C
2 2 3 F
3 3 4 F
4 4 1 C
"""


def test_solve_case(capsys):
    rc = main(["solve", "--case", "clamped-poly", "--k", "1"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "n_dof=" in out and "eta=" in out


def test_solve_requires_input():
    with pytest.raises(SystemExit):
        main(["solve", "--k", "1"])


def test_solve_mesh_file(tmp_path, capsys):
    p = tmp_path / "m.txt"
    p.write_text(MESH_FILE)
    rc = main(["solve", "--mesh", str(p), "--k", "2"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "m.txt" in out


def test_solve_missing_mesh_is_reported(tmp_path, capsys):
    rc = main(["solve", "--mesh", str(tmp_path / "nope.txt")])
    err = capsys.readouterr().err
    assert rc == 1
    assert err.startswith("error:")


def test_solve_manual_parameters(capsys):
    rc = main(["solve", "--case", "clamped-poly", "--alpha", "0.05",
               "--gamma", "2.0"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "alpha=0.05" in out and "gamma=2" in out


def test_solve_vtk_output(tmp_path, capsys):
    p = tmp_path / "sol.vtk"
    rc = main(["solve", "--case", "free-edge", "--k", "1",
               "--out", str(p), "--format", "vtk"])
    capsys.readouterr()
    assert rc == 0
    assert p.read_text().startswith("# vtk DataFile")


def test_study_pass_and_csv(tmp_path, capsys):
    p = tmp_path / "study.csv"
    rc = main(["study", "--case", "clamped-poly", "--k", "1",
               "--levels", "3", "--min-rate", "0.5", "--out", str(p)])
    out = capsys.readouterr().out
    assert rc == 0
    assert "rates:" in out
    header = p.read_bytes().split(b"\r\n")[0]
    assert header.startswith(b"level,h_max")


def test_study_min_rate_failure(capsys):
    rc = main(["study", "--case", "clamped-poly", "--k", "1",
               "--levels", "2", "--min-rate", "10"])
    err = capsys.readouterr().err
    assert rc == 2
    assert "acceptance check failed" in err


def test_study_no_dh_flag(capsys):
    rc = main(["study", "--case", "free-edge", "--k", "1", "--levels", "2",
               "--no-dh"])
    assert rc == 0
    capsys.readouterr()


def test_adapt(capsys):
    rc = main(["adapt", "--case", "lshape", "--k", "1", "--iters", "2",
               "--theta", "0.5"])
    out = capsys.readouterr().out
    assert rc == 0
    lines = [ln for ln in out.splitlines() if ln and ln[0].isspace() is False]
    assert lines[0].startswith("iter")
    # One row per solved mesh: iters + 1.
    data = [ln for ln in out.splitlines()
            if ln.strip() and ln.strip()[0].isdigit()]
    assert len(data) == 3
    etas = [float(ln.split()[-1]) for ln in data]
    assert etas[-1] < etas[0]


def test_adapt_dof_budget(capsys):
    rc = main(["adapt", "--case", "lshape", "--k", "1", "--iters", "30",
               "--dof-budget", "150"])
    out = capsys.readouterr().out
    assert rc == 0
    data = [ln for ln in out.splitlines()
            if ln.strip() and ln.strip()[0].isdigit()]
    assert len(data) < 31


def test_estimate_constants(capsys):
    rc = main(["estimate-constants", "--case", "free-edge", "--k", "2"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "C_I_est=" in out and "auto alpha=" in out


def test_estimate_constants_k1_defaults(capsys):
    rc = main(["estimate-constants", "--case", "clamped-poly", "--k", "1"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "inf" in out
    assert "default" in out


def test_thread_env(monkeypatch, capsys):
    import os
    monkeypatch.delenv("OMP_NUM_THREADS", raising=False)
    monkeypatch.setenv("PLATEFEM_THREADS", "1")
    rc = main(["solve", "--case", "clamped-poly"])
    capsys.readouterr()
    assert rc == 0
    assert os.environ["OMP_NUM_THREADS"] == "1"
