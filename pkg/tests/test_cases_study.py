"""Benchmark case definitions, convergence studies and exports.

Load oracle for the clamped polynomial case at the center: with
w = X(x) X(y), X = x^2 (1-x)^2, the biharmonic at (1/2, 1/2) is
24/16 + 2 * (-1)^2 /... = 24 * (1/16) + 2 * (-1) * (-1) + (1/16) * 24
= 5, so f = 5 / (6 * 0.7) = 5/4.2.
"""

import numpy as np
import pytest
from numpy.polynomial import Polynomial

from platefem.cases import (CASES, case_clamped_poly, case_free_edge,
                            case_lshape)
from platefem.mesh import BoundaryLabel
from platefem.study import (export, export_csv, export_vtk, observed_rate,
                            run_study)


def test_case_registry():
    assert set(CASES) == {"clamped-poly", "free-edge", "lshape"}
    for factory in CASES.values():
        case = factory()
        assert case.base_mesh.n_triangles > 0


def test_clamped_poly_load_center_value():
    case = case_clamped_poly()
    assert case.f(0.5, 0.5) == pytest.approx(5.0 / 4.2, rel=1e-13)


def test_clamped_poly_mean_deflection():
    # int w = (int_0^1 x^2 (1-x)^2 dx)^2 = (1/30)^2.
    case = case_clamped_poly()
    X = Polynomial([0.0, 0.0, 1.0, -2.0, 1.0])
    ix = X.integ()(1.0) - X.integ()(0.0)
    assert ix == pytest.approx(1.0 / 30.0, rel=1e-14)
    xs = np.linspace(0.0, 1.0, 201)
    W = case.exact.w(xs[:, None], xs[None, :])
    assert np.trapezoid(np.trapezoid(W, xs), xs) == pytest.approx(
        1.0 / 900.0, rel=1e-6)


def test_clamped_poly_boundary_conditions():
    case = case_clamped_poly()
    t = np.linspace(0.0, 1.0, 17)
    for x, y in [(t, np.zeros_like(t)), (t, np.ones_like(t)),
                 (np.zeros_like(t), t), (np.ones_like(t), t)]:
        assert np.max(np.abs(case.exact.w(x, y))) < 1e-15
        assert np.max(np.abs(case.exact.grad(x, y))) < 1e-15


def test_self_audit():
    case_clamped_poly().self_audit()
    case_free_edge().self_audit()   # no exact bundle: a no-op
    case_lshape().self_audit()


def test_case_boundary_labels():
    m = case_free_edge(2).base_mesh
    labs = [m.edge_label(int(e)) for e in m.boundary_edges()]
    assert labs.count(BoundaryLabel.CLAMPED) == 2
    assert labs.count(BoundaryLabel.FREE) == 6
    m = case_lshape().base_mesh
    assert all(m.edge_label(int(e)) is BoundaryLabel.CLAMPED
               for e in m.boundary_edges())


def test_free_edge_deflection_peaks_away_from_clamp(solved_free_k2):
    # Left edge clamped, uniform load: the tip deflects the most.
    _, sol, _ = solved_free_k2
    coords = sol.spaces.scalar.coords
    peak = coords[int(np.argmax(np.abs(sol.w_coeffs)))]
    assert peak[0] > 0.5


def test_poisson_ratio_override():
    case = case_clamped_poly(nu=0.0)
    assert case.material.nu == 0.0
    assert case.exact.nu == 0.0


# ---------------------------------------------------------------------
# Studies
# ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_study():
    return run_study(case_clamped_poly(2), levels=3, k=1)


def test_study_rows(small_study):
    r = small_study
    assert len(r.rows) == 3
    assert r.error_source == "exact"
    h = [row["h_max"] for row in r.rows]
    assert h[1] == pytest.approx(h[0] / 2) and h[2] == pytest.approx(h[1] / 2)
    dof = [row["n_dof"] for row in r.rows]
    assert dof[0] < dof[1] < dof[2]
    errs = [row["triple_norm"] for row in r.rows]
    assert errs[0] > errs[1] > errs[2]
    assert r.rates["triple_norm"] > 0.5
    assert r.metadata["alpha"] > 0.0 and r.metadata["gamma"] > 0.0


def test_study_reference_errors_mode():
    r = run_study(case_free_edge(2), levels=2, k=1)
    assert r.error_source == "reference"
    assert all(row["triple_norm"] > 0.0 for row in r.rows)


def test_study_rejects_zero_levels():
    with pytest.raises(ValueError):
        run_study(case_clamped_poly(2), levels=0, k=1)


def test_free_edge_toggle_noop_on_clamped_case():
    a = run_study(case_clamped_poly(2), levels=1, k=1)
    b = run_study(case_clamped_poly(2), levels=1, k=1,
                  with_free_edge_terms=False)
    assert a.rows[0]["triple_norm"] == b.rows[0]["triple_norm"]
    assert a.rows[0]["eta"] == b.rows[0]["eta"]


def test_observed_rate():
    assert observed_rate([1.0, 0.5, 0.25]) == pytest.approx(1.0)
    assert observed_rate([8.0, 1.0]) == pytest.approx(3.0)
    assert np.isnan(observed_rate([1.0]))


# ---------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------

def test_csv_export(tmp_path, small_study):
    p = tmp_path / "study.csv"
    export_csv(small_study, p)
    raw = p.read_bytes().decode()
    lines = raw.split("\r\n")
    assert lines[0].startswith("level,h_max,n_dof,triple_norm")
    assert len([ln for ln in lines if ln]) == 1 + len(small_study.rows)
    cells = lines[1].split(",")
    assert cells[0] == "0"
    float(cells[1])  # parses
    assert "e" in cells[3]  # scientific notation


def test_csv_export_deterministic(tmp_path, small_study):
    p1 = tmp_path / "a.csv"
    p2 = tmp_path / "b.csv"
    export_csv(small_study, p1)
    export_csv(small_study, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_vtk_export(tmp_path, small_study):
    p = tmp_path / "study.vtk"
    export_vtk(small_study, p)
    text = p.read_text().splitlines()
    assert text[0].startswith("# vtk DataFile")
    m = small_study.final_solution.mesh
    assert f"POINTS {m.n_vertices} double" in text
    assert f"CELL_DATA {m.n_triangles}" in text
    idx = text.index(f"POINTS {m.n_vertices} double")
    assert len(text[idx + 1].split()) == 3


def test_export_dispatch(tmp_path, small_study):
    export(small_study, tmp_path / "s.csv", "csv")
    export(small_study, tmp_path / "s.vtk", "vtk")
    with pytest.raises(ValueError):
        export(small_study, tmp_path / "s.bin", "hdf5")
