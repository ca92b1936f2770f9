"""Uniform-refinement convergence studies and file exports."""

from __future__ import annotations

import datetime
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .assembly import StabilizationParams, assemble, auto_stabilization
from .cases import ProblemCase
from .estimator import IndicatorSet, compute_indicators
from .mesh import uniform_refine
from .solve_post import (Solution, error_vs_exact, error_vs_reference,
                         recover_shear, solve)
from .space import build_spaces

CSV_COLUMNS = ["level", "h_max", "n_dof", "triple_norm", "norm_2h",
               "seminorm_h", "shear_neg_h", "h1_deflection",
               "l2_deflection", "eta"]


@dataclass
class StudyResult:
    case: str
    k: int
    with_free_edge_terms: bool
    error_source: str                  # "exact" or "reference"
    rows: list = field(default_factory=list)
    rates: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    final_solution: Solution | None = None
    final_indicators: IndicatorSet | None = None
    final_shear: object = None


def observed_rate(values):
    """Mean of the last two refinement increments log2(e_l / e_{l+1})."""
    v = [x for x in values]
    incr = [np.log2(a / b) for a, b in zip(v, v[1:]) if a > 0 and b > 0]
    if not incr:
        return float("nan")
    return float(np.mean(incr[-2:]))


def run_study(case: ProblemCase, levels: int, k: int,
              with_free_edge_terms: bool = True,
              stab: StabilizationParams | None = None,
              reference_errors: bool | None = None) -> StudyResult:
    """Solve on a uniform refinement sequence and tabulate errors.

    Errors come from the exact bundle when the case has one, otherwise
    from the h/2 reference solution (also used when `reference_errors`
    forces it).  Stabilization parameters are estimated once on the
    coarsest mesh and kept fixed across levels.
    """
    if levels < 1:
        raise ValueError("need at least one level")
    if reference_errors is None:
        reference_errors = case.exact is None
    mat = case.material

    mesh = case.base_mesh
    spaces = build_spaces(mesh, k)
    if stab is None:
        stab = auto_stabilization(mesh, spaces, mat)

    result = StudyResult(case.name, k, with_free_edge_terms,
                         "reference" if reference_errors else "exact")
    result.metadata = dict(
        alpha=stab.alpha, gamma=stab.gamma, stab_mode=stab.mode,
        nu=mat.nu, version=__version__,
        timestamp=datetime.datetime.now(datetime.timezone.utc).isoformat())

    for level in range(levels):
        if level > 0:
            mesh = uniform_refine(mesh)
            spaces = build_spaces(mesh, k)
        system = assemble(mesh, spaces, mat, stab, case.f,
                          with_free_edge_terms=with_free_edge_terms)
        sol = solve(system)
        shear = recover_shear(sol)
        ind = compute_indicators(sol, shear, case.f)

        if reference_errors:
            fine = uniform_refine(mesh)
            fine_spaces = build_spaces(fine, k)
            fine_system = assemble(fine, fine_spaces, mat, stab, case.f,
                                   with_free_edge_terms=with_free_edge_terms)
            report = error_vs_reference(sol, solve(fine_system))
        else:
            report = error_vs_exact(sol, case.exact, shear)

        h_max = float(mesh.element_diameters().max())
        result.rows.append(dict(
            level=level, h_max=h_max, n_dof=spaces.n_free,
            triple_norm=report.triple_norm, norm_2h=report.norm_2h,
            seminorm_h=report.seminorm_h, shear_neg_h=report.shear_neg_h,
            h1_deflection=report.h1_deflection,
            l2_deflection=report.l2_deflection, eta=ind.eta))
        result.final_solution = sol
        result.final_indicators = ind
        result.final_shear = shear

    for key in ("triple_norm", "shear_neg_h", "h1_deflection",
                "l2_deflection", "eta"):
        result.rates[key] = observed_rate([r[key] for r in result.rows])
    return result


# ---------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------

def export_csv(result: StudyResult, path):
    """RFC-4180-style CSV, 16 significant digits."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\r\n")
        for row in result.rows:
            cells = []
            for col in CSV_COLUMNS:
                v = row[col]
                if isinstance(v, (int, np.integer)):
                    cells.append(str(int(v)))
                else:
                    cells.append("%.16e" % float(v))
            fh.write(",".join(cells) + "\r\n")


def export_vtk(result: StudyResult, path):
    """Legacy ASCII VTK unstructured grid of the finest solved mesh.

    Point data: deflection and rotation; cell data: local indicator and
    mean shear magnitude.
    """
    sol = result.final_solution
    ind = result.final_indicators
    shear = result.final_shear
    if sol is None:
        raise ValueError("study holds no solution to export")
    m = sol.mesh
    spaces = sol.spaces

    w_pts = sol.w_coeffs[:m.n_vertices]
    beta_pts = sol.beta_coeffs[:m.n_vertices]

    centroid = np.array([[1.0 / 3.0, 1.0 / 3.0]])
    qc, _ = shear.eval(np.arange(m.n_triangles), centroid)
    qmag = np.linalg.norm(qc[:, 0, :], axis=1)

    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write("platefem study %s k=%d\n" % (result.case, result.k))
        fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write("POINTS %d double\n" % m.n_vertices)
        for x, y in m.vertices:
            fh.write("%.16e %.16e 0.0\n" % (x, y))
        nt = m.n_triangles
        fh.write("CELLS %d %d\n" % (nt, 4 * nt))
        for tri in m.triangles:
            fh.write("3 %d %d %d\n" % tuple(tri))
        fh.write("CELL_TYPES %d\n" % nt)
        fh.write("5\n" * nt)
        fh.write("POINT_DATA %d\n" % m.n_vertices)
        fh.write("SCALARS deflection double 1\nLOOKUP_TABLE default\n")
        for v in w_pts:
            fh.write("%.16e\n" % v)
        fh.write("VECTORS rotation double\n")
        for bx, by in beta_pts:
            fh.write("%.16e %.16e 0.0\n" % (bx, by))
        fh.write("CELL_DATA %d\n" % nt)
        fh.write("SCALARS indicator double 1\nLOOKUP_TABLE default\n")
        for v in ind.eta_K:
            fh.write("%.16e\n" % v)
        fh.write("SCALARS shear_magnitude double 1\nLOOKUP_TABLE default\n")
        for v in qmag:
            fh.write("%.16e\n" % v)


def export(result: StudyResult, path, format: str):
    if format == "csv":
        export_csv(result, path)
    elif format == "vtk":
        export_vtk(result, path)
    else:
        raise ValueError(f"unknown export format {format!r}")
