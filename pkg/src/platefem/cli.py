"""Command line interface.

Subcommands: solve, study, adapt, estimate-constants.  Exit codes:
0 success, 2 acceptance-check failure in study mode, 1 on error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .assembly import (MaterialParams, StabilizationParams, assemble,
                       auto_stabilization, estimate_inverse_constants)
from .cases import CASES
from .estimator import adaptive_loop, compute_indicators
from .mesh import load_mesh, mesh_stats
from .solve_post import recover_shear, solve
from .space import build_spaces
from .study import StudyResult, export, run_study


def _apply_thread_env():
    n = os.environ.get("PLATEFEM_THREADS")
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ.setdefault(var, n)


def _add_common(p):
    p.add_argument("--mesh", help="path to an ASCII mesh file")
    p.add_argument("--case", choices=sorted(CASES),
                   help="built-in benchmark case")
    p.add_argument("--k", type=int, default=1,
                   help="rotation polynomial degree (deflection is k+1)")
    p.add_argument("--nu", type=float, default=0.3, help="Poisson ratio")
    p.add_argument("--alpha", type=float, default=None,
                   help="interior stabilization weight (default: auto)")
    p.add_argument("--gamma", default="auto",
                   help="free-edge stabilization weight or 'auto'")
    p.add_argument("--no-dh", action="store_true",
                   help="drop the free-boundary consistency terms")
    p.add_argument("--deterministic", action="store_true",
                   help="sequential deterministic accumulation (default "
                        "behavior; flag kept for reproducibility scripts)")
    p.add_argument("--out", default=None, help="output file path")
    p.add_argument("--format", choices=("csv", "vtk"), default="csv")


def _problem_from_args(args):
    if args.case:
        factory = CASES[args.case]
        try:
            case = factory(nu=args.nu)
        except TypeError:
            case = factory()
        return case
    if args.mesh:
        mesh = load_mesh(args.mesh)
        from .cases import ProblemCase
        return ProblemCase(
            name=os.path.basename(args.mesh), base_mesh=mesh,
            f=lambda x, y: np.ones_like(np.asarray(x, dtype=float)),
            material=MaterialParams(args.nu))
    raise SystemExit("one of --case or --mesh is required")


def _stab_from_args(args, mesh, spaces, mat):
    auto = auto_stabilization(mesh, spaces, mat)
    alpha = auto.alpha if args.alpha is None else args.alpha
    gamma = auto.gamma if args.gamma == "auto" else float(args.gamma)
    mode = "auto" if (args.alpha is None and args.gamma == "auto") \
        else "manual"
    return StabilizationParams(alpha, gamma, mode)


def cmd_solve(args):
    case = _problem_from_args(args)
    mesh = case.base_mesh
    spaces = build_spaces(mesh, args.k)
    stab = _stab_from_args(args, mesh, spaces, case.material)
    system = assemble(mesh, spaces, case.material, stab, case.f,
                      with_free_edge_terms=not args.no_dh)
    sol = solve(system)
    shear = recover_shear(sol)
    ind = compute_indicators(sol, shear, case.f)
    h_max, h_min, n_tri, _ = mesh_stats(mesh)
    print(f"case={case.name} k={args.k} n_tri={n_tri} "
          f"n_dof={spaces.n_free} h_max={h_max:.4g}")
    print(f"alpha={stab.alpha:.6g} gamma={stab.gamma:.6g} "
          f"residual={sol.residual:.3e} eta={ind.eta:.6e}")
    if args.out:
        result = StudyResult(case.name, args.k, not args.no_dh, "none")
        result.rows.append(dict(
            level=0, h_max=h_max, n_dof=spaces.n_free,
            triple_norm=float("nan"), norm_2h=float("nan"),
            seminorm_h=float("nan"), shear_neg_h=float("nan"),
            h1_deflection=float("nan"), l2_deflection=float("nan"),
            eta=ind.eta))
        result.final_solution = sol
        result.final_indicators = ind
        result.final_shear = shear
        export(result, args.out, args.format)
    return 0


def cmd_study(args):
    case = _problem_from_args(args)
    spaces = build_spaces(case.base_mesh, args.k)
    stab = _stab_from_args(args, case.base_mesh, spaces, case.material)
    result = run_study(case, args.levels, args.k,
                       with_free_edge_terms=not args.no_dh, stab=stab)
    print("level  h_max        n_dof     triple_norm    eta")
    for r in result.rows:
        print(f"{r['level']:5d}  {r['h_max']:.5e}  {r['n_dof']:8d}  "
              f"{r['triple_norm']:.6e}  {r['eta']:.6e}")
    print("rates: " + "  ".join(
        f"{k}={v:.3f}" for k, v in result.rates.items()))
    if args.out:
        export(result, args.out, args.format)
    if args.min_rate is not None:
        if not result.rates["triple_norm"] >= args.min_rate:
            print(f"acceptance check failed: triple-norm rate "
                  f"{result.rates['triple_norm']:.3f} < {args.min_rate}",
                  file=sys.stderr)
            return 2
    return 0


def cmd_adapt(args):
    case = _problem_from_args(args)
    steps = adaptive_loop(case.base_mesh, args.k, case.f, case.material,
                          theta=args.theta, max_iters=args.iters,
                          dof_budget=args.dof_budget)
    print("iter   n_tri    n_dof    eta")
    for i, st in enumerate(steps):
        print(f"{i:4d}  {st.mesh.n_triangles:6d}  {st.n_free_dofs:7d}  "
              f"{st.indicators.eta:.6e}")
    if args.out:
        last = steps[-1]
        result = StudyResult(case.name, args.k, True, "none")
        result.rows.append(dict(
            level=len(steps) - 1,
            h_max=float(last.mesh.element_diameters().max()),
            n_dof=last.n_free_dofs, triple_norm=float("nan"),
            norm_2h=float("nan"), seminorm_h=float("nan"),
            shear_neg_h=float("nan"), h1_deflection=float("nan"),
            l2_deflection=float("nan"), eta=last.indicators.eta))
        result.final_solution = last.solution
        result.final_indicators = last.indicators
        result.final_shear = recover_shear(last.solution)
        export(result, args.out, args.format)
    return 0


def cmd_estimate_constants(args):
    case = _problem_from_args(args)
    mesh = case.base_mesh
    spaces = build_spaces(mesh, args.k)
    C_I, C_Ip = estimate_inverse_constants(mesh, spaces, case.material)
    print(f"C_I_est={C_I:.6g}  C_I'_est={C_Ip:.6g}")
    alpha = "0.1 (default, k=1)" if np.isinf(C_I) else f"{C_I / 8:.6g}"
    gamma = "1 (no free edges)" if np.isinf(C_Ip) else f"{4 / C_Ip:.6g}"
    print(f"auto alpha={alpha}  auto gamma={gamma}")
    return 0


def main(argv=None):
    _apply_thread_env()
    parser = argparse.ArgumentParser(
        prog="platefem",
        description="Stabilized Kirchhoff plate bending solver")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="single solve with indicator report")
    _add_common(p)
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("study", help="uniform-refinement convergence study")
    _add_common(p)
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--min-rate", type=float, default=None,
                   help="fail (exit 2) if the triple-norm rate is lower")
    p.set_defaults(fn=cmd_study)

    p = sub.add_parser("adapt", help="adaptive refinement loop")
    _add_common(p)
    p.add_argument("--theta", type=float, default=0.5)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--dof-budget", type=int, default=None)
    p.set_defaults(fn=cmd_adapt)

    p = sub.add_parser("estimate-constants",
                       help="inverse-inequality constant estimates")
    _add_common(p)
    p.set_defaults(fn=cmd_estimate_constants)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except SystemExit:
        raise
    except Exception as exc:  # CLI boundary: report and signal failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
