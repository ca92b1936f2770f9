"""Linear solve, discrete shear recovery and mesh-dependent norms.

The reduced system is symmetric positive definite for admissible
stabilization parameters, so the solver is a sparse factorization with
diagonal pivoting (its pivots double as the positive definiteness
check) with a preconditioned CG fallback.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (MaterialParams, StabilizationParams, StabilizedSystem,
                       element_maps, operator_L)
from .element import edge_rule, reference_basis, triangle_rule
from .fields import (edge_geometry, edge_side_eval, eval_cellwise,
                     eval_scalar, eval_vector, physical_points)
from .mesh import BoundaryLabel, Mesh, uniform_refine
from .space import FeSpacePair, build_spaces, expand_solution

RESIDUAL_TOL = 1e-10
NORM_CHUNK = 4096


class StabilityError(Exception):
    """Factorization produced a non-positive pivot."""


@dataclass(frozen=True)
class Solution:
    """Discrete deflection/rotation pair with the parameters used."""

    spaces: FeSpacePair
    material: MaterialParams
    stab: StabilizationParams
    w_coeffs: np.ndarray        # (n_scalar,)
    beta_coeffs: np.ndarray     # (n_vector, 2)
    residual: float

    @property
    def mesh(self) -> Mesh:
        return self.spaces.mesh


@dataclass(frozen=True)
class ShearField:
    """Per-element polynomial shear, nodal values of degree k."""

    mesh: Mesh
    degree: int
    coeffs: np.ndarray          # (nt, nk, 2)

    def eval(self, tri_ids, ref_pts, want_div=False):
        val, grad = eval_cellwise(self.mesh, self.degree, self.coeffs,
                                  tri_ids, ref_pts, want_grad=want_div)
        if not want_div:
            return val, None
        div = grad[..., 0, 0] + grad[..., 1, 1]
        return val, div


def factorization_pivots(A: sp.spmatrix) -> np.ndarray:
    """Diagonal pivots of a symmetric-mode LU of A.

    With diagonal pivoting all pivots are positive iff A is positive
    definite (up to roundoff).
    """
    lu = spla.splu(sp.csc_matrix(A), diag_pivot_thresh=0.0,
                   permc_spec="MMD_AT_PLUS_A",
                   options=dict(SymmetricMode=True))
    return lu.U.diagonal()


def solve(system: StabilizedSystem) -> Solution:
    """Factorize and solve the reduced system; verifies the residual."""
    A = sp.csc_matrix(system.matrix)
    b = system.rhs
    lu = spla.splu(A, diag_pivot_thresh=0.0, permc_spec="MMD_AT_PLUS_A",
                   options=dict(SymmetricMode=True))
    pivots = lu.U.diagonal()
    bad = np.nonzero(pivots <= 0.0)[0]
    if len(bad):
        raise StabilityError(
            f"non-positive pivot {pivots[bad[0]]:.3e} at reduced index "
            f"{bad[0]}; stabilization parameters violate the stability "
            "bounds")
    u = lu.solve(b)
    anorm = spla.norm(A, np.inf)

    def backward_error(x):
        scale = anorm * np.linalg.norm(x) + np.linalg.norm(b)
        if scale == 0.0:
            return 0.0
        return float(np.linalg.norm(A @ x - b) / scale)

    res = backward_error(u)
    for _ in range(5):
        if res <= RESIDUAL_TOL:
            break
        u = u + lu.solve(b - A @ u)
        res = backward_error(u)
    if res > RESIDUAL_TOL:
        M = spla.LinearOperator(A.shape, lambda x: lu.solve(x))
        u, info = spla.cg(A, b, x0=u, rtol=RESIDUAL_TOL / 10, M=M,
                          maxiter=200)
        res = backward_error(u)
        if res > RESIDUAL_TOL:
            raise StabilityError(
                f"solver did not reach residual tolerance: {res:.3e}")
    full = expand_solution(u, system.spaces)
    ns = system.spaces.n_scalar
    w = full[:ns]
    beta = full[ns:].reshape(-1, 2)
    return Solution(system.spaces, system.material, system.stab, w, beta,
                    float(res))


def recover_shear(sol: Solution) -> ShearField:
    """Elementwise shear from the stabilization residual.

    q_h = (grad w_h - beta_h - alpha h^2 L beta_h) / (alpha h^2), an
    exact polynomial of degree <= k stored by its nodal values.
    """
    spaces = sol.spaces
    m = sol.mesh
    k = spaces.k
    vbasis = reference_basis(k)
    ref_nodes = vbasis.nodes
    tri_ids = np.arange(m.n_triangles)
    _, _, _, _, h = element_maps(m, tri_ids)
    ah2 = sol.stab.alpha * h ** 2

    _, gradw, _ = eval_scalar(m, spaces.scalar, sol.w_coeffs, tri_ids,
                              ref_nodes, want_hess=False)
    bval, _, bhess = eval_vector(m, spaces.vector, sol.beta_coeffs, tri_ids,
                                 ref_nodes, want_hess=True)
    L = operator_L(bhess[:, :, 0], bhess[:, :, 1], sol.material)
    q = (gradw - bval - ah2[:, None, None] * L) / ah2[:, None, None]
    return ShearField(m, k, q)


# ---------------------------------------------------------------------
# Norms
# ---------------------------------------------------------------------

@dataclass(frozen=True)
class ErrorReport:
    triple_norm: float
    norm_2h: float
    seminorm_h: float
    shear_neg_h: float
    h1_deflection: float
    l2_deflection: float
    h1_rotation: float
    l2_rotation: float
    components: dict = field(default_factory=dict)


def _quad_rule_for(k):
    return triangle_rule(min(2 * (k + 1) + 2, 10))


def pair_norms(m: Mesh, k: int, eval_w, eval_beta) -> dict:
    """Squared norm components of a (deflection, rotation) field pair.

    eval_w(tri_ids, ref_pts) -> (w, grad, hess); eval_beta -> (val,
    grad).  Edge jump terms use two-sided evaluation of eval_w.
    """
    rule = _quad_rule_for(k)
    q = rule.points
    wq = rule.weights
    acc = dict(l2_w=0.0, h1s_w=0.0, h2_broken=0.0, l2_b=0.0, h1s_b=0.0,
               kirchhoff=0.0)
    nt = m.n_triangles
    for start in range(0, nt, NORM_CHUNK):
        tri_ids = np.arange(start, min(start + NORM_CHUNK, nt))
        _, _, _, detJ, h = element_maps(m, tri_ids)
        wdet = wq[None, :] * detJ[:, None]
        wv, gw, hw = eval_w(tri_ids, q)
        bv, gb = eval_beta(tri_ids, q)
        acc["l2_w"] += float(np.sum(wdet * wv ** 2))
        acc["h1s_w"] += float(np.sum(wdet * np.sum(gw ** 2, axis=-1)))
        acc["h2_broken"] += float(np.sum(
            wdet * np.sum(hw ** 2, axis=(-2, -1))))
        acc["l2_b"] += float(np.sum(wdet * np.sum(bv ** 2, axis=-1)))
        acc["h1s_b"] += float(np.sum(
            wdet * np.sum(gb ** 2, axis=(-2, -1))))
        acc["kirchhoff"] += float(np.sum(
            (wdet / h[:, None] ** 2) * np.sum((gw - bv) ** 2, axis=-1)))

    erule = edge_rule(min(2 * (k + 1) + 2, 12))
    t = erule.points[:, 0]
    wt = erule.weights

    def grad_on_side(slots):
        def fn(tri_ids, ref):
            _, g, _ = eval_w(tri_ids, ref, )
            return (g,)
        return edge_side_eval(m, slots, t, fn, [(2,)])[0]

    interior = np.nonzero(m.edge_label_idx < 0)[0]
    jump_sq = 0.0
    if len(interior):
        lengths, tvec, normals = edge_geometry(m, interior)
        gA = grad_on_side(m.edge_tris[interior, 0])
        gB = grad_on_side(m.edge_tris[interior, 1])
        dn = np.einsum("eqi,ei->eq", gA - gB, normals)
        # h_E^{-1} int_E jump^2 = h_E^{-1} * h_E * sum_q wt_q jump^2
        jump_sq = float(np.sum(wt[None, :] * dn ** 2))
    clamped = m.boundary_edges(BoundaryLabel.CLAMPED)
    clamp_sq = 0.0
    if len(clamped):
        lengths, tvec, normals = edge_geometry(m, clamped)
        gC = grad_on_side(m.edge_tris[clamped, 0])
        dn = np.einsum("eqi,ei->eq", gC, normals)
        clamp_sq = float(np.sum(wt[None, :] * dn ** 2))

    acc["jump_interior"] = jump_sq
    acc["jump_clamped"] = clamp_sq
    return acc


def norms_from_components(acc: dict) -> dict:
    """Assemble the mesh-dependent norms from squared components."""
    h1_w = np.sqrt(acc["l2_w"] + acc["h1s_w"])
    h1_b = np.sqrt(acc["l2_b"] + acc["h1s_b"])
    norm_2h = np.sqrt(acc["l2_w"] + acc["h1s_w"] + acc["h2_broken"]
                      + acc["jump_interior"] + acc["jump_clamped"])
    semi = np.sqrt(acc["kirchhoff"])
    return dict(h1_w=float(h1_w), h1_b=float(h1_b),
                l2_w=float(np.sqrt(acc["l2_w"])),
                l2_b=float(np.sqrt(acc["l2_b"])),
                norm_2h=float(norm_2h), seminorm_h=float(semi),
                triple=float(h1_b + norm_2h + semi))


def _discrete_pair_evals(spaces: FeSpacePair, w_coeffs, beta_coeffs):
    m = spaces.mesh

    def ew(tri_ids, ref):
        return eval_scalar(m, spaces.scalar, w_coeffs, tri_ids, ref)

    def eb(tri_ids, ref):
        v, g, _ = eval_vector(m, spaces.vector, beta_coeffs, tri_ids, ref)
        return v, g

    return ew, eb


def triple_norm(w_coeffs, beta_coeffs, spaces: FeSpacePair) -> float:
    """Mesh-dependent triple norm of a discrete field pair."""
    ew, eb = _discrete_pair_evals(spaces, w_coeffs, beta_coeffs)
    acc = pair_norms(spaces.mesh, spaces.k, ew, eb)
    return norms_from_components(acc)["triple"]


def shear_neg_norm(dq_eval, m: Mesh, k: int) -> float:
    """Discrete negative norm (sum_K h_K^2 ||r||_{0,K}^2)^(1/2).

    dq_eval(tri_ids, ref_pts) -> (ne, nq, 2) field values.
    """
    rule = _quad_rule_for(k)
    q = rule.points
    wq = rule.weights
    total = 0.0
    nt = m.n_triangles
    for start in range(0, nt, NORM_CHUNK):
        tri_ids = np.arange(start, min(start + NORM_CHUNK, nt))
        _, _, _, detJ, h = element_maps(m, tri_ids)
        vals = dq_eval(tri_ids, q)
        wdet = wq[None, :] * detJ[:, None]
        total += float(np.sum(
            h[:, None] ** 2 * wdet * np.sum(vals ** 2, axis=-1)))
    return float(np.sqrt(total))


def error_vs_exact(sol: Solution, exact, shear: ShearField | None = None
                   ) -> ErrorReport:
    """All error norms of the discrete solution against exact callbacks.

    `exact` provides w(x, y), grad(x, y), hess(x, y) and q(x, y); the
    exact rotation is the deflection gradient.
    """
    spaces = sol.spaces
    m = sol.mesh

    def ew(tri_ids, ref):
        w, g, h = eval_scalar(m, spaces.scalar, sol.w_coeffs, tri_ids, ref)
        xy = physical_points(m, tri_ids, ref)
        x, y = xy[..., 0], xy[..., 1]
        return (w - exact.w(x, y), g - exact.grad(x, y),
                h - exact.hess(x, y))

    def eb(tri_ids, ref):
        v, g, _ = eval_vector(m, spaces.vector, sol.beta_coeffs, tri_ids, ref)
        xy = physical_points(m, tri_ids, ref)
        x, y = xy[..., 0], xy[..., 1]
        return v - exact.grad(x, y), g - exact.hess(x, y)

    acc = pair_norms(m, spaces.k, ew, eb)
    norms = norms_from_components(acc)

    if shear is None:
        shear = recover_shear(sol)

    def dq(tri_ids, ref):
        val, _ = shear.eval(tri_ids, ref)
        xy = physical_points(m, tri_ids, ref)
        return val - exact.q(xy[..., 0], xy[..., 1])

    qerr = shear_neg_norm(dq, m, spaces.k)
    return ErrorReport(
        triple_norm=norms["triple"], norm_2h=norms["norm_2h"],
        seminorm_h=norms["seminorm_h"], shear_neg_h=qerr,
        h1_deflection=norms["h1_w"], l2_deflection=norms["l2_w"],
        h1_rotation=norms["h1_b"], l2_rotation=norms["l2_b"],
        components=acc)


# ---------------------------------------------------------------------
# Transfer to the midpoint refinement and reference-based errors
# ---------------------------------------------------------------------

def _check_nested(coarse: Mesh, fine: Mesh):
    if fine.parent_triangles is None or \
            fine.n_triangles != 4 * coarse.n_triangles:
        raise ValueError("fine mesh is not the midpoint refinement of "
                         "the coarse mesh")


def _transfer_nodal(coarse: Mesh, nodes_c, coeffs, fine: Mesh, nodes_f,
                    ncomp):
    """Exact transfer of a continuous piecewise polynomial to the nested
    fine space by nodal interpolation."""
    basis_c = reference_basis(nodes_c.degree)
    basis_f = reference_basis(nodes_f.degree)
    ref_f = basis_f.nodes                            # (nd_f, 2)
    parents = fine.parent_triangles
    p0c, Jc, invJc, _, _ = element_maps(coarse)

    out = np.empty((nodes_f.n_nodes,) + ((ncomp,) if ncomp > 1 else ()))
    nt = fine.n_triangles
    for start in range(0, nt, NORM_CHUNK):
        tri_ids = np.arange(start, min(start + NORM_CHUNK, nt))
        par = parents[tri_ids]
        xy = physical_points(fine, tri_ids, ref_f)   # (ne, nd_f, 2)
        rel = xy - p0c[par][:, None, :]
        ref_c = np.einsum("eij,edj->edi", invJc[par], rel)
        tab = basis_c.derivative_tab(ref_c.reshape(-1, 2), 0, 0)
        tab = tab.reshape(len(tri_ids), len(ref_f), basis_c.ndof)
        c = coeffs[nodes_c.elem_nodes[par]]          # (ne, nd_c[, ncomp])
        if ncomp > 1:
            vals = np.einsum("edj,ejc->edc", tab, c)
        else:
            vals = np.einsum("edj,ej->ed", tab, c)
        out[nodes_f.elem_nodes[tri_ids]] = vals
    return out


def transfer_solution(sol: Solution, fine_spaces: FeSpacePair) -> Solution:
    """Represent a coarse solution exactly in the nested fine space."""
    coarse = sol.mesh
    fine = fine_spaces.mesh
    _check_nested(coarse, fine)
    w = _transfer_nodal(coarse, sol.spaces.scalar, sol.w_coeffs, fine,
                        fine_spaces.scalar, 1)
    b = _transfer_nodal(coarse, sol.spaces.vector, sol.beta_coeffs, fine,
                        fine_spaces.vector, 2)
    return Solution(fine_spaces, sol.material, sol.stab, w, b, sol.residual)


def transfer_shear(shear: ShearField, coarse: Mesh, fine: Mesh) -> ShearField:
    """Restrict the coarse per-element shear polynomials to fine cells."""
    _check_nested(coarse, fine)
    basis = reference_basis(shear.degree)
    ref = basis.nodes
    parents = fine.parent_triangles
    p0c, _, invJc, _, _ = element_maps(coarse)
    tri_ids = np.arange(fine.n_triangles)
    par = parents[tri_ids]
    xy = physical_points(fine, tri_ids, ref)
    rel = xy - p0c[par][:, None, :]
    ref_c = np.einsum("eij,edj->edi", invJc[par], rel)
    tab = basis.derivative_tab(ref_c.reshape(-1, 2), 0, 0)
    tab = tab.reshape(len(tri_ids), len(ref), basis.ndof)
    vals = np.einsum("edj,ejc->edc", tab, shear.coeffs[par])
    return ShearField(fine, shear.degree, vals)


def error_vs_reference(sol_h: Solution, sol_h2: Solution) -> ErrorReport:
    """Reference-based error: the triple norm (on the fine mesh) of the
    difference between the fine solution and the transferred coarse one."""
    fine_spaces = sol_h2.spaces
    moved = transfer_solution(sol_h, fine_spaces)
    dw = sol_h2.w_coeffs - moved.w_coeffs
    db = sol_h2.beta_coeffs - moved.beta_coeffs
    ew, eb = _discrete_pair_evals(fine_spaces, dw, db)
    acc = pair_norms(fine_spaces.mesh, fine_spaces.k, ew, eb)
    norms = norms_from_components(acc)

    q_f = recover_shear(sol_h2)
    q_c = transfer_shear(recover_shear(sol_h), sol_h.mesh, sol_h2.mesh)

    def dq(tri_ids, ref):
        vf, _ = q_f.eval(tri_ids, ref)
        vc, _ = q_c.eval(tri_ids, ref)
        return vf - vc

    qerr = shear_neg_norm(dq, fine_spaces.mesh, fine_spaces.k)
    return ErrorReport(
        triple_norm=norms["triple"], norm_2h=norms["norm_2h"],
        seminorm_h=norms["seminorm_h"], shear_neg_h=qerr,
        h1_deflection=norms["h1_w"], l2_deflection=norms["l2_w"],
        h1_rotation=norms["h1_b"], l2_rotation=norms["l2_b"],
        components=acc)


def refine_with_spaces(m: Mesh, k: int):
    """Midpoint refinement plus its FE space pair (for h/2 references)."""
    fine = uniform_refine(m)
    return fine, build_spaces(fine, k)
