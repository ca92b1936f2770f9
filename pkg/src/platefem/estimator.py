"""Residual-type a-posteriori error indicators and the adaptive loop.

Per element: the interior residual (load plus shear divergence, and the
Kirchhoff residual); per interior edge: jumps of the normal shear and
of the moment traction; per simply supported edge: the normal moment;
per free edge: the normal moment and the effective shear residual.
Interior edge contributions are split evenly between the two adjacent
elements.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import (MaterialParams, StabilizationParams, assemble,
                       auto_stabilization, element_maps)
from .element import edge_rule, triangle_rule
from .fields import (edge_side_eval, eval_scalar, eval_vector,
                     physical_points)
from .mesh import BoundaryLabel, Mesh, bisect_marked
from .solve_post import ShearField, Solution, recover_shear, solve
from .space import build_spaces

NORM_CHUNK = 4096


@dataclass(frozen=True)
class IndicatorSet:
    """Per-element and per-edge indicator components, all squared."""

    mesh: Mesh
    eta_tilde_sq: np.ndarray      # (nt,) interior residual
    edge_ids: np.ndarray          # interior edges
    eta_edge_sq: np.ndarray       # matching edge_ids
    s_edge_ids: np.ndarray
    eta_s_sq: np.ndarray
    f_edge_ids: np.ndarray
    eta_f_sq: np.ndarray
    eta_K_sq: np.ndarray          # (nt,) assembled local indicator squared
    eta: float                    # global indicator

    @property
    def eta_K(self):
        return np.sqrt(self.eta_K_sq)


def _slot_frames(m: Mesh, slots):
    """Outward normal and ccw tangent of each (triangle, local edge) slot."""
    slots = np.asarray(slots)
    tris = slots // 3
    les = slots % 3
    a = m.vertices[m.triangles[tris, les]]
    b = m.vertices[m.triangles[tris, (les + 1) % 3]]
    t = b - a
    t = t / np.linalg.norm(t, axis=1)[:, None]
    n = np.stack([t[:, 1], -t[:, 0]], axis=1)
    return n, t


def compute_indicators(sol: Solution, shear: ShearField, f, m: Mesh | None
                       = None, spaces=None) -> IndicatorSet:
    """Evaluate the full indicator family for a discrete solution."""
    spaces = sol.spaces if spaces is None else spaces
    m = sol.mesh if m is None else m
    k = spaces.k
    mat = sol.material

    rule = triangle_rule(min(2 * (k + 1) + 2, 10))
    q = rule.points
    wq = rule.weights
    nt = m.n_triangles
    eta_tilde = np.zeros(nt)
    for start in range(0, nt, NORM_CHUNK):
        tri_ids = np.arange(start, min(start + NORM_CHUNK, nt))
        _, _, _, detJ, h = element_maps(m, tri_ids)
        wdet = wq[None, :] * detJ[:, None]
        qval, qdiv = shear.eval(tri_ids, q, want_div=True)
        xy = physical_points(m, tri_ids, q)
        fv = np.asarray(f(xy[..., 0], xy[..., 1]), dtype=float)
        fv = np.broadcast_to(fv, qdiv.shape)
        _, gw, _ = eval_scalar(m, spaces.scalar, sol.w_coeffs, tri_ids, q,
                               want_hess=False)
        bv, _, _ = eval_vector(m, spaces.vector, sol.beta_coeffs, tri_ids, q)
        eta_tilde[tri_ids] = (
            h ** 4 * np.sum(wdet * (fv + qdiv) ** 2, axis=1)
            + h ** (-2.0) * np.sum(
                wdet * np.sum((gw - bv) ** 2, axis=-1), axis=1))

    erule = edge_rule(min(2 * (k + 1) + 2, 12))
    t = erule.points[:, 0]
    wt = erule.weights
    nu = mat.nu

    def side_fields(slots):
        """Shear values, moment tensor and moment derivative per side."""

        def fn(tri_ids, ref):
            qv, _ = shear.eval(tri_ids, ref)
            bv, bg, bh = eval_vector(m, spaces.vector, sol.beta_coeffs,
                                     tri_ids, ref, want_hess=True)
            eps = 0.5 * (bg + np.swapaxes(bg, -1, -2))
            div = bg[..., 0, 0] + bg[..., 1, 1]
            M = (eps + nu / (1 - nu) * div[..., None, None] * np.eye(2)) / 6.0
            # dM[a, b, c] = d M_ab / d x_c from component hessians.
            hx = bh[:, :, 0]
            hy = bh[:, :, 1]
            deps = np.empty(bh.shape[:2] + (2, 2, 2))
            deps[..., 0, 0, :] = hx[..., 0, :]
            deps[..., 1, 1, :] = hy[..., 1, :]
            mixed = 0.5 * (hx[..., 1, :] + hy[..., 0, :])
            deps[..., 0, 1, :] = mixed
            deps[..., 1, 0, :] = mixed
            ddiv = hx[..., 0, :] + hy[..., 1, :]
            dM = (deps + nu / (1 - nu)
                  * ddiv[..., None, None, :] * np.eye(2)[:, :, None]) / 6.0
            return qv, M, dM

        return edge_side_eval(m, slots, t, fn, [(2,), (2, 2), (2, 2, 2)])

    # Interior edges: jumps of q.n and M(beta) n.
    interior = np.nonzero(m.edge_label_idx < 0)[0]
    eta_edge = np.zeros(len(interior))
    if len(interior):
        slotsA = m.edge_tris[interior, 0]
        slotsB = m.edge_tris[interior, 1]
        qA, MA, _ = side_fields(slotsA)
        qB, MB, _ = side_fields(slotsB)
        nA, _ = _slot_frames(m, slotsA)
        nB, _ = _slot_frames(m, slotsB)
        lengths = m.edge_lengths()[interior]
        jq = np.einsum("eqi,ei->eq", qA, nA) + np.einsum("eqi,ei->eq", qB, nB)
        jM = (np.einsum("eqab,eb->eqa", MA, nA)
              + np.einsum("eqab,eb->eqa", MB, nB))
        int_q = lengths * np.einsum("q,eq->e", wt, jq ** 2)
        int_M = lengths * np.einsum("q,eqa->e", wt, jM ** 2)
        eta_edge = lengths ** 3 * int_q + lengths * int_M

    # Simply supported edges: normal moment.
    s_edges = m.boundary_edges(BoundaryLabel.SIMPLY_SUPPORTED)
    eta_s = np.zeros(len(s_edges))
    if len(s_edges):
        slots = m.edge_tris[s_edges, 0]
        _, M, _ = side_fields(slots)
        n, _ = _slot_frames(m, slots)
        lengths = m.edge_lengths()[s_edges]
        mnn = np.einsum("ea,eqab,eb->eq", n, M, n)
        eta_s = lengths ** 2 * np.einsum("q,eq->e", wt, mnn ** 2)

    # Free edges: normal moment and effective shear residual.
    f_edges = m.boundary_edges(BoundaryLabel.FREE)
    eta_f = np.zeros(len(f_edges))
    if len(f_edges):
        slots = m.edge_tris[f_edges, 0]
        qv, M, dM = side_fields(slots)
        n, s = _slot_frames(m, slots)
        lengths = m.edge_lengths()[f_edges]
        mnn = np.einsum("ea,eqab,eb->eq", n, M, n)
        # d/ds m_ns = s_a n_b s_c dM[a,b,c] (exact directional derivative).
        dmns = np.einsum("ea,eqabc,eb,ec->eq", s, dM, n, s)
        qn = np.einsum("eqi,ei->eq", qv, n)
        eta_f = (lengths ** 2 * np.einsum("q,eq->e", wt, mnn ** 2)
                 + lengths ** 4 * np.einsum("q,eq->e", wt, (dmns - qn) ** 2))

    # Assemble local indicators.
    eta_K_sq = eta_tilde.copy()
    for i, e in enumerate(interior):
        for slot in m.edge_tris[e]:
            eta_K_sq[int(slot) // 3] += 0.5 * eta_edge[i]
    for i, e in enumerate(s_edges):
        eta_K_sq[int(m.edge_tris[e, 0]) // 3] += eta_s[i]
    for i, e in enumerate(f_edges):
        eta_K_sq[int(m.edge_tris[e, 0]) // 3] += eta_f[i]

    return IndicatorSet(
        mesh=m, eta_tilde_sq=eta_tilde,
        edge_ids=interior, eta_edge_sq=eta_edge,
        s_edge_ids=np.asarray(s_edges), eta_s_sq=eta_s,
        f_edge_ids=np.asarray(f_edges), eta_f_sq=eta_f,
        eta_K_sq=eta_K_sq, eta=float(np.sqrt(eta_K_sq.sum())))


def dorfler_mark(ind: IndicatorSet, theta: float):
    """Greedy bulk marking: the smallest set (descending local
    indicator, ties by lower id) carrying a theta fraction of the
    squared global indicator."""
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must be in (0, 1)")
    eta_sq = ind.eta_K_sq
    order = np.argsort(-eta_sq, kind="stable")
    total = eta_sq.sum()
    if total == 0.0:
        return set()
    csum = np.cumsum(eta_sq[order])
    nmark = int(np.searchsorted(csum, theta * total - 1e-15 * total) + 1)
    marked = order[:nmark]
    return set(int(i) for i in marked if eta_sq[i] > 0.0)


@dataclass(frozen=True)
class AdaptiveStep:
    mesh: Mesh
    solution: Solution
    indicators: IndicatorSet
    n_free_dofs: int


def adaptive_loop(base_mesh: Mesh, k: int, f, mat: MaterialParams,
                  theta: float = 0.5, max_iters: int = 10,
                  dof_budget: int | None = None,
                  stab: StabilizationParams | None = None):
    """Solve-estimate-mark-bisect iteration; returns one record per
    solved mesh (max_iters refinements means max_iters + 1 solves)."""
    mesh = base_mesh
    steps = []
    for it in range(max_iters + 1):
        spaces = build_spaces(mesh, k)
        if stab is None:
            stab = auto_stabilization(mesh, spaces, mat)
        system = assemble(mesh, spaces, mat, stab, f)
        sol = solve(system)
        shear = recover_shear(sol)
        ind = compute_indicators(sol, shear, f)
        steps.append(AdaptiveStep(mesh, sol, ind, spaces.n_free))
        if it == max_iters:
            break
        if dof_budget is not None and spaces.n_free >= dof_budget:
            break
        marked = dorfler_mark(ind, theta)
        if not marked:
            break
        mesh = bisect_marked(mesh, marked)
    return steps
