"""Vectorized evaluation of discrete fields on elements and edges.

Used by the norm evaluators and the error estimator.  All evaluators
take element ids plus reference points and return per-element,
per-point arrays; edge-side evaluation groups edges by (local edge,
orientation) so the two sides of a shared edge are sampled at identical
physical points.
"""

from __future__ import annotations

import numpy as np

from .assembly import edge_ref_points, element_maps, physical_gradients, \
    physical_hessians
from .element import reference_basis
from .mesh import Mesh
from .space import LagrangeNodes


def physical_points(m: Mesh, tri_ids, ref_pts):
    """(ne, nq, 2) physical coordinates of reference points."""
    p0, J, _, _, _ = element_maps(m, tri_ids)
    return p0[:, None, :] + np.einsum("eij,qj->eqi", J, ref_pts)


def eval_scalar(m: Mesh, nodes: LagrangeNodes, coeffs, tri_ids, ref_pts,
                want_hess=True):
    """Evaluate a continuous scalar field: values, gradients, hessians."""
    basis = reference_basis(nodes.degree)
    _, _, invJ, _, _ = element_maps(m, tri_ids)
    c = coeffs[nodes.elem_nodes[tri_ids]]          # (ne, nd)
    vals_t = basis.derivative_tab(ref_pts, 0, 0)   # (nq, nd)
    g_t = np.stack([basis.derivative_tab(ref_pts, 1, 0),
                    basis.derivative_tab(ref_pts, 0, 1)], axis=-1)
    w = np.einsum("ed,qd->eq", c, vals_t)
    grad = np.einsum("ed,eqdi->eqi", c, physical_gradients(g_t, invJ))
    hess = None
    if want_hess:
        _, _, h_t = basis.eval(ref_pts)
        hess = np.einsum("ed,eqdab->eqab", c, physical_hessians(h_t, invJ))
    return w, grad, hess


def eval_vector(m: Mesh, nodes: LagrangeNodes, coeffs2, tri_ids, ref_pts,
                want_hess=False):
    """Evaluate a continuous vector field.

    coeffs2: (n_nodes, 2).  Returns values (ne, nq, 2), gradients
    (ne, nq, 2, 2) with grad[a, b] = d beta_a / d x_b, and optionally
    per-component hessians (ne, nq, 2, 2, 2).
    """
    basis = reference_basis(nodes.degree)
    _, _, invJ, _, _ = element_maps(m, tri_ids)
    c = coeffs2[nodes.elem_nodes[tri_ids]]         # (ne, nd, 2)
    vals_t = basis.derivative_tab(ref_pts, 0, 0)
    g_t = np.stack([basis.derivative_tab(ref_pts, 1, 0),
                    basis.derivative_tab(ref_pts, 0, 1)], axis=-1)
    val = np.einsum("edc,qd->eqc", c, vals_t)
    grad = np.einsum("edc,eqdb->eqcb", c, physical_gradients(g_t, invJ))
    hess = None
    if want_hess:
        _, _, h_t = basis.eval(ref_pts)
        hess = np.einsum("edc,eqdab->eqcab", c,
                         physical_hessians(h_t, invJ))
    return val, grad, hess


def eval_cellwise(m: Mesh, nodes_degree: int, cell_coeffs, tri_ids, ref_pts,
                  want_grad=False):
    """Evaluate a discontinuous per-element nodal field.

    cell_coeffs: (nt, nd, ncomp) values at the reference Lagrange nodes
    of `nodes_degree` per element.
    """
    basis = reference_basis(nodes_degree)
    _, _, invJ, _, _ = element_maps(m, tri_ids)
    c = cell_coeffs[tri_ids]                       # (ne, nd, ncomp)
    vals_t = basis.derivative_tab(ref_pts, 0, 0)
    val = np.einsum("edc,qd->eqc", c, vals_t)
    if not want_grad:
        return val, None
    g_t = np.stack([basis.derivative_tab(ref_pts, 1, 0),
                    basis.derivative_tab(ref_pts, 0, 1)], axis=-1)
    grad = np.einsum("edc,eqdb->eqcb", c, physical_gradients(g_t, invJ))
    return val, grad


def edge_side_eval(m: Mesh, slots, t, eval_fn, shapes):
    """Evaluate element fields from the side encoded by `slots`.

    slots: (nE,) array of 3 * tri + local_edge; t: (nq,) edge parameters
    along the global low-to-high vertex direction of each edge.
    eval_fn(tri_ids, ref_pts) must return a tuple of arrays with leading
    dims (ne, nq); `shapes` gives their trailing shapes for allocation.
    """
    slots = np.asarray(slots)
    tris = slots // 3
    les = slots % 3
    signs = np.empty(len(slots), dtype=np.int64)
    for i, (tr, le) in enumerate(zip(tris, les)):
        signs[i] = m.tri_edge_sign[tr, le]
    nq = len(t)
    outs = [np.empty((len(slots), nq) + tuple(sh)) for sh in shapes]
    for le in range(3):
        for sign in (1, -1):
            mask = (les == le) & (signs == sign)
            if not np.any(mask):
                continue
            tpar = t if sign > 0 else 1.0 - t
            ref = edge_ref_points(le, tpar)
            res = eval_fn(tris[mask], ref)
            for o, r in zip(outs, res):
                o[mask] = r
    return outs


def edge_geometry(m: Mesh, edge_ids):
    """Lengths, low-to-high unit tangents and side-A outward normals."""
    edge_ids = np.asarray(edge_ids)
    v = m.vertices
    a = m.edges[edge_ids, 0]
    b = m.edges[edge_ids, 1]
    tvec = v[b] - v[a]
    lengths = np.linalg.norm(tvec, axis=1)
    tvec = tvec / lengths[:, None]
    normals = np.empty_like(tvec)
    for i, e in enumerate(edge_ids):
        slot = int(m.edge_tris[e, 0])
        n, _ = m.outward_normal(slot // 3, slot % 3)
        normals[i] = n
    return lengths, tvec, normals
