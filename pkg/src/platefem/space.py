"""Global DOF management for the deflection/rotation pair and the
homogeneous essential boundary constraints.

The deflection space is continuous piecewise P_{k+1}, the rotation
space is continuous piecewise [P_k]^2.  Constraints follow the boundary
labels: deflection vanishes on clamped and simply supported parts;
rotation vanishes on clamped parts and has zero tangential component on
simply supported parts.  Tangential constraints are realized by a nodal
frame rotation, which keeps the reduced system symmetric positive
definite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .element import reference_basis
from .mesh import BoundaryLabel, Mesh


class SpaceError(Exception):
    pass


@dataclass(frozen=True)
class LagrangeNodes:
    """Global scalar Lagrange node enumeration for one polynomial degree.

    Nodes are ordered: mesh vertices, then (degree-1) interior nodes per
    mesh edge (along the low-to-high vertex direction), then interior
    nodes per triangle.
    """

    degree: int
    n_nodes: int
    elem_nodes: np.ndarray   # (nt, ndof_local) global node ids
    coords: np.ndarray       # (n_nodes, 2)
    edge_nodes: np.ndarray   # (n_mesh_edges, degree+1) node ids along edge


def build_lagrange_nodes(m: Mesh, degree: int) -> LagrangeNodes:
    d = degree
    basis = reference_basis(d)
    nloc = basis.ndof
    nv, ne, nt = m.n_vertices, m.n_edges, m.n_triangles
    n_edge = d - 1
    n_int = nloc - 3 - 3 * n_edge
    n_nodes = nv + ne * n_edge + nt * n_int

    elem_nodes = np.empty((nt, nloc), dtype=np.int64)
    elem_nodes[:, :3] = m.triangles
    for le in range(3):
        eids = m.tri_edges[:, le]
        sign = m.tri_edge_sign[:, le]
        for j in range(n_edge):
            # Node j counts from the element's first local vertex of the
            # edge; global ordering runs low-id -> high-id vertex.
            jg = np.where(sign > 0, j, n_edge - 1 - j)
            elem_nodes[:, 3 + le * n_edge + j] = nv + eids * n_edge + jg
    for j in range(n_int):
        elem_nodes[:, 3 + 3 * n_edge + j] = nv + ne * n_edge + \
            np.arange(nt) * n_int + j

    coords = np.empty((n_nodes, 2))
    coords[:nv] = m.vertices
    if n_edge > 0:
        va = m.vertices[m.edges[:, 0]]
        vb = m.vertices[m.edges[:, 1]]
        for j in range(n_edge):
            t = (j + 1) / d
            coords[nv + np.arange(ne) * n_edge + j] = (1 - t) * va + t * vb
    if n_int > 0:
        ref_int = basis.nodes[3 + 3 * n_edge:]
        p0 = m.vertices[m.triangles[:, 0]]
        p1 = m.vertices[m.triangles[:, 1]]
        p2 = m.vertices[m.triangles[:, 2]]
        for j in range(n_int):
            x, y = ref_int[j]
            coords[nv + ne * n_edge + np.arange(nt) * n_int + j] = (
                (1 - x - y) * p0 + x * p1 + y * p2)

    edge_nodes = np.empty((ne, d + 1), dtype=np.int64)
    edge_nodes[:, 0] = m.edges[:, 0]
    edge_nodes[:, -1] = m.edges[:, 1]
    for j in range(n_edge):
        edge_nodes[:, 1 + j] = nv + np.arange(ne) * n_edge + j

    return LagrangeNodes(d, n_nodes, elem_nodes, coords, edge_nodes)


# Constraint kinds per node.
FREEFORM = 0
ZERO = 1
TANGENTIAL_ZERO = 2


@dataclass(frozen=True)
class FeSpacePair:
    """DOF layout for the deflection (degree k+1) / rotation (degree k) pair.

    The full DOF vector is [scalar nodes | vector nodes interleaved
    (x0, y0, x1, y1, ...)].  `reduction` maps full DOFs to free DOFs:
    zero-constrained DOFs are dropped, tangentially constrained rotation
    nodes keep a single free DOF along the boundary normal.
    """

    mesh: Mesh
    k: int
    scalar: LagrangeNodes
    vector: LagrangeNodes
    scalar_constraint: np.ndarray       # (n_scalar,) in {FREEFORM, ZERO}
    vector_constraint: np.ndarray       # (n_vector,) constraint kind
    vector_free_dir: np.ndarray         # (n_vector, 2) normal for tangential
    reduction: sp.csr_matrix            # (n_full, n_free)

    @property
    def n_scalar(self):
        return self.scalar.n_nodes

    @property
    def n_vector(self):
        return self.vector.n_nodes

    @property
    def n_full(self):
        return self.n_scalar + 2 * self.n_vector

    @property
    def n_free(self):
        return self.reduction.shape[1]

    def element_dofs(self, tri_ids=None):
        """(nt, nloc) full-system DOF ids: scalar locals then vector
        locals interleaved (node0_x, node0_y, ...)."""
        sc = self.scalar.elem_nodes
        vc = self.vector.elem_nodes
        if tri_ids is not None:
            sc = sc[tri_ids]
            vc = vc[tri_ids]
        ns = self.n_scalar
        vec = np.empty((vc.shape[0], 2 * vc.shape[1]), dtype=np.int64)
        vec[:, 0::2] = ns + 2 * vc
        vec[:, 1::2] = ns + 2 * vc + 1
        return np.hstack([sc, vec])


def build_spaces(m: Mesh, k: int) -> FeSpacePair:
    if not 1 <= k <= 3:
        raise SpaceError(f"unsupported polynomial degree k={k}")
    if len(m.boundary_edges(BoundaryLabel.CLAMPED)) == 0:
        raise SpaceError(
            "mesh has no clamped boundary part; rigid plate motions "
            "would make the system singular")

    scalar = build_lagrange_nodes(m, k + 1)
    vector = build_lagrange_nodes(m, k)

    sc_con = np.zeros(scalar.n_nodes, dtype=np.int64)
    vc_con = np.zeros(vector.n_nodes, dtype=np.int64)
    vc_dir = np.zeros((vector.n_nodes, 2))
    # Tangents seen so far at tangentially constrained nodes.
    tangents: dict[int, list[np.ndarray]] = {}

    for e in m.boundary_edges():
        lab = m.edge_label(e)
        a, b = m.edges[e]
        tvec = m.vertices[b] - m.vertices[a]
        tvec = tvec / np.linalg.norm(tvec)
        s_nodes = scalar.edge_nodes[e]
        v_nodes = vector.edge_nodes[e]
        if lab in (BoundaryLabel.CLAMPED, BoundaryLabel.SIMPLY_SUPPORTED):
            sc_con[s_nodes] = ZERO
        if lab is BoundaryLabel.CLAMPED:
            vc_con[v_nodes] = ZERO
        elif lab is BoundaryLabel.SIMPLY_SUPPORTED:
            for n in v_nodes:
                n = int(n)
                if vc_con[n] == ZERO:
                    continue  # clamped precedence
                tangents.setdefault(n, []).append(tvec)

    for n, ts in tangents.items():
        if vc_con[n] == ZERO:
            continue
        collinear = all(abs(ts[0][0] * t[1] - ts[0][1] * t[0]) < 1e-12
                        for t in ts[1:])
        if collinear:
            vc_con[n] = TANGENTIAL_ZERO
            s = ts[0]
            vc_dir[n] = (s[1], -s[0])  # unit normal to the S edge
        else:
            vc_con[n] = ZERO  # two independent tangents force zero

    reduction = _build_reduction(scalar.n_nodes, sc_con, vc_con, vc_dir)
    return FeSpacePair(m, k, scalar, vector, sc_con, vc_con, vc_dir,
                       reduction)


def _build_reduction(ns, sc_con, vc_con, vc_dir):
    rows = []
    cols = []
    vals = []
    free = 0
    for i in range(ns):
        if sc_con[i] == FREEFORM:
            rows.append(i)
            cols.append(free)
            vals.append(1.0)
            free += 1
    for n in range(len(vc_con)):
        base = ns + 2 * n
        if vc_con[n] == FREEFORM:
            for c in range(2):
                rows.append(base + c)
                cols.append(free)
                vals.append(1.0)
                free += 1
        elif vc_con[n] == TANGENTIAL_ZERO:
            rows.append(base)
            cols.append(free)
            vals.append(vc_dir[n, 0])
            rows.append(base + 1)
            cols.append(free)
            vals.append(vc_dir[n, 1])
            free += 1
    n_full = ns + 2 * len(vc_con)
    return sp.csr_matrix(
        (vals, (rows, cols)), shape=(n_full, free))


def apply_constraints(matrix, rhs, sp_pair: FeSpacePair):
    """Reduce a full assembled system to the free DOFs.

    Zero DOFs are eliminated; tangentially constrained rotation nodes
    are rotated into the (normal, tangent) frame with the tangent
    component dropped.  Symmetry is preserved exactly.
    """
    R = sp_pair.reduction
    A = R.T @ matrix @ R
    b = R.T @ rhs
    return A.tocsr(), b


def expand_solution(u_free, sp_pair: FeSpacePair):
    """Free DOF vector back to the full (constrained) DOF vector."""
    return sp_pair.reduction @ u_free
