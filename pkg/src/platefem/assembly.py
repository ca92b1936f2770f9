"""Material operators and assembly of the stabilized plate system.

The bilinear form has an element part (the zero-thickness
Reissner-Mindlin stabilization with the deflection gradient enforcing
the Kirchhoff constraint) and a free-boundary edge part coupling the
twisting moment trace with the tangential Kirchhoff residual.  All
integrands are polynomials on affine elements and are integrated
exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.linalg

from .element import edge_rule, reference_basis, triangle_rule
from .mesh import BoundaryLabel, Mesh
from .space import FeSpacePair, apply_constraints

ELEMENT_CHUNK = 2048
ALPHA_MIN, ALPHA_MAX = 1e-4, 0.5
ALPHA_DEFAULT_K1 = 0.1


@dataclass(frozen=True)
class MaterialParams:
    """Poisson ratio of the (scaled, thickness-independent) plate model."""

    nu: float = 0.3

    def __post_init__(self):
        if not -1.0 < self.nu < 0.5:
            raise ValueError(f"Poisson ratio {self.nu} outside (-1, 1/2)")


@dataclass(frozen=True)
class StabilizationParams:
    """Interior (alpha) and free-edge (gamma) stabilization weights."""

    alpha: float
    gamma: float
    mode: str = "manual"

    def __post_init__(self):
        if self.alpha <= 0 or self.gamma <= 0:
            raise ValueError("stabilization parameters must be positive")


@dataclass(frozen=True)
class StabilizedSystem:
    """Reduced symmetric sparse system A u = b over the free DOFs."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    spaces: FeSpacePair
    material: MaterialParams
    stab: StabilizationParams
    matrix_full: sp.csr_matrix
    rhs_full: np.ndarray


# ---------------------------------------------------------------------
# Pointwise material operators
# ---------------------------------------------------------------------

def sym_grad(grad_beta):
    """Symmetric part of a rotation gradient."""
    g = np.asarray(grad_beta, dtype=float)
    return 0.5 * (g + np.swapaxes(g, -1, -2))


def moment_tensor(eps, div_beta, mat: MaterialParams):
    """Scaled bending moment from strain and divergence of the rotation."""
    eps = np.asarray(eps, dtype=float)
    div_beta = np.asarray(div_beta, dtype=float)
    eye = np.eye(2)
    return (eps + mat.nu / (1.0 - mat.nu) * div_beta[..., None, None] * eye) / 6.0


def _component_L(hess, lap, comp, mat: MaterialParams):
    """Moment divergence of the vector field phi * e_comp.

    hess: (..., 2, 2) hessian of the scalar shape phi, lap its trace.
    Returns (..., 2).
    """
    c1 = (0.5 + mat.nu / (1.0 - mat.nu)) / 6.0
    c2 = 0.5 / 6.0
    out = c1 * hess[..., :, comp]
    out = out.copy()
    out[..., comp] += c2 * lap
    return out


def operator_L(hess_beta_x, hess_beta_y, mat: MaterialParams):
    """Row-wise divergence of the moment tensor of a rotation field.

    Takes the hessians of the two rotation components; returns (..., 2).
    """
    return (_component_L(np.asarray(hess_beta_x, float),
                         np.trace(np.asarray(hess_beta_x, float),
                                  axis1=-2, axis2=-1), 0, mat)
            + _component_L(np.asarray(hess_beta_y, float),
                           np.trace(np.asarray(hess_beta_y, float),
                                    axis1=-2, axis2=-1), 1, mat))


def edge_traces(eps, div_beta, n, s, mat: MaterialParams):
    """Normal and twisting moment traces (m_nn, m_ns) on an edge.

    eps, div_beta evaluated on the edge; n outward normal, s ccw tangent.
    """
    M = moment_tensor(eps, div_beta, mat)
    Mn = M @ np.asarray(n, float)
    m_nn = Mn @ np.asarray(n, float)
    m_ns = Mn @ np.asarray(s, float)
    return m_nn, m_ns


# ---------------------------------------------------------------------
# Element geometry helpers
# ---------------------------------------------------------------------

def element_maps(m: Mesh, tri_ids=None):
    """Affine map data: Jacobians, inverses, determinants, h_K."""
    tris = m.triangles if tri_ids is None else m.triangles[tri_ids]
    p0 = m.vertices[tris[:, 0]]
    p1 = m.vertices[tris[:, 1]]
    p2 = m.vertices[tris[:, 2]]
    J = np.stack([p1 - p0, p2 - p0], axis=-1)  # columns are edge vectors
    detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    invJ = np.empty_like(J)
    invJ[:, 0, 0] = J[:, 1, 1]
    invJ[:, 0, 1] = -J[:, 0, 1]
    invJ[:, 1, 0] = -J[:, 1, 0]
    invJ[:, 1, 1] = J[:, 0, 0]
    invJ /= detJ[:, None, None]
    h = np.max(np.stack([
        np.linalg.norm(p1 - p0, axis=1),
        np.linalg.norm(p2 - p1, axis=1),
        np.linalg.norm(p0 - p2, axis=1)]), axis=0)
    return p0, J, invJ, detJ, h


def physical_gradients(grad_ref, invJ):
    """Push reference gradients (nq, nd, 2) to (ne, nq, nd, 2)."""
    return np.einsum("eji,qdj->eqdi", invJ, grad_ref)


def physical_hessians(hess_ref, invJ):
    """Push reference hessians (nq, nd, 2, 2) to (ne, nq, nd, 2, 2)."""
    return np.einsum("eia,qdij,ejb->eqdab", invJ, hess_ref, invJ)


def physical_thirds(third_ref, invJ):
    """Push reference third derivatives to physical coordinates."""
    return np.einsum("eia,ejb,ekc,qdijk->eqdabc", invJ, invJ, invJ, third_ref)


# ---------------------------------------------------------------------
# Vector-basis kernels at quadrature points
# ---------------------------------------------------------------------

def _vector_basis_fields(vals, grads, hess, mat):
    """Per-component rotation basis fields from scalar basis tables.

    Input tables are (ne, nq, nk, ...) for the degree-k scalar basis;
    output arrays are over 2*nk vector DOFs ordered (node0_x, node0_y,
    node1_x, ...): values (..., 2), strains (..., 2, 2), divergences,
    and moment divergences L (..., 2).
    """
    ne, nq, nk = vals.shape
    V = np.zeros((ne, nq, 2 * nk, 2))
    V[:, :, 0::2, 0] = vals
    V[:, :, 1::2, 1] = vals

    eps = np.zeros((ne, nq, 2 * nk, 2, 2))
    # phi e_x: eps = [[dx, dy/2], [dy/2, 0]]
    eps[:, :, 0::2, 0, 0] = grads[..., 0]
    eps[:, :, 0::2, 0, 1] = 0.5 * grads[..., 1]
    eps[:, :, 0::2, 1, 0] = 0.5 * grads[..., 1]
    # phi e_y: eps = [[0, dx/2], [dx/2, dy]]
    eps[:, :, 1::2, 1, 1] = grads[..., 1]
    eps[:, :, 1::2, 0, 1] += 0.5 * grads[..., 0]
    eps[:, :, 1::2, 1, 0] += 0.5 * grads[..., 0]

    div = np.zeros((ne, nq, 2 * nk))
    div[:, :, 0::2] = grads[..., 0]
    div[:, :, 1::2] = grads[..., 1]

    lap = hess[..., 0, 0] + hess[..., 1, 1]
    L = np.zeros((ne, nq, 2 * nk, 2))
    L[:, :, 0::2, :] = _component_L(hess, lap, 0, mat)
    L[:, :, 1::2, :] = _component_L(hess, lap, 1, mat)
    return V, eps, div, L


def _moment_from_eps(eps, div, nu):
    eye = np.eye(2)
    return (eps + nu / (1.0 - nu) * div[..., None, None] * eye) / 6.0


# ---------------------------------------------------------------------
# Element and edge kernels
# ---------------------------------------------------------------------

def element_matrices(m: Mesh, spaces: FeSpacePair, mat: MaterialParams,
                     stab: StabilizationParams, tri_ids):
    """Dense element matrices of the interior bilinear form.

    Local DOFs: scalar (deflection) DOFs first, then interleaved
    rotation DOFs.  Returns (len(tri_ids), nloc, nloc).
    """
    k = spaces.k
    sbasis = reference_basis(k + 1)
    vbasis = reference_basis(k)
    rule = triangle_rule(2 * (k + 1))
    q = rule.points
    wq = rule.weights

    _, sgrad_ref, _ = None, None, None
    svals = sbasis.derivative_tab(q, 0, 0)
    sg = np.stack([sbasis.derivative_tab(q, 1, 0),
                   sbasis.derivative_tab(q, 0, 1)], axis=-1)
    vvals, vg, vh = vbasis.eval(q)

    _, J, invJ, detJ, h = element_maps(m, tri_ids)
    ne = len(detJ)
    ns = sbasis.ndof
    nk = vbasis.ndof
    nloc = ns + 2 * nk

    sgrad = physical_gradients(sg, invJ)          # (ne, nq, ns, 2)
    vgrad = physical_gradients(vg, invJ)          # (ne, nq, nk, 2)
    vhess = physical_hessians(vh, invJ)           # (ne, nq, nk, 2, 2)
    vvals_e = np.broadcast_to(vvals, (ne,) + vvals.shape)

    V, eps, div, L = _vector_basis_fields(vvals_e, vgrad, vhess, mat)

    ah2 = stab.alpha * h ** 2                     # (ne,)

    # Stabilization residual: grad v for scalar DOFs,
    # -(eta + alpha h^2 L eta) for rotation DOFs.
    nq = len(wq)
    R = np.zeros((ne, nq, nloc, 2))
    R[:, :, :ns, :] = sgrad
    R[:, :, ns:, :] = -(V + ah2[:, None, None, None] * L)

    Meps = _moment_from_eps(eps, div, mat.nu)

    wdet = wq[None, :] * detJ[:, None]            # (ne, nq)

    A = np.zeros((ne, nloc, nloc))
    # a(eta_j, eta_i) = int M(eps_j) : eps_i
    A[:, ns:, ns:] += np.einsum("eq,eqjab,eqiab->eji", wdet, Meps, eps,
                                optimize=True)
    # - alpha h^2 (L_j, L_i)
    A[:, ns:, ns:] -= np.einsum("e,eq,eqja,eqia->eji", ah2, wdet, L, L,
                                optimize=True)
    # + (alpha h^2)^-1 (r_j, r_i)
    A += np.einsum("e,eq,eqja,eqia->eji", 1.0 / ah2, wdet, R, R,
                   optimize=True)
    return A


def element_B_h(m: Mesh, spaces: FeSpacePair, mat: MaterialParams,
                stab: StabilizationParams, tri: int):
    """Single-element interior matrix over (deflection, rotation) DOFs."""
    return element_matrices(m, spaces, mat, stab, np.array([tri]))[0]


def free_edge_entries(m: Mesh, spaces: FeSpacePair, mat: MaterialParams,
                      stab: StabilizationParams, edge: int):
    """Edge matrix of the free-boundary form for one free boundary edge.

    Couples the twisting moment trace with the tangential Kirchhoff
    residual and penalizes the latter; returns (local matrix, full DOF
    ids of the adjacent element).
    """
    if m.edge_label(edge) is not BoundaryLabel.FREE:
        raise ValueError("free-edge kernel called on a non-free edge")
    slot = m.edge_tris[edge, 0]
    tri, le = divmod(int(slot), 3)
    return _edge_matrix(m, spaces, mat, stab, tri, le), \
        spaces.element_dofs(np.array([tri]))[0]


_REF_VERTS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def edge_ref_points(local_edge: int, t):
    """Map edge parameters t in [0,1] to reference-triangle coordinates."""
    a = _REF_VERTS[local_edge]
    b = _REF_VERTS[(local_edge + 1) % 3]
    t = np.asarray(t, dtype=float)
    return a[None, :] + t[:, None] * (b - a)[None, :]


def _edge_matrix(m, spaces, mat, stab, tri, le):
    k = spaces.k
    sbasis = reference_basis(k + 1)
    vbasis = reference_basis(k)
    rule = edge_rule(2 * (k + 1))
    t = rule.points[:, 0]
    wq = rule.weights
    ref_pts = edge_ref_points(le, t)

    tid = np.array([tri])
    _, J, invJ, detJ, h = element_maps(m, tid)
    n, s = m.outward_normal(tri, le)
    a = m.vertices[m.triangles[tri, le]]
    b = m.vertices[m.triangles[tri, (le + 1) % 3]]
    elen = float(np.linalg.norm(b - a))

    sg = np.stack([sbasis.derivative_tab(ref_pts, 1, 0),
                   sbasis.derivative_tab(ref_pts, 0, 1)], axis=-1)
    vvals, vg, vh = vbasis.eval(ref_pts)

    sgrad = physical_gradients(sg, invJ)[0]       # (nq, ns, 2)
    vgrad = physical_gradients(vg, invJ)[0]
    vhess = physical_hessians(vh, invJ)[0]
    vvals_e = vvals[None]
    V, eps, div, _ = _vector_basis_fields(
        vvals_e, vgrad[None], vhess[None], mat)
    V, eps, div = V[0], eps[0], div[0]

    ns_ = sbasis.ndof
    nk = vbasis.ndof
    nloc = ns_ + 2 * nk
    nq = len(t)

    # Tangential Kirchhoff residual [grad v - eta] . s per local DOF.
    T = np.zeros((nq, nloc))
    T[:, :ns_] = sgrad @ s
    T[:, ns_:] = -(V @ s)

    # Twisting moment trace m_ns(eta) = s . M(eta) n (zero for scalar DOFs).
    Me = _moment_from_eps(eps, div, mat.nu)
    mns = np.zeros((nq, nloc))
    mns[:, ns_:] = np.einsum("a,qdab,b->qd", s, Me, n)

    w = wq * elen
    D = (np.einsum("q,qj,qi->ji", w, mns, T)
         + np.einsum("q,qj,qi->ji", w, T, mns)
         + (stab.gamma / elen) * np.einsum("q,qj,qi->ji", w, T, T))
    return D


def load_vector(m: Mesh, spaces: FeSpacePair, f) -> np.ndarray:
    """Full (pre-elimination) load vector; only deflection DOFs are loaded."""
    k = spaces.k
    sbasis = reference_basis(k + 1)
    rule = triangle_rule(2 * (k + 1) + 2)
    q = rule.points
    wq = rule.weights
    svals = sbasis.derivative_tab(q, 0, 0)        # (nq, ns)

    b = np.zeros(spaces.n_full)
    _, J, invJ, detJ, _ = element_maps(m)
    p0 = m.vertices[m.triangles[:, 0]]
    # Physical quadrature points: (ne, nq, 2)
    xq = p0[:, None, :] + np.einsum("eij,qj->eqi", J, q)
    fvals = np.asarray(f(xq[..., 0], xq[..., 1]), dtype=float)
    if fvals.shape != xq.shape[:2]:
        fvals = np.broadcast_to(fvals, xq.shape[:2])
    contrib = np.einsum("eq,q,qd,e->ed", fvals, wq, svals, detJ)
    np.add.at(b, spaces.scalar.elem_nodes, contrib)
    return b


# ---------------------------------------------------------------------
# Global assembly
# ---------------------------------------------------------------------

def assemble(m: Mesh, spaces: FeSpacePair, mat: MaterialParams,
             stab: StabilizationParams, f, with_free_edge_terms=True
             ) -> StabilizedSystem:
    """Assemble the full stabilized system and reduce the constraints."""
    n_full = spaces.n_full
    rows = []
    cols = []
    vals = []

    nt = m.n_triangles
    for start in range(0, nt, ELEMENT_CHUNK):
        tri_ids = np.arange(start, min(start + ELEMENT_CHUNK, nt))
        A = element_matrices(m, spaces, mat, stab, tri_ids)
        dofs = spaces.element_dofs(tri_ids)
        nloc = dofs.shape[1]
        rows.append(np.repeat(dofs, nloc, axis=1).ravel())
        cols.append(np.tile(dofs, (1, nloc)).ravel())
        vals.append(A.ravel())

    if with_free_edge_terms:
        for e in m.boundary_edges(BoundaryLabel.FREE):
            D, dofs = free_edge_entries(m, spaces, mat, stab, int(e))
            nloc = len(dofs)
            rows.append(np.repeat(dofs, nloc))
            cols.append(np.tile(dofs, nloc))
            vals.append(D.ravel())

    A_full = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_full, n_full)).tocsr()
    b_full = load_vector(m, spaces, f)
    A_red, b_red = apply_constraints(A_full, b_full, spaces)
    return StabilizedSystem(A_red, b_red, spaces, mat, stab, A_full, b_full)


# ---------------------------------------------------------------------
# Inverse-inequality constants and automatic stabilization parameters
# ---------------------------------------------------------------------

def _element_a_and_L_matrices(m, spaces, mat, tri):
    """Dense a-form and h^2 (L, L) matrices on [P_k]^2 of one element."""
    k = spaces.k
    vbasis = reference_basis(k)
    rule = triangle_rule(max(2 * k, 2))
    q = rule.points
    wq = rule.weights
    tid = np.array([tri])
    _, J, invJ, detJ, h = element_maps(m, tid)
    vvals, vg, vh = vbasis.eval(q)
    vgrad = physical_gradients(vg, invJ)
    vhess = physical_hessians(vh, invJ)
    V, eps, div, L = _vector_basis_fields(vvals[None], vgrad, vhess, mat)
    wdet = wq * detJ[0]
    Aa = np.einsum("q,qjab,qiab->ji", wdet, _moment_from_eps(
        eps[0], div[0], mat.nu), eps[0])
    S = float(h[0]) ** 2 * np.einsum("q,qja,qia->ji", wdet, L[0], L[0])
    return Aa, S, float(h[0])


def _edge_mns_matrix(m, spaces, mat, edge):
    """h_E * <m_ns(phi), m_ns(psi)>_E on [P_k]^2 of the adjacent element."""
    k = spaces.k
    vbasis = reference_basis(k)
    rule = edge_rule(max(2 * k, 2))
    t = rule.points[:, 0]
    wq = rule.weights
    slot = m.edge_tris[edge, 0]
    tri, le = divmod(int(slot), 3)
    ref_pts = edge_ref_points(le, t)
    tid = np.array([tri])
    _, J, invJ, detJ, h = element_maps(m, tid)
    n, s = m.outward_normal(tri, le)
    a = m.vertices[m.triangles[tri, le]]
    b = m.vertices[m.triangles[tri, (le + 1) % 3]]
    elen = float(np.linalg.norm(b - a))
    vvals, vg, vh = vbasis.eval(ref_pts)
    vgrad = physical_gradients(vg, invJ)
    vhess = physical_hessians(vh, invJ)
    V, eps, div, _ = _vector_basis_fields(vvals[None], vgrad, vhess, mat)
    Me = _moment_from_eps(eps[0], div[0], mat.nu)
    mns = np.einsum("a,qdab,b->qd", s, Me, n)
    G = elen * np.einsum("q,qj,qi->ji", wq * elen, mns, mns)
    return G, tri


def _deflated_max_eigenvalue(S, Aa):
    """Largest generalized eigenvalue of S against Aa with the rigid
    motion kernel of Aa projected out."""
    lam, Q = np.linalg.eigh(Aa)
    tol = max(lam.max(), 0.0) * 1e-10
    keep = lam > tol
    if not np.any(keep):
        return 0.0
    Qk = Q[:, keep]
    S_r = Qk.T @ S @ Qk
    A_r = np.diag(lam[keep])
    ev = scipy.linalg.eigh(S_r, A_r, eigvals_only=True)
    return float(ev[-1])


def estimate_inverse_constants(m: Mesh, spaces: FeSpacePair,
                               mat: MaterialParams):
    """Computable elementwise estimates of the inverse-inequality
    constants bounding the moment divergence and the twisting moment
    trace by the bending energy.

    Returns (C_I_est, C_I'_est); +inf sentinels where the bounded
    quantity vanishes identically (k = 1 for the first constant, no
    free edges for the second).
    """
    lam_max = 0.0
    for tri in range(m.n_triangles):
        Aa, S, _ = _element_a_and_L_matrices(m, spaces, mat, tri)
        lam_max = max(lam_max, _deflated_max_eigenvalue(S, Aa))
    C_I = np.inf if lam_max < 1e-14 else 1.0 / lam_max

    # Group free edges by adjacent element so elements with several free
    # edges are not double counted in the global sum.
    per_tri: dict[int, np.ndarray] = {}
    for e in m.boundary_edges(BoundaryLabel.FREE):
        G, tri = _edge_mns_matrix(m, spaces, mat, int(e))
        per_tri[tri] = per_tri.get(tri, 0.0) + G
    mu_max = 0.0
    for tri, G in per_tri.items():
        Aa, _, _ = _element_a_and_L_matrices(m, spaces, mat, tri)
        mu_max = max(mu_max, _deflated_max_eigenvalue(G, Aa))
    C_Ip = np.inf if mu_max < 1e-14 else 1.0 / mu_max
    return C_I, C_Ip


def auto_stabilization(m: Mesh, spaces: FeSpacePair, mat: MaterialParams
                       ) -> StabilizationParams:
    """alpha = C_I/8 (clamped), gamma = 4/C_I'; defaults where the
    constants are infinite."""
    C_I, C_Ip = estimate_inverse_constants(m, spaces, mat)
    if np.isinf(C_I):
        alpha = ALPHA_DEFAULT_K1
    else:
        alpha = float(np.clip(C_I / 8.0, ALPHA_MIN, ALPHA_MAX))
    gamma = 1.0 if np.isinf(C_Ip) else 4.0 / C_Ip
    return StabilizationParams(alpha, gamma, mode="auto")


def with_mode(stabp: StabilizationParams, mode: str) -> StabilizationParams:
    return replace(stabp, mode=mode)
