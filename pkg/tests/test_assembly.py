"""Material operators, element/edge kernels and assembly invariants.

Hand-value oracles (recorded in comments) were derived symbolically:
  * eps = I, div = 2, nu = 0.3 -> M = (1 + (0.3/0.7)*2)/6 * I = 13/42 * I
  * beta = (x^2, 0), nu = 0.3  -> L beta = (10/21, 0)
  * beta = (y, 0)              -> M = [[0, 1/12], [1/12, 0]]
"""

import numpy as np
import pytest

from platefem.assembly import (MaterialParams, StabilizationParams, assemble,
                               auto_stabilization, edge_traces, element_B_h,
                               estimate_inverse_constants, free_edge_entries,
                               load_vector, moment_tensor, operator_L,
                               sym_grad)
from platefem.mesh import BoundaryLabel, unit_square_mesh
from platefem.space import build_spaces

MAT = MaterialParams(0.3)
STAB = StabilizationParams(alpha=0.1, gamma=1.0)


# ---------------------------------------------------------------------
# Pointwise operators
# ---------------------------------------------------------------------

def test_sym_grad():
    g = np.array([[1.0, 2.0], [0.0, 3.0]])
    assert np.allclose(sym_grad(g), [[1.0, 1.0], [1.0, 3.0]])
    rng = np.random.default_rng(0)
    batch = rng.standard_normal((4, 2, 2))
    s = sym_grad(batch)
    assert np.allclose(s, np.swapaxes(s, -1, -2))


def test_moment_tensor_hand_value():
    M = moment_tensor(np.eye(2), 2.0, MAT)
    assert np.allclose(M, (13.0 / 42.0) * np.eye(2), atol=1e-12)
    assert abs(M[0, 0] - 0.3095238) < 1e-6


def test_moment_tensor_zero_poisson():
    eps = np.array([[2.0, 1.0], [1.0, -1.0]])
    M = moment_tensor(eps, 1.0, MaterialParams(0.0))
    assert np.allclose(M, eps / 6.0)


def test_operator_L_hand_value():
    # beta = (x^2, 0): hess of the x-component is [[2, 0], [0, 0]].
    hx = np.array([[2.0, 0.0], [0.0, 0.0]])
    hy = np.zeros((2, 2))
    L = operator_L(hx, hy, MAT)
    assert np.allclose(L, [10.0 / 21.0, 0.0], atol=1e-12)
    assert abs(L[0] - 0.4761905) < 1e-6


def test_operator_L_matches_divergence_of_moment():
    # Random quadratic rotation field: compare L against a finite
    # difference divergence of the moment tensor.
    rng = np.random.default_rng(3)
    cx = rng.standard_normal(6)
    cy = rng.standard_normal(6)

    def beta_comp(c, x, y):
        return (c[0] + c[1] * x + c[2] * y + c[3] * x * x
                + c[4] * x * y + c[5] * y * y)

    def M_at(x, y):
        hx = np.array([[2 * cx[3], cx[4]], [cx[4], 2 * cx[5]]])
        del hx  # hessians are constant; use exact gradients instead
        gx = np.array([cx[1] + 2 * cx[3] * x + cx[4] * y,
                       cx[2] + cx[4] * x + 2 * cx[5] * y])
        gy = np.array([cy[1] + 2 * cy[3] * x + cy[4] * y,
                       cy[2] + cy[4] * x + 2 * cy[5] * y])
        grad = np.stack([gx, gy])
        return moment_tensor(sym_grad(grad), grad[0, 0] + grad[1, 1], MAT)

    x0, y0, h = 0.37, 0.52, 1e-6
    div_fd = ((M_at(x0 + h, y0) - M_at(x0 - h, y0))[:, 0]
              + (M_at(x0, y0 + h) - M_at(x0, y0 - h))[:, 1]) / (2 * h)
    hx = np.array([[2 * cx[3], cx[4]], [cx[4], 2 * cx[5]]])
    hy = np.array([[2 * cy[3], cy[4]], [cy[4], 2 * cy[5]]])
    assert np.allclose(operator_L(hx, hy, MAT), div_fd, atol=1e-8)


def test_edge_traces_hand_value():
    # beta = (y, 0) on the edge x = const with n = (1, 0), s = (0, 1).
    grad = np.array([[0.0, 1.0], [0.0, 0.0]])
    eps = sym_grad(grad)
    m_nn, m_ns = edge_traces(eps, 0.0, (1.0, 0.0), (0.0, 1.0), MAT)
    assert abs(m_nn) < 1e-15
    assert abs(m_ns - 1.0 / 12.0) < 1e-15


# ---------------------------------------------------------------------
# Element kernel
# ---------------------------------------------------------------------

@pytest.mark.parametrize("k", [1, 2, 3])
def test_element_matrix_symmetric(square2, k):
    spaces = build_spaces(square2, k)
    for tri in range(2):
        A = element_B_h(square2, spaces, MAT, STAB, tri)
        assert np.allclose(A, A.T, atol=1e-12 * np.abs(A).max())


def test_element_matrix_rigid_translation(single_triangle):
    # w = 0, beta = (1, 0): strain, divergence and moment divergence all
    # vanish, leaving only the Kirchhoff residual term
    # (alpha h^2)^{-1} int |beta|^2 = |K| / (alpha h^2) = 1 / (4 alpha).
    spaces = build_spaces(single_triangle, 1)
    A = element_B_h(single_triangle, spaces, MAT, STAB, 0)
    ns = spaces.scalar.elem_nodes.shape[1]
    u = np.zeros(A.shape[0])
    u[ns::2] = 1.0  # constant x-rotation
    val = u @ A @ u
    assert abs(val - 1.0 / (4.0 * STAB.alpha)) < 1e-12


def test_element_matrix_kirchhoff_pair_annihilated(single_triangle):
    # w = x, beta = grad w = (1, 0): the residual grad w - beta - a h^2
    # L beta vanishes, so only -a h^2 (L, L) and a(beta, beta) remain,
    # both zero for a constant rotation.  The energy must vanish.
    spaces = build_spaces(single_triangle, 1)
    A = element_B_h(single_triangle, spaces, MAT, STAB, 0)
    ns = spaces.scalar.elem_nodes.shape[1]
    u = np.zeros(A.shape[0])
    # Local scalar DOFs follow the element's node permutation.
    u[:ns] = spaces.scalar.coords[spaces.scalar.elem_nodes[0], 0]  # w = x
    u[ns::2] = 1.0                                                 # beta=(1,0)
    assert abs(u @ A @ u) < 1e-13


# ---------------------------------------------------------------------
# Free-edge kernel
# ---------------------------------------------------------------------

def test_free_edge_rejects_clamped_edge(square2):
    spaces = build_spaces(square2, 1)
    e = int(square2.boundary_edges()[0])
    with pytest.raises(ValueError):
        free_edge_entries(square2, spaces, MAT, STAB, e)


def test_free_edge_matrix_symmetric(square2_free):
    spaces = build_spaces(square2_free, 2)
    for e in square2_free.boundary_edges(BoundaryLabel.FREE):
        D, dofs = free_edge_entries(square2_free, spaces, MAT, STAB, int(e))
        assert D.shape == (len(dofs), len(dofs))
        assert np.allclose(D, D.T, atol=1e-13)


def test_free_edge_penalty_on_pure_tangential_jump(square2_free):
    # w = 0 and beta = s (unit tangent of one free edge): the edge
    # residual is (grad w - beta) . s = -1, the twisting moment of a
    # constant field is zero, so the edge energy is exactly gamma / h_E
    # times the edge length: u D u = gamma.
    spaces = build_spaces(square2_free, 1)
    m = square2_free
    e = int(m.boundary_edges(BoundaryLabel.FREE)[0])
    a, b = m.edges[e]
    s = m.vertices[b] - m.vertices[a]
    elen = np.linalg.norm(s)
    s = s / elen
    D, dofs = free_edge_entries(m, spaces, MAT, STAB, e)
    ns = spaces.scalar.elem_nodes.shape[1]
    u = np.zeros(len(dofs))
    u[ns::2] = s[0]
    u[ns + 1::2] = s[1]
    assert abs(u @ D @ u - STAB.gamma) < 1e-12


def test_assemble_without_free_edges_identical_on_clamped(square2):
    spaces = build_spaces(square2, 2)
    f = lambda x, y: np.ones_like(x)
    s1 = assemble(square2, spaces, MAT, STAB, f, with_free_edge_terms=True)
    s2 = assemble(square2, spaces, MAT, STAB, f, with_free_edge_terms=False)
    assert (s1.matrix != s2.matrix).nnz == 0
    assert np.array_equal(s1.rhs, s2.rhs)


def test_assemble_free_edge_terms_change_matrix(square2_free):
    spaces = build_spaces(square2_free, 1)
    f = lambda x, y: np.ones_like(x)
    s1 = assemble(square2_free, spaces, MAT, STAB, f,
                  with_free_edge_terms=True)
    s2 = assemble(square2_free, spaces, MAT, STAB, f,
                  with_free_edge_terms=False)
    assert (s1.matrix != s2.matrix).nnz > 0


# ---------------------------------------------------------------------
# Load vector and global system
# ---------------------------------------------------------------------

def test_load_vector_zero(square2):
    spaces = build_spaces(square2, 2)
    b = load_vector(square2, spaces, lambda x, y: np.zeros_like(x))
    assert np.all(b == 0.0)


def test_load_vector_constant_partition(square2):
    # Sum over deflection DOFs = int f = area; rotation block unloaded.
    spaces = build_spaces(square2, 2)
    b = load_vector(square2, spaces, lambda x, y: np.ones_like(x))
    assert abs(b[:spaces.n_scalar].sum() - 1.0) < 1e-13
    assert np.all(b[spaces.n_scalar:] == 0.0)


def test_load_vector_linear_in_f(square2):
    spaces = build_spaces(square2, 1)
    f1 = lambda x, y: x * y
    f2 = lambda x, y: np.sin(x) + y
    b1 = load_vector(square2, spaces, f1)
    b2 = load_vector(square2, spaces, f2)
    b12 = load_vector(square2, spaces,
                      lambda x, y: 2.0 * f1(x, y) - 3.0 * f2(x, y))
    assert np.allclose(b12, 2.0 * b1 - 3.0 * b2, atol=1e-14)


def test_reduced_system_shape_and_symmetry(square2):
    spaces = build_spaces(square2, 1)
    sys_ = assemble(square2, spaces, MAT, STAB,
                    lambda x, y: np.ones_like(x))
    assert sys_.matrix.shape == (1, 1)
    assert sys_.matrix[0, 0] > 0.0
    assert sys_.matrix_full.shape == (spaces.n_full, spaces.n_full)
    d = abs(sys_.matrix_full - sys_.matrix_full.T)
    assert d.max() <= 1e-12 * abs(sys_.matrix_full).max()


def test_global_symmetry_with_free_edges():
    m = unit_square_mesh(3, "FFSC")
    spaces = build_spaces(m, 2)
    sys_ = assemble(m, spaces, MAT, STAB, lambda x, y: x)
    d = abs(sys_.matrix - sys_.matrix.T)
    assert d.max() <= 1e-12 * abs(sys_.matrix).max()


# ---------------------------------------------------------------------
# Inverse-inequality constants and automatic parameters
# ---------------------------------------------------------------------

def test_inverse_constants_k1_sentinel(square2):
    # Piecewise linear rotations have zero moment divergence.
    spaces = build_spaces(square2, 1)
    C_I, C_Ip = estimate_inverse_constants(square2, spaces, MAT)
    assert np.isinf(C_I)
    assert np.isinf(C_Ip)  # no free edges on the clamped mesh


def test_inverse_constants_free_edges_finite(square2_free):
    spaces = build_spaces(square2_free, 2)
    C_I, C_Ip = estimate_inverse_constants(square2_free, spaces, MAT)
    assert 0.0 < C_I < np.inf
    assert 0.0 < C_Ip < np.inf


def test_inverse_constant_stable_under_refinement():
    # All elements stay similar under uniform refinement, so the
    # elementwise constant is refinement invariant.
    from platefem.mesh import uniform_refine
    m = unit_square_mesh(2, "FFFC")
    sp2 = build_spaces(m, 2)
    C_I, C_Ip = estimate_inverse_constants(m, sp2, MAT)
    mf = uniform_refine(m)
    spf = build_spaces(mf, 2)
    C_If, C_Ipf = estimate_inverse_constants(mf, spf, MAT)
    assert abs(C_If - C_I) < 0.01 * C_I
    assert abs(C_Ipf - C_Ip) < 0.01 * C_Ip


def test_inverse_constant_bounds_random_fields():
    # The estimated constant certifies h^2 ||L eta||^2 <= (1/C_I) a(eta,
    # eta) for every discrete rotation field on each element.
    from platefem.assembly import _element_a_and_L_matrices
    m = unit_square_mesh(2, "FFFC")
    spaces = build_spaces(m, 3)
    C_I, _ = estimate_inverse_constants(m, spaces, MAT)
    rng = np.random.default_rng(17)
    for tri in range(m.n_triangles):
        Aa, S, _ = _element_a_and_L_matrices(m, spaces, MAT, tri)
        for _ in range(5):
            u = rng.standard_normal(Aa.shape[0])
            lhs = u @ S @ u
            rhs = u @ Aa @ u
            assert lhs <= (1.0 / C_I + 1e-10) * rhs + 1e-12


def test_material_params_validation():
    with pytest.raises(ValueError):
        MaterialParams(0.5)
    with pytest.raises(ValueError):
        MaterialParams(-1.0)
    MaterialParams(0.0)  # admissible


def test_stabilization_params_validation():
    with pytest.raises(ValueError):
        StabilizationParams(alpha=0.0, gamma=1.0)
    with pytest.raises(ValueError):
        StabilizationParams(alpha=0.1, gamma=-2.0)


def test_auto_stabilization_defaults(square2):
    spaces = build_spaces(square2, 1)
    stab = auto_stabilization(square2, spaces, MAT)
    assert stab.mode == "auto"
    assert stab.alpha == pytest.approx(0.1)
    assert stab.gamma == pytest.approx(1.0)


def test_auto_stabilization_from_constants(square2_free):
    spaces = build_spaces(square2_free, 2)
    C_I, C_Ip = estimate_inverse_constants(square2_free, spaces, MAT)
    stab = auto_stabilization(square2_free, spaces, MAT)
    assert stab.alpha == pytest.approx(np.clip(C_I / 8.0, 1e-4, 0.5))
    assert stab.gamma == pytest.approx(4.0 / C_Ip)
