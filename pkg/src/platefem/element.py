"""Reference-triangle Lagrange bases and quadrature rules.

Bases for degrees 1..4 are built by inverting the monomial Vandermonde
matrix on equispaced nodes; all derivatives are then exact coefficient
operations, so hessians and third derivatives come out as polynomials
with no differencing.

Reference triangle: vertices (0,0), (1,0), (0,1), measure 1/2.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np
from scipy.special import roots_jacobi

MAX_DEGREE = 4
MAX_QUAD_DEGREE = 10


def basis_dim(degree: int) -> int:
    return (degree + 1) * (degree + 2) // 2


def reference_nodes(degree: int) -> np.ndarray:
    """Equispaced Lagrange nodes in canonical (vertex, edge, interior) order.

    Vertices (0,0), (1,0), (0,1); then degree-1 interior nodes per edge
    (edges 0-1, 1-2, 2-0, traversed from first to second vertex); then
    interior nodes in lexicographic order.
    """
    d = degree
    vs = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    nodes = [vs[0], vs[1], vs[2]]
    for a, b in ((0, 1), (1, 2), (2, 0)):
        for j in range(1, d):
            t = j / d
            nodes.append((1 - t) * vs[a] + t * vs[b])
    for i in range(1, d):
        for j in range(1, d - i):
            nodes.append(np.array([i / d, j / d]))
    return np.array(nodes)


def _monomial_exponents(degree: int):
    exps = [(a, b) for a in range(degree + 1) for b in range(degree + 1 - a)]
    exps.sort(key=lambda ab: (ab[0] + ab[1], ab[0]))
    return np.array(exps, dtype=np.int64)


def _mono_derivative_eval(pts, exps, dx, dy):
    """Evaluate d^(dx+dy)/dx^dx dy^dy of each monomial at pts."""
    a = exps[:, 0]
    b = exps[:, 1]
    ca = np.where(a >= dx, _falling(a, dx), 0.0)
    cb = np.where(b >= dy, _falling(b, dy), 0.0)
    pa = np.maximum(a - dx, 0)
    pb = np.maximum(b - dy, 0)
    x = pts[:, 0][:, None]
    y = pts[:, 1][:, None]
    return (ca * cb) * x ** pa[None, :] * y ** pb[None, :]


def _falling(n, k):
    out = np.ones_like(n, dtype=float)
    for i in range(int(k)):
        out = out * (n - i)
    return out


@dataclass(frozen=True)
class ReferenceBasis:
    """Nodal Lagrange basis of a given degree on the reference triangle."""

    degree: int
    nodes: np.ndarray
    exponents: np.ndarray
    coeffs: np.ndarray  # (ndof, nmono): phi_i = sum_m coeffs[i, m] x^a y^b

    @property
    def ndof(self) -> int:
        return len(self.nodes)

    def derivative_tab(self, pts, dx: int, dy: int) -> np.ndarray:
        """(npts, ndof) table of a mixed partial of all shape functions."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        mono = _mono_derivative_eval(pts, self.exponents, dx, dy)
        return mono @ self.coeffs.T

    def eval(self, pts):
        """Values, gradients and hessians at reference points.

        Returns (values (np, nd), gradients (np, nd, 2),
        hessians (np, nd, 2, 2)); all exact polynomials.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        vals = self.derivative_tab(pts, 0, 0)
        grads = np.stack(
            [self.derivative_tab(pts, 1, 0), self.derivative_tab(pts, 0, 1)],
            axis=-1)
        hxx = self.derivative_tab(pts, 2, 0)
        hxy = self.derivative_tab(pts, 1, 1)
        hyy = self.derivative_tab(pts, 0, 2)
        hess = np.stack(
            [np.stack([hxx, hxy], axis=-1), np.stack([hxy, hyy], axis=-1)],
            axis=-2)
        return vals, grads, hess

    def third_tab(self, pts):
        """(npts, ndof, 2, 2, 2) symmetric third-derivative tensor."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        d = {}
        for dx, dy in ((3, 0), (2, 1), (1, 2), (0, 3)):
            d[(dx, dy)] = self.derivative_tab(pts, dx, dy)
        npts, nd = d[(3, 0)].shape
        T = np.empty((npts, nd, 2, 2, 2))
        for i in range(2):
            for j in range(2):
                for k in range(2):
                    dx = (i == 0) + (j == 0) + (k == 0)
                    T[:, :, i, j, k] = d[(dx, 3 - dx)]
        return T


@lru_cache(maxsize=None)
def reference_basis(degree: int) -> ReferenceBasis:
    if not 1 <= degree <= MAX_DEGREE:
        raise ValueError(f"unsupported basis degree {degree}")
    nodes = reference_nodes(degree)
    exps = _monomial_exponents(degree)
    V = _mono_derivative_eval(nodes, exps, 0, 0)
    coeffs = np.linalg.inv(V).T
    return ReferenceBasis(degree, nodes, exps, coeffs)


def shape_eval(basis: ReferenceBasis, p):
    """Values, gradients and hessians of all shape functions at point p."""
    vals, grads, hess = basis.eval(np.atleast_2d(p))
    return vals[0], grads[0], hess[0]


# ---------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray   # (nq, dim) reference coordinates
    weights: np.ndarray  # (nq,)
    exactness_degree: int


@lru_cache(maxsize=None)
def edge_rule(min_degree: int) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1] with exactness >= min_degree."""
    if min_degree > 2 * MAX_QUAD_DEGREE:
        raise ValueError(f"unsupported edge quadrature degree {min_degree}")
    n = max(1, (min_degree + 2) // 2)
    x, w = np.polynomial.legendre.leggauss(n)
    pts = 0.5 * (x + 1.0)
    wts = 0.5 * w
    return QuadratureRule(pts[:, None], wts, 2 * n - 1)


@lru_cache(maxsize=None)
def triangle_rule(min_degree: int) -> QuadratureRule:
    """Symmetric triangle rule with exactness >= min_degree.

    A Duffy (collapsed) Gauss-Legendre x Gauss-Jacobi product rule is
    symmetrized over the six affine symmetries of the reference
    triangle; all weights stay positive and sum to 1/2.
    """
    if min_degree > MAX_QUAD_DEGREE:
        raise ValueError(f"unsupported triangle quadrature degree {min_degree}")
    n = max(1, (min_degree + 2) // 2)
    xu, wu = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (xu + 1.0)
    wu = 0.5 * wu
    tv, wv = roots_jacobi(n, 1.0, 0.0)
    v = 0.5 * (tv + 1.0)
    wv = 0.25 * wv
    U, V = np.meshgrid(u, v, indexing="ij")
    X = (U * (1.0 - V)).ravel()
    Y = V.ravel()
    W = np.outer(wu, wv).ravel()

    pts = np.stack([X, Y], axis=1)
    # Barycentric coordinates (1-x-y, x, y); the six vertex permutations.
    lam = np.stack([1.0 - X - Y, X, Y], axis=1)
    perms = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]
    all_pts = []
    all_wts = []
    for p in perms:
        lp = lam[:, list(p)]
        all_pts.append(np.stack([lp[:, 1], lp[:, 2]], axis=1))
        all_wts.append(W / 6.0)
    return QuadratureRule(np.vstack(all_pts), np.concatenate(all_wts),
                          2 * n - 1)


def integrate_monomial_exact(a: int, b: int) -> float:
    """Analytic integral of x^a y^b over the reference triangle."""
    return factorial(a) * factorial(b) / factorial(a + b + 2)
