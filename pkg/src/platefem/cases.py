"""Built-in benchmark problems.

The clamped polynomial case has a closed-form solution; the free-edge
square and the L-shaped domain use h/2 reference errors instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial import Polynomial

from .assembly import MaterialParams
from .mesh import Mesh, lshape_mesh, unit_square_mesh


class SeparablePolySolution:
    """Exact bundle for w(x, y) = X(x) Y(y) with polynomial factors."""

    def __init__(self, X: Polynomial, Y: Polynomial, nu: float):
        self.nu = nu
        self._dX = [X.deriv(i) if i else X for i in range(5)]
        self._dY = [Y.deriv(i) if i else Y for i in range(5)]

    def _term(self, i, j, x, y):
        return self._dX[i](x) * self._dY[j](y)

    def w(self, x, y):
        return self._term(0, 0, x, y)

    def grad(self, x, y):
        return np.stack([self._term(1, 0, x, y), self._term(0, 1, x, y)],
                        axis=-1)

    def hess(self, x, y):
        wxx = self._term(2, 0, x, y)
        wxy = self._term(1, 1, x, y)
        wyy = self._term(0, 2, x, y)
        return np.stack([np.stack([wxx, wxy], axis=-1),
                         np.stack([wxy, wyy], axis=-1)], axis=-2)

    def grad_laplacian(self, x, y):
        gx = self._term(3, 0, x, y) + self._term(1, 2, x, y)
        gy = self._term(2, 1, x, y) + self._term(0, 3, x, y)
        return np.stack([gx, gy], axis=-1)

    def q(self, x, y):
        return -self.grad_laplacian(x, y) / (6.0 * (1.0 - self.nu))

    def biharmonic(self, x, y):
        return (self._term(4, 0, x, y) + 2.0 * self._term(2, 2, x, y)
                + self._term(0, 4, x, y))

    def load(self, x, y):
        return self.biharmonic(x, y) / (6.0 * (1.0 - self.nu))


@dataclass(frozen=True)
class ProblemCase:
    name: str
    base_mesh: Mesh
    f: Callable
    material: MaterialParams
    exact: SeparablePolySolution | None = None

    def self_audit(self, n_points=50, seed=1234, tol=1e-3):
        """Check internal consistency of the exact bundle.

        The rotation must be the deflection gradient (holds by
        construction here, verified by finite differences) and the load
        must match the scaled biharmonic of the deflection.
        """
        if self.exact is None:
            return
        rng = np.random.default_rng(seed)
        x = rng.uniform(0.05, 0.95, n_points)
        y = rng.uniform(0.05, 0.95, n_points)
        ex = self.exact
        eps = 1e-4
        gx_fd = (ex.w(x + eps, y) - ex.w(x - eps, y)) / (2 * eps)
        gy_fd = (ex.w(x, y + eps) - ex.w(x, y - eps)) / (2 * eps)
        g = ex.grad(x, y)
        assert np.allclose(g[..., 0], gx_fd, atol=1e-6, rtol=1e-6)
        assert np.allclose(g[..., 1], gy_fd, atol=1e-6, rtol=1e-6)

        # Fourth derivatives need a coarser step: nested second
        # differences divide by eps^4, so eps = 1e-4 would leave no
        # significant digits.
        eb = 1e-2

        def lap(fx, fy):
            return ((ex.w(fx + eb, fy) + ex.w(fx - eb, fy)
                     + ex.w(fx, fy + eb) + ex.w(fx, fy - eb)
                     - 4 * ex.w(fx, fy)) / eb ** 2)

        bih_fd = ((lap(x + eb, y) + lap(x - eb, y) + lap(x, y + eb)
                   + lap(x, y - eb) - 4 * lap(x, y)) / eb ** 2)
        f_fd = bih_fd / (6.0 * (1.0 - ex.nu))
        fv = self.f(x, y)
        scale = np.maximum(np.abs(fv), 1.0)
        assert np.all(np.abs(fv - f_fd) / scale < tol), \
            "load inconsistent with the deflection"


def case_clamped_poly(n: int = 8, nu: float = 0.3) -> ProblemCase:
    """Unit square, fully clamped, w = x^2 (1-x)^2 y^2 (1-y)^2."""
    X = Polynomial([0.0, 0.0, 1.0, -2.0, 1.0])
    exact = SeparablePolySolution(X, X, nu)
    return ProblemCase(
        name="clamped_poly",
        base_mesh=unit_square_mesh(n, "CCCC"),
        f=exact.load,
        material=MaterialParams(nu),
        exact=exact)


def case_free_edge(n: int = 8, nu: float = 0.3) -> ProblemCase:
    """Unit square, left edge clamped, the rest free; f = 1."""
    return ProblemCase(
        name="free_edge",
        base_mesh=unit_square_mesh(n, "FFFC"),
        f=lambda x, y: np.ones_like(np.asarray(x, dtype=float)),
        material=MaterialParams(nu))


def case_lshape(nu: float = 0.3) -> ProblemCase:
    """L-shaped domain, clamped boundary, f = 1."""
    return ProblemCase(
        name="lshape",
        base_mesh=lshape_mesh(),
        f=lambda x, y: np.ones_like(np.asarray(x, dtype=float)),
        material=MaterialParams(nu))


CASES = {
    "clamped-poly": case_clamped_poly,
    "free-edge": case_free_edge,
    "lshape": case_lshape,
}
