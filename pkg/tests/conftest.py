"""Shared fixtures: small meshes and solved problems reused across tests."""

import numpy as np
import pytest

from platefem.assembly import (MaterialParams, assemble, auto_stabilization,
                               StabilizationParams)
from platefem.mesh import Mesh, unit_square_mesh
from platefem.solve_post import recover_shear, solve
from platefem.space import build_spaces


@pytest.fixture(scope="session")
def square2():
    """Unit square split into 2 triangles, all edges clamped."""
    return unit_square_mesh(1, "CCCC")


@pytest.fixture(scope="session")
def square2_free():
    """Same 2-triangle square, left edge clamped, the rest free."""
    return unit_square_mesh(1, "FFFC")


@pytest.fixture(scope="session")
def single_triangle():
    """The reference triangle as a 1-element mesh, clamped boundary."""
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    tris = np.array([[0, 1, 2]])
    from platefem.mesh import BoundaryLabel
    C = BoundaryLabel.CLAMPED
    labels = {(0, 1): C, (1, 2): C, (0, 2): C}
    return Mesh(verts, tris, labels)


@pytest.fixture(scope="session")
def solved_clamped_k1():
    """Solved polynomial clamped case on a 4x4 mesh, k = 1."""
    from platefem.cases import case_clamped_poly
    case = case_clamped_poly(4)
    spaces = build_spaces(case.base_mesh, 1)
    stab = auto_stabilization(case.base_mesh, spaces, case.material)
    system = assemble(case.base_mesh, spaces, case.material, stab, case.f)
    sol = solve(system)
    return case, sol, recover_shear(sol)


@pytest.fixture(scope="session")
def solved_free_k2():
    """Solved free-edge case on a 4x4 mesh, k = 2."""
    from platefem.cases import case_free_edge
    case = case_free_edge(4)
    spaces = build_spaces(case.base_mesh, 2)
    stab = auto_stabilization(case.base_mesh, spaces, case.material)
    system = assemble(case.base_mesh, spaces, case.material, stab, case.f)
    sol = solve(system)
    return case, sol, recover_shear(sol)
