"""Error indicator and adaptive loop tests.

Hand oracle: for the zero discrete pair with load f = 1 on the
2-triangle square, the interior indicator reduces to
h^4 * int_K 1 = 4 * 1/2 = 2 per element (h = sqrt(2)), all edge terms
vanish, so eta = sqrt(4) = 2.
"""

import numpy as np
import pytest

from platefem.assembly import MaterialParams, StabilizationParams
from platefem.estimator import (IndicatorSet, adaptive_loop,
                                compute_indicators, dorfler_mark)
from platefem.mesh import lshape_mesh, uniform_refine, unit_square_mesh
from platefem.solve_post import Solution, recover_shear
from platefem.space import build_spaces

MAT = MaterialParams(0.3)
STAB = StabilizationParams(alpha=0.1, gamma=1.0)
ONE = lambda x, y: np.ones_like(np.asarray(x, dtype=float))
ZERO = lambda x, y: np.zeros_like(np.asarray(x, dtype=float))


def _zero_solution(m, k):
    spaces = build_spaces(m, k)
    return Solution(spaces, MAT, STAB, np.zeros(spaces.n_scalar),
                    np.zeros((spaces.n_vector, 2)), 0.0)


def _fake_indicators(eta_K_sq):
    eta_K_sq = np.asarray(eta_K_sq, dtype=float)
    empty = np.array([], dtype=np.int64)
    return IndicatorSet(
        mesh=None, eta_tilde_sq=eta_K_sq, edge_ids=empty,
        eta_edge_sq=np.array([]), s_edge_ids=empty, eta_s_sq=np.array([]),
        f_edge_ids=empty, eta_f_sq=np.array([]), eta_K_sq=eta_K_sq,
        eta=float(np.sqrt(eta_K_sq.sum())))


# ---------------------------------------------------------------------
# Indicator values
# ---------------------------------------------------------------------

def test_indicators_zero_for_zero_data(square2):
    sol = _zero_solution(square2, 1)
    ind = compute_indicators(sol, recover_shear(sol), ZERO)
    assert ind.eta == 0.0
    assert np.all(ind.eta_K_sq == 0.0)


def test_interior_residual_hand_value(square2):
    sol = _zero_solution(square2, 1)
    ind = compute_indicators(sol, recover_shear(sol), ONE)
    assert np.allclose(ind.eta_tilde_sq, 2.0, atol=1e-13)
    assert np.allclose(ind.eta_edge_sq, 0.0, atol=1e-15)
    assert ind.eta == pytest.approx(2.0, abs=1e-13)


def test_local_indicators_sum_to_global(solved_free_k2):
    case, sol, shear = solved_free_k2
    ind = compute_indicators(sol, shear, case.f)
    assert ind.eta == pytest.approx(np.sqrt(ind.eta_K_sq.sum()), rel=1e-14)
    # Every edge family contribution lands in exactly one or two cells.
    total = (ind.eta_tilde_sq.sum() + ind.eta_edge_sq.sum()
             + ind.eta_s_sq.sum() + ind.eta_f_sq.sum())
    assert ind.eta_K_sq.sum() == pytest.approx(total, rel=1e-13)


def test_free_edge_terms_present(solved_free_k2):
    case, sol, shear = solved_free_k2
    ind = compute_indicators(sol, shear, case.f)
    assert len(ind.f_edge_ids) == 3 * 4  # three free sides of a 4x4 mesh
    assert ind.eta_f_sq.sum() > 0.0


def test_indicator_positive_on_solved_problem(solved_clamped_k1):
    case, sol, shear = solved_clamped_k1
    ind = compute_indicators(sol, shear, case.f)
    assert ind.eta > 0.0
    assert np.all(ind.eta_K_sq >= 0.0)
    assert len(ind.s_edge_ids) == 0 and len(ind.f_edge_ids) == 0


# ---------------------------------------------------------------------
# Marking
# ---------------------------------------------------------------------

def test_dorfler_textbook_example():
    ind = _fake_indicators([16.0, 9.0, 4.0, 1.0])
    assert dorfler_mark(ind, 0.5) == {0}
    assert dorfler_mark(ind, 0.6) == {0, 1}
    assert dorfler_mark(ind, 0.999) == {0, 1, 2, 3}


def test_dorfler_uniform():
    ind = _fake_indicators([1.0] * 10)
    assert len(dorfler_mark(ind, 0.3)) == 3


def test_dorfler_zero_and_bad_theta():
    ind = _fake_indicators([0.0, 0.0])
    assert dorfler_mark(ind, 0.5) == set()
    with pytest.raises(ValueError):
        dorfler_mark(ind, 0.0)
    with pytest.raises(ValueError):
        dorfler_mark(ind, 1.0)


def test_dorfler_skips_zero_indicator_cells():
    ind = _fake_indicators([4.0, 0.0, 0.0])
    marked = dorfler_mark(ind, 0.9)
    assert marked == {0}


# ---------------------------------------------------------------------
# Adaptive loop
# ---------------------------------------------------------------------

def test_adaptive_loop_zero_iters():
    steps = adaptive_loop(unit_square_mesh(2, "CCCC"), 1, ONE, MAT,
                          max_iters=0)
    assert len(steps) == 1
    assert steps[0].indicators.eta > 0.0


def test_adaptive_loop_step_count_and_growth():
    steps = adaptive_loop(unit_square_mesh(2, "CCCC"), 1, ONE, MAT,
                          theta=0.5, max_iters=3)
    assert len(steps) == 4
    nt = [s.mesh.n_triangles for s in steps]
    assert all(b > a for a, b in zip(nt, nt[1:]))


def test_adaptive_loop_dof_budget():
    steps = adaptive_loop(unit_square_mesh(2, "CCCC"), 1, ONE, MAT,
                          theta=0.5, max_iters=50, dof_budget=200)
    assert len(steps) < 51
    assert steps[-2].n_free_dofs < 200 or len(steps) == 1


def test_reentrant_corner_concentration():
    # On the L-shape the strongest indicators cluster at the reentrant
    # corner (0.5, 0.5).
    m = uniform_refine(uniform_refine(lshape_mesh()))
    steps = adaptive_loop(m, 2, ONE, MAT, max_iters=0)
    ind = steps[0].indicators
    cent = m.vertices[m.triangles].mean(axis=1)
    dist = np.linalg.norm(cent - [0.5, 0.5], axis=1)
    assert dist[int(np.argmax(ind.eta_K_sq))] < 0.25


def test_adaptive_eta_decreases():
    steps = adaptive_loop(unit_square_mesh(2, "CCCC"), 2, ONE, MAT,
                          theta=0.5, max_iters=5)
    etas = [s.indicators.eta for s in steps]
    assert etas[-1] < etas[0]
