import numpy as np
import pytest

from oracles import dense_galerkin, dense_kkt_control
from ttiga.assembly import discretize
from ttiga.control import (
    ControlError,
    ControlParams,
    TimeGrid,
    build_spacetime_operators,
    control_preconditioner,
    desired_state_tt,
    euler_matrix,
    mass_apply,
    mass_factors,
    solve_optimal_control,
)
from ttiga.geometry import MultiPatch, box_patch, builtin_geometry, quarter_annulus_patch
from ttiga.harness import desired_time_factor
from ttiga.tt_core import BlockTTVector, TTVector

TIGHT = ControlParams(tol=1e-8, inner_tol=1e-10, inner_local_tol=1e-11, eps=1e-10)


def single_patch(patch):
    return MultiPatch((patch,), (), ((True,) * 6,), "single")


def y_space(x, y, z):
    return np.sin(np.pi * z) * (x * x + y)


def test_euler_matrix_and_time_grid():
    assert np.array_equal(euler_matrix(3), [[1, 0, 0], [-1, 1, 0], [0, -1, 1]])
    g = TimeGrid(2.0, 4)
    assert g.tau == 0.5 and np.allclose(g.times, [0.5, 1.0, 1.5, 2.0])
    with pytest.raises(ControlError):
        TimeGrid(1.0, 0)
    with pytest.raises(ControlError):
        euler_matrix(0)


def test_spacetime_stiffness_structure():
    mp = single_patch(box_patch((0, 0, 0), (1, 1, 1)))
    discs = discretize(mp, 2, 2)
    g = TimeGrid(1.0, 3)
    B = build_spacetime_operators(mp, discs, g, 1e-12)
    M, K = dense_galerkin(mp.patches[0], discs[0])
    Kb = B.kbar[0].to_dense()
    n = M.shape[0]
    assert np.allclose(Kb, np.kron(np.eye(3), g.tau * K) + np.kron(euler_matrix(3), M), atol=1e-12)
    assert np.allclose(B.mass[0].to_dense(), np.kron(np.eye(3), M), atol=1e-12)
    # implicit Euler couples only to the previous step: block lower triangular
    for a in range(3):
        for b in range(a + 1, 3):
            assert not np.any(Kb[a * n:(a + 1) * n, b * n:(b + 1) * n])


@pytest.mark.parametrize("patch", [box_patch((0, 0, 0), (1, 2, 1)), quarter_annulus_patch(1, 2, 0, 1)],
                         ids=["box", "annulus"])
def test_control_matches_dense_kkt(patch):
    mp = single_patch(patch)
    discs = discretize(mp, 3, 2)
    assert discs[0].trimmed_sizes == (3, 3, 3)
    g, alpha = TimeGrid(1.0, 2), 1e-2
    B = build_spacetime_operators(mp, discs, g, TIGHT.eps)
    yh = desired_state_tt(mp, discs, y_space, desired_time_factor, g, TIGHT.eps)
    sol = solve_optimal_control(B, yh, alpha, TIGHT)
    assert sol.report.converged
    M, K = dense_galerkin(patch, discs[0])
    y, u, mu = dense_kkt_control(M, K, yh.blocks[0].full_vector(), g.tau, alpha, g.N_t)
    ut = sol.u.blocks[0].full_vector()
    assert np.linalg.norm(ut - u) <= 100 * TIGHT.tol * np.linalg.norm(u)
    assert np.linalg.norm(sol.y.blocks[0].full_vector() - y) <= 100 * TIGHT.tol * np.linalg.norm(y)
    assert sol.diagnostics["kkt_residual"] < 1e-6


def test_zero_target_gives_zero_control():
    mp = single_patch(box_patch((0, 0, 0), (1, 1, 1)))
    discs = discretize(mp, 2, 2)
    g = TimeGrid(1.0, 3)
    B = build_spacetime_operators(mp, discs, g, 1e-10)
    yh = BlockTTVector([0], [TTVector.zeros(discs[0].trimmed_sizes + (3,))])
    sol = solve_optimal_control(B, yh, 1e-2)
    assert sol.u.norm() == 0.0 and sol.y.norm() == 0.0
    with pytest.raises(ControlError):
        solve_optimal_control(B, yh, 0.0)


def test_preconditioner_inverts_separable_mass():
    # on an axis-aligned box M is exactly a Kronecker product
    mp = single_patch(box_patch((0, 0, 0), (2, 1, 3)))
    discs = discretize(mp, 2, 3)
    g, alpha = TimeGrid(1.0, 4), 0.3
    B = build_spacetime_operators(mp, discs, g, 1e-12)
    facs = mass_factors(B.space_mass[0])
    assert np.allclose(np.kron(facs[2], np.kron(facs[1], facs[0])), B.space_mass[0].to_dense())
    P = control_preconditioner(B, alpha)
    v = BlockTTVector([0], [TTVector.random(discs[0].trimmed_sizes + (4,), [2, 2, 2], 0)])
    back = P(mass_apply(B, v, None) * (g.tau * alpha))
    assert np.allclose(back.blocks[0].full_vector(), v.blocks[0].full_vector())


def test_lagrangian_equals_objective_at_solution():
    mp = single_patch(quarter_annulus_patch(1, 2, 0, 1))
    discs = discretize(mp, 2, 2)
    g = TimeGrid(1.0, 3)
    B = build_spacetime_operators(mp, discs, g, 1e-10)
    yh = desired_state_tt(mp, discs, y_space, desired_time_factor, g, 1e-10)
    d = solve_optimal_control(B, yh, 1e-1, TIGHT).diagnostics
    assert d["lagrangian"] == pytest.approx(d["objective"], rel=1e-6)
    assert d["objective"] > 0 and d["u_norm_mass"] > 0


def test_multipatch_control_keeps_state_and_adjoint_continuous():
    mp = builtin_geometry("four_cuboids")
    discs = discretize(mp, 2, 2)
    g = TimeGrid(1.0, 3)
    params = ControlParams()
    B = build_spacetime_operators(mp, discs, g, params.eps)
    yh = desired_state_tt(mp, discs, lambda x, y, z: np.sin(3 * np.pi * x) * np.sin(np.pi * y) * np.sin(np.pi * z),
                          desired_time_factor, g, params.eps)
    sol = solve_optimal_control(B, yh, 1e-2, params)
    d = sol.diagnostics
    assert sol.report.converged and d["inner_failures"] == 0
    assert d["jump_residual_y"] <= 10 * params.inner_tol
    assert d["jump_residual_mu"] <= 10 * params.inner_tol
