import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttiga.solvers import SolverParams, local_tt_solve, tt_gmres_block
from ttiga.tt_core import (
    BlockTTVector,
    CanonicalSum,
    TTOperator,
    TTVector,
    canonical_to_tt,
    tt_apply,
    tt_from_dense,
)


def spd_kron_sum(sizes, seed):
    """Kronecker sum ``sum_d I x .. x A_d x .. x I`` with SPD ``A_d``."""
    rng = np.random.default_rng(seed)
    mats = []
    for n in sizes:
        B = rng.standard_normal((n, n))
        mats.append(B @ B.T + n * np.eye(n))
    D = len(sizes)
    terms = [[mats[d] if e == d else np.eye(n) for e, n in enumerate(sizes)] for d in range(D)]
    return canonical_to_tt(CanonicalSum(tuple(tuple(t) for t in terms)))


@settings(max_examples=15, deadline=None)
@given(st.lists(st.integers(2, 6), min_size=2, max_size=3).map(tuple), st.integers(0, 1000))
def test_local_solve_matches_dense(sizes, seed):
    A = spd_kron_sum(sizes, seed)
    b = TTVector.random(sizes, [2] * (len(sizes) - 1), seed + 1)
    x, rep = local_tt_solve(A, b, SolverParams(tol=1e-10))
    ref = np.linalg.solve(A.to_dense(), b.full_vector())
    assert rep.converged
    assert np.linalg.norm(x.full_vector() - ref) <= 1e-8 * np.linalg.norm(ref)
    assert rep.achieved_residual <= 1e-10


def test_local_solve_nonsymmetric():
    rng = np.random.default_rng(4)
    Ms = [np.eye(n) * 3 + 0.3 * rng.standard_normal((n, n)) for n in (4, 5, 3)]
    A = TTOperator.kron(Ms)
    b = TTVector.random((4, 5, 3), [2, 2], 1)
    x, rep = local_tt_solve(A, b, SolverParams(tol=1e-10))
    assert np.allclose(A.to_dense() @ x.full_vector(), b.full_vector(), atol=1e-9)


def test_zero_rhs_and_shape_error():
    A = spd_kron_sum((3, 4), 0)
    x, rep = local_tt_solve(A, TTVector.zeros((3, 4)))
    assert rep.converged and x.norm() == 0.0
    with pytest.raises(ValueError):
        local_tt_solve(A, TTVector.zeros((4, 3)))


def test_local_solve_is_deterministic():
    A = spd_kron_sum((5, 5, 5), 2)
    b = TTVector.random((5, 5, 5), [3, 3], 3)
    x1, _ = local_tt_solve(A, b, SolverParams(tol=1e-8, seed=7))
    x2, _ = local_tt_solve(A, b, SolverParams(tol=1e-8, seed=7))
    assert np.array_equal(x1.full_vector(), x2.full_vector())


def block_problem():
    ops = [spd_kron_sum((4, 3), 0), spd_kron_sum((3, 5), 1)]
    b = BlockTTVector(["a", "b"], [TTVector.random((4, 3), [2], 2), TTVector.random((3, 5), [2], 3)])

    def apply(v):
        return BlockTTVector(v.keys, [tt_apply(A, x) for A, x in zip(ops, v.blocks)])

    dense = [np.linalg.inv(A.to_dense()) for A in ops]
    return ops, b, apply, dense


def test_gmres_converges_to_dense_solution():
    ops, b, apply, dense = block_problem()
    x, rep = tt_gmres_block(apply, b, None, SolverParams(tol=1e-10, restart=30, max_iters=5))
    assert rep.converged
    for xi, bi, Ai in zip(x.blocks, b.blocks, dense):
        assert np.allclose(xi.full_vector(), Ai @ bi.full_vector(), atol=1e-8)


def test_gmres_with_exact_preconditioner_needs_one_step():
    ops, b, apply, dense = block_problem()

    def P(v):
        out = []
        for Ai, blk in zip(dense, v.blocks):
            out.append(tt_from_dense((Ai @ blk.full_vector()).reshape(blk.shape, order="F")))
        return BlockTTVector(v.keys, out)

    x, rep = tt_gmres_block(apply, b, P, SolverParams(tol=1e-10))
    assert rep.converged and rep.iterations <= 2


def test_gmres_zero_rhs_and_restart_budget():
    ops, b, apply, _ = block_problem()
    x, rep = tt_gmres_block(apply, BlockTTVector.zeros_like(b))
    assert rep.converged and x.norm() == 0.0
    _, rep = tt_gmres_block(apply, b, None, SolverParams(tol=1e-14, restart=2, max_iters=1))
    assert not rep.converged and rep.iterations <= 2
    assert rep.history[0] == 1.0 and rep.history[-1] < 1.0


def test_params_validation():
    with pytest.raises(ValueError):
        SolverParams(tol=0)
    with pytest.raises(ValueError):
        SolverParams(restart=0)
    assert SolverParams(tol=1e-4).rounding == pytest.approx(1e-5)
