import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttiga.tt_core import (
    BlockTTVector,
    CanonicalSum,
    TTError,
    TTOperator,
    TTVector,
    canonical_to_tt,
    kron_dense,
    tt_add,
    tt_apply,
    tt_compose,
    tt_concat,
    tt_diag_embed,
    tt_from_dense,
    tt_inner,
    tt_merge_modes,
    tt_mode_product,
    tt_norm,
    tt_round,
    tt_slice,
    tt_split_mode,
    tt_to_canonical,
)

shapes = st.lists(st.integers(1, 5), min_size=1, max_size=4).map(tuple)


def rand_tt(shape, rank, seed):
    return TTVector.random(shape, [rank] * (len(shape) - 1), seed)


def rand_op(shape, rank, seed):
    rng = np.random.default_rng(seed)
    r = [1] + [rank] * (len(shape) - 1) + [1]
    return TTOperator([rng.standard_normal((r[d], n, n, r[d + 1])) for d, n in enumerate(shape)])


def test_dense_ordering_mode_one_fastest():
    a, b = np.arange(2.0) + 1, np.arange(3.0) + 1
    x = TTVector.rank_one([a, b])
    assert np.allclose(x.full_vector(), np.kron(b, a))
    A1, A2 = np.random.default_rng(0).standard_normal((2, 2, 2))
    assert np.allclose(TTOperator.kron([A1, A2]).to_dense(), np.kron(A2, A1))
    assert np.allclose(kron_dense([A1, A2]), np.kron(A2, A1))


@settings(max_examples=30, deadline=None)
@given(shapes, st.integers(0, 10_000))
def test_from_dense_round_trip(shape, seed):
    t = np.random.default_rng(seed).standard_normal(shape)
    assert np.allclose(tt_from_dense(t).to_dense(), t, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(shapes, st.integers(1, 4), st.sampled_from([1e-1, 1e-3, 1e-8]), st.integers(0, 10_000))
def test_rounding_error_bound(shape, rank, tol, seed):
    x = rand_tt(shape, rank, seed)
    y = tt_round(x, tol)
    err = np.linalg.norm(y.to_dense() - x.to_dense())
    assert err <= tol * x.norm() * (1 + 1e-8) + 1e-13
    bounds = [min(np.prod(shape[: d + 1]), np.prod(shape[d + 1 :])) for d in range(len(shape) - 1)]
    assert all(r <= q for r, q in zip(y.ranks, bounds))


def test_rounding_removes_redundant_rank():
    x = rand_tt((4, 5, 6), 3, 1)
    y = tt_round(x + x, 1e-12)
    assert y.ranks == tt_round(x, 1e-12).ranks
    assert np.allclose(y.to_dense(), 2 * x.to_dense())


@settings(max_examples=25, deadline=None)
@given(shapes, st.integers(0, 10_000))
def test_inner_and_norm(shape, seed):
    x, y = rand_tt(shape, 2, seed), rand_tt(shape, 3, seed + 1)
    assert np.isclose(tt_inner(x, y), np.vdot(x.to_dense(), y.to_dense()))
    assert np.isclose(tt_norm(x), np.linalg.norm(x.to_dense()))


@settings(max_examples=25, deadline=None)
@given(shapes, st.integers(0, 10_000))
def test_apply_and_compose_match_dense(shape, seed):
    A, B = rand_op(shape, 2, seed), rand_op(shape, 2, seed + 7)
    x = rand_tt(shape, 2, seed + 3)
    assert np.allclose(tt_apply(A, x).full_vector(), A.to_dense() @ x.full_vector())
    assert np.allclose(tt_compose(A, B).to_dense(), A.to_dense() @ B.to_dense())
    assert np.allclose(A.T.to_dense(), A.to_dense().T)


def test_add_scale_and_operator_rounding():
    A = rand_op((3, 4, 2), 2, 0)
    S = tt_round(tt_add(A, A * 0.5), 1e-12)
    assert np.allclose(S.to_dense(), 1.5 * A.to_dense())
    assert S.ranks == tt_round(A, 1e-12).ranks


def test_merge_split_inverse():
    x = rand_tt((3, 4, 5), 2, 5)
    m = tt_merge_modes(x, 1)
    assert m.shape == (3, 20)
    assert np.allclose(m.full_vector(), x.full_vector())
    back = tt_split_mode(m, 1, (4, 5))
    assert np.allclose(back.to_dense(), x.to_dense())
    A = rand_op((2, 3, 4), 2, 2)
    mA = tt_merge_modes(A, 0)
    assert np.allclose(mA.to_dense(), A.to_dense())
    assert np.allclose(tt_split_mode(mA, 0, ((2, 3), (2, 3))).to_dense(), A.to_dense())


def test_concat_slice_mode_product_diag():
    x, y = rand_tt((2, 3), 2, 0), rand_tt((4,), 1, 1)
    xy = tt_concat(x, y)
    assert np.allclose(xy.to_dense(), np.einsum("ij,k->ijk", x.to_dense(), y.to_dense()))
    s = tt_slice(xy, 1, slice(1, 3))
    assert np.allclose(s.to_dense(), xy.to_dense()[:, 1:3])
    M = np.arange(9.0).reshape(3, 3)
    assert np.allclose(tt_mode_product(x, 1, M).to_dense(), x.to_dense() @ M.T)
    assert np.allclose(tt_diag_embed(x).to_dense(), np.diag(x.full_vector()))


def test_canonical_round_trip():
    rng = np.random.default_rng(3)
    terms = [tuple(rng.standard_normal((n, n)) for n in (2, 3, 2)) for _ in range(3)]
    C = CanonicalSum(tuple(terms))
    T = canonical_to_tt(C)
    assert T.ranks == (3, 3)
    assert np.allclose(T.to_dense(), C.to_dense())
    assert np.allclose(CanonicalSum(tt_to_canonical(T).terms).to_dense(), C.to_dense())


def test_errors():
    with pytest.raises(TTError):
        tt_apply(rand_op((2, 3), 1, 0), rand_tt((3, 2), 1, 0))
    with pytest.raises(TTError):
        TTVector([np.ones((1, 2, 2)), np.ones((3, 2, 1))])
    with pytest.raises(TTError):
        tt_round(rand_tt((2, 2), 1, 0), -1.0)
    with pytest.raises(TTError):
        TTVector.zeros((10,) * 7).to_dense()


def test_block_vector_algebra():
    a = BlockTTVector(["a", "b"], [rand_tt((2, 3), 1, 0), rand_tt((4,), 1, 1)])
    b = BlockTTVector(["a", "b"], [rand_tt((2, 3), 2, 2), rand_tt((4,), 1, 3)])
    dense = lambda v: np.concatenate([blk.full_vector() for blk in v.blocks])
    assert np.allclose(dense((a + b * 2.0).round(1e-12)), dense(a) + 2 * dense(b))
    assert np.isclose(a.inner(b), dense(a) @ dense(b))
    assert np.isclose(a.norm(), np.linalg.norm(dense(a)))
    assert BlockTTVector.zeros_like(a).norm() == 0.0
    with pytest.raises(TTError):
        a + BlockTTVector(["b", "a"], list(b.blocks))
