"""Tensor-train vectors and operators.

Dense tensors use lexicographic order with mode 1 varying fastest, i.e. numpy
``order="F"``.  A TT vector holds cores of shape ``(R_{d-1}, n_d, R_d)`` and a
TT operator holds cores of shape ``(R_{d-1}, m_d, n_d, R_d)``; in both cases
``R_0 = R_D = 1``.  For an operator, the dense matrix is the Kronecker product
with mode 1 innermost, so ``kron_dense([A1, A2, A3]) == np.kron(A3, np.kron(A2, A1))``.

All objects are treated as immutable: operations return new objects and never
modify cores in place.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

DENSE_CAP = 10**6


class TTError(ValueError):
    pass


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def _check_chain(cores, order):
    if not cores:
        raise TTError("a TT object needs at least one core")
    for c in cores:
        if c.ndim != order:
            raise TTError(f"expected cores of order {order}, got shape {c.shape}")
    if cores[0].shape[0] != 1 or cores[-1].shape[-1] != 1:
        raise TTError("boundary ranks must be 1")
    for a, b in zip(cores[:-1], cores[1:]):
        if a.shape[-1] != b.shape[0]:
            raise TTError(f"rank chain broken: {a.shape} -> {b.shape}")


class TTVector:
    """Tensor train with cores ``(R_{d-1}, n_d, R_d)``."""

    __slots__ = ("cores",)

    def __init__(self, cores: Sequence[np.ndarray]):
        cores = tuple(_freeze(c) for c in cores)
        _check_chain(cores, 3)
        self.cores = cores

    @property
    def ndim(self) -> int:
        return len(self.cores)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        """Interior ranks ``(R_1, ..., R_{D-1})``."""
        return tuple(c.shape[2] for c in self.cores[:-1])

    @property
    def max_rank(self) -> int:
        return max(self.ranks, default=1)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def norm(self) -> float:
        return tt_norm(self)

    def to_dense(self, cap: int = DENSE_CAP) -> np.ndarray:
        return tt_to_dense(self, cap)

    def full_vector(self, cap: int = DENSE_CAP) -> np.ndarray:
        return tt_to_dense(self, cap).ravel(order="F")

    def __add__(self, other):
        return tt_add(self, other)

    def __sub__(self, other):
        return tt_add(self, tt_scale(other, -1.0))

    def __neg__(self):
        return tt_scale(self, -1.0)

    def __mul__(self, alpha):
        return tt_scale(self, alpha)

    __rmul__ = __mul__

    def __repr__(self):
        return f"TTVector(shape={self.shape}, ranks={self.ranks})"

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> "TTVector":
        return cls([np.zeros((1, n, 1)) for n in shape])

    @classmethod
    def ones(cls, shape: Sequence[int]) -> "TTVector":
        return cls([np.ones((1, n, 1)) for n in shape])

    @classmethod
    def rank_one(cls, vectors: Iterable[np.ndarray]) -> "TTVector":
        return cls([np.asarray(v, dtype=float).reshape(1, -1, 1) for v in vectors])

    @classmethod
    def random(cls, shape, ranks, rng=None) -> "TTVector":
        rng = np.random.default_rng(rng)
        r = [1, *ranks, 1]
        return cls([rng.standard_normal((r[d], n, r[d + 1])) for d, n in enumerate(shape)])


class TTOperator:
    """TT matrix with cores ``(R_{d-1}, m_d, n_d, R_d)``."""

    __slots__ = ("cores",)

    def __init__(self, cores: Sequence[np.ndarray]):
        cores = tuple(_freeze(c) for c in cores)
        _check_chain(cores, 4)
        self.cores = cores

    @property
    def ndim(self) -> int:
        return len(self.cores)

    @property
    def row_shape(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def col_shape(self) -> tuple[int, ...]:
        return tuple(c.shape[2] for c in self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(c.shape[3] for c in self.cores[:-1])

    @property
    def T(self) -> "TTOperator":
        return TTOperator([c.transpose(0, 2, 1, 3) for c in self.cores])

    def to_dense(self, cap: int = DENSE_CAP) -> np.ndarray:
        return tt_operator_to_dense(self, cap)

    def norm(self) -> float:
        return tt_norm(_op_as_vec(self))

    def __add__(self, other):
        return tt_add(self, other)

    def __sub__(self, other):
        return tt_add(self, tt_scale(other, -1.0))

    def __neg__(self):
        return tt_scale(self, -1.0)

    def __mul__(self, alpha):
        return tt_scale(self, alpha)

    __rmul__ = __mul__

    def __matmul__(self, x):
        if isinstance(x, TTVector):
            return tt_apply(self, x, None)
        return tt_compose(self, x, None)

    def __repr__(self):
        return f"TTOperator(rows={self.row_shape}, cols={self.col_shape}, ranks={self.ranks})"

    @classmethod
    def identity(cls, shape: Sequence[int]) -> "TTOperator":
        return cls([np.eye(n)[None, :, :, None] for n in shape])

    @classmethod
    def kron(cls, factors: Iterable[np.ndarray]) -> "TTOperator":
        """Rank-one operator from factor matrices, mode 1 first."""
        return cls([np.asarray(f, dtype=float)[None, :, :, None] for f in factors])


@dataclass(frozen=True)
class CanonicalSum:
    """Sum of Kronecker products; each term is a D-tuple of matrices (or vectors)."""

    terms: tuple

    def __post_init__(self):
        terms = tuple(tuple(np.asarray(f, dtype=float) for f in t) for t in self.terms)
        if not terms:
            raise TTError("canonical sum needs at least one term")
        ref = [f.shape for f in terms[0]]
        for t in terms:
            if [f.shape for f in t] != ref:
                raise TTError("inconsistent factor shapes across canonical terms")
        object.__setattr__(self, "terms", terms)

    @property
    def ndim(self) -> int:
        return len(self.terms[0])

    @property
    def rank(self) -> int:
        return len(self.terms)

    def to_dense(self, cap: int = DENSE_CAP) -> np.ndarray:
        out = None
        for t in self.terms:
            if t[0].ndim == 1:
                d = _outer_dense(t, cap)
            else:
                d = kron_dense(t, cap)
            out = d if out is None else out + d
        return out


@dataclass
class BlockTTVector:
    """Ordered TT blocks with unique keys (patch ids or interface ids)."""

    keys: list
    blocks: list

    def __post_init__(self):
        self.keys = list(self.keys)
        self.blocks = list(self.blocks)
        if len(set(self.keys)) != len(self.keys):
            raise TTError("block keys must be unique")
        if len(self.keys) != len(self.blocks):
            raise TTError("one key per block")

    def __len__(self):
        return len(self.blocks)

    def __getitem__(self, key):
        return self.blocks[self.keys.index(key)]

    def items(self):
        return zip(self.keys, self.blocks)

    def _check(self, other):
        if self.keys != other.keys:
            raise TTError("block keys differ")

    def map(self, fn: Callable) -> "BlockTTVector":
        return BlockTTVector(self.keys, [fn(b) for b in self.blocks])

    def __add__(self, other):
        self._check(other)
        return BlockTTVector(self.keys, [tt_add(a, b) for a, b in zip(self.blocks, other.blocks)])

    def __sub__(self, other):
        self._check(other)
        return BlockTTVector(
            self.keys, [tt_add(a, tt_scale(b, -1.0)) for a, b in zip(self.blocks, other.blocks)]
        )

    def __mul__(self, alpha):
        return self.map(lambda b: tt_scale(b, alpha))

    __rmul__ = __mul__

    def inner(self, other) -> float:
        self._check(other)
        return float(sum(tt_inner(a, b) for a, b in zip(self.blocks, other.blocks)))

    def norm(self) -> float:
        return float(np.sqrt(sum(tt_norm(b) ** 2 for b in self.blocks)))

    def round(self, tol: float) -> "BlockTTVector":
        return self.map(lambda b: tt_round(b, tol))

    @property
    def max_rank(self) -> int:
        return max((b.max_rank for b in self.blocks), default=1)

    @classmethod
    def zeros_like(cls, other: "BlockTTVector") -> "BlockTTVector":
        return cls(other.keys, [TTVector.zeros(b.shape) for b in other.blocks])


# ---------------------------------------------------------------- dense helpers


def _check_cap(shape, cap):
    size = int(np.prod(shape, dtype=np.int64))
    if size > cap:
        raise TTError(f"dense size {size} exceeds the oracle cap {cap}")


def kron_dense(factors: Sequence[np.ndarray], cap: int = DENSE_CAP) -> np.ndarray:
    """Dense Kronecker product with mode 1 innermost (fastest)."""
    rows = [f.shape[0] for f in factors]
    cols = [f.shape[1] for f in factors]
    _check_cap((np.prod(rows), np.prod(cols)), cap * cap)
    out = np.ones((1, 1))
    for f in factors:
        out = np.kron(f, out)
    return out


def _outer_dense(vectors, cap):
    _check_cap([len(v) for v in vectors], cap)
    out = np.ones(())
    for v in vectors:
        out = np.multiply.outer(out, v)
    return out


def tt_operator_to_dense(A: TTOperator, cap: int = DENSE_CAP) -> np.ndarray:
    m, n = A.row_shape, A.col_shape
    _check_cap((np.prod(m), np.prod(n)), cap * cap)
    out = np.ones((1, 1, 1))  # (rows, cols, rank)
    for c in A.cores:
        r0, mi, ni, r1 = c.shape
        t = np.einsum("xyr,rabs->axbys", out, c)
        out = t.reshape(out.shape[0] * mi, out.shape[1] * ni, r1)
    # the new mode is placed slowest, so mode 1 stays fastest
    return out[:, :, 0]


def _tt_to_dense_impl(x: TTVector) -> np.ndarray:
    out = np.ones((1, 1))  # (entries, rank)
    for c in x.cores:
        r0, n, r1 = c.shape
        out = np.einsum("xr,ras->axs", out, c).reshape(-1, r1)
    return out[:, 0]


def tt_to_dense(x: TTVector, cap: int = DENSE_CAP) -> np.ndarray:
    """Dense tensor of ``x``; raises when the entry count exceeds ``cap``."""
    _check_cap(x.shape, cap)
    return _tt_to_dense_impl(x).reshape(x.shape, order="F")


# ---------------------------------------------------------------- decompositions


def _svd_signfix(u, vt):
    # first nonzero entry of each left singular vector made positive
    idx = np.argmax(np.abs(u) > 1e-14 * np.max(np.abs(u), axis=0, initial=0.0), axis=0)
    s = np.sign(u[idx, np.arange(u.shape[1])])
    s[s == 0] = 1.0
    return u * s, vt * s[:, None]


def _trunc_rank(s: np.ndarray, delta: float) -> int:
    if s.size == 0 or s[0] == 0.0:
        return 1
    tail = np.sqrt(np.cumsum(s[::-1] ** 2))[::-1]  # tail[k] = ||s[k:]||
    r = int(np.sum(tail > delta))
    return max(r, 1)


def _svd(a):
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError:
        import scipy.linalg

        u, s, vt = scipy.linalg.svd(a, full_matrices=False, lapack_driver="gesvd")
    return _svd_signfix(u, vt) + (s,)


def tt_from_dense(t: np.ndarray, tol: float = 0.0) -> TTVector:
    """TT-SVD with threshold ``tol/sqrt(D-1) * ||t||`` per unfolding."""
    t = np.asarray(t, dtype=float)
    if tol < 0:
        raise TTError("tol must be nonnegative")
    if t.ndim == 0 or 0 in t.shape:
        raise TTError(f"invalid tensor shape {t.shape}")
    shape = t.shape
    D = len(shape)
    if D == 1:
        return TTVector([t.reshape(1, -1, 1)])
    delta = tol / np.sqrt(D - 1) * np.linalg.norm(t)
    cores = []
    r = 1
    c = t.reshape(-1, order="F")
    for d in range(D - 1):
        c = c.reshape(r * shape[d], -1, order="F")
        u, vt, s = _svd(c)
        rk = _trunc_rank(s, delta)
        cores.append(u[:, :rk].reshape(r, shape[d], rk, order="F"))
        c = s[:rk, None] * vt[:rk]
        r = rk
    cores.append(c.reshape(r, shape[-1], 1, order="F"))
    return TTVector(cores)


def _orth_right(cores):
    """Right-orthogonalize cores 1..D-1; returns new list with norm in core 0."""
    cores = [np.array(c) for c in cores]
    for d in range(len(cores) - 1, 0, -1):
        r0, n, r1 = cores[d].shape
        q, rr = np.linalg.qr(cores[d].reshape(r0, n * r1).T)
        cores[d] = q.T.reshape(-1, n, r1)
        cores[d - 1] = np.tensordot(cores[d - 1], rr.T, axes=(2, 0))
    return cores


def _orth_left(cores):
    cores = [np.array(c) for c in cores]
    for d in range(len(cores) - 1):
        r0, n, r1 = cores[d].shape
        q, rr = np.linalg.qr(cores[d].reshape(r0 * n, r1))
        cores[d] = q.reshape(r0, n, -1)
        cores[d + 1] = np.tensordot(rr, cores[d + 1], axes=(1, 0))
    return cores


def tt_round(x, tol: float):
    """TT rounding to relative accuracy ``tol`` (vectors and operators)."""
    if isinstance(x, TTOperator):
        return _vec_as_op(tt_round(_op_as_vec(x), tol), x)
    if tol < 0:
        raise TTError("tol must be nonnegative")
    D = x.ndim
    if D == 1:
        return x
    cores = _orth_right(x.cores)
    nrm = np.linalg.norm(cores[0])
    if nrm == 0.0:
        return TTVector.zeros(x.shape)
    delta = tol / np.sqrt(D - 1) * nrm
    for d in range(D - 1):
        r0, n, r1 = cores[d].shape
        u, vt, s = _svd(cores[d].reshape(r0 * n, r1))
        rk = _trunc_rank(s, delta)
        cores[d] = u[:, :rk].reshape(r0, n, rk)
        cores[d + 1] = np.tensordot(s[:rk, None] * vt[:rk], cores[d + 1], axes=(1, 0))
    return TTVector(cores)


def _op_as_vec(A: TTOperator) -> TTVector:
    return TTVector([c.reshape(c.shape[0], c.shape[1] * c.shape[2], c.shape[3]) for c in A.cores])


def _vec_as_op(x: TTVector, like: TTOperator | Sequence) -> TTOperator:
    if isinstance(like, TTOperator):
        pairs = list(zip(like.row_shape, like.col_shape))
    else:
        pairs = list(like)
    return TTOperator(
        [c.reshape(c.shape[0], m, n, c.shape[2]) for c, (m, n) in zip(x.cores, pairs)]
    )


# ---------------------------------------------------------------- arithmetic


def tt_scale(x, alpha: float):
    cores = list(x.cores)
    cores[0] = cores[0] * float(alpha)
    return type(x)(cores)


def _same_modes(x, y):
    if type(x) is not type(y):
        raise TTError("cannot mix TT vectors and operators")
    if isinstance(x, TTVector):
        if x.shape != y.shape:
            raise TTError(f"shape mismatch {x.shape} vs {y.shape}")
    elif x.row_shape != y.row_shape or x.col_shape != y.col_shape:
        raise TTError("operator shape mismatch")


def tt_add(x, y):
    """Entrywise sum via block-diagonal cores (no rounding)."""
    _same_modes(x, y)
    D = x.ndim
    if D == 1:
        return type(x)([x.cores[0] + y.cores[0]])
    cores = []
    for d, (a, b) in enumerate(zip(x.cores, y.cores)):
        mid = a.shape[1:-1]
        if d == 0:
            c = np.concatenate([a, b], axis=-1)
        elif d == D - 1:
            c = np.concatenate([a, b], axis=0)
        else:
            c = np.zeros((a.shape[0] + b.shape[0], *mid, a.shape[-1] + b.shape[-1]))
            c[: a.shape[0], ..., : a.shape[-1]] = a
            c[a.shape[0] :, ..., a.shape[-1] :] = b
        cores.append(c)
    return type(x)(cores)


def tt_sum(terms: Sequence, tol: float | None = None):
    """Sum of several TT objects, rounding after each addition when ``tol`` is set."""
    out = terms[0]
    for t in terms[1:]:
        out = tt_add(out, t)
        if tol is not None:
            out = tt_round(out, tol)
    return out


def tt_inner(x: TTVector, y: TTVector) -> float:
    _same_modes(x, y)
    v = np.ones((1, 1))
    for a, b in zip(x.cores, y.cores):
        v = np.einsum("ab,aic,bid->cd", v, a, b, optimize=True)
    return float(v[0, 0])


def tt_norm(x: TTVector) -> float:
    cores = _orth_left(x.cores)
    return float(np.linalg.norm(cores[-1]))


def tt_apply(A: TTOperator, x: TTVector, tol: float | None = None) -> TTVector:
    """Matrix-vector product; rounded at ``tol`` unless ``tol`` is None."""
    if A.col_shape != x.shape:
        raise TTError(f"operator columns {A.col_shape} do not match vector {x.shape}")
    cores = []
    for a, c in zip(A.cores, x.cores):
        ra0, m, n, ra1 = a.shape
        rx0, _, rx1 = c.shape
        cores.append(np.einsum("aijb,cjd->acibd", a, c).reshape(ra0 * rx0, m, ra1 * rx1))
    y = TTVector(cores)
    return y if tol is None else tt_round(y, tol)


def tt_compose(A: TTOperator, B: TTOperator, tol: float | None = None) -> TTOperator:
    """Operator product ``A B``; rounded at ``tol`` unless ``tol`` is None."""
    if A.col_shape != B.row_shape:
        raise TTError(f"cannot compose: {A.col_shape} vs {B.row_shape}")
    cores = []
    for a, b in zip(A.cores, B.cores):
        ra0, m, k, ra1 = a.shape
        rb0, _, n, rb1 = b.shape
        cores.append(np.einsum("aikb,ckjd->acijbd", a, b).reshape(ra0 * rb0, m, n, ra1 * rb1))
    C = TTOperator(cores)
    return C if tol is None else tt_round(C, tol)


def tt_concat(x, y):
    """Tensor product over disjoint modes: the modes of ``y`` follow those of ``x``."""
    if type(x) is not type(y):
        raise TTError("cannot mix TT vectors and operators")
    return type(x)(list(x.cores) + list(y.cores))


def canonical_to_tt(s: CanonicalSum):
    """Convert a canonical (Kronecker) sum to TT with ranks equal to the term count."""
    R = s.rank
    D = s.ndim
    is_vec = s.terms[0][0].ndim == 1
    cores = []
    for d in range(D):
        f = np.stack([t[d] for t in s.terms])  # (R, ...) factor stack
        if is_vec:
            f = f[:, :, None]
        if D == 1:
            c = f.sum(axis=0)[None, ..., None]
        elif d == 0:
            c = np.moveaxis(f, 0, -1)[None]
        elif d == D - 1:
            c = f[..., None]
        else:
            c = np.zeros((R, *f.shape[1:], R))
            for r in range(R):
                c[r, ..., r] = f[r]
        cores.append(c)
    op = TTOperator(cores)
    if is_vec:
        return TTVector([c[:, :, 0, :] for c in op.cores])
    return op


def tt_to_canonical(A: TTOperator, drop_tol: float = 0.0) -> CanonicalSum:
    """Enumerate the rank indices of a TT operator as Kronecker terms.

    Exact but the term count is the product of the interior ranks, so this is
    only meant for small ranks.
    """
    terms = []
    ranges = [range(r) for r in A.ranks]
    for idx in itertools.product(*ranges):
        full = (0, *idx, 0)
        term = tuple(A.cores[d][full[d], :, :, full[d + 1]] for d in range(A.ndim))
        if drop_tol > 0 and min(np.linalg.norm(f) for f in term) <= drop_tol:
            continue
        terms.append(term)
    if not terms:
        terms.append(tuple(np.zeros(c.shape[1:3]) for c in A.cores))
    return CanonicalSum(tuple(terms))


def tt_merge_modes(x, d: int):
    """Merge modes ``d`` and ``d+1`` (0-based) into one mode, mode ``d`` fastest."""
    if not 0 <= d < x.ndim - 1:
        raise TTError(f"cannot merge mode {d} of a {x.ndim}-mode tensor")
    a, b = x.cores[d], x.cores[d + 1]
    if isinstance(x, TTVector):
        c = np.einsum("aib,bjc->ajic", a, b)
        c = c.reshape(a.shape[0], b.shape[1] * a.shape[1], b.shape[2])
    else:
        c = np.einsum("aikb,bjlc->ajilkc", a, b)
        c = c.reshape(a.shape[0], b.shape[1] * a.shape[1], b.shape[2] * a.shape[2], b.shape[3])
    return type(x)(list(x.cores[:d]) + [c] + list(x.cores[d + 2 :]))


def tt_split_mode(x, d: int, sizes, tol: float = 0.0):
    """Split mode ``d`` into two modes (inverse of :func:`tt_merge_modes`).

    For operators ``sizes`` is ``((m_a, m_b), (n_a, n_b))``; for vectors it is
    ``(n_a, n_b)``.  The split is exact when ``tol == 0``.
    """
    if not 0 <= d < x.ndim:
        raise TTError(f"invalid mode index {d}")
    c = x.cores[d]
    r0, r1 = c.shape[0], c.shape[-1]
    if isinstance(x, TTVector):
        na, nb = sizes
        if na * nb != c.shape[1]:
            raise TTError("split sizes do not match the mode size")
        t = c.reshape(r0, nb, na, r1).transpose(0, 2, 1, 3).reshape(r0 * na, nb * r1)
        u, vt, s = _svd(t)
        rk = _trunc_rank(s, tol * np.linalg.norm(s))
        left = u[:, :rk].reshape(r0, na, rk)
        right = (s[:rk, None] * vt[:rk]).reshape(rk, nb, r1)
    else:
        (ma, mb), (na, nb) = sizes
        if ma * mb != c.shape[1] or na * nb != c.shape[2]:
            raise TTError("split sizes do not match the mode sizes")
        t = c.reshape(r0, mb, ma, nb, na, r1).transpose(0, 2, 4, 1, 3, 5)
        t = t.reshape(r0 * ma * na, mb * nb * r1)
        u, vt, s = _svd(t)
        rk = _trunc_rank(s, tol * np.linalg.norm(s))
        left = u[:, :rk].reshape(r0, ma, na, rk)
        right = (s[:rk, None] * vt[:rk]).reshape(rk, mb, nb, r1)
    return type(x)(list(x.cores[:d]) + [left, right] + list(x.cores[d + 1 :]))


def tt_mode_product(x: TTVector, d: int, mat: np.ndarray) -> TTVector:
    """Multiply mode ``d`` by a matrix: core ``d`` becomes ``mat @ core`` along the mode."""
    cores = list(x.cores)
    cores[d] = np.einsum("ij,ajb->aib", mat, cores[d])
    return TTVector(cores)


def tt_slice(x, d: int, sl: slice, cols: slice | None = None):
    """Restrict mode ``d`` to an index range (rows and optionally columns for operators)."""
    cores = list(x.cores)
    if isinstance(x, TTVector):
        cores[d] = cores[d][:, sl, :]
    else:
        cores[d] = cores[d][:, sl, sl if cols is None else cols, :]
    return type(x)(cores)


def tt_diag_embed(x: TTVector) -> TTOperator:
    """Diagonal operator whose diagonal is the TT vector ``x``."""
    cores = []
    for c in x.cores:
        r0, n, r1 = c.shape
        o = np.zeros((r0, n, n, r1))
        o[:, np.arange(n), np.arange(n), :] = c
        cores.append(o)
    return TTOperator(cores)
