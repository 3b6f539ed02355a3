"""Univariate B-spline spaces on open knot vectors in [0, 1].

Basis functions are evaluated with the Cox-de Boor recursion in its
triangular-table form (all nonzero functions of one span at once), vectorized
over evaluation points.  The right end ``x = 1`` belongs to the last nonempty
span, so every space is a partition of unity on the closed interval.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from functools import cached_property

import numpy as np


class SplineError(ValueError):
    pass


@dataclass(frozen=True)
class KnotVector:
    degree: int
    knots: tuple

    def __post_init__(self):
        p = int(self.degree)
        t = tuple(float(v) for v in self.knots)
        object.__setattr__(self, "degree", p)
        object.__setattr__(self, "knots", t)
        if p < 0:
            raise SplineError("degree must be nonnegative")
        if len(t) < 2 * (p + 1):
            raise SplineError("knot vector too short for its degree")
        if any(b < a for a, b in zip(t[:-1], t[1:])):
            raise SplineError("knots must be nondecreasing")
        if t[: p + 1] != (0.0,) * (p + 1) or t[-(p + 1) :] != (1.0,) * (p + 1):
            raise SplineError("end knots must be 0 and 1 repeated p+1 times")
        if p + 1 < len(t) - p - 1 and (t[p + 1] == 0.0 or t[-p - 2] == 1.0):
            raise SplineError("end knot multiplicity exceeds p+1")
        interior = Counter(t[p + 1 : len(t) - p - 1])
        if interior and max(interior.values()) > p:
            raise SplineError("interior knot multiplicity exceeds p")

    @property
    def n(self) -> int:
        return len(self.knots) - self.degree - 1

    @cached_property
    def array(self) -> np.ndarray:
        a = np.array(self.knots)
        a.setflags(write=False)
        return a

    @property
    def interior(self) -> tuple:
        return self.knots[self.degree + 1 : len(self.knots) - self.degree - 1]

    @property
    def breakpoints(self) -> np.ndarray:
        return np.unique(self.array)


@dataclass(frozen=True)
class SplineSpace:
    knot_vector: KnotVector

    @property
    def p(self) -> int:
        return self.knot_vector.degree

    @property
    def degree(self) -> int:
        return self.knot_vector.degree

    @property
    def knots(self) -> np.ndarray:
        return self.knot_vector.array

    @property
    def n(self) -> int:
        return self.knot_vector.n

    @property
    def n_elements(self) -> int:
        return len(self.knot_vector.breakpoints) - 1

    def __repr__(self):
        return f"SplineSpace(p={self.p}, n={self.n}, elements={self.n_elements})"


@dataclass(frozen=True)
class QuadratureGrid:
    nodes: np.ndarray
    weights: np.ndarray
    points_per_span: int
    spans: np.ndarray


def make_open_knot_vector(p: int, interior_knots=()) -> KnotVector:
    interior = [float(v) for v in interior_knots]
    if any(not 0.0 < v < 1.0 for v in interior):
        raise SplineError("interior knots must lie in (0, 1)")
    return KnotVector(p, (0.0,) * (p + 1) + tuple(sorted(interior)) + (1.0,) * (p + 1))


def make_space(p: int, interior_knots=()) -> SplineSpace:
    return SplineSpace(make_open_knot_vector(p, interior_knots))


def uniform_space(p: int, n_elements: int) -> SplineSpace:
    """Degree ``p`` space with ``n_elements`` equal spans and simple interior knots."""
    if n_elements < 1:
        raise SplineError("need at least one element")
    return make_space(p, np.arange(1, n_elements) / n_elements)


def _spans(t: np.ndarray, p: int, n: int, x: np.ndarray) -> np.ndarray:
    k = np.searchsorted(t, x, side="right") - 1
    return np.clip(k, p, n - 1)


def _check_x(x):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise SplineError("evaluation points must lie in [0, 1]")
    return x


def _ders_local(t: np.ndarray, p: int, span: np.ndarray, x: np.ndarray, nd: int) -> np.ndarray:
    """Nonzero basis values and derivatives, shape ``(npts, nd+1, p+1)``."""
    m = x.shape[0]
    ndu = np.zeros((m, p + 1, p + 1))
    ndu[:, 0, 0] = 1.0
    left = np.zeros((m, p + 1))
    right = np.zeros((m, p + 1))
    for j in range(1, p + 1):
        left[:, j] = x - t[span + 1 - j]
        right[:, j] = t[span + j] - x
        saved = np.zeros(m)
        for r in range(j):
            ndu[:, j, r] = right[:, r + 1] + left[:, j - r]  # knot difference
            temp = ndu[:, r, j - 1] / ndu[:, j, r]
            ndu[:, r, j] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        ndu[:, j, j] = saved
    out = np.zeros((m, nd + 1, p + 1))
    out[:, 0, :] = ndu[:, :, p]
    for r in range(p + 1):
        a = np.zeros((m, 2, p + 1))
        a[:, 0, 0] = 1.0
        s1, s2 = 0, 1
        for k in range(1, nd + 1):
            dval = np.zeros(m)
            rk, pk = r - k, p - k
            if r >= k:
                a[:, s2, 0] = a[:, s1, 0] / ndu[:, pk + 1, rk]
                dval = a[:, s2, 0] * ndu[:, rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[:, s2, j] = (a[:, s1, j] - a[:, s1, j - 1]) / ndu[:, pk + 1, rk + j]
                dval = dval + a[:, s2, j] * ndu[:, rk + j, pk]
            if r <= pk:
                a[:, s2, k] = -a[:, s1, k - 1] / ndu[:, pk + 1, r]
                dval = dval + a[:, s2, k] * ndu[:, r, pk]
            out[:, k, r] = dval
            s1, s2 = s2, s1
    fac = p
    for k in range(1, nd + 1):
        out[:, k, :] *= fac
        fac *= p - k
    return out


def basis_matrix(s: SplineSpace, x, deriv: int = 0) -> np.ndarray:
    """Matrix ``B[a, i] = d^deriv beta_i(x_a)`` of shape ``(len(x), n)``."""
    if deriv < 0:
        raise SplineError("derivative order must be nonnegative")
    x = _check_x(x)
    p, n, t = s.p, s.n, s.knots
    out = np.zeros((x.shape[0], n))
    if deriv > p:
        return out
    span = _spans(t, p, n, x)
    loc = _ders_local(t, p, span, x, deriv)[:, deriv, :]
    cols = span[:, None] - p + np.arange(p + 1)[None, :]
    np.put_along_axis(out, cols, loc, axis=1)
    return out


def basis_matrices(s: SplineSpace, x, nd: int = 1) -> list[np.ndarray]:
    """Values and derivatives up to order ``nd`` in one pass."""
    x = _check_x(x)
    p, n, t = s.p, s.n, s.knots
    span = _spans(t, p, n, x)
    loc = _ders_local(t, p, span, x, min(nd, p))
    cols = span[:, None] - p + np.arange(p + 1)[None, :]
    mats = []
    for k in range(nd + 1):
        out = np.zeros((x.shape[0], n))
        if k <= p:
            np.put_along_axis(out, cols, loc[:, k, :], axis=1)
        mats.append(out)
    return mats


def eval_basis(s: SplineSpace, x: float) -> np.ndarray:
    return basis_matrix(s, [x])[0]


def eval_basis_deriv(s: SplineSpace, x: float, order: int = 1) -> np.ndarray:
    if order > s.p:
        raise SplineError(f"derivative order {order} exceeds degree {s.p}")
    return basis_matrix(s, [x], order)[0]


def greville_points(s: SplineSpace) -> np.ndarray:
    p, t = s.p, s.knots
    if p == 0:
        return 0.5 * (t[:-1] + t[1:])
    g = np.array([t[i + 1 : i + p + 1].mean() for i in range(s.n)])
    return np.clip(g, 0.0, 1.0)


def collocation_matrix(s: SplineSpace, points) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    if points.shape != (s.n,):
        raise SplineError(f"need exactly {s.n} collocation points")
    return basis_matrix(s, points)


def h_refine(s: SplineSpace, k: int) -> SplineSpace:
    """Insert ``k`` equally spaced knots into every nonempty span."""
    if k < 0:
        raise SplineError("k must be nonnegative")
    bp = s.knot_vector.breakpoints
    new = [a + (b - a) * (i + 1) / (k + 1) for a, b in zip(bp[:-1], bp[1:]) for i in range(k)]
    return make_space(s.p, list(s.knot_vector.interior) + new)


def _insert_knot(t: np.ndarray, p: int, u: float) -> np.ndarray:
    """Boehm matrix mapping coefficients on ``t`` to coefficients on ``t + {u}``."""
    n = len(t) - p - 1
    k = np.searchsorted(t, u, side="right") - 1
    Z = np.zeros((n + 1, n))
    for i in range(n + 1):
        if i <= k - p:
            Z[i, i] = 1.0
        elif i >= k + 1:
            Z[i, i - 1] = 1.0
        else:
            a = (u - t[i]) / (t[i + p] - t[i])
            Z[i, i] = a
            Z[i, i - 1] = 1.0 - a
    return Z


def refinement_matrix(coarse: SplineSpace, fine: SplineSpace) -> np.ndarray:
    """Matrix ``Z`` with ``B_fine(x) @ (Z c) == B_coarse(x) @ c`` for all ``c``."""
    if coarse.p != fine.p:
        raise SplineError("refinement requires equal degrees")
    cc = Counter(coarse.knot_vector.interior)
    fc = Counter(fine.knot_vector.interior)
    if any(fc[v] < m for v, m in cc.items()):
        raise SplineError("fine knot vector does not contain the coarse one")
    extra = sorted((fc - cc).elements())
    t = coarse.knots.copy()
    Z = np.eye(coarse.n)
    for u in extra:
        Z = _insert_knot(t, coarse.p, u) @ Z
        t = np.sort(np.append(t, u))
    return Z


def is_nested(coarse: SplineSpace, fine: SplineSpace) -> bool:
    cc = Counter(coarse.knot_vector.interior)
    fc = Counter(fine.knot_vector.interior)
    return coarse.p == fine.p and all(fc[v] >= m for v, m in cc.items())


def gauss_quadrature(s1: SplineSpace, s2: SplineSpace | None = None, q: int | None = None) -> QuadratureGrid:
    """Gauss-Legendre rule with ``q`` points on every span of the merged knot set."""
    if q is None:
        q = s1.p + 1
    if q < 1:
        raise SplineError("q must be at least 1")
    bp = s1.knot_vector.breakpoints
    if s2 is not None:
        bp = np.union1d(bp, s2.knot_vector.breakpoints)
    return gauss_grid(bp, q)


def gauss_grid(breakpoints, q: int) -> QuadratureGrid:
    bp = np.asarray(breakpoints, dtype=float)
    xg, wg = np.polynomial.legendre.leggauss(q)
    a, b = bp[:-1, None], bp[1:, None]
    nodes = (0.5 * (b - a) * (xg[None, :] + 1.0) + a).ravel()
    weights = (0.5 * (b - a) * wg[None, :]).ravel()
    return QuadratureGrid(nodes, weights, q, bp)
