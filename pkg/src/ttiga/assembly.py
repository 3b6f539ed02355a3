"""Low-rank Galerkin assembly of mass, stiffness and load per patch.

The geometry enters only through the weight functions ``omega = |det J|`` and
``Q = (J^T J)^{-1} |det J|``.  On rational patches the trial and test
functions are ``beta_i / W`` with ``W`` the NURBS denominator of the geometry,
which adds the weights ``Q grad W / W^3`` and ``grad W . Q grad W / W^4``.  Each weight is sampled on the tensor Greville
grid of an interpolation space, compressed to TT and turned into spline
coefficients by applying the univariate collocation inverses core by core.
Every TT core of a weight then yields a small stack of univariate weighted
matrices, which are the cores of the TT operator directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import SIDES, GeometryError, MultiPatch, Patch, omega_from_jacobian, q_from_jacobian
from .splines import (
    SplineSpace,
    basis_matrix,
    collocation_matrix,
    gauss_grid,
    gauss_quadrature,
    greville_points,
    make_space,
)
from .tt_core import (
    TTOperator,
    TTVector,
    tt_add,
    tt_from_dense,
    tt_round,
    tt_slice,
)


class AssemblyError(ValueError):
    pass


@dataclass(frozen=True)
class AssemblyOptions:
    interp_degree_offset: int | None = None  # interpolation degree p + offset; None: adaptive
    max_interp_offset: int = 16  # cap of the adaptive search
    quad_points: int | None = None  # None: exact for weighted products
    rhs_points: int | None = None  # None: p + 2 per span
    rational_basis: bool = True  # use beta_i / W on rational patches


@dataclass(frozen=True)
class PatchDiscretization:
    """Untrimmed solution spaces of one patch and its Dirichlet trim flags."""

    spaces: tuple
    trim: tuple

    @property
    def degree(self) -> int:
        return self.spaces[0].p

    @property
    def full_sizes(self) -> tuple[int, ...]:
        return tuple(s.n for s in self.spaces)

    @property
    def slices(self) -> tuple[slice, ...]:
        return tuple(
            slice(int(self.trim[2 * d]), s.n - int(self.trim[2 * d + 1])) for d, s in enumerate(self.spaces)
        )

    @property
    def trimmed_sizes(self) -> tuple[int, ...]:
        return tuple(sl.stop - sl.start for sl in self.slices)

    @property
    def n_full(self) -> int:
        return int(np.prod(self.full_sizes))

    @property
    def n_trimmed(self) -> int:
        return int(np.prod(self.trimmed_sizes))


def refined_space(geo_space: SplineSpace, p: int, n_elements: int) -> SplineSpace:
    """Degree ``p`` space splitting every geometry span into equal elements."""
    bp = geo_space.knot_vector.breakpoints
    spans = len(bp) - 1
    if n_elements % spans:
        raise AssemblyError(f"{n_elements} elements do not subdivide {spans} geometry spans evenly")
    k = n_elements // spans
    knots = [a + (b - a) * i / k for a, b in zip(bp[:-1], bp[1:]) for i in range(k)][1:]
    return make_space(p, knots)


def discretize(mp: MultiPatch, p: int, elements) -> list[PatchDiscretization]:
    """Solution spaces for every patch.

    ``elements`` is an int (same for all patches and dimensions), a list with
    one int per patch, or a list of per-dimension triples.
    """
    out = []
    for j, patch in enumerate(mp.patches):
        e = elements if np.isscalar(elements) else elements[j]
        e = (int(e),) * 3 if np.isscalar(e) else tuple(int(v) for v in e)
        spaces = tuple(refined_space(patch.spaces[d], p, e[d]) for d in range(3))
        out.append(PatchDiscretization(spaces, mp.boundary_trim[j]))
    return out


def interpolation_spaces(patch: Patch, p: int, offset: int = 2) -> tuple:
    """Degree ``p + offset`` on the unrefined geometry breakpoints."""
    return tuple(make_space(p + offset, patch.breakpoints(d)[1:-1]) for d in range(3))


# ---------------------------------------------------------------- weight interpolation


@dataclass(frozen=True)
class WeightTT:
    coeffs: TTVector
    interp_spaces: tuple
    node_residual: float = 0.0

    def evaluate(self, x1, x2, x3) -> np.ndarray:
        """Interpolant on a tensor grid (small grids only)."""
        cores = [
            np.einsum("qi,aib->aqb", basis_matrix(s, x), c)
            for s, x, c in zip(self.interp_spaces, (x1, x2, x3), self.coeffs.cores)
        ]
        return TTVector(cores).to_dense()


def interpolate_samples(samples: np.ndarray, interp_spaces, eps: float) -> WeightTT:
    """Spline interpolant of values sampled at the tensor Greville nodes."""
    samples = np.asarray(samples, dtype=float)
    if samples.shape != tuple(s.n for s in interp_spaces):
        raise AssemblyError("samples must live on the Greville grid of the interpolation spaces")
    tt = tt_from_dense(samples, eps)
    cores = []
    for s, c in zip(interp_spaces, tt.cores):
        C = collocation_matrix(s, greville_points(s))
        try:
            cores.append(np.einsum("ij,ajb->aib", np.linalg.inv(C), c))
        except np.linalg.LinAlgError as e:
            raise AssemblyError("singular collocation matrix") from e
    W = TTVector(cores)
    nrm = np.linalg.norm(samples)
    res = np.linalg.norm(tt.to_dense() - samples) / nrm if nrm > 0 else 0.0
    return WeightTT(W, tuple(interp_spaces), float(res))


def interpolate_weight(patch: Patch, fld: Callable, interp_spaces, eps: float) -> WeightTT:
    """Interpolate ``fld(x1, x2, x3) -> grid values`` on the tensor Greville grid."""
    g = [greville_points(s) for s in interp_spaces]
    return interpolate_samples(fld(*g), interp_spaces, eps)


def uses_rational_basis(patch: Patch, opts: "AssemblyOptions") -> bool:
    return patch.is_rational and opts.rational_basis


def weight_samples(patch: Patch, x1, x2, x3, rational: bool = True) -> dict:
    """Exact weight functions on a tensor grid, keyed like :func:`geometry_weights`.

    Keys: ``"omega"``, ``(k, l)`` for ``k <= l`` and, for rational bases,
    ``("g", k)`` and ``"h"``.
    """
    _, J = patch.grid(x1, x2, x3)
    om = omega_from_jacobian(J)
    Q = q_from_jacobian(J)
    out = {}
    if rational and patch.is_rational:
        W, dW = patch.weight_grid(x1, x2, x3)
        om = om / W**2
        QdW = np.einsum("...kl,...l->...k", Q, dW)
        for k in range(3):
            out[("g", k)] = QdW[..., k] / W**3
        out["h"] = np.einsum("...k,...k->...", dW, QdW) / W**4
        Q = Q / W[..., None, None] ** 2
    out["omega"] = om
    for k in range(3):
        for l in range(k, 3):
            out[(k, l)] = Q[..., k, l]
    return out


def _check_points(s: SplineSpace) -> np.ndarray:
    g = greville_points(s)
    return 0.5 * (g[:-1] + g[1:])


def weight_interpolation_error(patch: Patch, W: dict, rational: bool = True) -> float:
    """Max deviation of interpolated weights from the exact ones between Greville nodes.

    Relative to the largest diagonal entry of Q (or omega if larger).
    """
    isp = next(iter(W.values())).interp_spaces
    x = [_check_points(s) for s in isp]
    exact = weight_samples(patch, *x, rational=rational)
    scale = max(np.max(np.abs(exact[k])) for k in ("omega", (0, 0), (1, 1), (2, 2)))
    err = 0.0
    for key, v in exact.items():
        approx = W[key].evaluate(*x) if key in W else 0.0
        err = max(err, float(np.max(np.abs(approx - v))))
    return err / scale


def adaptive_weights(patch: Patch, p: int, eps: float, opts: "AssemblyOptions" = None):
    """Interpolated weights with the smallest even degree offset meeting ``eps`` between nodes.

    A fixed ``opts.interp_degree_offset`` skips the search. Returns the
    weight dict and the offset used.
    """
    opts = opts or AssemblyOptions()
    rational = opts.rational_basis
    if opts.interp_degree_offset is not None:
        isp = interpolation_spaces(patch, p, opts.interp_degree_offset)
        return geometry_weights(patch, isp, eps, rational), opts.interp_degree_offset
    best = None
    for off in range(2, opts.max_interp_offset + 1, 2):
        W = geometry_weights(patch, interpolation_spaces(patch, p, off), eps, rational)
        err = weight_interpolation_error(patch, W, rational)
        if best is not None and err >= best[0]:
            break  # high-degree collocation loses accuracy to conditioning
        best = (err, W, off)
        if err <= eps:
            break
    return best[1], best[2]


def geometry_weights(patch: Patch, interp_spaces, eps: float, rational: bool = True) -> dict:
    """Interpolated weight functions (see :func:`weight_samples`); identically zero entries are dropped."""
    g = [greville_points(s) for s in interp_spaces]
    samples = weight_samples(patch, *g, rational=rational)
    scale = max(np.max(np.abs(samples[(k, k)])) for k in range(3))
    out = {}
    for key, v in samples.items():
        if key != "omega" and np.max(np.abs(v)) <= 1e-14 * scale:
            continue  # e.g. off-diagonal Q of axis-aligned maps
        out[key] = interpolate_samples(v, interp_spaces, eps)
    return out


# ---------------------------------------------------------------- univariate factors


def _quad_points(p: int, p_hat: int, q: int | None) -> int:
    if q is not None:
        return q
    return p + (p_hat + 2) // 2


def univariate_weighted_matrix(trial: SplineSpace, test: SplineSpace, weight_coeffs, interp_space: SplineSpace,
                               da: int = 0, db: int = 0, q: int | None = None) -> np.ndarray:
    """``A[i, j] = int (w B_hat)(x) d^da beta^test_i(x) d^db beta^trial_j(x) dx``."""
    weight_coeffs = np.asarray(weight_coeffs, dtype=float)
    if weight_coeffs.shape != (interp_space.n,):
        raise AssemblyError("weight coefficient count must equal the interpolation basis size")
    core = weight_coeffs.reshape(1, -1, 1)
    return _weighted_cores(core, trial, test, interp_space, da, db, q)[0, :, :, 0]


def _weighted_cores(core, trial, test, interp_space, da, db, q):
    """Stack of weighted matrices for every rank pair of a weight core."""
    qn = _quad_points(max(trial.p, test.p), interp_space.p, q)
    grid = gauss_quadrature(trial, test, qn)
    grid_bp = np.union1d(grid.spans, interp_space.knot_vector.breakpoints)
    grid = gauss_grid(grid_bp, qn)
    x, w = grid.nodes, grid.weights
    wv = np.einsum("qi,aib->aqb", basis_matrix(interp_space, x), core)
    Bt = basis_matrix(test, x, da)
    Br = basis_matrix(trial, x, db)
    return np.einsum("q,aqb,qi,qj->aijb", w, wv, Bt, Br, optimize=True)


def weighted_operator(W: WeightTT, spaces, ders, q: int | None = None) -> TTOperator:
    """TT operator ``int w (d^da beta_i)(d^db beta_j)`` with per-dimension derivative pairs."""
    cores = [
        _weighted_cores(c, s, s, si, da, db, q)
        for c, s, si, (da, db) in zip(W.coeffs.cores, spaces, W.interp_spaces, ders)
    ]
    return TTOperator(cores)


# ---------------------------------------------------------------- trimming


def dirichlet_trim(obj, trim, protected=None):
    """Drop first/last indices of each dimension whose face is on the Dirichlet boundary.

    ``protected`` lists faces as ``(dim, side)`` that must not be trimmed
    (interface faces).
    """
    protected = set(protected or ())
    out = obj
    sizes = obj.shape if isinstance(obj, TTVector) else obj.row_shape
    for d in range(len(trim) // 2):
        lo, hi = bool(trim[2 * d]), bool(trim[2 * d + 1])
        for side, flag in zip(SIDES, (lo, hi)):
            if flag and (d, side) in protected:
                raise GeometryError(f"face ({d}, {side}) is an interface and cannot be trimmed")
        if lo or hi:
            out = tt_slice(out, d, slice(int(lo), sizes[d] - int(hi)))
    return out


def trim_array(a: np.ndarray, disc: PatchDiscretization) -> np.ndarray:
    return a[disc.slices]


def untrim_array(a: np.ndarray, disc: PatchDiscretization) -> np.ndarray:
    full = np.zeros(disc.full_sizes + a.shape[3:])
    full[disc.slices] = a
    return full


# ---------------------------------------------------------------- patch assembly


@dataclass
class PatchOperators:
    mass: TTOperator
    stiffness: TTOperator
    disc: PatchDiscretization
    weights: dict = field(default_factory=dict)

    @property
    def trimmed_sizes(self) -> tuple[int, ...]:
        return self.disc.trimmed_sizes

    @property
    def trim_offsets(self) -> tuple[int, ...]:
        return tuple(sl.start for sl in self.disc.slices)


def _round_sum(ops, eps):
    out = ops[0]
    for o in ops[1:]:
        out = tt_add(out, o)
    return tt_round(out, eps)


def assemble_patch(patch: Patch, disc: PatchDiscretization, eps: float,
                   opts: AssemblyOptions = AssemblyOptions()) -> PatchOperators:
    """Trimmed TT mass and stiffness of one patch."""
    W, _ = adaptive_weights(patch, disc.degree, eps, opts)
    mass = _mass_from_weights(W["omega"], disc, opts)
    stiff = _stiffness_from_weights(W, disc, eps, opts)
    return PatchOperators(dirichlet_trim(mass, disc.trim), dirichlet_trim(stiff, disc.trim), disc, W)


def _mass_from_weights(Wom: WeightTT, disc, opts) -> TTOperator:
    return weighted_operator(Wom, disc.spaces, [(0, 0)] * 3, opts.quad_points)


def _stiffness_from_weights(W: dict, disc, eps, opts) -> TTOperator:
    # grad(b/W) = grad(b)/W - b grad(W)/W^2 expands into Q/W^2, g and h terms
    terms = []
    for key, Wkl in W.items():
        if key == "omega":
            continue
        if key == "h":
            terms.append(weighted_operator(Wkl, disc.spaces, [(0, 0)] * 3, opts.quad_points))
            continue
        if key[0] == "g":
            k = key[1]
            T = weighted_operator(Wkl, disc.spaces, [(int(d == k), 0) for d in range(3)], opts.quad_points)
            terms += [T * -1.0, T.T * -1.0]
            continue
        k, l = key
        ders = [(int(d == k), int(d == l)) for d in range(3)]
        T = weighted_operator(Wkl, disc.spaces, ders, opts.quad_points)
        terms.append(T)
        if k != l:
            terms.append(T.T)
    if not terms:
        raise AssemblyError("all entries of Q vanish")
    return _round_sum(terms, eps)


def assemble_mass(patch: Patch, disc: PatchDiscretization, eps: float, opts: AssemblyOptions = AssemblyOptions()):
    W, _ = adaptive_weights(patch, disc.degree, eps, opts)
    return dirichlet_trim(_mass_from_weights(W["omega"], disc, opts), disc.trim)


def assemble_stiffness(patch: Patch, disc: PatchDiscretization, eps: float,
                       opts: AssemblyOptions = AssemblyOptions()):
    W, _ = adaptive_weights(patch, disc.degree, eps, opts)
    return dirichlet_trim(_stiffness_from_weights(W, disc, eps, opts), disc.trim)


def assemble_multipatch(mp: MultiPatch, discs, eps: float, opts: AssemblyOptions = AssemblyOptions()):
    return [assemble_patch(p, d, eps, opts) for p, d in zip(mp.patches, discs)]


# ---------------------------------------------------------------- loads


def quadrature_axes(disc: PatchDiscretization, q: int):
    return [gauss_quadrature(s, None, q) for s in disc.spaces]


def sample_physical(patch: Patch, fn: Callable, x1, x2, x3, with_omega: bool = True,
                    weight_power: int = 0) -> np.ndarray:
    """``fn(G(x)) * omega(x) * W(x)**weight_power`` on a tensor grid (omega optional)."""
    X, J = patch.grid(x1, x2, x3)
    v = np.asarray(fn(X[..., 0], X[..., 1], X[..., 2]), dtype=float)
    v = np.array(np.broadcast_to(v, X.shape[:-1]))
    if with_omega:
        v = v * omega_from_jacobian(J)
    if weight_power and patch.is_rational:
        v = v * patch.weight_grid(x1, x2, x3)[0] ** weight_power
    return v


def evaluate_solution(patch: Patch, disc: PatchDiscretization, coef: TTVector, grids,
                      opts: AssemblyOptions = AssemblyOptions()) -> np.ndarray:
    """Values of the discrete function with trimmed coefficients ``coef`` on a tensor grid."""
    cores = []
    for s, x, c, sl in zip(disc.spaces, grids, coef.cores, disc.slices):
        B = basis_matrix(s, x)[:, sl]
        cores.append(np.einsum("qi,aib->aqb", B, c))
    v = TTVector(cores).to_dense()
    if uses_rational_basis(patch, opts):
        v = v / patch.weight_grid(*grids)[0]
    return v


def assemble_rhs(patch: Patch, disc: PatchDiscretization, f: Callable, eps: float,
                 opts: AssemblyOptions = AssemblyOptions()) -> TTVector:
    """Trimmed load ``int f(G(x)) beta_i(x) omega(x) dx``.

    ``(f o G) * omega`` is sampled on the tensor Gauss grid of the solution
    space, compressed to TT at ``eps``, and each core is contracted with its
    univariate weighted basis matrix.
    """
    q = opts.rhs_points or disc.degree + 2
    grids = quadrature_axes(disc, q)
    F = sample_physical(patch, f, *(g.nodes for g in grids),
                        weight_power=-1 if uses_rational_basis(patch, opts) else 0)
    if not np.any(F):
        return dirichlet_trim(TTVector.zeros(disc.full_sizes), disc.trim)
    tt = tt_from_dense(F, eps)
    cores = []
    for s, g, c in zip(disc.spaces, grids, tt.cores):
        B = basis_matrix(s, g.nodes) * g.weights[:, None]
        cores.append(np.einsum("qi,aqb->aib", B, c))
    return dirichlet_trim(TTVector(cores), disc.trim)


def interpolate_function(patch: Patch, disc: PatchDiscretization, fn: Callable, eps: float,
                         opts: AssemblyOptions = AssemblyOptions()) -> TTVector:
    """Coefficients (untrimmed) of the interpolant of ``fn o G`` at Greville nodes."""
    g = [greville_points(s) for s in disc.spaces]
    vals = sample_physical(patch, fn, *g, with_omega=False,
                           weight_power=1 if uses_rational_basis(patch, opts) else 0)
    return interpolate_samples(vals, disc.spaces, eps).coeffs
