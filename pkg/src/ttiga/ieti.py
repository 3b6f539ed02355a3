"""Jump tensors and the dual Schur-complement (IETI) solve.

For an interface ``(j, k)`` with connection dimension ``d1`` the constraint
``A_j y_j + A_k y_k = 0`` is expressed by two rank-one TT operators. In ``d1``
the factor is a 1 x n selector row picking the interface face; in each
spanning dimension it is the identity, or the refinement matrix ``Z`` on the
coarse side of a nonconforming pair. The lower-indexed patch carries +1 and
the other patch -1.

Lagrange multipliers are stored as 2-D TT tensors ``(J_d2, J_d3)`` with
``d2 < d3`` the spanning dimensions. They are reshaped to 3-D (singleton mode
at ``d1``) only inside the dual operator. Extra trailing modes, such as time
in the control problem, are carried along with identity factors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import PatchDiscretization, PatchOperators
from .geometry import GeometryError, Interface, MultiPatch, interface_conformity
from .solvers import SolveReport, SolverParams, local_tt_solve, tt_gmres_block
from .splines import refinement_matrix
from .tt_core import (
    BlockTTVector,
    TTOperator,
    TTVector,
    tt_add,
    tt_apply,
    tt_compose,
    tt_merge_modes,
    tt_norm,
    tt_round,
    tt_split_mode,
)


class IETIError(ValueError):
    pass


@dataclass(frozen=True)
class JumpTensor:
    iface: Interface
    factors_j: tuple
    factors_k: tuple
    op_j: TTOperator
    op_k: TTOperator
    finer: int | None = None  # fine patch of a nonconforming pair

    @property
    def j(self) -> int:
        return self.iface.j

    @property
    def k(self) -> int:
        return self.iface.k

    @property
    def key(self):
        return self.iface.key

    @property
    def shape3(self) -> tuple[int, ...]:
        """Multiplier shape with the singleton mode at ``d1``."""
        return self.op_j.row_shape

    @property
    def shape2(self) -> tuple[int, ...]:
        s = list(self.shape3)
        del s[self.iface.d1]
        return tuple(s)

    def op(self, m: int) -> TTOperator:
        return self.op_j if m == self.j else self.op_k

    def extend(self, sizes) -> "JumpTensor":
        """Append identity factors for extra trailing modes (e.g. time)."""
        ext = tuple(np.eye(n) for n in sizes)
        fj, fk = self.factors_j + ext, self.factors_k + ext
        return JumpTensor(self.iface, fj, fk, TTOperator.kron(fj), TTOperator.kron(fk), self.finer)


def _selector(n: int, side: str) -> np.ndarray:
    row = np.zeros((1, n))
    row[0, 0 if side == "low" else n - 1] = 1.0
    return row


def build_jump_tensor(iface: Interface, disc_j: PatchDiscretization, disc_k: PatchDiscretization) -> JumpTensor:
    """Rank-one constraint operators of one interface on trimmed spaces."""
    if disc_j.trim[2 * iface.d1 + (0 if iface.side_j == "low" else 1)]:
        raise GeometryError(f"interface face of patch {iface.j + 1} is trimmed")
    conf = interface_conformity(iface, disc_j.spaces, disc_k.spaces)
    fj, fk = [None] * 3, [None] * 3
    finer = None
    nj, nk = disc_j.trimmed_sizes, disc_k.trimmed_sizes
    fj[iface.d1] = _selector(nj[iface.d1], iface.side_j)
    fk[iface.d1] = -_selector(nk[iface.d1], iface.side_k)
    for d, (ok, fine) in zip(iface.spanning, conf):
        if disc_j.trim[2 * d : 2 * d + 2] != disc_k.trim[2 * d : 2 * d + 2]:
            raise GeometryError(f"interface {iface.j + 1}-{iface.k + 1}: trims differ in spanning dim {d}")
        if ok:
            fj[d], fk[d] = np.eye(nj[d]), np.eye(nk[d])
            continue
        if finer is not None and fine != finer:
            raise GeometryError(f"interface {iface.j + 1}-{iface.k + 1}: each patch is finer in one dimension")
        finer = fine
        coarse = iface.k if fine == iface.j else iface.j
        dc = disc_k if coarse == iface.k else disc_j
        df = disc_j if coarse == iface.k else disc_k
        Z = refinement_matrix(dc.spaces[d], df.spaces[d])[df.slices[d], dc.slices[d]]
        if fine == iface.j:
            fj[d], fk[d] = np.eye(nj[d]), Z
        else:
            fj[d], fk[d] = Z, np.eye(nk[d])
    fj, fk = tuple(fj), tuple(fk)
    return JumpTensor(iface, fj, fk, TTOperator.kron(fj), TTOperator.kron(fk), finer)


def build_jump_tensors(mp: MultiPatch, discs) -> list[JumpTensor]:
    return [build_jump_tensor(f, discs[f.j], discs[f.k]) for f in mp.interfaces]


# ---------------------------------------------------------------- reshaping


def to_2d(lam3: TTVector, d1: int) -> TTVector:
    """Drop the singleton mode at ``d1`` by merging it into a neighbour."""
    if lam3.shape[d1] != 1:
        raise IETIError("mode d1 of a multiplier must be a singleton")
    return tt_merge_modes(lam3, d1 if d1 < 2 else d1 - 1)


def to_3d(lam2: TTVector, d1: int) -> TTVector:
    """Inverse of :func:`to_2d`; exact because the split-off mode is a singleton."""
    if d1 < 2:
        return tt_split_mode(lam2, d1, (1, lam2.shape[d1]))
    return tt_split_mode(lam2, 1, (lam2.shape[1], 1))


def _op_to_2d(P3: TTOperator, d1: int) -> TTOperator:
    return tt_merge_modes(P3, d1 if d1 < 2 else d1 - 1)


# ---------------------------------------------------------------- dual system


@dataclass
class DualSystem:
    """Patch operators ``K_j``, jump tensors and per-interface preconditioners."""

    K: list
    jumps: list
    eps: float
    local: SolverParams
    precond: dict = field(default_factory=dict)
    local_reports: list = field(default_factory=list)

    @property
    def keys(self):
        return [jt.key for jt in self.jumps]

    def patch_solve(self, m: int, g: TTVector, transpose: bool = False) -> TTVector:
        A = self.K[m].T if transpose else self.K[m]
        x, rep = local_tt_solve(A, g, self.local)
        self.local_reports.append(rep)
        return x

    def scatter(self, lam: BlockTTVector) -> list:
        """Patch loads ``A^T lambda`` (None for patches without load)."""
        loads = [None] * len(self.K)
        rt = self.local.rounding
        for jt, l2 in zip(self.jumps, lam.blocks):
            l3 = to_3d(l2, jt.iface.d1)
            for m in (jt.j, jt.k):
                g = tt_apply(jt.op(m).T, l3)
                loads[m] = g if loads[m] is None else tt_round(tt_add(loads[m], g), rt)
        return loads

    def gather(self, ys: list) -> BlockTTVector:
        """Interface jumps ``A y`` as 2-D blocks."""
        blocks = []
        for jt in self.jumps:
            parts = [tt_apply(jt.op(m), ys[m]) for m in (jt.j, jt.k) if ys[m] is not None]
            if parts:
                v = parts[0] if len(parts) == 1 else tt_round(tt_add(parts[0], parts[1]), self.local.rounding)
            else:
                v = TTVector.zeros(jt.shape3)
            blocks.append(to_2d(v, jt.iface.d1))
        return BlockTTVector(self.keys, blocks)

    def solve_patches(self, loads: list, transpose: bool = False) -> list:
        return [None if g is None or tt_norm(g) == 0.0 else self.patch_solve(m, g, transpose)
                for m, g in enumerate(loads)]


def dual_apply(sys: DualSystem, lam: BlockTTVector, transpose: bool = False) -> BlockTTVector:
    """``A K^{-1} A^T lambda`` with patchwise local TT solves."""
    return sys.gather(sys.solve_patches(sys.scatter(lam), transpose))


def build_preconditioner(sys: DualSystem, jt: JumpTensor, patch: int | None = None,
                         transpose: bool = False) -> TTOperator:
    """2-D interface block ``A_f K_f A_f^T`` from the finer patch (or ``patch``)."""
    if patch is not None:
        if patch not in (jt.j, jt.k):
            raise IETIError("preconditioner patch must belong to the interface")
        m = patch
    else:
        m = jt.finer if jt.finer is not None else jt.j
    Am = jt.op(m)
    K = sys.K[m].T if transpose else sys.K[m]
    rt = sys.local.rounding
    P3 = tt_compose(tt_compose(Am, K, None), Am.T, rt)
    return _op_to_2d(P3, jt.iface.d1)


def make_preconditioner(sys: DualSystem, transpose: bool = False, mode: str = "apply"):
    """Block-diagonal left preconditioner over the interfaces.

    ``mode="apply"`` multiplies each multiplier block by ``P`` (the block
    approximates the inverse of the dual operator, as in lumped FETI).
    ``mode="solve"`` applies ``P^{-1}`` by a local TT solve instead; it is kept
    for comparison and conditions the dual system far worse.
    """
    if mode not in ("apply", "solve"):
        raise IETIError("preconditioner mode must be 'apply' or 'solve'")
    blocks = {jt.key: build_preconditioner(sys, jt, transpose=transpose) for jt in sys.jumps}
    rt = sys.local.rounding

    def apply(lam: BlockTTVector) -> BlockTTVector:
        out = []
        for key, l2 in lam.items():
            if mode == "apply":
                out.append(tt_apply(blocks[key], l2, rt))
            else:
                out.append(local_tt_solve(blocks[key], l2, sys.local)[0])
        return BlockTTVector(lam.keys, out)

    return apply, blocks


@dataclass
class IETIResult:
    y: BlockTTVector
    lam: BlockTTVector
    report: SolveReport
    jump_residual: float
    local_solves: int


def ieti_params(eps: float, base: SolverParams = SolverParams()) -> tuple[SolverParams, SolverParams]:
    """Outer GMRES tolerance ``eps*1e2`` and local tolerance ``eps*10``."""
    return base.with_tol(eps * 1e2), base.with_tol(eps * 10)


def solve_ieti(K: list, f: BlockTTVector, jumps: list, eps: float | None = None, *,
               outer: SolverParams | None = None, local: SolverParams | None = None,
               transpose: bool = False, precond: str = "apply") -> IETIResult:
    """Solve the multi-patch saddle point problem through its dual Schur complement.

    ``K`` are the patch operators (TT), ``f`` the patch loads keyed by patch
    index. With ``transpose`` the adjoint system with ``K_j^T`` is solved.
    """
    if outer is None or local is None:
        if eps is None:
            raise IETIError("pass eps or explicit solver parameters")
        o, l = ieti_params(eps)
        outer, local = outer or o, local or l
    sys = DualSystem(list(K), list(jumps), eps or outer.tol / 1e2, local)
    fs = list(f.blocks)
    if not jumps:
        ys = sys.solve_patches(fs, transpose)
        y = BlockTTVector(f.keys, [v if v is not None else TTVector.zeros(b.shape) for v, b in zip(ys, fs)])
        rep = SolveReport(0, 0.0, y.max_rank, True)
        return IETIResult(y, BlockTTVector([], []), rep, 0.0, len(sys.local_reports))
    Kf = sys.solve_patches(fs, transpose)
    d = sys.gather(Kf)
    if d.norm() <= local.tol * trace_scale(jumps, Kf):
        # unconstrained patch solutions already agree up to local-solve noise
        lam = BlockTTVector.zeros_like(d)
        rep = SolveReport(0, 0.0, 0, True, message="dual right-hand side below local-solve accuracy")
    else:
        P, _ = make_preconditioner(sys, transpose, precond)
        lam, rep = tt_gmres_block(lambda v: dual_apply(sys, v, transpose), d, P, outer)
    loads = sys.scatter(lam)
    rt = local.rounding
    rhs = [fb if g is None else tt_round(tt_add(fb, g * -1.0), rt) for fb, g in zip(fs, loads)]
    ys = sys.solve_patches(rhs, transpose)
    y = BlockTTVector(f.keys, [v if v is not None else TTVector.zeros(b.shape) for v, b in zip(ys, fs)])
    jr = jump_residual(jumps, y)
    ny = y.norm()
    return IETIResult(y, lam, rep, jr / ny if ny > 0 else jr, len(sys.local_reports))


def trace_scale(jumps: list, ys: list) -> float:
    """Norm of the one-sided interface traces ``A_j y_j`` (scale of the jumps)."""
    total = 0.0
    for jt in jumps:
        for m in (jt.j, jt.k):
            if ys[m] is not None:
                total += tt_norm(tt_apply(jt.op(m), ys[m])) ** 2
    return float(np.sqrt(total))


def jump_residual(jumps: list, y: BlockTTVector) -> float:
    """Frobenius norm of all interface constraint violations ``A y``."""
    total = 0.0
    for jt in jumps:
        v = tt_add(tt_apply(jt.op_j, y.blocks[jt.j]), tt_apply(jt.op_k, y.blocks[jt.k]))
        total += tt_norm(v) ** 2
    return float(np.sqrt(total))
