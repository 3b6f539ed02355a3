"""Iterative TT solvers.

``local_tt_solve`` is a one-site ALS with residual-driven rank adaptation:
every core update is a dense Galerkin solve in the current frames, the core
is truncated to the smallest rank whose local residual stays below the
target, and ``kickrank`` directions taken from the projected two-site
residual are appended before moving on.  Sweeps alternate direction.

``tt_gmres_block`` is restarted GMRES over block TT vectors with left
preconditioning and rounding of every Krylov vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .tt_core import (
    BlockTTVector,
    TTOperator,
    TTVector,
    tt_add,
    tt_apply,
    tt_norm,
    tt_round,
    tt_scale,
)


@dataclass(frozen=True)
class SolverParams:
    tol: float = 1e-6
    restart: int = 20
    max_iters: int = 10
    nswp: int = 20
    kickrank: int = 2
    round_tol: float | None = None  # None: tol / 10
    seed: int = 0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.restart < 1:
            raise ValueError("restart must be at least 1")

    @property
    def rounding(self) -> float:
        return self.tol / 10 if self.round_tol is None else self.round_tol

    def with_tol(self, tol: float) -> "SolverParams":
        return replace(self, tol=tol, round_tol=None)


@dataclass
class SolveReport:
    iterations: int = 0
    achieved_residual: float = np.inf
    max_rank_seen: int = 0
    converged: bool = False
    history: list = field(default_factory=list)
    message: str = ""


# ---------------------------------------------------------------- local ALS solver


def _reverse_vec(cores):
    return [c.transpose(2, 1, 0) for c in cores[::-1]]


def _reverse_op(cores):
    return [c.transpose(3, 1, 2, 0) for c in cores[::-1]]


def _right_orth(cores):
    cores = [np.array(c) for c in cores]
    for d in range(len(cores) - 1, 0, -1):
        r0, n, r1 = cores[d].shape
        q, r = np.linalg.qr(cores[d].reshape(r0, n * r1).T)
        cores[d] = q.T.reshape(-1, n, r1)
        cores[d - 1] = np.tensordot(cores[d - 1], r.T, axes=(2, 0))
    return cores


def _local_matrix(LA, Ad, RA):
    m = np.einsum("xay,aijb,zbw->xizyjw", LA, Ad, RA, optimize=True)
    n = LA.shape[0] * Ad.shape[1] * RA.shape[0]
    return m.reshape(n, n)


def _local_rhs(Lb, bd, Rb):
    return np.einsum("xa,aib,zb->xiz", Lb, bd, Rb, optimize=True)


def _two_site_apply(LA, A1, A2, RA, c2):
    t = np.einsum("xay,yjkw->xajkw", LA, c2, optimize=True)
    t = np.einsum("xajkw,aijb->xibkw", t, A1, optimize=True)
    t = np.einsum("xibkw,blkc->xilcw", t, A2, optimize=True)
    return np.einsum("xilcw,zcw->xilz", t, RA, optimize=True)


def _dense_solve(B, rhs):
    try:
        return np.linalg.solve(B, rhs)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(B, rhs, rcond=None)[0]


def _sweep(A, b, x, tol_loc, kick, rng):
    """One left-to-right ALS sweep; ``x`` cores 1.. must be right-orthonormal."""
    D = len(x)
    x = list(x)
    RA = [None] * (D + 1)
    Rb = [None] * (D + 1)
    RA[D] = np.ones((1, 1, 1))
    Rb[D] = np.ones((1, 1))
    for d in range(D - 1, 0, -1):
        RA[d] = np.einsum("aib,cijd,ejf,bdf->ace", x[d], A[d], x[d], RA[d + 1], optimize=True)
        Rb[d] = np.einsum("aib,cid,bd->ac", x[d], b[d], Rb[d + 1], optimize=True)
    LA = np.ones((1, 1, 1))
    Lb = np.ones((1, 1))
    max_rank = 1
    for d in range(D):
        rl, n, rr = x[d].shape
        B = _local_matrix(LA, A[d], RA[d + 1])
        rhs = _local_rhs(Lb, b[d], Rb[d + 1]).ravel()
        v = _dense_solve(B, rhs)
        if d == D - 1:
            x[d] = v.reshape(rl, n, rr)
            break
        nrm_rhs = np.linalg.norm(rhs)
        u, s, vt = np.linalg.svd(v.reshape(rl * n, rr), full_matrices=False)
        # smallest rank with local residual below tol_loc
        lo, hi = 1, len(s)
        while lo < hi:
            mid = (lo + hi) // 2
            vr = (u[:, :mid] * s[:mid]) @ vt[:mid]
            if np.linalg.norm(B @ vr.ravel() - rhs) <= tol_loc * nrm_rhs:
                hi = mid
            else:
                lo = mid + 1
        r = lo
        U = u[:, :r]
        SV = s[:r, None] * vt[:r]
        nxt = np.tensordot(SV, x[d + 1], axes=(1, 0))
        if kick > 0:
            c2 = np.tensordot(U.reshape(rl, n, r), nxt, axes=(2, 0))
            rhs2 = np.einsum("xa,aib,bjc,zc->xijz", Lb, b[d], b[d + 1], Rb[d + 2], optimize=True)
            res2 = rhs2 - _two_site_apply(LA, A[d], A[d + 1], RA[d + 2], c2)
            mat = res2.reshape(rl * n, -1)
            if np.linalg.norm(mat) > 0:
                uz = np.linalg.svd(mat, full_matrices=False)[0][:, :kick]
            else:
                uz = rng.standard_normal((rl * n, kick))
            Q, _ = np.linalg.qr(np.hstack([U, uz]))
            Q = Q[:, : min(Q.shape[1], rl * n)]
            nxt = np.tensordot(Q.T @ U, nxt, axes=(1, 0))
            U = Q
        x[d] = U.reshape(rl, n, -1)
        x[d + 1] = nxt
        max_rank = max(max_rank, U.shape[1])
        LA = np.einsum("xay,xib,aijc,yjd->bcd", LA, x[d], A[d], x[d], optimize=True)
        Lb = np.einsum("xa,xib,aic->bc", Lb, x[d], b[d], optimize=True)
    return x, max_rank


def _residual(A: TTOperator, x: TTVector, b: TTVector, nb: float) -> float:
    r = tt_add(tt_apply(A, x), tt_scale(b, -1.0))
    return tt_norm(r) / nb


def local_tt_solve(A: TTOperator, b: TTVector, params: SolverParams = SolverParams(),
                   x0: TTVector | None = None) -> tuple[TTVector, SolveReport]:
    """Solve ``A x = b`` in TT format to relative residual ``params.tol``."""
    if A.row_shape != A.col_shape or A.col_shape != b.shape:
        raise ValueError(f"operator {A.row_shape}x{A.col_shape} does not match right-hand side {b.shape}")
    rep = SolveReport()
    nb = tt_norm(b)
    if nb == 0.0:
        rep.converged, rep.achieved_residual, rep.max_rank_seen = True, 0.0, 1
        return TTVector.zeros(b.shape), rep
    D = A.ndim
    if D == 1:
        x = np.linalg.solve(A.cores[0][0, :, :, 0], b.cores[0][0, :, 0])
        sol = TTVector([x.reshape(1, -1, 1)])
        rep.iterations, rep.converged, rep.max_rank_seen = 1, True, 1
        rep.achieved_residual = _residual(A, sol, b, nb)
        rep.history.append(rep.achieved_residual)
        return sol, rep
    rng = np.random.default_rng(params.seed)
    start = tt_round(x0 if x0 is not None else b, params.tol)
    x = _right_orth(start.cores)
    Af, bf = list(A.cores), list(b.cores)
    Ar, br = _reverse_op(Af), _reverse_vec(bf)
    tol_loc = params.tol / np.sqrt(D) / 2
    forward = True
    best = None
    for sweep in range(params.nswp):
        if forward:
            x, mr = _sweep(Af, bf, x, tol_loc, params.kickrank, rng)
            sol = TTVector(x)
        else:
            xr, mr = _sweep(Ar, br, _reverse_vec(x), tol_loc, params.kickrank, rng)
            x = _reverse_vec(xr)
            sol = TTVector(x)
        rep.max_rank_seen = max(rep.max_rank_seen, mr)
        res = _residual(A, sol, b, nb)
        rep.history.append(res)
        rep.iterations = sweep + 1
        if best is None or res <= best[1]:
            best = (sol, res)
        if res <= params.tol:
            break
        stalled = len(rep.history) >= 3 and rep.history[-1] > 0.9 * rep.history[-3]
        if stalled:
            break
        forward = not forward
    sol, res = best
    if res > params.tol:
        # fallback: unpreconditioned TT-GMRES from the best ALS iterate
        bb = BlockTTVector([0], [b])
        xg, grep = tt_gmres_block(
            lambda v: BlockTTVector([0], [tt_apply(A, v.blocks[0], params.rounding)]),
            bb, None, params, x0=BlockTTVector([0], [sol]),
        )
        g = _residual(A, xg.blocks[0], b, nb)
        rep.history.append(g)
        rep.max_rank_seen = max(rep.max_rank_seen, grep.max_rank_seen)
        rep.message = "gmres fallback"
        if g < res:
            sol, res = xg.blocks[0], g
    rep.achieved_residual = float(res)
    rep.converged = bool(res <= params.tol)
    return sol, rep


# ---------------------------------------------------------------- block TT-GMRES


def _lincomb(coeffs, vecs: list[BlockTTVector], tol: float) -> BlockTTVector:
    out = None
    for c, v in zip(coeffs, vecs):
        term = v * float(c)
        out = term if out is None else (out + term).round(tol)
    return out


def tt_gmres_block(apply: Callable[[BlockTTVector], BlockTTVector], b: BlockTTVector,
                   precond: Callable[[BlockTTVector], BlockTTVector] | None = None,
                   params: SolverParams = SolverParams(), x0: BlockTTVector | None = None,
                   side: str = "right") -> tuple[BlockTTVector, SolveReport]:
    """Restarted GMRES on block TT vectors.

    With ``side="right"`` GMRES runs on ``A P z = b`` with ``x = P z`` and
    ``params.tol`` bounds the true residual ``||b - A x|| / ||b||``. With
    ``side="left"`` it runs on ``P A x = P b`` and bounds the preconditioned
    residual ``||P(b - A x)|| / ||P b||``, which can hide large errors in
    modes that ``P`` damps.
    """
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    P = precond if precond is not None else (lambda v: v)
    rt = params.rounding
    left = side == "left"

    def op(v):
        return P(apply(v).round(rt)).round(rt) if left else apply(P(v).round(rt)).round(rt)

    def residual(x):
        r = (b - apply(x)).round(rt)
        return P(r).round(rt) if left else r

    rep = SolveReport()
    pb = P(b).round(rt) if left else b
    nb = pb.norm()
    x = x0 if x0 is not None else BlockTTVector.zeros_like(b)
    if nb == 0.0:
        rep.converged, rep.achieved_residual = True, 0.0
        return BlockTTVector.zeros_like(b), rep
    r = pb if x0 is None else residual(x)
    beta = r.norm()
    rep.achieved_residual = beta / nb
    rep.history.append(rep.achieved_residual)
    if rep.achieved_residual <= params.tol:
        rep.converged = True
        return x, rep
    for _ in range(params.max_iters):
        V = [r * (1.0 / beta)]
        H = np.zeros((params.restart + 1, params.restart))
        y = np.zeros(0)
        for j in range(params.restart):
            w = op(V[j])
            for _pass in range(2):  # modified Gram-Schmidt with one reorthogonalization
                for i in range(j + 1):
                    h = w.inner(V[i])
                    H[i, j] += h
                    w = (w - V[i] * h)
                w = w.round(rt)
            H[j + 1, j] = w.norm()
            rep.iterations += 1
            rep.max_rank_seen = max(rep.max_rank_seen, w.max_rank)
            e1 = np.zeros(j + 2)
            e1[0] = beta
            y, *_ = np.linalg.lstsq(H[: j + 2, : j + 1], e1, rcond=None)
            est = np.linalg.norm(H[: j + 2, : j + 1] @ y - e1) / nb
            rep.history.append(est)
            if est <= params.tol or H[j + 1, j] <= 1e-14 * beta:
                break
            V.append(w * (1.0 / H[j + 1, j]))
        dz = _lincomb(y, V[: len(y)], rt)
        x = (x + (dz if left else P(dz))).round(rt)
        r = residual(x)
        beta = r.norm()
        rep.achieved_residual = beta / nb
        rep.max_rank_seen = max(rep.max_rank_seen, x.max_rank)
        if rep.achieved_residual <= params.tol:
            rep.converged = True
            break
        if beta == 0.0:
            break
    return x, rep
