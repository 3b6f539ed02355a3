"""Space-time optimal control of the heat equation on multi-patch domains.

Implicit Euler in time and the rectangle rule for the objective give, per
patch, the TT operators ``Mbar = I (x) M`` and ``Kbar = I (x) tau K + C (x) M``
with time as the last TT mode. The KKT conditions read

    tau Mbar y + Kbar^T mu          = tau Mbar yhat
    tau alpha Mbar u - tau Mbar mu  = 0
    Kbar y - tau Mbar u             = 0

together with interface continuity of ``y`` and ``mu``. Eliminating ``y`` and
``mu`` leaves the control Schur complement

    (tau alpha Mbar + tau^3 Mbar Kbar^{-T} Mbar Kbar^{-1} Mbar) u = tau^2 Mbar Kbar^{-T} Mbar yhat

where every ``Kbar^{-1}`` is a multi-patch space-time IETI solve.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .assembly import AssemblyOptions, assemble_multipatch, discretize, interpolate_function, dirichlet_trim
from .geometry import MultiPatch, resolve_geometry, validate_multipatch
from .ieti import build_jump_tensors, jump_residual, solve_ieti, to_3d
from .solvers import SolveReport, SolverParams, tt_gmres_block
from .tt_core import (
    BlockTTVector,
    TTOperator,
    TTVector,
    tt_add,
    tt_apply,
    tt_concat,
    tt_round,
)


class ControlError(ValueError):
    pass


def euler_matrix(n_t: int) -> np.ndarray:
    """Implicit Euler time coupling: 1 on the diagonal, -1 on the first subdiagonal."""
    if n_t < 1:
        raise ControlError("N_t must be at least 1")
    return np.eye(n_t) - np.eye(n_t, k=-1)


@dataclass(frozen=True)
class TimeGrid:
    T: float = 1.0
    N_t: int = 10

    def __post_init__(self):
        if self.N_t < 1 or self.T <= 0:
            raise ControlError("need T > 0 and N_t >= 1")

    @property
    def tau(self) -> float:
        return self.T / self.N_t

    @property
    def times(self) -> np.ndarray:
        """``t_l = l * tau`` for ``l = 1..N_t`` (states after each implicit step)."""
        return self.tau * np.arange(1, self.N_t + 1)


@dataclass
class SpaceTimeBlocks:
    """Per-patch space-time operators and time-extended jump tensors."""

    grid: TimeGrid
    mass: list  # Mbar^(j)
    kbar: list  # Kbar^(j)
    jumps: list
    space_mass: list  # M^(j)
    discs: list


def spacetime_mass(M: TTOperator, n_t: int) -> TTOperator:
    return tt_concat(M, TTOperator.kron([np.eye(n_t)]))


def spacetime_stiffness(M: TTOperator, K: TTOperator, grid: TimeGrid, eps: float) -> TTOperator:
    """``I (x) tau K + C (x) M`` rounded at ``eps``."""
    a = tt_concat(K * grid.tau, TTOperator.kron([np.eye(grid.N_t)]))
    b = tt_concat(M, TTOperator.kron([euler_matrix(grid.N_t)]))
    return tt_round(tt_add(a, b), eps)


def build_spacetime_operators(mp: MultiPatch, discs, grid: TimeGrid, eps: float,
                              opts: AssemblyOptions = AssemblyOptions()) -> SpaceTimeBlocks:
    ops = assemble_multipatch(mp, discs, eps, opts)
    jumps = [jt.extend((grid.N_t,)) for jt in build_jump_tensors(mp, discs)]
    return SpaceTimeBlocks(
        grid=grid,
        mass=[spacetime_mass(o.mass, grid.N_t) for o in ops],
        kbar=[spacetime_stiffness(o.mass, o.stiffness, grid, eps) for o in ops],
        jumps=jumps,
        space_mass=[o.mass for o in ops],
        discs=list(discs),
    )


def mass_apply(blocks: SpaceTimeBlocks, v: BlockTTVector, tol: float) -> BlockTTVector:
    return BlockTTVector(v.keys, [tt_apply(M, b, tol) for M, b in zip(blocks.mass, v.blocks)])


# ---------------------------------------------------------------- preconditioner


def _trace(A: np.ndarray) -> float:
    return float(np.trace(A))


def mass_factors(M: TTOperator) -> list[np.ndarray]:
    """Largest-norm univariate factor per dimension of a TT mass operator.

    Factors are the rank slices of the cores (the terms of its canonical
    expansion). Signs are fixed to a positive trace and the product is scaled
    so that its trace equals the trace of ``M``.
    """
    facs = []
    for c in M.cores:
        slices = [c[a, :, :, b] for a in range(c.shape[0]) for b in range(c.shape[3])]
        F = max(slices, key=np.linalg.norm)
        facs.append(F if _trace(F) >= 0 else -F)
    # trace of a TT operator: contract the diagonal of every core
    v = np.ones(1)
    for c in M.cores:
        v = v @ np.einsum("aiib->ab", c)
    trM = float(v[0])
    prod = float(np.prod([_trace(F) for F in facs]))
    if prod <= 0 or trM <= 0:
        raise ControlError("mass operator has non-positive trace")
    s = (trM / prod) ** (1.0 / len(facs))
    return [F * s for F in facs]


def control_preconditioner(blocks: SpaceTimeBlocks, alpha: float):
    """Inverse of ``tau alpha I (x) M_1 (x) M_2 (x) M_3`` per patch, applied core by core."""
    tau = blocks.grid.tau
    invs = []
    for M in blocks.space_mass:
        facs = mass_factors(M)
        invs.append([np.linalg.inv(F) for F in facs])

    def apply(v: BlockTTVector) -> BlockTTVector:
        out = []
        for inv, b in zip(invs, v.blocks):
            cores = [np.einsum("ij,ajb->aib", Fi, c) for Fi, c in zip(inv, b.cores[:3])]
            cores.append(b.cores[3] / (tau * alpha))
            out.append(TTVector(cores))
        return BlockTTVector(v.keys, out)

    return apply


# ---------------------------------------------------------------- Schur complement


@dataclass
class ControlParams:
    tol: float = 1e-5  # outer GMRES on the control
    inner_tol: float = 1e-6  # dual GMRES of each space-time IETI solve
    inner_local_tol: float = 1e-7  # patch solves inside the IETI solves
    restart: int = 20
    max_iters: int = 10
    eps: float = 1e-8  # assembly and interpolation tolerance

    def outer(self) -> SolverParams:
        return SolverParams(tol=self.tol, restart=self.restart, max_iters=self.max_iters)

    def inner(self) -> tuple[SolverParams, SolverParams]:
        return SolverParams(tol=self.inner_tol), SolverParams(tol=self.inner_local_tol)


class SpaceTimeSolver:
    """``Kbar^{-1}`` and ``Kbar^{-T}`` on continuous multi-patch space-time functions."""

    def __init__(self, blocks: SpaceTimeBlocks, params: ControlParams):
        self.blocks = blocks
        self.outer, self.local = params.inner()
        self.reports: list[SolveReport] = []

    def solve(self, g: BlockTTVector, transpose: bool = False):
        res = solve_ieti(self.blocks.kbar, g, self.blocks.jumps, outer=self.outer, local=self.local,
                         transpose=transpose)
        self.reports.append(res.report)
        return res

    @property
    def failures(self) -> int:
        return sum(not r.converged for r in self.reports)


def desired_state_tt(mp: MultiPatch, discs, y_space: Callable, time_factor: Callable, grid: TimeGrid,
                     eps: float, opts: AssemblyOptions = AssemblyOptions()) -> BlockTTVector:
    """Coefficients of ``yhat(x, t_l) = time_factor(t_l) * y_space(x)`` (spatial interpolant, trimmed)."""
    e = np.asarray(time_factor(grid.times), dtype=float).reshape(1, -1, 1)
    blocks = []
    for patch, disc in zip(mp.patches, discs):
        space = dirichlet_trim(interpolate_function(patch, disc, y_space, eps, opts), disc.trim)
        blocks.append(tt_concat(space, TTVector([e])))
    return BlockTTVector(list(range(mp.n_patches)), blocks)


@dataclass
class ControlSolution:
    u: BlockTTVector
    y: BlockTTVector
    mu: BlockTTVector
    lam_y: BlockTTVector
    lam_mu: BlockTTVector
    alpha: float
    report: SolveReport
    diagnostics: dict = field(default_factory=dict)


def schur_operator(blocks: SpaceTimeBlocks, st: SpaceTimeSolver, alpha: float, rt: float):
    tau = blocks.grid.tau

    def apply(u: BlockTTVector) -> BlockTTVector:
        Mu = mass_apply(blocks, u, rt)
        y = st.solve(Mu * tau).y
        z = st.solve(mass_apply(blocks, y, rt), transpose=True).y
        return (Mu * (tau * alpha) + mass_apply(blocks, z, rt) * tau**2).round(rt)

    return apply


def solve_optimal_control(blocks: SpaceTimeBlocks, y_hat: BlockTTVector, alpha: float,
                          params: ControlParams = ControlParams()) -> ControlSolution:
    if alpha <= 0:
        raise ControlError("alpha must be positive")
    tau = blocks.grid.tau
    outer = params.outer()
    rt = outer.rounding
    st = SpaceTimeSolver(blocks, params)
    My = mass_apply(blocks, y_hat, rt)
    rhs = mass_apply(blocks, st.solve(My, transpose=True).y, rt) * tau**2
    P = control_preconditioner(blocks, alpha)
    u, rep = tt_gmres_block(schur_operator(blocks, st, alpha, rt), rhs, P, outer)
    # recovery of state and adjoint with their interface multipliers
    ry = st.solve(mass_apply(blocks, u, rt) * tau)
    rmu = st.solve(((My - mass_apply(blocks, ry.y, rt)) * tau).round(rt), transpose=True)
    sol = ControlSolution(u, ry.y, rmu.y, ry.lam, rmu.lam, alpha, rep)
    sol.diagnostics = {
        "objective": objective(blocks, sol.y, u, y_hat, alpha),
        "lagrangian": evaluate_lagrangian(blocks, sol.y, u, sol.mu, y_hat, alpha),
        "u_norm_euclid": u.norm(),
        "u_norm_mass": float(np.sqrt(max(u.inner(mass_apply(blocks, u, rt)), 0.0))),
        "kkt_residual": kkt_residual(blocks, sol, y_hat),
        "jump_residual_y": _rel_jump(blocks.jumps, sol.y),
        "jump_residual_mu": _rel_jump(blocks.jumps, sol.mu),
        "inner_solves": len(st.reports),
        "inner_failures": st.failures,
        "recovery_converged": bool(ry.report.converged and rmu.report.converged),
    }
    return sol


def _rel_jump(jumps, v: BlockTTVector) -> float:
    n = v.norm()
    r = jump_residual(jumps, v)
    return r / n if n > 0 else r


def objective(blocks: SpaceTimeBlocks, y, u, y_hat, alpha: float) -> float:
    """``sum_l tau/2 [(y_l - yhat_l)^T M (y_l - yhat_l) + alpha u_l^T M u_l]``."""
    tau = blocks.grid.tau
    d = y - y_hat
    return 0.5 * tau * (d.inner(mass_apply(blocks, d, None)) + alpha * u.inner(mass_apply(blocks, u, None)))


def evaluate_lagrangian(blocks: SpaceTimeBlocks, y, u, mu, y_hat, alpha: float) -> float:
    """Objective plus ``mu^T (Kbar y - tau Mbar u)``."""
    tau = blocks.grid.tau
    state = BlockTTVector(y.keys, [tt_apply(K, b) for K, b in zip(blocks.kbar, y.blocks)])
    c = state - mass_apply(blocks, u, None) * tau
    return objective(blocks, y, u, y_hat, alpha) + mu.inner(c)


def _op_apply(ops, v: BlockTTVector, transpose=False) -> BlockTTVector:
    return BlockTTVector(v.keys, [tt_apply(K.T if transpose else K, b) for K, b in zip(ops, v.blocks)])


def _jump_transpose(jumps, lam: BlockTTVector, like: BlockTTVector) -> BlockTTVector:
    out = [TTVector.zeros(b.shape) for b in like.blocks]
    for jt, l2 in zip(jumps, lam.blocks):
        l3 = to_3d(l2, jt.iface.d1)
        for m in (jt.j, jt.k):
            out[m] = tt_add(out[m], tt_apply(jt.op(m).T, l3))
    return BlockTTVector(like.keys, out)


def kkt_residual(blocks: SpaceTimeBlocks, sol: ControlSolution, y_hat: BlockTTVector) -> float:
    """Relative residual of the full multi-patch KKT system including continuity rows."""
    tau, a = blocks.grid.tau, sol.alpha
    y, u, mu = sol.y, sol.u, sol.mu
    My, Mu, Mmu, Myh = (mass_apply(blocks, v, None) for v in (y, u, mu, y_hat))
    r1 = My * tau + _op_apply(blocks.kbar, mu, True) - Myh * tau
    r2 = Mu * (tau * a) - Mmu * tau
    r3 = _op_apply(blocks.kbar, y) - Mu * tau
    if blocks.jumps:
        r1 = r1 + _jump_transpose(blocks.jumps, sol.lam_mu, y)
        r3 = r3 + _jump_transpose(blocks.jumps, sol.lam_y, y)
    num = r1.norm() ** 2 + r2.norm() ** 2 + r3.norm() ** 2
    num += jump_residual(blocks.jumps, y) ** 2 + jump_residual(blocks.jumps, mu) ** 2
    den = (Myh * tau).norm()
    return float(np.sqrt(num) / den) if den > 0 else float(np.sqrt(num))


# ---------------------------------------------------------------- experiment driver


def run_control_experiment(cfg):
    from .harness import ControlResult, ExperimentReport, analytic_solution, desired_time_factor

    mp = resolve_geometry(cfg.geometry)
    rep = validate_multipatch(mp)
    if not rep.ok:
        raise ControlError("; ".join(rep.issues))
    opts = cfg.assembly_options()
    discs = discretize(mp, cfg.degree, cfg.levels[0])
    grid = TimeGrid(cfg.T, cfg.N_t)
    blocks = build_spacetime_operators(mp, discs, grid, cfg.epsilon, opts)
    yh = desired_state_tt(mp, discs, analytic_solution(cfg.solution_name(mp)), desired_time_factor, grid,
                          cfg.epsilon, opts)
    params = ControlParams(tol=cfg.control_tol, inner_tol=cfg.inner_tol, inner_local_tol=cfg.inner_local_tol,
                           eps=cfg.epsilon, **{k: v for k, v in cfg.solver.items() if k in ("restart", "max_iters")})
    rows = []
    for alpha in cfg.alphas:
        t0 = time.perf_counter()
        try:
            sol = solve_optimal_control(blocks, yh, alpha, params)
            d = sol.diagnostics
            r = ControlResult(alpha, d["objective"], d["u_norm_euclid"], d["u_norm_mass"],
                              sol.report.iterations, time.perf_counter() - t0 if cfg.record_timing else 0.0,
                              bool(sol.report.converged and d["recovery_converged"]),
                              d["kkt_residual"], d["jump_residual_y"], d["jump_residual_mu"])
        except Exception as e:  # per-alpha failure is recorded, the sweep continues
            r = ControlResult(alpha, float("nan"), float("nan"), float("nan"), 0,
                              time.perf_counter() - t0 if cfg.record_timing else 0.0, False,
                              float("nan"), float("nan"), float("nan"), error=f"{type(e).__name__}: {e}")
        rows.append(asdict(r))
    return ExperimentReport("control", mp.name, asdict(cfg), rows)
