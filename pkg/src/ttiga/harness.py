"""Experiment driver: analytic solutions, error metric, elliptic and control runs.

DoF bookkeeping follows the reference experiments: a patch with ``n_d`` basis
functions per direction counts ``n_1 n_2 n_3`` DoFs (Dirichlet trimming not
subtracted), and the total error is the DoF-weighted mean of patch errors.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np
import sympy as sp

from .assembly import (
    AssemblyOptions,
    PatchDiscretization,
    assemble_multipatch,
    assemble_rhs,
    discretize,
    evaluate_solution,
    quadrature_axes,
)
from .geometry import MultiPatch, omega_from_jacobian, resolve_geometry, validate_multipatch
from .ieti import build_jump_tensors, solve_ieti
from .solvers import SolverParams
from .tt_core import BlockTTVector, TTVector


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- analytic solutions

_X, _Y, _Z = sp.symbols("x y z", real=True)


def _sym_solution(name: str):
    x, y, z = _X, _Y, _Z
    if name == "three_cubes_sol":
        g = sp.sin(sp.pi * y) * sp.sin(2 * sp.pi * z) * sp.sin(sp.pi * x)
        return sp.sin(g) * g
    if name == "four_cuboids_sol":
        return sp.sin(3 * sp.pi * x) * sp.sin(sp.pi * y) * sp.sin(sp.pi * z)
    if name == "two_annuli_sol":
        r2 = x**2 + y**2
        return (r2 - 1) * (r2 - 4) * x * y * z * (z - 2)
    raise ConfigError(f"unknown analytic solution {name!r}")


SOLUTION_FOR_GEOMETRY = {
    "three_cubes": "three_cubes_sol",
    "four_cuboids": "four_cuboids_sol",
    "two_annuli": "two_annuli_sol",
}


@lru_cache(maxsize=None)
def analytic_solution(name: str) -> Callable:
    """Vectorized ``y(x, y, z)`` for a builtin solution name.

    ``"oc_desired(<base>)"`` gives the control target ``yhat(x, y, z, t)``.
    """
    if name.startswith("oc_desired(") and name.endswith(")"):
        return desired_state(name[len("oc_desired("):-1])
    return sp.lambdify((_X, _Y, _Z), _sym_solution(name), "numpy")


@lru_cache(maxsize=None)
def manufacture_source(name: str) -> Callable:
    """``f = -Laplace(y)`` of a builtin solution, derived symbolically."""
    u = _sym_solution(name)
    f = -(sp.diff(u, _X, 2) + sp.diff(u, _Y, 2) + sp.diff(u, _Z, 2))
    return sp.lambdify((_X, _Y, _Z), f, "numpy")


def desired_time_factor(t):
    """Time profile ``exp(1/(t+1))`` of the desired state ``yhat = exp(1/(t+1)) y_sol``."""
    return np.exp(1.0 / (np.asarray(t, dtype=float) + 1.0))


def desired_state(base: str) -> Callable:
    """``y_hat(x, y, z, t) = exp(1/(t+1)) * y_sol(x, y, z)``."""
    ys = analytic_solution(base)
    return lambda x, y, z, t: desired_time_factor(t) * ys(x, y, z)


# ---------------------------------------------------------------- error metric


def relative_l2_error(y: BlockTTVector, y_sol: Callable, mp: MultiPatch, discs, q: int | None = None,
                      opts: AssemblyOptions = AssemblyOptions()):
    """Patch errors ``||y_h - y|| / ||y||`` and their DoF-weighted total."""
    errs, weights = [], []
    for j, (patch, disc) in enumerate(zip(mp.patches, discs)):
        qq = q or disc.degree + 2
        grids = quadrature_axes(disc, qq)
        X, J = patch.grid(*(g.nodes for g in grids))
        w = omega_from_jacobian(J) * np.einsum("a,b,c->abc", *(g.weights for g in grids))
        ex = np.broadcast_to(y_sol(X[..., 0], X[..., 1], X[..., 2]), w.shape)
        yh = evaluate_solution(patch, disc, y.blocks[j], [g.nodes for g in grids], opts)
        den = np.sum(w * ex**2)
        errs.append(float(np.sqrt(np.sum(w * (yh - ex) ** 2) / den)) if den > 0 else float("nan"))
        weights.append(disc.n_full)
    weights = np.asarray(weights, float)
    total = float(np.sum(weights * np.asarray(errs)) / weights.sum())
    return total, errs


# ---------------------------------------------------------------- configuration


@dataclass
class ExperimentConfig:
    problem: str = "elliptic"
    geometry: str = "three_cubes"
    degree: int = 5
    levels: list = field(default_factory=lambda: [1, 4, 7, 10])
    epsilon: float = 1e-8
    solution: str | None = None
    solver: dict = field(default_factory=dict)
    assembly: dict = field(default_factory=dict)
    alphas: list = field(default_factory=lambda: [1e-4, 1e-3, 1e-2, 1e-1, 1.0])
    T: float = 1.0
    N_t: int = 10
    control_tol: float = 1e-5
    inner_tol: float = 1e-6
    inner_local_tol: float = 1e-7
    output: str | None = None
    seed: int = 0
    record_timing: bool = True  # False writes 0.0 wall times for byte-identical reports

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def validate(self):
        if self.problem not in ("elliptic", "control"):
            raise ConfigError("problem must be 'elliptic' or 'control'")
        if self.degree < 1:
            raise ConfigError("degree must be at least 1")
        if not self.levels:
            raise ConfigError("at least one refinement level is required")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.problem == "control" and (self.N_t < 1 or self.T <= 0 or any(a <= 0 for a in self.alphas)):
            raise ConfigError("control runs need N_t >= 1, T > 0 and positive alphas")

    def solution_name(self, mp: MultiPatch) -> str:
        if self.solution:
            return self.solution
        if mp.name in SOLUTION_FOR_GEOMETRY:
            return SOLUTION_FOR_GEOMETRY[mp.name]
        raise ConfigError("custom geometries need an explicit 'solution'")

    def solver_params(self, tol: float) -> SolverParams:
        base = SolverParams(**{k: v for k, v in self.solver.items() if k in SolverParams.__dataclass_fields__})
        return SolverParams(**{**asdict(base), "tol": tol, "round_tol": None, "seed": self.seed})

    def assembly_options(self) -> AssemblyOptions:
        return AssemblyOptions(**self.assembly)


# ---------------------------------------------------------------- reports


@dataclass
class LevelResult:
    level: int
    n_dofs_total: int
    n_dofs_patch: list
    n_unknowns: int
    err_total: float
    err_patch: list
    iterations: int
    wall_time_s: float
    epsilon: float
    converged: bool
    jump_residual: float
    max_rank: int
    error: str | None = None


@dataclass
class ControlResult:
    alpha: float
    objective: float
    u_norm_euclid: float
    u_norm_mass: float
    iterations: int
    wall_time_s: float
    converged: bool
    kkt_residual: float
    jump_residual_y: float
    jump_residual_mu: float
    error: str | None = None


@dataclass
class ExperimentReport:
    problem: str
    geometry: str
    config: dict
    rows: list

    @property
    def all_converged(self) -> bool:
        return bool(self.rows) and all(r["converged"] for r in self.rows)

    def to_json(self) -> str:
        return json.dumps(
            {"problem": self.problem, "geometry": self.geometry, "config": self.config, "rows": self.rows},
            indent=1, sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        d = json.loads(text)
        return cls(d["problem"], d["geometry"], d["config"], d["rows"])

    def to_csv(self) -> str:
        if self.problem == "elliptic":
            npatch = len(self.rows[0]["n_dofs_patch"]) if self.rows else 0
            head = (["level", "n_dofs_total"] + [f"n_dofs_patch_{j + 1}" for j in range(npatch)]
                    + ["err_total"] + [f"err_patch_{j + 1}" for j in range(npatch)]
                    + ["iterations", "wall_time_s", "epsilon"])
            lines = [",".join(head)]
            for r in self.rows:
                vals = ([r["level"], r["n_dofs_total"]] + r["n_dofs_patch"] + [_fmt(r["err_total"])]
                        + [_fmt(e) for e in r["err_patch"]]
                        + [r["iterations"], f"{r['wall_time_s']:.3f}", _fmt(r["epsilon"])])
                lines.append(",".join(str(v) for v in vals))
        else:
            head = ["alpha", "objective", "u_norm_euclid", "u_norm_mass", "iterations", "wall_time_s"]
            lines = [",".join(head)]
            for r in self.rows:
                lines.append(",".join([_fmt(r["alpha"]), _fmt(r["objective"]), _fmt(r["u_norm_euclid"]),
                                       _fmt(r["u_norm_mass"]), str(r["iterations"]), f"{r['wall_time_s']:.3f}"]))
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    return "nan" if v is None or (isinstance(v, float) and np.isnan(v)) else f"{v:.10g}"


# ---------------------------------------------------------------- elliptic runs


def solve_elliptic(mp: MultiPatch, degree: int, elements, eps: float, solution: str,
                   outer: SolverParams | None = None, local: SolverParams | None = None,
                   opts: AssemblyOptions = AssemblyOptions()):
    """Assemble and solve one refinement level; returns ``(discs, ops, jumps, IETIResult)``."""
    discs = discretize(mp, degree, elements)
    ops = assemble_multipatch(mp, discs, eps, opts)
    f = manufacture_source(solution)
    rhs = BlockTTVector(list(range(mp.n_patches)),
                        [assemble_rhs(p, d, f, eps, opts) for p, d in zip(mp.patches, discs)])
    jumps = build_jump_tensors(mp, discs)
    res = solve_ieti([o.stiffness for o in ops], rhs, jumps, eps, outer=outer, local=local)
    return discs, ops, jumps, res


def run_elliptic_level(mp: MultiPatch, cfg: ExperimentConfig, level: int, elements) -> LevelResult:
    t0 = time.perf_counter()
    name = cfg.solution_name(mp)
    outer = cfg.solver_params(cfg.epsilon * 1e2)
    local = cfg.solver_params(cfg.epsilon * 10)
    discs, ops, jumps, res = solve_elliptic(mp, cfg.degree, elements, cfg.epsilon, name, outer, local,
                                            cfg.assembly_options())
    total, errs = relative_l2_error(res.y, analytic_solution(name), mp, discs, opts=cfg.assembly_options())
    return LevelResult(
        level=level,
        n_dofs_total=int(sum(d.n_full for d in discs)),
        n_dofs_patch=[int(d.n_full) for d in discs],
        n_unknowns=int(sum(d.n_trimmed for d in discs)),
        err_total=total,
        err_patch=errs,
        iterations=int(res.report.iterations),
        wall_time_s=time.perf_counter() - t0 if cfg.record_timing else 0.0,
        epsilon=cfg.epsilon,
        converged=bool(res.report.converged),
        jump_residual=float(res.jump_residual),
        max_rank=int(max(res.report.max_rank_seen, res.y.max_rank)),
    )


def run_elliptic_experiment(cfg: ExperimentConfig, mp: MultiPatch | None = None) -> ExperimentReport:
    mp = mp or resolve_geometry(cfg.geometry)
    rep = validate_multipatch(mp)
    if not rep.ok:
        raise ConfigError("; ".join(rep.issues))
    rows = []
    for i, el in enumerate(cfg.levels):
        try:
            r = run_elliptic_level(mp, cfg, i + 1, el)
        except Exception as e:  # per-level failure is recorded, the run continues
            r = LevelResult(i + 1, 0, [], 0, float("nan"), [], 0, 0.0, cfg.epsilon, False, float("nan"), 0,
                            error=f"{type(e).__name__}: {e}")
        rows.append(asdict(r))
    return ExperimentReport("elliptic", mp.name, asdict(cfg), rows)


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    if cfg.problem == "elliptic":
        return run_elliptic_experiment(cfg)
    from .control import run_control_experiment

    return run_control_experiment(cfg)


def write_report(rep: ExperimentReport, path) -> None:
    Path(path).write_text(rep.to_json())
