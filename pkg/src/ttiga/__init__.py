"""Low-rank tensor-train solvers for multi-patch isogeometric analysis.

Modules:

* ``tt_core``: TT vectors and operators, rounding, products and reshapes
* ``splines``: B-spline spaces, evaluation, quadrature and knot refinement
* ``geometry``: NURBS patches, interfaces, multi-patch validation and file I/O
* ``assembly``: TT mass and stiffness operators and load vectors per patch
* ``solvers``: ALS local solver and block TT-GMRES
* ``ieti``: jump tensors and the dual Schur complement solve
* ``control``: space-time optimal control of the heat equation
* ``harness``/``cli``: experiment driver and command line interface
"""

from .assembly import AssemblyOptions, assemble_multipatch, assemble_patch, assemble_rhs, discretize
from .control import ControlParams, TimeGrid, build_spacetime_operators, solve_optimal_control
from .geometry import MultiPatch, Patch, builtin_geometry, load_multipatch, validate_multipatch
from .harness import ExperimentConfig, run_experiment
from .ieti import build_jump_tensors, solve_ieti
from .solvers import SolverParams, local_tt_solve, tt_gmres_block
from .tt_core import BlockTTVector, TTOperator, TTVector, tt_round

__version__ = "0.1.0"
