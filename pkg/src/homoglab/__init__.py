"""Numerical laboratory for periodic homogenization and low-cost optimal control.

The package verifies, at desk scale, the convergence structure of
second-order elliptic operators with periodically oscillating
coefficients: effective tensors from cell problems, energy convergence
under strong and weakly convergent data, Gamma-convergence of low-cost
control problems (Tikhonov weight equal to the oscillation scale), the
corrector reconstruction of oscillatory gradients, and elliptic problems
with measure data in the sense of the transpose-equation duality.
"""

from .domain import (
    CoefficientField,
    GridField,
    GridVectorField,
    Mesh,
    UnderResolvedError,
    build_mesh,
    coefficient_preset,
    constant_table,
    sample_epsilon,
)
from .elliptic import SolverError, assemble, energy, solve, solve_cell
from .homogenize import (
    HomogenizedTensors,
    assemble_Bsharp,
    homogenize_A,
    homogenize_B0,
    reconstruct,
)
from .control import (
    ControlProblem,
    ConvexSet,
    Optimum,
    OptimizerError,
    project,
    solve_limit_dirichlet,
    solve_limit_measure,
    solve_lowcost,
)
from .measure import DiscreteMeasure, check_duality, stampacchia_solve, wstar_distance
from .lab import ConfigError, SweepConfig, SweepReport, load_config, run_sweep

__version__ = "0.1.0"
