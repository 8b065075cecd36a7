"""Finite-element solver for Cahn-Hilliard dynamics with dynamic boundary conditions.

The library couples a bulk Cahn-Hilliard equation on a rectangle with a
surface Cahn-Hilliard equation on its boundary polyline, discretized with
P1 triangles inside and P1 segments along the boundary.  Three time
steppers are provided (minimizing movement, fully implicit Euler, and a
convex-concave split), all conserving bulk and surface mass and
dissipating the total free energy.
"""

import os

# Must run before numpy/scipy are first imported anywhere in the process,
# otherwise the BLAS thread pools are already sized.
_threads = os.environ.get("CHDBC_THREADS")
if _threads:
    for _var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ.setdefault(_var, _threads)

from .mesh import Rect, TriMesh, build_friedrichs_keller, boundary_arc_lengths
from .potentials import PotentialSplit, double_well
from .fem_ops import (
    FemOperators,
    MeanPair,
    assemble,
    mean_pair,
    solve_neumann_poisson,
    solve_surface_poisson,
    vkstar_inner,
    vkstar_norm_sq,
    dual_norm_bulk_sq,
    dual_norm_surf_sq,
)
from .energy_diag import (
    ModelParams,
    State,
    EnergyReport,
    DiagnosticsRecord,
    total_energy,
    full_report,
    energy_gradient,
    record_step,
    holder_quotient,
)
from .stepper import (
    StepperConfig,
    StepperError,
    MuRing,
    step_minimizing_movement,
    step_fully_implicit,
    step_convex_concave,
    reconstruct_potentials,
)
from .sim_cli import (
    SimConfig,
    RunSummary,
    ConfigError,
    parse_config,
    build_config,
    demo_config,
    make_initial,
    write_outputs,
    run,
)

__version__ = "0.1.0"

__all__ = [
    "Rect",
    "TriMesh",
    "build_friedrichs_keller",
    "boundary_arc_lengths",
    "PotentialSplit",
    "double_well",
    "FemOperators",
    "MeanPair",
    "assemble",
    "mean_pair",
    "solve_neumann_poisson",
    "solve_surface_poisson",
    "vkstar_inner",
    "vkstar_norm_sq",
    "dual_norm_bulk_sq",
    "dual_norm_surf_sq",
    "ModelParams",
    "State",
    "EnergyReport",
    "DiagnosticsRecord",
    "total_energy",
    "full_report",
    "energy_gradient",
    "record_step",
    "holder_quotient",
    "StepperConfig",
    "StepperError",
    "MuRing",
    "step_minimizing_movement",
    "step_fully_implicit",
    "step_convex_concave",
    "reconstruct_potentials",
    "SimConfig",
    "RunSummary",
    "ConfigError",
    "parse_config",
    "build_config",
    "demo_config",
    "make_initial",
    "write_outputs",
    "run",
]
