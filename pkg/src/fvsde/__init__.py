"""Finite-volume solver for a stochastic nonlinear diffusion-convection equation.

Semi-implicit in time, two-point-flux with upwinded convection in space,
multiplicative scalar Brownian noise.  Includes Brownian-path coupling for
refinement studies, Monte Carlo estimation, and stability/energy monitors.
"""

__version__ = "0.1.0"

from .calculus import (
    CellField,
    EdgeVectorField,
    discrete_gradient,
    duality_form,
    gradient_l2_norm,
    h1_seminorm,
    l2_norm,
)
from .mesh import (
    Mesh,
    MeshError,
    MeshRegularity,
    build_uniform_rect_mesh,
    load_mesh,
    mesh_regularity,
    write_mesh,
)
from .scheme import (
    SolverError,
    SolverOptions,
    StepReport,
    TimeGrid,
    Trajectory,
    project_initial,
    run_path,
    step,
)
from .stochastic import (
    BrownianPath,
    aggregate_to,
    energy_ledger,
    generate_path,
    mc_estimate,
    stability_report,
)
from .velocity import (
    EdgeFluxField,
    ProblemSpec,
    ProblemSpecError,
    divergence_defect,
    edge_flux_average,
    upwind_trace,
    validate_problem_spec,
)

__all__ = [
    "BrownianPath",
    "CellField",
    "EdgeFluxField",
    "EdgeVectorField",
    "Mesh",
    "MeshError",
    "MeshRegularity",
    "ProblemSpec",
    "ProblemSpecError",
    "SolverError",
    "SolverOptions",
    "StepReport",
    "TimeGrid",
    "Trajectory",
    "aggregate_to",
    "build_uniform_rect_mesh",
    "discrete_gradient",
    "divergence_defect",
    "duality_form",
    "edge_flux_average",
    "energy_ledger",
    "generate_path",
    "gradient_l2_norm",
    "h1_seminorm",
    "l2_norm",
    "load_mesh",
    "mc_estimate",
    "mesh_regularity",
    "project_initial",
    "run_path",
    "stability_report",
    "step",
    "upwind_trace",
    "validate_problem_spec",
    "write_mesh",
]
