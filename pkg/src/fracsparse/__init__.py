"""Sparse optimal control of spectral fractional diffusion.

The state equation raises a Dirichlet elliptic operator on Omega = (0, L)^n
to a fractional power; the solver realizes it as the Dirichlet-to-Neumann
map of a weighted degenerate problem on the cylinder Omega x (0, Y),
discretized with tensor Q1 elements on an anisotropic graded mesh.  The
control carries box constraints and an L1 cost, so the optimum is sparse
and satisfies a cellwise clipped soft-threshold fixed point.  A spectral
(extension-free) solver provides independent reference solutions, and the
harness fits convergence rates against it.
"""

from .errors import (
    ConfigError,
    ConvergenceError,
    FracsparseError,
    InvalidParameterError,
    MeshMismatchError,
    NumericalBreakdownError,
    OptimalityCheckError,
    UnsupportedDimensionError,
)
from .fields import ControlField, CylinderField, TraceField
from .meshing import (
    BaseMesh,
    ExtendedMesh,
    GradedAxis,
    balanced_M,
    build_base,
    graded_axis,
    tensor_mesh,
    truncation_height,
)
from .problem import (
    DerivedConstants,
    ProblemConfig,
    alpha_of_s,
    cost_J,
    derived_constants,
    ds_of_s,
    proj_interval,
    soft_threshold,
    subgradient_pointwise,
)
from .assembly import (
    SparseMatrix,
    assemble_stiffness,
    assemble_trace_load,
    cell_averages,
    gradient_tail_energy,
    l2_inner_omega,
    trace_of,
    weight_moments,
)
from .linsolve import SolveReport, cg_solve, dense_solve
from .spectral import (
    SpectralExpansion,
    eigenpairs,
    expand,
    fractional_solve_spectral,
    hs_norm,
    spectral_control_solve,
)
from .optimizer import (
    OptimalTriple,
    OptimizerSettings,
    kkt_residual,
    optimize,
    prox_step,
    solve_adjoint_fem,
    solve_state_fem,
    sparsity_report,
    vi_values,
)
from .harness import (
    RateTable,
    StudySpec,
    emit_table,
    fit_rate,
    parse_config,
    run_control_rate_study,
    run_decay_study,
    run_kkt_check,
    run_state_rate_study,
    run_study,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # errors
    "FracsparseError",
    "InvalidParameterError",
    "UnsupportedDimensionError",
    "MeshMismatchError",
    "ConfigError",
    "NumericalBreakdownError",
    "ConvergenceError",
    "OptimalityCheckError",
    # problem data and scalar maps
    "ProblemConfig",
    "DerivedConstants",
    "derived_constants",
    "alpha_of_s",
    "ds_of_s",
    "proj_interval",
    "soft_threshold",
    "subgradient_pointwise",
    "cost_J",
    # meshes
    "BaseMesh",
    "GradedAxis",
    "ExtendedMesh",
    "build_base",
    "graded_axis",
    "truncation_height",
    "tensor_mesh",
    "balanced_M",
    # fields
    "ControlField",
    "TraceField",
    "CylinderField",
    # assembly
    "SparseMatrix",
    "weight_moments",
    "assemble_stiffness",
    "assemble_trace_load",
    "trace_of",
    "cell_averages",
    "l2_inner_omega",
    "gradient_tail_energy",
    # linear solves
    "SolveReport",
    "cg_solve",
    "dense_solve",
    # spectral oracle
    "SpectralExpansion",
    "eigenpairs",
    "expand",
    "fractional_solve_spectral",
    "hs_norm",
    "spectral_control_solve",
    # optimizer
    "OptimizerSettings",
    "OptimalTriple",
    "solve_state_fem",
    "solve_adjoint_fem",
    "prox_step",
    "kkt_residual",
    "optimize",
    "sparsity_report",
    "vi_values",
    # harness
    "StudySpec",
    "RateTable",
    "fit_rate",
    "run_state_rate_study",
    "run_control_rate_study",
    "run_decay_study",
    "run_kkt_check",
    "run_study",
    "parse_config",
    "emit_table",
]
