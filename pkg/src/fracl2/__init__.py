"""Discrete Caputo derivative of order 3-alpha on graded temporal meshes.

The package assembles the piecewise-quadratic (L2-type) discretization of the
Caputo derivative on arbitrary temporal meshes, certifies inverse monotonicity
of the resulting lower-triangular operator, time-steps scalar and 1D parabolic
problems, and builds convergence tables and pointwise error envelopes.
"""

from .mesh import (
    MeshSpec,
    TemporalMesh,
    build_graded,
    check_mesh_regularity,
    load_mesh,
    mesh_quantities,
    save_mesh,
)
from .operator import (
    KernelRow,
    OperatorMatrix,
    StencilDiagnostics,
    apply,
    assemble_row,
    dump_rows_csv,
    kernel_moments,
    stencil_diagnostics,
)
from .monotone import (
    FactorPair,
    MonotoneCertificate,
    UniformConstants,
    beta_schedule,
    certify,
    check_energy_condition,
    compute_K,
    eta,
    factorize,
    sigma_bar,
    sigma_bar_iterates,
    sigma_star,
    uniform_constants,
    verify_inverse_nonneg,
)
from .solve import (
    Parabolic1DProblem,
    ScalarProblem,
    SolveResult,
    scalar_preset,
    parabolic_preset,
    solve_parabolic_1d,
    solve_scalar,
)
from .analysis import (
    CampaignConfig,
    ConvergenceTable,
    ErrorEnvelope,
    StabilityEnvelope,
    TruncationProfile,
    build_table,
    envelope_E,
    envelope_U,
    observed_rates,
    pointwise_comparison,
    truncation_error,
)

__version__ = "0.1.0"

__all__ = [
    "MeshSpec",
    "TemporalMesh",
    "build_graded",
    "check_mesh_regularity",
    "load_mesh",
    "mesh_quantities",
    "save_mesh",
    "KernelRow",
    "OperatorMatrix",
    "StencilDiagnostics",
    "apply",
    "assemble_row",
    "dump_rows_csv",
    "kernel_moments",
    "stencil_diagnostics",
    "FactorPair",
    "MonotoneCertificate",
    "UniformConstants",
    "beta_schedule",
    "certify",
    "check_energy_condition",
    "compute_K",
    "eta",
    "factorize",
    "sigma_bar",
    "sigma_bar_iterates",
    "sigma_star",
    "uniform_constants",
    "verify_inverse_nonneg",
    "Parabolic1DProblem",
    "ScalarProblem",
    "SolveResult",
    "scalar_preset",
    "parabolic_preset",
    "solve_parabolic_1d",
    "solve_scalar",
    "CampaignConfig",
    "ConvergenceTable",
    "ErrorEnvelope",
    "StabilityEnvelope",
    "TruncationProfile",
    "build_table",
    "envelope_E",
    "envelope_U",
    "observed_rates",
    "pointwise_comparison",
    "truncation_error",
    "__version__",
]
