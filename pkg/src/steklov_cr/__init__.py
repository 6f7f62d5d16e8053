"""Crouzeix-Raviart solver for a non-selfadjoint Steklov eigenvalue problem.

The package discretizes the Helmholtz-type eigenproblem with the spectral
parameter in the boundary condition on square, L-shaped, slit and disk
domains, solves the resulting complex symmetric pencil, and drives an
adaptive bisection loop from a residual error estimator.
"""

from .adaptivity import (
    AdaptRecord,
    AdaptRun,
    EdgeJumps,
    Indicator,
    TrackingError,
    adapt_loop,
    compute_jumps,
    estimate,
    indicator_for,
    mark,
)
from .assembly import (
    AssemblyError,
    Coefficient,
    CRSpace,
    SparseOperator,
    as_coefficient,
    assemble_boundary_load,
    assemble_boundary_mass,
    assemble_stiffness,
    assemble_volume_load,
    assemble_volume_mass,
    build_space,
    combine_operator,
)
from .geometry import (
    DomainKind,
    DomainSpec,
    EdgeGeometry,
    Mesh,
    MeshError,
    build_domain,
    edge_geometry,
    load_mesh,
    refine_bisect,
    refine_uniform,
    save_mesh,
)
from .solver import (
    BoundaryTrace,
    EigenPair,
    EigenSolveError,
    PencilProblem,
    SingularOperatorError,
    SolverError,
    SortRule,
    apply_ntd,
    boundary_trace,
    build_pencil,
    default_shift,
    default_sort_rule,
    dual_pair,
    solve_eigs,
    solve_source,
    sort_eigs,
)
from .verification import (
    ConvergenceReport,
    ManufacturedSolution,
    MonotonicityReport,
    RateSpec,
    boundary_l2_error,
    broken_h1_error,
    cluster_mean,
    consistency_dual_norm,
    consistency_term,
    disk_reference,
    eigenvalue_order_fit,
    manufactured_loads,
    midpoint_interpolant,
    monotonicity_check,
    observed_order,
    polygon_reference,
    rate_spec,
    richardson_limit,
    vertex_interpolant,
)

__version__ = "0.1.0"

__all__ = [
    "AdaptRecord",
    "AdaptRun",
    "AssemblyError",
    "BoundaryTrace",
    "Coefficient",
    "ConvergenceReport",
    "CRSpace",
    "DomainKind",
    "DomainSpec",
    "EdgeGeometry",
    "EdgeJumps",
    "EigenPair",
    "EigenSolveError",
    "Indicator",
    "ManufacturedSolution",
    "Mesh",
    "MeshError",
    "MonotonicityReport",
    "PencilProblem",
    "RateSpec",
    "SingularOperatorError",
    "SolverError",
    "SortRule",
    "SparseOperator",
    "TrackingError",
    "adapt_loop",
    "apply_ntd",
    "as_coefficient",
    "assemble_boundary_load",
    "assemble_boundary_mass",
    "assemble_stiffness",
    "assemble_volume_load",
    "assemble_volume_mass",
    "boundary_l2_error",
    "boundary_trace",
    "broken_h1_error",
    "build_domain",
    "build_pencil",
    "build_space",
    "cluster_mean",
    "combine_operator",
    "compute_jumps",
    "consistency_dual_norm",
    "consistency_term",
    "default_shift",
    "default_sort_rule",
    "disk_reference",
    "dual_pair",
    "edge_geometry",
    "eigenvalue_order_fit",
    "estimate",
    "indicator_for",
    "load_mesh",
    "manufactured_loads",
    "mark",
    "midpoint_interpolant",
    "monotonicity_check",
    "observed_order",
    "polygon_reference",
    "rate_spec",
    "refine_bisect",
    "refine_uniform",
    "richardson_limit",
    "save_mesh",
    "solve_eigs",
    "solve_source",
    "sort_eigs",
    "vertex_interpolant",
]
