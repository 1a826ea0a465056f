"""Sparse Krylov solvers built around a fused single-reduction engine.

The package pairs five bi-Lanczos product-type solvers with a reduction
engine that batches every inner product of an iteration into one global
reduction and, for the pipelined method, overlaps that reduction with
the iteration's first matrix-vector product.
"""

from .coefficients import (
    BreakdownError,
    CoefficientSet,
    compute_alpha_beta_safe,
    compute_zeta_eta_gpbicg,
    compute_zeta_eta_safe,
)
from .instrument import (
    CostRow,
    CounterAssertionError,
    DriftMonitor,
    DriftReport,
    OpCounters,
    per_iteration_costs,
    true_relative_residual,
)
from .linalg import (
    CsrMatrix,
    MatrixMetadata,
    NonFiniteVectorError,
    csr_from_coo,
    gen_poisson,
    spmv,
)
from .mmio import MatrixMarketError, load_matrix_market, write_matrix_market
from .reduction import (
    DotBatch,
    EventLog,
    PartitionPlan,
    ReductionEngine,
    ReductionTicket,
    verify_phase_order,
)
from .solvers import (
    METHODS,
    IterationRecord,
    SolveOutcome,
    SolveStatus,
    SolverConfig,
    solve,
    solve_bicgstab,
    solve_gpbicg,
    solve_pbicgsafe,
    solve_pbicgsafe_rr,
    solve_ssbicgsafe2,
    write_history_csv,
)

__version__ = "0.1.0"

__all__ = [
    "BreakdownError",
    "CoefficientSet",
    "CostRow",
    "CounterAssertionError",
    "CsrMatrix",
    "DotBatch",
    "DriftMonitor",
    "DriftReport",
    "EventLog",
    "IterationRecord",
    "METHODS",
    "MatrixMarketError",
    "MatrixMetadata",
    "NonFiniteVectorError",
    "OpCounters",
    "PartitionPlan",
    "ReductionEngine",
    "ReductionTicket",
    "SolveOutcome",
    "SolveStatus",
    "SolverConfig",
    "compute_alpha_beta_safe",
    "compute_zeta_eta_gpbicg",
    "compute_zeta_eta_safe",
    "csr_from_coo",
    "gen_poisson",
    "load_matrix_market",
    "per_iteration_costs",
    "solve",
    "solve_bicgstab",
    "solve_gpbicg",
    "solve_pbicgsafe",
    "solve_pbicgsafe_rr",
    "solve_ssbicgsafe2",
    "spmv",
    "true_relative_residual",
    "verify_phase_order",
    "write_history_csv",
    "write_matrix_market",
    "__version__",
]
