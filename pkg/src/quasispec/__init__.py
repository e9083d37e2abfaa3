"""Spectral approximation of quasiperiodic functions and Schrodinger eigenproblems.

A quasiperiodic function is the restriction of a periodic parent on a
higher-dimensional torus to an irrational slice.  This package retains the
parent's Fourier modes inside a slanted window aligned with that slice,
relabels them onto a rectangular FFT box through an exact index bijection,
and solves interpolation problems and ground-state Schrodinger eigenproblems
directly in the reduced coefficient space.  The classical rectangular
truncation is available as the "pm" method for comparison.
"""

from .core import (
    DEFAULT_DOF_CAP,
    DualGrid,
    ProjectionMatrix,
    WindowIndexSet,
    build_dual_grid,
    build_window_set,
    resolve_dof_cap,
    rho,
    rho_inverse,
    split_projection,
)
from .errors import (
    BoundaryAmbiguity,
    BreakdownRecovered,
    NonFinite,
    NonPositiveDiagonal,
    NotConverged,
    NotPositiveDefinite,
    OutOfRange,
    OverflowRisk,
    QuasiSpecError,
    QuasiSpecWarning,
    RankDeficient,
    ShapeMismatch,
    SingularLeadingBlock,
    ZeroReference,
)
from .experiments import (
    ALPHA_GOLDEN,
    ErrorReport,
    EvalGrid,
    PotentialSpec,
    ReferenceSolution,
    StudyCase,
    StudyConfig,
    StudyRow,
    compute_errors,
    constant,
    custom,
    decay_coefficients,
    example1,
    example2,
    example3,
    inverse_participation_ratio,
    load_reference,
    make_reference,
    mass_concentration,
    run_study,
    sample_density,
    sample_wavefunction,
    solve_qse,
    window_concentration,
    write_study_csv,
)
from .norms import (
    NormOrder,
    mixed_seminorm,
    periodic_norm,
    periodic_seminorm,
    qp_norm,
    qp_seminorm,
)
from .solver import (
    DiagonalPreconditioner,
    EigenResult,
    HamiltonianOperator,
    apply_hamiltonian,
    build_preconditioner,
    estimate_condition,
    lobpcg_smallest,
)
from .transform import (
    GridField,
    SpectralField,
    evaluate,
    evaluate_on_grid,
    evaluate_parent,
    forward_dft,
    interpolate,
    inverse_dft,
    sample_parent,
    truncate,
)

__version__ = "0.1.0"
