//! Semilinear equations `-Au = f(·,u) + μ` for finite-state Dirichlet
//! operators: resolvents and potentials, signed measures, the nonlinear
//! solver with truncation, Kato-type checks, nonlinear capacity, a Monte
//! Carlo oracle for the underlying jump process, and refinement studies.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`). The
//! aliases below fix it to `f64`.

pub mod audit;
pub mod capacity;
pub mod chain;
pub mod error;
pub mod kato;
pub mod measure;
pub mod nonlinearity;
pub mod operator;
pub mod refine;
pub mod scalar;
pub mod solver;

pub use audit::{audit_estimates, Audit, AuditEntry};
pub use capacity::{
    brute_force_capacity, cap_ap, chebyshev_check, exhaustion_diagnostic, vp_dual_estimate, vp_norm, CapacityOptions,
    DualEstimateOptions,
};
pub use chain::{kernel_symmetry_probe, mc_potential, mc_solution_check, path_stats, ChainSpec, Estimate, McOptions, PathStats};
pub use error::{LabError, Result};
pub use kato::{convex_image_measure, kato_report, ConvexMap, DerivativeSide, KatoReport};
pub use measure::{measure_algebra, MeasureOp, MeasureOpResult};
pub use nonlinearity::validate_nonlinearity;
pub use operator::{
    build_grid_operator, check_transient, energy, form_capacity, fractional_power, random_operator, resolvent,
    validate_dirichlet, OperatorKind,
};
pub use refine::{
    capacity_scaling_study, collapse_study, reduced_mass_estimate, CapacityTarget, CapacityVerdict, CollapseVerdict,
    RefinementFamily, StudyTable, StudyThresholds,
};
pub use scalar::Scalar;
pub use solver::{solve_semilinear, truncation_reduce, Method, SolverOptions};

pub type StateSpace = operator::StateSpace<f64>;
pub type DirichletOperator = operator::DirichletOperator<f64>;
pub type ResolventKernel = operator::ResolventKernel<f64>;
pub type SignedMeasure = measure::SignedMeasure<f64>;
pub type Nonlinearity = nonlinearity::Nonlinearity<f64>;
pub type SolveReport = solver::SolveReport<f64>;
pub type TruncationResult = solver::TruncationResult<f64>;
pub type CapacityResult = capacity::CapacityResult<f64>;
pub type DualEstimate = capacity::DualEstimate<f64>;
