//! Sharp asymptotics for convex-loss estimators from one-bit measurements.
//!
//! Measurements are `y_i = BSC_eps(sign(a_i^T x0))` with Gaussian `a_i`, and the
//! estimator minimises `(1/m) sum_i loss(y_i a_i^T x) + r ||x||^2`. The crate
//! provides
//!
//! * [`loss`]: losses, proximal operators and Moreau envelopes;
//! * [`expectation`] and [`system`]: the three-equation scalar system in
//!   `(mu, alpha, lambda)`, a damped fixed-point solver and, in [`saddle`], an
//!   independent solver for the underlying deterministic min-max problem;
//! * [`bounds`]: Fisher-information lower bounds on `alpha / mu`, the resulting
//!   correlation upper bound, and the separability threshold;
//! * [`lab`]: finite-size instances, convex solvers and Monte-Carlo replicates;
//! * [`record`]: self-describing experiment records with CSV/JSON I/O.

pub mod bounds;
pub mod error;
pub mod expectation;
pub mod lab;
pub mod loss;
pub mod quadrature;
pub mod record;
pub mod roots;
pub mod saddle;
pub mod system;

pub use bounds::{
    analytic_noiseless_bound, correlation_upper_bound, fisher_info, separability_threshold,
    BoundMethod, BoundResult, DensityTable, SyDensity, Threshold,
};
pub use error::{Error, Result};
pub use expectation::{Channel, EngineConfig, EngineMethod, ExpectationEngine};
pub use lab::{
    bias_norm, correlation, fit, generate_instance, run_replicates, FitResult, FitStatus,
    Instance, ReplicateSummary, SolverConfig,
};
pub use loss::{EnvelopeEval, Loss, LossKind, Smoothness};
pub use record::ExperimentRecord;
pub use saddle::{solve_ao_saddle, SaddleConfig};
pub use system::{
    ls_closed_form, predicted_correlation, solve_fixed_point, system_residuals, Correlation,
    FixedPointConfig, LambdaEquation, SaddleSolution,
};

/// Crate version, stamped into experiment records.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
