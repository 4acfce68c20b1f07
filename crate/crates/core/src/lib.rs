//! Constrained stochastic sampling over particle conformations.
//!
//! Geometric constraints (distances, bond angles, dihedrals; exact or
//! interval-bounded; composed with AND/OR/NOT) are enforced inside diffusion
//! and Langevin sampling loops, either by SHAKE projection of the iterate or
//! by projecting noise and covariances onto the constraint nullspace.

pub mod constraints;
pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod projection;
pub mod shake;

pub use constraints::{
    active_set, lower_not, satisfied, schedule_at, slack_value, ActiveConstraint, Bound,
    Constraint, ConstraintExpr, ConstraintSchedule, Side,
};
pub use diffusion::{
    analytic_denoiser, langevin_step, reverse_sample, training_loss, AnalyticDenoiser,
    AnalyticTarget, Denoiser, NoiseSchedule, SampleOutcome, SamplerConfig,
};
pub use error::{Error, Result};
pub use geometry::{Conformation, GradientVector, Primitive};
pub use projection::{
    nullspace_projector, schur_project_covariance, ConstraintJacobian, Projector,
};
pub use shake::{shake_project, ShakeConfig, ShakeReport, SolverKind};
