//! Constraint-aware diffusion and Langevin sampling.
//!
//! - [`NoiseSchedule`]: variance-preserving coefficients `α_t² + σ_t² = 1`.
//! - [`Denoiser`]: noise-prediction interface, with closed-form
//!   [`AnalyticDenoiser`]s for Gaussian and Gaussian-mixture targets.
//! - [`forward_noise`] / [`training_loss`]: the constrained noising objective,
//!   which compares the SHAKE displacement of the noised sample against the
//!   SHAKE displacement of the denoiser's correction.
//! - [`reverse_sample`]: ancestral sampling with a SHAKE projection after
//!   every step under linearly tightening bounds.
//! - [`langevin_step`]: Euler–Maruyama with nullspace-projected noise.
//!
//! All coordinate noise lives in the zero center-of-gravity subspace.

mod denoiser;
mod langevin;
mod sampler;
mod schedule;

pub use denoiser::{
    analytic_denoiser, AnalyticDenoiser, AnalyticTarget, Denoiser, MixtureComponent,
};
pub use langevin::langevin_step;
pub use sampler::{
    center_flat, forward_noise, reverse_sample, sample_rng, subtract_center_of_gravity,
    training_loss, ForwardSample, SampleOutcome, SamplerConfig, TrainingLoss,
};
pub use schedule::NoiseSchedule;
