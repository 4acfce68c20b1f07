use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::denoiser::Denoiser;
use super::schedule::NoiseSchedule;
use crate::constraints::{
    sample_constraints, satisfied, ConstraintExpr, ConstraintSchedule, SAMPLE_COUNT_RANGE,
};
use crate::error::{invalid, Error, Result};
use crate::geometry::Conformation;
use crate::shake::{shake_project, ShakeConfig, ShakeReport};

/// Generator for trajectory `index` of a run seeded with `seed`.
///
/// Each index gets its own ChaCha stream, so trajectories are independent of
/// the order or thread they run on.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Removes the mean of each coordinate axis from a flattened `3N` vector.
pub fn center_flat(v: &mut DVector<f64>) {
    let n = v.len() / 3;
    if n == 0 {
        return;
    }
    let mut mean = Vector3::zeros();
    for c in v.as_slice().chunks_exact(3) {
        mean += Vector3::new(c[0], c[1], c[2]);
    }
    mean /= n as f64;
    for c in v.as_mut_slice().chunks_exact_mut(3) {
        for a in 0..3 {
            c[a] -= mean[a];
        }
    }
}

pub fn subtract_center_of_gravity(x: &mut Conformation) {
    let cog = x.center_of_gravity();
    x.translate(&-cog);
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn centered_noise<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    let mut e = standard_normal(rng, n);
    center_flat(&mut e);
    e
}

/// A noised sample `z_t = α_t x + σ_t ε̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardSample {
    pub z: Conformation,
    /// Centered coordinate noise `ε̂`, flattened.
    pub noise: DVector<f64>,
    /// Uncentered feature noise, when the conformation carries features.
    pub feature_noise: Option<DMatrix<f64>>,
    pub step: usize,
}

pub fn forward_noise<R: Rng + ?Sized>(
    x: &Conformation,
    step: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<ForwardSample> {
    let alpha = schedule.alpha(step)?;
    let sigma = schedule.sigma(step)?;
    let noise = centered_noise(rng, x.dof());
    let mut z = x.with_flat_positions(&(x.to_flat() * alpha + &noise * sigma))?;
    let feature_noise = x.features().map(|h| {
        let e = DMatrix::from_fn(h.nrows(), h.ncols(), |_, _| {
            rng.sample::<f64, _>(StandardNormal)
        });
        z.set_features(Some(h * alpha + &e * sigma));
        e
    });
    Ok(ForwardSample {
        z,
        noise,
        feature_noise,
        step,
    })
}

/// Result of one evaluation of the constrained denoising loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLoss {
    /// `‖ε_s − ε_s'‖²`.
    pub loss: f64,
    pub step: usize,
    pub alpha: f64,
    pub sigma: f64,
    /// Centered noise `ε̂` used to form `z_t`.
    pub noise: DVector<f64>,
    /// `Shake(z_t) − α_t x`.
    pub target_displacement: DVector<f64>,
    /// `Shake(φ(z_t) + z_t) − z_t`.
    pub predicted_displacement: DVector<f64>,
    pub constraints: Vec<ConstraintExpr>,
    /// Set when either projection failed to converge.
    pub flagged: bool,
    pub reports: [ShakeReport; 2],
}

/// Evaluates the constrained denoising loss for one draw of `(t, ε)`.
///
/// `t` is uniform over `0..=T`. When `exprs` is `None`, 5 to 15 exact
/// constraints are sampled from `x` itself. Projection non-convergence sets
/// `flagged` rather than failing.
pub fn training_loss<R: Rng + ?Sized>(
    x: &Conformation,
    exprs: Option<&[ConstraintExpr]>,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    shake: &ShakeConfig,
    rng: &mut R,
) -> Result<TrainingLoss> {
    let step = rng.random_range(0..=schedule.steps());
    let fwd = forward_noise(x, step, schedule, rng)?;
    let constraints: Vec<ConstraintExpr> = match exprs {
        Some(e) => e.to_vec(),
        None => sample_constraints(x, rng, SAMPLE_COUNT_RANGE)?
            .into_iter()
            .map(ConstraintExpr::from)
            .collect(),
    };
    let alpha = schedule.alpha(step)?;
    let sigma = schedule.sigma(step)?;
    let z_flat = fwd.z.to_flat();

    let (sz, r1) = shake_project(&fwd.z, &constraints, shake)?;
    let target = sz.to_flat() - x.to_flat() * alpha;

    let phi = denoiser.predict_noise(&fwd.z, step)?;
    if phi.len() != z_flat.len() {
        return Err(Error::DimensionMismatch {
            expected: z_flat.len(),
            got: phi.len(),
        });
    }
    let moved = fwd.z.with_flat_positions(&(&phi + &z_flat))?;
    let (sp, r2) = shake_project(&moved, &constraints, shake)?;
    let predicted = sp.to_flat() - &z_flat;

    Ok(TrainingLoss {
        loss: (&target - &predicted).norm_squared(),
        step,
        alpha,
        sigma,
        noise: fwd.noise,
        target_displacement: target,
        predicted_displacement: predicted,
        constraints,
        flagged: !(r1.converged && r2.converged),
        reports: [r1, r2],
    })
}

/// Reverse-process settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub schedule: NoiseSchedule,
    pub shake: ShakeConfig,
    pub constraint_schedule: ConstraintSchedule,
    /// Diffusion constant `D` for Langevin mode.
    pub diffusion_constant: f64,
    pub seed: u64,
    /// A sample is invalid when more than this fraction of its per-step
    /// projections fail.
    pub max_failed_fraction: f64,
}

impl SamplerConfig {
    pub fn new(schedule: NoiseSchedule, seed: u64) -> Self {
        let steps = schedule.steps();
        Self {
            schedule,
            shake: ShakeConfig::default(),
            constraint_schedule: ConstraintSchedule::fixed(steps),
            diffusion_constant: 1.0,
            seed,
            max_failed_fraction: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.shake.validate()?;
        if !(self.diffusion_constant > 0.0 && self.diffusion_constant.is_finite()) {
            return Err(invalid("diffusion constant must be positive"));
        }
        if !(0.0..=1.0).contains(&self.max_failed_fraction) {
            return Err(invalid("max_failed_fraction must lie in [0, 1]"));
        }
        if self.constraint_schedule.total_steps != self.schedule.steps() {
            return Err(invalid(format!(
                "constraint schedule has {} steps but the noise schedule has {}",
                self.constraint_schedule.total_steps,
                self.schedule.steps()
            )));
        }
        Ok(())
    }
}

/// One generated conformation with its projection history.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub index: u64,
    pub conformation: Conformation,
    /// One report per reverse step, then the final projection onto the exact bounds.
    pub reports: Vec<ShakeReport>,
    pub failed_steps: usize,
    /// False when the final projection failed, a user constraint is violated,
    /// or too many intermediate projections failed.
    pub valid: bool,
}

impl SampleOutcome {
    pub fn final_report(&self) -> &ShakeReport {
        self.reports.last().expect("final projection report")
    }

    pub fn total_shake_iterations(&self) -> usize {
        self.reports
            .iter()
            .map(|r| r.iterations + r.refine_iterations)
            .sum()
    }
}

fn project_or_flag(
    z: &Conformation,
    exprs: &[ConstraintExpr],
    shake: &ShakeConfig,
) -> Result<(Conformation, ShakeReport)> {
    match shake_project(z, exprs, shake) {
        Ok(out) => Ok(out),
        Err(Error::Degenerate { .. } | Error::SingularSystem { .. }) => {
            Ok((z.clone(), ShakeReport::failed(f64::NAN)))
        }
        Err(e) => Err(e),
    }
}

/// Draws one constrained sample by ancestral reverse diffusion.
///
/// Starting from centered standard-normal coordinates, each step `t → t−1`
/// takes the Gaussian posterior step implied by the predicted noise, adds
/// centered noise, projects with SHAKE onto the bounds scheduled for that
/// step, and re-centers. A last projection enforces the exact user bounds.
/// `index` selects the trajectory's random stream.
pub fn reverse_sample(
    n_particles: usize,
    exprs: &[ConstraintExpr],
    denoiser: &dyn Denoiser,
    config: &SamplerConfig,
    index: u64,
) -> Result<SampleOutcome> {
    config.validate()?;
    if n_particles == 0 {
        return Err(invalid("need at least one particle"));
    }
    for e in exprs {
        e.validate(Some(n_particles))?;
    }
    let sched = &config.schedule;
    let total = sched.steps();
    let dof = 3 * n_particles;
    let mut rng = sample_rng(config.seed, index);

    let mut z = Conformation::from_flat(&centered_noise(&mut rng, dof))?;
    let mut reports = Vec::with_capacity(total + 1);
    let mut failed = 0usize;

    for t in (1..=total).rev() {
        let s = t - 1;
        let (at, st) = (sched.alpha(t)?, sched.sigma(t)?);
        let (as_, ss) = (sched.alpha(s)?, sched.sigma(s)?);
        let a_ts = at / as_;
        let var_ts = (st * st - a_ts * a_ts * ss * ss).max(0.0);

        let mut eps = denoiser.predict_noise(&z, t)?;
        if eps.len() != dof {
            return Err(Error::DimensionMismatch {
                expected: dof,
                got: eps.len(),
            });
        }
        center_flat(&mut eps);
        let mean = z.to_flat() / a_ts - eps * (var_ts / (a_ts * st));
        let std = var_ts.sqrt() * ss / st;
        let next = mean + centered_noise(&mut rng, dof) * std;
        z = z.with_flat_positions(&next)?;

        let scheduled: Vec<ConstraintExpr> = exprs
            .iter()
            .map(|e| config.constraint_schedule.apply(e, total - t))
            .collect::<Result<_>>()?;
        let (projected, report) = project_or_flag(&z, &scheduled, &config.shake)?;
        if !report.converged {
            failed += 1;
        }
        z = projected;
        subtract_center_of_gravity(&mut z);
        reports.push(report);
    }

    let (projected, report) = project_or_flag(&z, exprs, &config.shake)?;
    z = projected;
    subtract_center_of_gravity(&mut z);
    let final_ok = report.converged;
    reports.push(report);

    let tol = config.shake.tolerance + 1e-12;
    let all_hold = exprs.iter().all(|e| satisfied(e, &z, tol));
    let valid =
        final_ok && all_hold && (failed as f64) <= config.max_failed_fraction * total as f64;

    Ok(SampleOutcome {
        index,
        conformation: z,
        reports,
        failed_steps: failed,
        valid,
    })
}
