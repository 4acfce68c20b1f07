use nalgebra::DVector;

use super::sampler::center_flat;
use super::schedule::NoiseSchedule;
use crate::error::{invalid, Error, Result};
use crate::geometry::Conformation;

/// Predicts the coordinate noise component of a noised sample at step `t`.
///
/// Implementations must be deterministic in `(z, t)` and return a `3N` vector.
pub trait Denoiser: Sync {
    fn predict_noise(&self, z: &Conformation, step: usize) -> Result<DVector<f64>>;
}

impl<F> Denoiser for F
where
    F: Fn(&Conformation, usize) -> DVector<f64> + Sync,
{
    fn predict_noise(&self, z: &Conformation, step: usize) -> Result<DVector<f64>> {
        let out = self(z, step);
        if out.len() != z.dof() {
            return Err(Error::DimensionMismatch {
                expected: z.dof(),
                got: out.len(),
            });
        }
        Ok(out)
    }
}

/// One isotropic component `N(mean, variance·I)` of a mixture target.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    /// Flattened `3N` mean; re-centered on construction.
    pub mean: DVector<f64>,
    pub variance: f64,
}

/// Data distributions with a closed-form noise posterior.
///
/// Targets live on the zero center-of-gravity subspace, like the sampler's
/// iterates.
#[derive(Debug, Clone, PartialEq)]
pub enum AnalyticTarget {
    /// `N(0, variance·I)` on the centered subspace.
    IsotropicGaussian {
        variance: f64,
    },
    GaussianMixture(Vec<MixtureComponent>),
}

/// Exact `E[ε | z_t]` for an [`AnalyticTarget`] under a variance-preserving schedule.
#[derive(Debug, Clone)]
pub struct AnalyticDenoiser {
    components: Vec<MixtureComponent>,
    schedule: NoiseSchedule,
}

pub fn analytic_denoiser(
    target: AnalyticTarget,
    schedule: &NoiseSchedule,
) -> Result<AnalyticDenoiser> {
    AnalyticDenoiser::new(target, schedule)
}

impl AnalyticDenoiser {
    pub fn new(target: AnalyticTarget, schedule: &NoiseSchedule) -> Result<Self> {
        let components = match target {
            AnalyticTarget::IsotropicGaussian { variance } => {
                if !(variance > 0.0 && variance.is_finite()) {
                    return Err(invalid("Gaussian variance must be positive"));
                }
                vec![MixtureComponent {
                    weight: 1.0,
                    mean: DVector::zeros(0),
                    variance,
                }]
            }
            AnalyticTarget::GaussianMixture(mut comps) => {
                if comps.is_empty() {
                    return Err(invalid("mixture needs at least one component"));
                }
                let dim = comps[0].mean.len();
                if dim % 3 != 0 {
                    return Err(invalid("mixture means must be flattened 3N vectors"));
                }
                let mut total = 0.0;
                for c in &mut comps {
                    if c.mean.len() != dim {
                        return Err(Error::DimensionMismatch {
                            expected: dim,
                            got: c.mean.len(),
                        });
                    }
                    if !(c.weight > 0.0 && c.weight.is_finite()) {
                        return Err(invalid("mixture weights must be positive"));
                    }
                    if !(c.variance > 0.0 && c.variance.is_finite()) {
                        return Err(invalid("mixture variances must be positive"));
                    }
                    center_flat(&mut c.mean);
                    total += c.weight;
                }
                if (total - 1.0).abs() > 1e-9 {
                    return Err(invalid(format!("mixture weights sum to {total}, not 1")));
                }
                comps
            }
        };
        Ok(Self {
            components,
            schedule: schedule.clone(),
        })
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// Closed-form prediction from flattened, centered coordinates.
    pub fn predict_flat(&self, z: &DVector<f64>, step: usize) -> Result<DVector<f64>> {
        let alpha = self.schedule.alpha(step)?;
        let sigma = self.schedule.sigma(step)?;
        let n = z.len();
        let mut zc = z.clone();
        center_flat(&mut zc);
        // Effective dimension of the centered subspace.
        let dim = n.saturating_sub(3).max(1) as f64;

        let offsets: Vec<DVector<f64>> = self
            .components
            .iter()
            .map(|c| {
                if c.mean.is_empty() {
                    Ok(zc.clone())
                } else if c.mean.len() != n {
                    Err(Error::DimensionMismatch {
                        expected: c.mean.len(),
                        got: n,
                    })
                } else {
                    Ok(&zc - &c.mean * alpha)
                }
            })
            .collect::<Result<_>>()?;
        let vars: Vec<f64> = self
            .components
            .iter()
            .map(|c| alpha * alpha * c.variance + sigma * sigma)
            .collect();
        let logs: Vec<f64> = self
            .components
            .iter()
            .zip(&offsets)
            .zip(&vars)
            .map(|((c, d), v)| c.weight.ln() - 0.5 * dim * v.ln() - d.norm_squared() / (2.0 * v))
            .collect();
        let lmax = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - lmax).exp()).collect();
        let wsum: f64 = w.iter().sum();

        let mut out = DVector::zeros(n);
        for ((wk, d), v) in w.iter().zip(&offsets).zip(&vars) {
            out += d * (wk / wsum * sigma / v);
        }
        Ok(out)
    }
}

impl Denoiser for AnalyticDenoiser {
    fn predict_noise(&self, z: &Conformation, step: usize) -> Result<DVector<f64>> {
        self.predict_flat(&z.to_flat(), step)
    }
}
