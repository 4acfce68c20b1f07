use crate::error::{invalid, Error, Result};

/// Variance-preserving diffusion coefficients over `T` discrete steps.
///
/// Index 0 is the data end (`α = 1`, `σ = 0`); index `T` the noise end.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alphas: Vec<f64>,
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    pub const DEFAULT_STEPS: usize = 1000;
    pub const DEFAULT_POWER: f64 = 2.0;
    pub const DEFAULT_PRECISION: f64 = 1e-5;

    /// `α_t² = p + (1 − p)(1 − (t/T)^power)²` with floor `p = precision`.
    pub fn polynomial(steps: usize, power: f64, precision: f64) -> Result<Self> {
        if steps == 0 {
            return Err(invalid("noise schedule needs at least one step"));
        }
        if !(power > 0.0 && power.is_finite()) {
            return Err(invalid("schedule power must be positive"));
        }
        if !(precision > 0.0 && precision < 1.0) {
            return Err(invalid("schedule precision must lie in (0, 1)"));
        }
        let alphas = (0..=steps)
            .map(|t| {
                let frac = t as f64 / steps as f64;
                let a2 = precision + (1.0 - precision) * (1.0 - frac.powf(power)).powi(2);
                a2.sqrt()
            })
            .collect();
        Self::from_alphas(alphas)
    }

    pub fn with_steps(steps: usize) -> Result<Self> {
        Self::polynomial(steps, Self::DEFAULT_POWER, Self::DEFAULT_PRECISION)
    }

    /// Builds a schedule from `α_0..=α_T`; `σ_t = sqrt(1 − α_t²)`.
    pub fn from_alphas(alphas: Vec<f64>) -> Result<Self> {
        if alphas.len() < 2 {
            return Err(invalid("noise schedule needs at least one step"));
        }
        if alphas[0] != 1.0 {
            return Err(invalid("schedule must start at alpha = 1"));
        }
        if alphas.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return Err(invalid("schedule alphas must lie in (0, 1]"));
        }
        if alphas.windows(2).any(|w| w[1] > w[0]) {
            return Err(invalid("schedule alphas must be non-increasing"));
        }
        let sigmas = alphas.iter().map(|a| (1.0 - a * a).sqrt()).collect();
        Ok(Self { alphas, sigmas })
    }

    pub fn steps(&self) -> usize {
        self.alphas.len() - 1
    }

    fn check(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(Error::StepOutOfRange {
                step: t,
                steps: self.steps(),
            });
        }
        Ok(())
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.alphas[t])
    }

    pub fn sigma(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.sigmas[t])
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }
}
