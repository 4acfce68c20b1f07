//! Experiment configuration files (TOML).
//!
//! ```toml
//! particles = 6
//! seed = 7
//!
//! [batch]
//! size = 100
//! min_valid_fraction = 0.95
//!
//! [schedule]
//! steps = 250
//! widen = 2.0
//!
//! [shake]
//! tolerance = 1e-8
//!
//! [denoiser]
//! kind = "isotropic_gaussian"
//! variance = 1.0
//!
//! [[constraints]]
//! kind = "distance"
//! atoms = [0, 1]
//! lower = 1.2
//! upper = 1.6
//! ```
//!
//! Angles and dihedrals are in radians. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Deserialize;
use shakegen::diffusion::MixtureComponent;
use shakegen::{
    analytic_denoiser, AnalyticDenoiser, AnalyticTarget, Constraint, ConstraintExpr,
    ConstraintSchedule, NoiseSchedule, Primitive, SamplerConfig, ShakeConfig, SolverKind,
};

use crate::error::HarnessError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub particles: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub constraints: Vec<ConstraintSpec>,
    #[serde(default)]
    pub batch: BatchSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub shake: ShakeSection,
    #[serde(default)]
    pub denoiser: DenoiserSpec,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSection {
    #[serde(default = "BatchSection::default_size")]
    pub size: usize,
    /// Exit status is 0 only if at least this fraction of samples is valid.
    #[serde(default = "BatchSection::default_min_valid")]
    pub min_valid_fraction: f64,
    /// A sample is invalid when more than this fraction of its steps fail to project.
    #[serde(default = "BatchSection::default_max_failed")]
    pub max_failed_fraction: f64,
}

impl BatchSection {
    fn default_size() -> usize {
        1
    }
    fn default_min_valid() -> f64 {
        0.95
    }
    fn default_max_failed() -> f64 {
        0.2
    }
}

impl Default for BatchSection {
    fn default() -> Self {
        Self {
            size: Self::default_size(),
            min_valid_fraction: Self::default_min_valid(),
            max_failed_fraction: Self::default_max_failed(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    #[serde(default = "ScheduleSection::default_steps")]
    pub steps: usize,
    #[serde(default = "ScheduleSection::default_power")]
    pub power: f64,
    #[serde(default = "ScheduleSection::default_precision")]
    pub precision: f64,
    /// Interval half-width multiplier at the start of generation.
    #[serde(default = "ScheduleSection::default_widen")]
    pub widen: f64,
    /// Half-width that exact bounds are relaxed to at the start of generation.
    #[serde(default)]
    pub exact_half_width: f64,
}

impl ScheduleSection {
    fn default_steps() -> usize {
        NoiseSchedule::DEFAULT_STEPS
    }
    fn default_power() -> f64 {
        NoiseSchedule::DEFAULT_POWER
    }
    fn default_precision() -> f64 {
        NoiseSchedule::DEFAULT_PRECISION
    }
    fn default_widen() -> f64 {
        1.0
    }
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            steps: Self::default_steps(),
            power: Self::default_power(),
            precision: Self::default_precision(),
            widen: Self::default_widen(),
            exact_half_width: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverName {
    Full,
    GaussSeidel,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShakeSection {
    #[serde(default = "ShakeSection::default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "ShakeSection::default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "ShakeSection::default_solver")]
    pub solver: SolverName,
    #[serde(default = "ShakeSection::default_nearest_point")]
    pub nearest_point: bool,
}

impl ShakeSection {
    fn default_tolerance() -> f64 {
        ShakeConfig::default().tolerance
    }
    fn default_max_iterations() -> usize {
        ShakeConfig::default().max_iterations
    }
    fn default_solver() -> SolverName {
        SolverName::Full
    }
    fn default_nearest_point() -> bool {
        true
    }
}

impl Default for ShakeSection {
    fn default() -> Self {
        Self {
            tolerance: Self::default_tolerance(),
            max_iterations: Self::default_max_iterations(),
            solver: Self::default_solver(),
            nearest_point: Self::default_nearest_point(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub weight: f64,
    /// Flattened `3N` mean.
    pub mean: Vec<f64>,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DenoiserSpec {
    IsotropicGaussian {
        #[serde(default = "unit")]
        variance: f64,
    },
    GaussianMixture {
        components: Vec<ComponentSpec>,
    },
}

fn unit() -> f64 {
    1.0
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        DenoiserSpec::IsotropicGaussian { variance: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

/// One constraint expression. Atoms carry either `exact` or `lower`/`upper`;
/// a missing `lower` or `upper` is unbounded on that side.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintSpec {
    Distance {
        atoms: [usize; 2],
        exact: Option<f64>,
        lower: Option<f64>,
        upper: Option<f64>,
    },
    Angle {
        atoms: [usize; 3],
        exact: Option<f64>,
        lower: Option<f64>,
        upper: Option<f64>,
    },
    Dihedral {
        atoms: [usize; 4],
        exact: Option<f64>,
        lower: Option<f64>,
        upper: Option<f64>,
    },
    And {
        children: Vec<ConstraintSpec>,
    },
    Or {
        children: Vec<ConstraintSpec>,
    },
    Not {
        epsilon: f64,
        child: Box<ConstraintSpec>,
    },
}

fn atom(
    p: Primitive,
    exact: Option<f64>,
    lower: Option<f64>,
    upper: Option<f64>,
) -> Result<Constraint, String> {
    let c = match (exact, lower, upper) {
        (Some(t), None, None) => Constraint::exact(p, t),
        (None, None, None) => {
            return Err(format!(
                "{} constraint needs `exact` or `lower`/`upper`",
                p.name()
            ))
        }
        (None, lo, hi) => Constraint::interval(
            p,
            lo.unwrap_or(f64::NEG_INFINITY),
            hi.unwrap_or(f64::INFINITY),
        ),
        (Some(_), _, _) => {
            return Err(format!(
                "{} constraint mixes `exact` with `lower`/`upper`",
                p.name()
            ))
        }
    };
    c.map_err(|e| e.to_string())
}

impl ConstraintSpec {
    pub fn to_expr(&self) -> Result<ConstraintExpr, String> {
        let e = match self {
            ConstraintSpec::Distance {
                atoms,
                exact,
                lower,
                upper,
            } => atom(Primitive::Distance(*atoms), *exact, *lower, *upper)?.into(),
            ConstraintSpec::Angle {
                atoms,
                exact,
                lower,
                upper,
            } => atom(Primitive::Angle(*atoms), *exact, *lower, *upper)?.into(),
            ConstraintSpec::Dihedral {
                atoms,
                exact,
                lower,
                upper,
            } => atom(Primitive::Dihedral(*atoms), *exact, *lower, *upper)?.into(),
            ConstraintSpec::And { children } => ConstraintExpr::and(
                children
                    .iter()
                    .map(Self::to_expr)
                    .collect::<Result<_, _>>()?,
            )
            .map_err(|e| e.to_string())?,
            ConstraintSpec::Or { children } => ConstraintExpr::or(
                children
                    .iter()
                    .map(Self::to_expr)
                    .collect::<Result<_, _>>()?,
            )
            .map_err(|e| e.to_string())?,
            ConstraintSpec::Not { epsilon, child } => {
                ConstraintExpr::not(child.to_expr()?, *epsilon).map_err(|e| e.to_string())?
            }
        };
        Ok(e)
    }
}

/// A parsed and validated configuration, ready to drive a run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub constraints: Vec<ConstraintExpr>,
    pub sampler: SamplerConfig,
    pub denoiser: AnalyticDenoiser,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            HarnessError::Config(msg) => HarnessError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn shake_config(&self) -> ShakeConfig {
        ShakeConfig {
            tolerance: self.shake.tolerance,
            max_iterations: self.shake.max_iterations,
            solver: match self.shake.solver {
                SolverName::Full => SolverKind::FullLinear,
                SolverName::GaussSeidel => SolverKind::GaussSeidel,
            },
            nearest_point: self.shake.nearest_point,
            ..ShakeConfig::default()
        }
    }

    pub fn constraint_exprs(&self) -> Result<Vec<ConstraintExpr>, HarnessError> {
        self.constraints
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let e = c
                    .to_expr()
                    .map_err(|m| HarnessError::Config(format!("constraints[{k}]: {m}")))?;
                e.validate(Some(self.particles))
                    .map_err(|m| HarnessError::Config(format!("constraints[{k}]: {m}")))?;
                Ok(e)
            })
            .collect()
    }

    /// Checks every section and builds the library objects.
    pub fn build(self) -> Result<Experiment, HarnessError> {
        let cfg_err = |m: String| HarnessError::Config(m);
        if self.particles == 0 {
            return Err(cfg_err("particles must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.batch.min_valid_fraction) {
            return Err(cfg_err(
                "batch.min_valid_fraction must lie in [0, 1]".into(),
            ));
        }
        let constraints = self.constraint_exprs()?;
        let schedule = NoiseSchedule::polynomial(
            self.schedule.steps,
            self.schedule.power,
            self.schedule.precision,
        )
        .map_err(|e| cfg_err(format!("schedule: {e}")))?;
        let constraint_schedule = ConstraintSchedule::new(
            self.schedule.widen,
            self.schedule.exact_half_width,
            self.schedule.steps,
        )
        .map_err(|e| cfg_err(format!("schedule: {e}")))?;
        let mut sampler = SamplerConfig::new(schedule.clone(), self.seed);
        sampler.shake = self.shake_config();
        sampler.constraint_schedule = constraint_schedule;
        sampler.max_failed_fraction = self.batch.max_failed_fraction;
        sampler.validate().map_err(|e| cfg_err(e.to_string()))?;
        let target = match &self.denoiser {
            DenoiserSpec::IsotropicGaussian { variance } => AnalyticTarget::IsotropicGaussian {
                variance: *variance,
            },
            DenoiserSpec::GaussianMixture { components } => {
                let dof = 3 * self.particles;
                let comps = components
                    .iter()
                    .map(|c| {
                        if c.mean.len() != dof {
                            return Err(cfg_err(format!(
                                "denoiser component mean has {} entries, expected {dof}",
                                c.mean.len()
                            )));
                        }
                        Ok(MixtureComponent {
                            weight: c.weight,
                            mean: DVector::from_vec(c.mean.clone()),
                            variance: c.variance,
                        })
                    })
                    .collect::<Result<_, _>>()?;
                AnalyticTarget::GaussianMixture(comps)
            }
        };
        let denoiser =
            analytic_denoiser(target, &schedule).map_err(|e| cfg_err(format!("denoiser: {e}")))?;
        Ok(Experiment {
            config: self,
            constraints,
            sampler,
            denoiser,
        })
    }
}
