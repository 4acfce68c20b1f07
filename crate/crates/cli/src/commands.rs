use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use shakegen::diffusion::sample_rng;
use shakegen::geometry::{finite_difference_gradient, gradient_relative_error, residual_gradient};
use shakegen::{
    reverse_sample, Conformation, Constraint, ConstraintExpr, Primitive, SampleOutcome,
};

use crate::config::{Experiment, ExperimentConfig};
use crate::error::{exit, HarnessError};
use crate::metrics::{self, MetricsRow};
use crate::xyz;

/// Extra tolerance on validation to absorb the 1e-10 Å rounding of XYZ output.
pub const XYZ_SLACK: f64 = 1e-9;

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct GlobalOptions {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub quiet: bool,
    /// Worker threads for batch sampling; `None` uses all cores.
    pub threads: Option<usize>,
    /// Also write `timings.csv` with per-sample wall times.
    pub timings: bool,
}

macro_rules! say {
    ($opts:expr, $out:expr, $($arg:tt)*) => {
        if !$opts.quiet {
            let _ = writeln!($out, $($arg)*);
        }
    };
}

fn make_dir(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Runs `count` trajectories, in parallel, returned in index order with wall times.
pub fn run_batch(
    exp: &Experiment,
    count: usize,
    threads: Option<usize>,
) -> Result<Vec<(SampleOutcome, f64)>, HarnessError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let n = exp.config.particles;
    let results: Vec<shakegen::Result<(SampleOutcome, f64)>> = pool.install(|| {
        (0..count as u64)
            .into_par_iter()
            .map(|i| {
                let start = Instant::now();
                let out = reverse_sample(n, &exp.constraints, &exp.denoiser, &exp.sampler, i)?;
                Ok((out, start.elapsed().as_secs_f64() * 1e3))
            })
            .collect()
    });
    results
        .into_iter()
        .map(|r| r.map_err(HarnessError::from))
        .collect()
}

/// File name for a sample; flagged samples are kept apart so every
/// `sample_*.xyz` satisfies the constraints.
pub fn sample_file_name(id: u64, valid: bool) -> String {
    if valid {
        format!("sample_{id:05}.xyz")
    } else {
        format!("flagged_{id:05}.xyz")
    }
}

/// Outcome of a batch written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSummary {
    pub total: usize,
    pub valid: usize,
    /// Valid samples with every top-level constraint satisfied.
    pub all_satisfied: usize,
}

impl BatchSummary {
    pub fn valid_fraction(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.valid as f64 / self.total as f64
        }
    }
}

fn write_batch(
    exp: &Experiment,
    results: &[(SampleOutcome, f64)],
    dir: &Path,
    timings: bool,
) -> Result<BatchSummary, HarnessError> {
    make_dir(dir)?;
    let tol = exp.sampler.shake.tolerance + 1e-12;
    let mut rows = Vec::with_capacity(results.len());
    for (out, _) in results {
        let row = MetricsRow::from_outcome(out, &exp.constraints, tol);
        let comment = format!(
            "sample {} seed {} valid {}",
            out.index, exp.sampler.seed, out.valid
        );
        xyz::write_xyz(
            &dir.join(sample_file_name(out.index, out.valid)),
            &out.conformation,
            &comment,
        )?;
        rows.push(row);
    }
    write_file(
        &dir.join("metrics.csv"),
        &metrics::render(&rows, exp.constraints.len()),
    )?;
    if timings {
        let t: Vec<(u64, f64)> = results.iter().map(|(o, ms)| (o.index, *ms)).collect();
        write_file(&dir.join("timings.csv"), &metrics::render_timings(&t))?;
    }
    Ok(BatchSummary {
        total: rows.len(),
        valid: rows.iter().filter(|r| r.valid).count(),
        all_satisfied: rows
            .iter()
            .filter(|r| r.valid && r.satisfied.iter().all(|&s| s))
            .count(),
    })
}

fn output_dir(opts: &GlobalOptions, config: &ExperimentConfig, fallback: &str) -> PathBuf {
    opts.out_dir
        .clone()
        .or_else(|| config.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from(fallback))
}

/// `sample`: draws `batch.size` conformations and writes XYZ files plus metrics.
pub fn cmd_sample(
    config_path: &Path,
    opts: &GlobalOptions,
    out: &mut dyn Write,
) -> Result<u8, HarnessError> {
    let mut config = ExperimentConfig::load(config_path)?;
    if let Some(seed) = opts.seed {
        config.seed = seed;
    }
    let dir = output_dir(opts, &config, "shakegen-out");
    let exp = config.build()?;
    let results = run_batch(&exp, exp.config.batch.size, opts.threads)?;
    let summary = write_batch(&exp, &results, &dir, opts.timings)?;
    say!(
        opts,
        out,
        "{} of {} samples valid ({:.1}%), written to {}",
        summary.valid,
        summary.total,
        100.0 * summary.valid_fraction(),
        dir.display()
    );
    Ok(
        if summary.valid_fraction() >= exp.config.batch.min_valid_fraction {
            exit::SUCCESS
        } else {
            exit::FAILURE
        },
    )
}

/// `validate`: re-evaluates the configured constraints on stored conformations.
pub fn cmd_validate(
    xyz_paths: &[PathBuf],
    config_path: &Path,
    opts: &GlobalOptions,
    out: &mut dyn Write,
) -> Result<u8, HarnessError> {
    let config = ExperimentConfig::load(config_path)?;
    let exprs = config.constraint_exprs()?;
    let tol = config.shake.tolerance + XYZ_SLACK;
    let frames: Vec<Conformation> = xyz_paths
        .iter()
        .map(|p| xyz::read_xyz(p))
        .collect::<Result<_, _>>()?;
    for (p, x) in xyz_paths.iter().zip(&frames) {
        if x.len() != config.particles {
            return Err(HarnessError::Data(format!(
                "{}: {} particles, config expects {}",
                p.display(),
                x.len(),
                config.particles
            )));
        }
    }
    let mut failed = false;
    for (k, e) in exprs.iter().enumerate() {
        let mut worst = 0.0f64;
        let mut violating = Vec::new();
        for (p, x) in xyz_paths.iter().zip(&frames) {
            let v = e.violation(x).unwrap_or(f64::INFINITY);
            worst = worst.max(v);
            if v > tol {
                violating.push(p.display().to_string());
            }
        }
        say!(
            opts,
            out,
            "constraint {k}: max violation {worst:.3e} over {} file(s)",
            frames.len()
        );
        if !violating.is_empty() {
            failed = true;
            let _ = writeln!(out, "constraint {k} violated in: {}", violating.join(", "));
        }
    }
    Ok(if failed { exit::FAILURE } else { exit::SUCCESS })
}

/// Deliberate corruption of the analytic gradients, to check that the
/// finite-difference suite catches it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    SignFlip,
}

pub const GRADCHECK_THRESHOLD: f64 = 1e-6;
pub const GRADCHECK_STEP: f64 = 1e-5;

/// Largest analytic-vs-finite-difference relative error per primitive kind.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub trials: usize,
    pub worst: Vec<(&'static str, f64)>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.worst.iter().all(|(_, e)| *e < GRADCHECK_THRESHOLD)
    }
}

/// Arms of at least 0.3 Å and no angle within ~6° of collinear.
fn well_conditioned(p: &Primitive, x: &Conformation) -> bool {
    let ix = p.indices();
    let pos = |k: usize| *x.position(ix[k]);
    for a in 0..ix.len() {
        for b in 0..a {
            if (pos(a) - pos(b)).norm() < 0.3 {
                return false;
            }
        }
    }
    let sin = |u: nalgebra::Vector3<f64>, v: nalgebra::Vector3<f64>| {
        u.cross(&v).norm() / (u.norm() * v.norm())
    };
    (2..ix.len()).all(|k| sin(pos(k - 2) - pos(k - 1), pos(k) - pos(k - 1)) > 0.1)
}

pub fn gradcheck(trials: usize, seed: u64, fault: Fault) -> Result<GradcheckReport, HarnessError> {
    if trials == 0 {
        return Err(HarnessError::Config("--trials must be at least 1".into()));
    }
    let kinds = [
        Primitive::Distance([0, 1]),
        Primitive::Angle([0, 1, 2]),
        Primitive::Dihedral([0, 1, 2, 3]),
    ];
    let mut worst = Vec::new();
    for (k, kind) in kinds.iter().enumerate() {
        let mut rng = sample_rng(seed, k as u64);
        let mut max_err = 0.0f64;
        let mut done = 0;
        while done < trials {
            let rows: Vec<[f64; 3]> = (0..4)
                .map(|_| {
                    [
                        rng.random_range(-2.0..2.0),
                        rng.random_range(-2.0..2.0),
                        rng.random_range(-2.0..2.0),
                    ]
                })
                .collect();
            let x = Conformation::from_rows(&rows)?;
            if !well_conditioned(kind, &x) {
                continue;
            }
            let target = rng.random_range(-1.0..1.0);
            let mut analytic = residual_gradient(kind, &x, target)?.0;
            if fault == Fault::SignFlip {
                analytic = -analytic;
            }
            let fd = finite_difference_gradient(kind, &x, target, GRADCHECK_STEP)?.0;
            max_err = max_err.max(gradient_relative_error(&analytic, &fd));
            done += 1;
        }
        worst.push((kind.name(), max_err));
    }
    Ok(GradcheckReport { trials, worst })
}

/// `gradcheck`: prints the worst relative gradient error per primitive kind.
pub fn cmd_gradcheck(
    trials: usize,
    opts: &GlobalOptions,
    fault: Fault,
    out: &mut dyn Write,
) -> Result<u8, HarnessError> {
    let report = gradcheck(trials, opts.seed.unwrap_or(0), fault)?;
    for (name, err) in &report.worst {
        let verdict = if *err < GRADCHECK_THRESHOLD {
            "ok"
        } else {
            "FAIL"
        };
        say!(
            opts,
            out,
            "{name:<9} trials {trials:>5}  max relative error {err:.3e}  {verdict}"
        );
    }
    Ok(if report.passed() {
        exit::SUCCESS
    } else {
        exit::FAILURE
    })
}

/// Settings of the cyclic-distance demonstration.
#[derive(Debug, Clone)]
pub struct RingDemo {
    pub n: usize,
    pub batch: usize,
    pub steps: usize,
    /// Nominal bounds `[lower, upper]`, each widened by `margin`.
    pub lower: f64,
    pub upper: f64,
    pub margin: f64,
    /// Interval half-width multiplier at the start of generation.
    pub widen: f64,
    /// Replace the bounds with a set violating the triangle inequality.
    pub infeasible: bool,
}

impl Default for RingDemo {
    fn default() -> Self {
        Self {
            n: 6,
            batch: 100,
            steps: 250,
            lower: 1.3,
            upper: 1.5,
            margin: 0.1,
            widen: 2.0,
            infeasible: false,
        }
    }
}

impl RingDemo {
    pub fn constraints(&self) -> Result<Vec<ConstraintExpr>, HarnessError> {
        let n = self.n;
        let mut exprs: Vec<ConstraintExpr> = (0..n)
            .map(|i| {
                let (lo, hi) = if self.infeasible && i == 0 {
                    (10.0, 11.0)
                } else {
                    (self.lower - self.margin, self.upper + self.margin)
                };
                Constraint::interval(Primitive::Distance([i, (i + 1) % n]), lo, hi)
                    .map(ConstraintExpr::from)
            })
            .collect::<Result<_, _>>()?;
        if self.infeasible {
            exprs.push(Constraint::exact(Primitive::Distance([0, n / 2]), 0.5)?.into());
        }
        Ok(exprs)
    }

    pub fn experiment(&self, seed: u64) -> Result<Experiment, HarnessError> {
        if self.n < 3 {
            return Err(HarnessError::Config(
                "ring-demo needs --n of at least 3".into(),
            ));
        }
        let mut config = ExperimentConfig::parse(&format!("particles = {}", self.n))?;
        config.seed = seed;
        config.batch.size = self.batch;
        config.schedule.steps = self.steps;
        config.schedule.widen = self.widen;
        let constraints = self.constraints()?;
        let mut exp = config.build()?;
        exp.constraints = constraints;
        Ok(exp)
    }
}

/// `ring-demo`: samples rings of `n` particles with bounded consecutive distances.
pub fn cmd_ring_demo(
    demo: &RingDemo,
    opts: &GlobalOptions,
    out: &mut dyn Write,
) -> Result<u8, HarnessError> {
    let exp = demo.experiment(opts.seed.unwrap_or(0))?;
    let dir = opts
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("ring-demo-out"));
    let results = run_batch(&exp, demo.batch, opts.threads)?;
    let summary = write_batch(&exp, &results, &dir, opts.timings)?;
    let flagged = summary.total - summary.valid;
    say!(
        opts,
        out,
        "ring n={}: {} samples, {} flagged, {} of {} emitted samples satisfy all ring constraints ({:.1}%)",
        demo.n,
        summary.total,
        flagged,
        summary.all_satisfied,
        summary.valid,
        if summary.valid == 0 { 0.0 } else { 100.0 * summary.all_satisfied as f64 / summary.valid as f64 }
    );
    let ok = summary.valid_fraction() >= exp.config.batch.min_valid_fraction
        && summary.all_satisfied == summary.valid;
    Ok(if ok { exit::SUCCESS } else { exit::FAILURE })
}
