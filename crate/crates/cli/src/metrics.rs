//! Per-sample metrics as CSV.
//!
//! The first line is a version comment, the second the header. Every column
//! is a pure function of the sample, so reruns are byte-identical; wall-clock
//! timings go to a separate file.

use std::fmt::Write as _;

use shakegen::{satisfied, ConstraintExpr, SampleOutcome};

pub const METRICS_VERSION: &str = "# shakegen metrics v1";
pub const TIMINGS_VERSION: &str = "# shakegen timings v1";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub sample_id: u64,
    pub valid: bool,
    /// Whether the final projection onto the exact bounds converged.
    pub converged: bool,
    pub max_residual: f64,
    pub failed_steps: usize,
    pub shake_iterations_total: usize,
    /// One flag per top-level constraint.
    pub satisfied: Vec<bool>,
}

impl MetricsRow {
    pub fn from_outcome(out: &SampleOutcome, exprs: &[ConstraintExpr], tol: f64) -> Self {
        let last = out.final_report();
        Self {
            sample_id: out.index,
            valid: out.valid,
            converged: last.converged,
            max_residual: last.max_residual,
            failed_steps: out.failed_steps,
            shake_iterations_total: out.total_shake_iterations(),
            satisfied: exprs
                .iter()
                .map(|e| satisfied(e, &out.conformation, tol))
                .collect(),
        }
    }
}

fn flag(b: bool) -> u8 {
    u8::from(b)
}

pub fn header(n_constraints: usize) -> String {
    let mut h =
        String::from("sample_id,valid,converged,max_residual,failed_steps,shake_iterations_total");
    for k in 0..n_constraints {
        let _ = write!(h, ",c{k}_satisfied");
    }
    h
}

pub fn render(rows: &[MetricsRow], n_constraints: usize) -> String {
    let mut out = format!("{METRICS_VERSION}\n{}\n", header(n_constraints));
    for r in rows {
        let _ = write!(
            out,
            "{},{},{},{:.6e},{},{}",
            r.sample_id,
            flag(r.valid),
            flag(r.converged),
            r.max_residual,
            r.failed_steps,
            r.shake_iterations_total
        );
        for s in &r.satisfied {
            let _ = write!(out, ",{}", flag(*s));
        }
        out.push('\n');
    }
    out
}

pub fn render_timings(ids_and_ms: &[(u64, f64)]) -> String {
    let mut out = format!("{TIMINGS_VERSION}\nsample_id,wall_time_ms\n");
    for (id, ms) in ids_and_ms {
        let _ = writeln!(out, "{id},{ms:.3}");
    }
    out
}
