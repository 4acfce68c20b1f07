//! Workloads shared by the benchmarks.

use rand::Rng;
use shakegen::diffusion::sample_rng;
use shakegen::{Conformation, Constraint, ConstraintExpr, Primitive};

pub const BOND: f64 = 1.5;

/// A zig-zag chain of `n` particles with exact bond lengths and bond angles.
pub fn chain_constraints(n: usize) -> Vec<ConstraintExpr> {
    let mut exprs = Vec::new();
    for i in 0..n.saturating_sub(1) {
        exprs.push(
            Constraint::exact(Primitive::Distance([i, i + 1]), BOND)
                .unwrap()
                .into(),
        );
    }
    for i in 0..n.saturating_sub(2) {
        exprs.push(
            Constraint::exact(Primitive::Angle([i, i + 1, i + 2]), 1.911)
                .unwrap()
                .into(),
        );
    }
    exprs
}

/// The ideal chain with every coordinate perturbed by up to `noise`.
pub fn perturbed_chain(n: usize, noise: f64, seed: u64) -> Conformation {
    let mut rng = sample_rng(seed, 0);
    let mut jolt = move || {
        if noise > 0.0 {
            rng.random_range(-noise..noise)
        } else {
            0.0
        }
    };
    let half = 1.911f64 / 2.0;
    let rows: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let x = i as f64 * BOND * half.sin();
            let y = if i % 2 == 0 { 0.0 } else { BOND * half.cos() };
            [x + jolt(), y + jolt(), jolt()]
        })
        .collect();
    Conformation::from_rows(&rows).unwrap()
}
