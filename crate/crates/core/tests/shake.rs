mod support {
    pub mod oracle;
}

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use shakegen::constraints::{sample_constraints, satisfied};
use shakegen::geometry::residual_gradient;
use shakegen::shake::{constraint_gram, shake_displacement, solve_multipliers};
use shakegen::{
    active_set, shake_project, slack_value, Bound, Conformation, Constraint, ConstraintExpr,
    Primitive, ShakeConfig, SolverKind,
};
use support::oracle::{aligned_rmsd, penalty_projection};

fn random_cloud(rng: &mut impl Rng, n: usize, scale: f64) -> Conformation {
    let rows: Vec<[f64; 3]> = (0..n)
        .map(|_| {
            [
                rng.random_range(-scale..scale),
                rng.random_range(-scale..scale),
                rng.random_range(-scale..scale),
            ]
        })
        .collect();
    Conformation::from_rows(&rows).unwrap()
}

fn jitter(x: &Conformation, rng: &mut impl Rng, sigma: f64) -> Conformation {
    let normal = Normal::new(0.0, sigma).unwrap();
    let flat = x.to_flat().map(|v| v + normal.sample(rng));
    x.with_flat_positions(&flat).unwrap()
}

fn ring(n: usize) -> Vec<ConstraintExpr> {
    (0..n)
        .map(|i| {
            Constraint::interval(Primitive::Distance([i, (i + 1) % n]), 1.2, 1.6)
                .unwrap()
                .into()
        })
        .collect()
}

#[test]
fn gram_matches_dense_jacobian_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_cloud(&mut rng, 8, 2.0);
    let cs = sample_constraints(&x, &mut rng, 5..=5).unwrap();
    let moved = jitter(&x, &mut rng, 0.2);
    let exprs: Vec<ConstraintExpr> = cs.iter().map(|&c| c.into()).collect();
    let active = active_set(&exprs, &moved).unwrap();
    let mut j = DMatrix::zeros(active.len(), moved.dof());
    for (r, a) in active.iter().enumerate() {
        let g = residual_gradient(a.constraint.primitive(), &moved, a.effective_target).unwrap();
        j.set_row(r, &g.0.transpose());
    }
    let oracle = &j * j.transpose();
    let a = constraint_gram(&active, &moved).unwrap();
    assert!((a - oracle).amax() < 1e-12);
}

#[test]
fn random_spd_solve_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for m in 1..12 {
        let b = DMatrix::from_fn(m, m + 3, |_, _| rng.random_range(-1.0..1.0));
        let a = &b * b.transpose();
        let r = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let l = solve_multipliers(&a, &r, 0.0).unwrap();
        assert!((&a * l - r).norm() < 1e-8);
    }
}

#[test]
fn six_ring_from_random_cloud() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let x = random_cloud(&mut rng, 6, 2.0);
        let (y, rep) = shake_project(&x, &ring(6), &ShakeConfig::default()).unwrap();
        assert!(rep.converged);
        for e in ring(6) {
            assert!(satisfied(&e, &y, 1e-8));
        }
    }
}

#[test]
fn satisfied_extra_constraint_leaves_displacement_unchanged() {
    let x = Conformation::from_rows(&[[0.0; 3], [2.0, 0.0, 0.0], [0.0, 3.0, 0.0]]).unwrap();
    let base = vec![ConstraintExpr::from(
        Constraint::exact(Primitive::Distance([0, 1]), 1.0).unwrap(),
    )];
    let mut extra = base.clone();
    extra.push(
        Constraint::interval(Primitive::Distance([0, 2]), 2.0, 4.0)
            .unwrap()
            .into(),
    );
    let (a, _) = shake_displacement(&x, &base, &ShakeConfig::default()).unwrap();
    let (b, _) = shake_displacement(&x, &extra, &ShakeConfig::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn features_pass_through() {
    let x = Conformation::from_rows(&[[0.0; 3], [2.0, 0.0, 0.0]])
        .unwrap()
        .with_features(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]))
        .unwrap();
    let exprs = [ConstraintExpr::from(
        Constraint::exact(Primitive::Distance([0, 1]), 1.0).unwrap(),
    )];
    let (y, _) = shake_project(&x, &exprs, &ShakeConfig::default()).unwrap();
    assert_eq!(y.features(), x.features());
}

#[test]
fn three_particle_systems_match_penalty_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = ShakeConfig {
        tolerance: 1e-10,
        ..Default::default()
    };
    let mut worst = 0.0f64;
    let mut compared = 0;
    while compared < 100 {
        let x = random_cloud(&mut rng, 3, 1.5);
        let Ok(cs) = sample_constraints(&x, &mut rng, 1..=2) else {
            continue;
        };
        let moved = jitter(&x, &mut rng, 0.3);
        let exprs: Vec<ConstraintExpr> = cs.iter().map(|&c| c.into()).collect();
        let Ok((y, rep)) = shake_project(&moved, &exprs, &cfg) else {
            continue;
        };
        if !rep.converged {
            continue;
        }
        let targets: Vec<(Primitive, f64)> = cs
            .iter()
            .map(|c| match c.bound() {
                Bound::Exact(t) => (*c.primitive(), t),
                _ => unreachable!(),
            })
            .collect();
        let Some(o) = penalty_projection(&moved, &targets) else {
            continue;
        };
        worst = worst.max(aligned_rmsd(&y, &o));
        compared += 1;
    }
    println!("worst aligned RMSD vs oracle: {worst:e}");
    assert!(worst < 1e-3, "worst aligned RMSD {worst:e}");
}

#[test]
fn nearly_straight_angles_reach_nearest_point() {
    // Angle constraints close to 0 or π have strongly curved level sets, where
    // the stationarity conditions also admit saddles of the distance. The
    // penalty oracle can stall there too, so the projection must never end
    // farther away than the oracle, and must match it whenever both agree on
    // the distance.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cfg = ShakeConfig {
        tolerance: 1e-10,
        ..Default::default()
    };
    let (mut worst, mut agreeing) = (0.0f64, 0);
    for case in 0..200 {
        let bend: f64 = rng.random_range(0.02..0.15);
        let theta = if case % 2 == 0 {
            bend
        } else {
            std::f64::consts::PI - bend
        };
        let (a, b) = (rng.random_range(0.8..1.6), rng.random_range(0.8..1.6));
        let x = Conformation::from_rows(&[
            [a, 0.0, 0.0],
            [0.0, 0.0, 0.0],
            [b * theta.cos(), b * theta.sin(), 0.0],
        ])
        .unwrap();
        let p = Primitive::Angle([0, 1, 2]);
        let moved = jitter(&x, &mut rng, 0.3);
        let exprs = vec![Constraint::exact(p, theta).unwrap().into()];
        let (y, rep) = shake_project(&moved, &exprs, &cfg).unwrap();
        assert!(rep.converged);
        let o = penalty_projection(&moved, &[(p, theta)]).expect("oracle converges");
        let dy = (y.to_flat() - moved.to_flat()).norm();
        let dox = (o.to_flat() - moved.to_flat()).norm();
        assert!(dy <= dox + 1e-6, "case {case}: {dy} vs oracle {dox}");
        if dox - dy <= 1e-6 {
            worst = worst.max(aligned_rmsd(&y, &o));
            agreeing += 1;
        }
    }
    assert!(agreeing >= 190, "oracle agreed on only {agreeing} cases");
    assert!(worst < 1e-3, "worst aligned RMSD {worst:e}");
}

#[test]
fn solvers_agree_on_sampled_systems() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..30 {
        let x = random_cloud(&mut rng, 10, 2.5);
        let cs = sample_constraints(&x, &mut rng, 3..=6).unwrap();
        let moved = jitter(&x, &mut rng, 0.05);
        let exprs: Vec<ConstraintExpr> = cs.iter().map(|&c| c.into()).collect();
        for solver in [SolverKind::FullLinear, SolverKind::GaussSeidel] {
            let cfg = ShakeConfig {
                solver,
                ..Default::default()
            };
            let (y, rep) = shake_project(&moved, &exprs, &cfg).unwrap();
            assert!(rep.converged, "{solver:?} did not converge");
            assert!(exprs.iter().all(|e| satisfied(e, &y, 1e-8)));
        }
    }
}

fn distance_system() -> impl Strategy<Value = (Conformation, Vec<ConstraintExpr>)> {
    (
        prop::collection::vec(prop::array::uniform3(-2.0..2.0f64), 5),
        prop::collection::vec((0usize..5, 1usize..5, 0.8..2.0f64, prop::bool::ANY), 1..4),
    )
        .prop_map(|(rows, specs)| {
            let x = Conformation::from_rows(&rows).unwrap();
            let exprs = specs
                .into_iter()
                .map(|(i, off, t, exact)| {
                    let p = Primitive::Distance([i, (i + off) % 5]);
                    if exact {
                        Constraint::exact(p, t).unwrap().into()
                    } else {
                        Constraint::interval(p, t, t + 0.3).unwrap().into()
                    }
                })
                .collect();
            (x, exprs)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn convergence_certificate_and_center((x, exprs) in distance_system()) {
        let cfg = ShakeConfig::default();
        let Ok((y, rep)) = shake_project(&x, &exprs, &cfg) else { return Ok(()) };
        prop_assert!(rep.max_residual <= rep.initial_max_residual);
        if rep.converged {
            prop_assert!(rep.max_residual <= cfg.tolerance);
            for e in &exprs {
                let ConstraintExpr::Atom(c) = e else { unreachable!() };
                let (p, t) = (c.primitive(), c.bound());
                match t {
                    Bound::Exact(t) => prop_assert!(p.residual(&y, t).unwrap().abs() <= cfg.tolerance),
                    Bound::Interval { .. } => prop_assert!(slack_value(c, &y).unwrap() <= cfg.tolerance),
                }
            }
            prop_assert!((y.center_of_gravity() - x.center_of_gravity()).amax() < 1e-9);
            let (z, again) = shake_project(&y, &exprs, &cfg).unwrap();
            prop_assert_eq!(again.iterations, 0);
            prop_assert_eq!(z, y);
        }
    }
}
