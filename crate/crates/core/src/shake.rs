//! SHAKE projection onto the constraint set.
//!
//! Each iteration reduces the constraint expressions to their active
//! equalities at the current iterate, then solves
//!
//! ```text
//! (A + reg·I) λ = c,    A[α][β] = ∇c_α · ∇c_β
//! ```
//!
//! and applies `x ← x − Σ_b λ_b ∇c_b` (unit masses, unit timestep). Both
//! gradient factors of `A` are taken at the current iterate, so `A` is
//! symmetric and each step is the minimum-norm linearized correction.
//!
//! A positive residual (observable above target) yields a positive
//! multiplier and a displacement that lowers the observable.
//!
//! Each linearized step is a minimum-norm correction from the *current*
//! iterate, so the feasible point it reaches is in general not the feasible
//! point nearest the input. With [`ShakeConfig::nearest_point`] set, a second
//! phase drives the feasible point toward
//!
//! ```text
//! y = x0 − Jᵀ λ,    c(y) = 0
//! ```
//!
//! whose fixed points satisfy `c(y) = 0` and `x0 − y ∈ range(Jᵀ)`, the
//! first-order conditions of the nearest-point problem. `λ` are then its
//! Lagrange multipliers. The iteration is globalized by stepping along the
//! tangential part of `x0 − y`, re-projecting, and halving the step until the
//! distance to `x0` decreases. Interval bounds enter a working set and leave
//! it when their multiplier would pull the point back inside.

use nalgebra::{DMatrix, DVector};

use crate::constraints::{active_set, binding_set, ActiveConstraint, ConstraintExpr, Side};
use crate::error::{invalid, Error, Result};
use crate::geometry::{Conformation, SparseGradient};

/// Linear solver used for the multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverKind {
    /// Solve the coupled multiplier system every iteration.
    #[default]
    FullLinear,
    /// Classic SHAKE: one constraint at a time, sweeping in order.
    GaussSeidel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShakeConfig {
    /// Convergence threshold on `max |residual|` over the active set.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub solver: SolverKind,
    /// Tikhonov shift added to the Gram diagonal.
    pub regularization: f64,
    /// Refine a converged projection to the nearest feasible point.
    pub nearest_point: bool,
}

impl Default for ShakeConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 500,
            solver: SolverKind::FullLinear,
            regularization: 1e-10,
            nearest_point: true,
        }
    }
}

impl ShakeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(invalid("shake tolerance must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(invalid("shake max_iterations must be at least 1"));
        }
        if !(self.regularization >= 0.0 && self.regularization.is_finite()) {
            return Err(invalid("shake regularization must be nonnegative"));
        }
        Ok(())
    }
}

/// Outcome of one projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ShakeReport {
    /// Coordinate updates applied until the tolerance was met.
    pub iterations: usize,
    /// Updates spent afterwards moving toward the nearest feasible point,
    /// including rejected line-search trials.
    pub refine_iterations: usize,
    pub initial_max_residual: f64,
    pub max_residual: f64,
    pub converged: bool,
    /// Active constraints of the last update, paired with `multipliers`.
    pub active: Vec<ActiveConstraint>,
    /// Multipliers accumulated while the active set stayed unchanged.
    pub multipliers: Vec<f64>,
}

impl ShakeReport {
    pub(crate) fn failed(initial: f64) -> Self {
        Self {
            iterations: 0,
            refine_iterations: 0,
            initial_max_residual: initial,
            max_residual: f64::INFINITY,
            converged: false,
            active: Vec::new(),
            multipliers: Vec::new(),
        }
    }
}

fn gradients(active: &[ActiveConstraint], x: &Conformation) -> Result<Vec<SparseGradient>> {
    active
        .iter()
        .map(|a| Ok(a.gradient(x)?.masked(x)))
        .collect()
}

fn gram(grads: &[SparseGradient]) -> DMatrix<f64> {
    let m = grads.len();
    let mut a = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = grads[i].dot(&grads[j]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

/// Gram matrix of the active constraint gradients at `x`.
pub fn constraint_gram(active: &[ActiveConstraint], x: &Conformation) -> Result<DMatrix<f64>> {
    Ok(gram(&gradients(active, x)?))
}

/// Reciprocal condition number below which the multiplier system is treated
/// as rank deficient.
pub const SOLVE_RCOND: f64 = 1e-9;

/// Solves `(A + reg·I) λ = residuals`.
///
/// Uses a Cholesky factorization when it succeeds and is well conditioned,
/// otherwise a least-squares solve through the symmetric eigendecomposition
/// that drops eigenvalues below `SOLVE_RCOND` of the largest. Redundant constraints (duplicate rows) thus
/// get minimum-norm multipliers instead of huge cancelling ones.
pub fn solve_multipliers(
    a: &DMatrix<f64>,
    residuals: &DVector<f64>,
    regularization: f64,
) -> Result<DVector<f64>> {
    let m = a.nrows();
    if a.ncols() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: a.ncols(),
        });
    }
    if residuals.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: residuals.len(),
        });
    }
    if m == 0 {
        return Ok(DVector::zeros(0));
    }
    if a.iter().any(|v| !v.is_finite()) || residuals.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem {
            condition: f64::INFINITY,
        });
    }
    let mut shifted = a.clone();
    for i in 0..m {
        shifted[(i, i)] += regularization;
    }
    if let Some(ch) = shifted.clone().cholesky() {
        let d = ch.l_dirty().diagonal();
        let (lo, hi) = d.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        if lo > 0.0 && (lo / hi).powi(2) > SOLVE_RCOND {
            return Ok(ch.solve(residuals));
        }
    }
    // A and the shift are symmetric, so the eigendecomposition is its SVD.
    let eig = ((&shifted + shifted.transpose()) * 0.5).symmetric_eigen();
    let emax = eig.eigenvalues.amax();
    if !(emax > 0.0) || !emax.is_finite() {
        return Err(Error::SingularSystem {
            condition: f64::INFINITY,
        });
    }
    let inv = eig.eigenvalues.map(|l| {
        if l.abs() > SOLVE_RCOND * emax {
            1.0 / l
        } else {
            0.0
        }
    });
    let coeffs = eig.eigenvectors.tr_mul(residuals).component_mul(&inv);
    Ok(&eig.eigenvectors * coeffs)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, r| m.max(r.abs()))
}

fn apply(flat: &mut DVector<f64>, g: &SparseGradient, scale: f64) {
    for (p, b) in &g.blocks {
        for a in 0..3 {
            flat[3 * p + a] -= scale * b[a];
        }
    }
}

/// Projects `x` onto the constraint set.
///
/// Non-convergence is not an error: the best iterate seen is returned with
/// `converged == false`. Features, labels and the frozen mask are carried through.
pub fn shake_project(
    x: &Conformation,
    exprs: &[ConstraintExpr],
    config: &ShakeConfig,
) -> Result<(Conformation, ShakeReport)> {
    config.validate()?;
    for e in exprs {
        e.validate(Some(x.len()))?;
    }
    let (y, mut report) = linearized(x, exprs, config)?;
    if !(report.converged && config.nearest_point && report.iterations > 0) {
        return Ok((y, report));
    }
    // A failed refinement keeps the feasible linearized result.
    match refine(x, &y, exprs, config) {
        Ok(r) => {
            report.refine_iterations = r.iterations;
            report.max_residual = r.max_residual;
            report.active = r.active;
            report.multipliers = r.multipliers;
            Ok((r.point, report))
        }
        Err(Error::Degenerate { .. } | Error::SingularSystem { .. }) => Ok((y, report)),
        Err(e) => Err(e),
    }
}

fn linearized(
    x: &Conformation,
    exprs: &[ConstraintExpr],
    config: &ShakeConfig,
) -> Result<(Conformation, ShakeReport)> {
    let mut cur = x.clone();
    let mut report = ShakeReport::failed(f64::NAN);
    let mut best: Option<(Conformation, f64)> = None;
    let mut prev_active: Vec<ActiveConstraint> = Vec::new();
    let mut acc = Vec::new();

    for it in 0..=config.max_iterations {
        let active = active_set(exprs, &cur)?;
        let res: Vec<f64> = active
            .iter()
            .map(|a| a.residual(&cur))
            .collect::<Result<_>>()?;
        let maxr = max_abs(&res);
        if it == 0 {
            report.initial_max_residual = maxr;
        }
        if best.as_ref().is_none_or(|(_, b)| maxr < *b) {
            best = Some((cur.clone(), maxr));
        }
        if maxr <= config.tolerance {
            report.iterations = it;
            report.max_residual = maxr;
            report.converged = true;
            report.active = prev_active;
            report.multipliers = acc;
            return Ok((cur, report));
        }
        if it == config.max_iterations {
            break;
        }

        let mut flat = cur.to_flat();
        let lambdas = match config.solver {
            SolverKind::FullLinear => {
                let grads = gradients(&active, &cur)?;
                let a = gram(&grads);
                let lambda = solve_multipliers(&a, &DVector::from_vec(res), config.regularization)?;
                for (g, l) in grads.iter().zip(lambda.iter()) {
                    apply(&mut flat, g, *l);
                }
                lambda.as_slice().to_vec()
            }
            SolverKind::GaussSeidel => {
                let mut lambdas = Vec::with_capacity(active.len());
                let mut sweep = cur.clone();
                for a in &active {
                    let r = a.residual(&sweep)?;
                    let g = a.gradient(&sweep)?.masked(&sweep);
                    let denom = g.norm_squared() + config.regularization;
                    if !(denom > 0.0) {
                        return Err(Error::SingularSystem {
                            condition: f64::INFINITY,
                        });
                    }
                    let l = r / denom;
                    apply(&mut flat, &g, l);
                    sweep = sweep.with_flat_positions(&flat)?;
                    lambdas.push(l);
                }
                lambdas
            }
        };
        if flat.iter().any(|v| !v.is_finite()) {
            break;
        }
        if active == prev_active {
            for (s, l) in acc.iter_mut().zip(&lambdas) {
                *s += l;
            }
        } else {
            acc = lambdas;
            prev_active = active;
        }
        cur = cur.with_flat_positions(&flat)?;
        report.iterations = it + 1;
    }

    let (best_x, best_r) = best.expect("at least one iterate evaluated");
    report.max_residual = best_r;
    report.converged = false;
    report.active = prev_active;
    report.multipliers = acc;
    Ok((best_x, report))
}

struct Refined {
    point: Conformation,
    iterations: usize,
    max_residual: f64,
    active: Vec<ActiveConstraint>,
    multipliers: Vec<f64>,
}

/// Distance of a binding bound's multiplier from the sign that keeps it
/// binding: a lower bound must push the observable up (`λ ≤ 0`), an upper
/// bound down (`λ ≥ 0`).
fn wrong_sign(a: &ActiveConstraint, l: f64, scale: f64) -> f64 {
    let slack = 1e-12 * scale;
    match a.side {
        Side::Equality => 0.0,
        Side::AtLower => (l - slack).max(0.0),
        Side::AtUpper => (-l - slack).max(0.0),
    }
}

/// Multipliers of `pull` against the working set, with bounds whose
/// multiplier has the wrong sign released one at a time.
fn tangent_split(
    working: &mut Vec<ActiveConstraint>,
    y: &Conformation,
    pull: &DVector<f64>,
    config: &ShakeConfig,
) -> Result<(Vec<SparseGradient>, DVector<f64>)> {
    loop {
        let grads = gradients(working, y)?;
        let rhs = DVector::from_iterator(
            grads.len(),
            grads.iter().map(|g| {
                g.blocks
                    .iter()
                    .map(|(p, b)| b.dot(&pull.fixed_rows::<3>(3 * p)))
                    .sum::<f64>()
            }),
        );
        let lambda = solve_multipliers(&gram(&grads), &rhs, config.regularization)?;
        let scale = lambda.amax().max(1.0);
        let worst = working
            .iter()
            .zip(lambda.iter())
            .map(|(a, &l)| wrong_sign(a, l, scale))
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1));
        match worst {
            Some((k, v)) if v > 0.0 => {
                working.remove(k);
            }
            _ => return Ok((grads, lambda)),
        }
    }
}

/// `I + Σ λ_k ∇²c_k`, with each constraint Hessian from central differences
/// of its analytic gradient. Frozen coordinates keep only the identity.
fn lagrangian_hessian(
    working: &[ActiveConstraint],
    lambda: &DVector<f64>,
    y: &Conformation,
) -> Result<DMatrix<f64>> {
    const H: f64 = 1e-5;
    let n = y.dof();
    let mut hess = DMatrix::identity(n, n);
    let mut flat = y.to_flat();
    for (a, &l) in working.iter().zip(lambda.iter()) {
        for &p in a.constraint.primitive().indices() {
            for c in 0..3 {
                let col = 3 * p + c;
                if !y.is_mobile(col) {
                    continue;
                }
                let orig = flat[col];
                flat[col] = orig + H;
                let plus = a.gradient(&y.with_flat_positions(&flat)?)?.masked(y);
                flat[col] = orig - H;
                let minus = a.gradient(&y.with_flat_positions(&flat)?)?.masked(y);
                flat[col] = orig;
                for ((q, gp), (_, gm)) in plus.blocks.iter().zip(&minus.blocks) {
                    for r in 0..3 {
                        hess[(3 * q + r, col)] += l * (gp[r] - gm[r]) / (2.0 * H);
                    }
                }
            }
        }
    }
    Ok((&hess + hess.transpose()) * 0.5)
}

/// Working set, multipliers and the tangential part of `x0 − y` at one iterate.
struct Split {
    working: Vec<ActiveConstraint>,
    grads: Vec<SparseGradient>,
    lambda: DVector<f64>,
    pull: DVector<f64>,
    tangent: DVector<f64>,
}

/// Smallest eigenpair of the Lagrangian Hessian restricted to the tangent
/// space of the working set (mobile coordinates only). The eigenvector is
/// returned in full coordinates with unit norm.
fn reduced_curvature(
    split: &Split,
    y: &Conformation,
    hess: &DMatrix<f64>,
) -> Option<(f64, DVector<f64>)> {
    let mobile: Vec<usize> = (0..y.dof()).filter(|&c| y.is_mobile(c)).collect();
    let k = mobile.len();
    if k == 0 {
        return None;
    }
    let mut jtj = DMatrix::zeros(k, k);
    for g in &split.grads {
        let row = DVector::from_iterator(
            k,
            mobile.iter().map(|&c| {
                g.blocks
                    .iter()
                    .find(|(p, _)| *p == c / 3)
                    .map_or(0.0, |(_, b)| b[c % 3])
            }),
        );
        jtj += &row * row.transpose();
    }
    let eig = jtj.symmetric_eigen();
    let cutoff = 1e-12 * eig.eigenvalues.amax().max(1.0);
    let cols: Vec<DVector<f64>> = (0..k)
        .filter(|&i| eig.eigenvalues[i] <= cutoff)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        return None;
    }
    let z = DMatrix::from_columns(&cols);
    let h = hess.select_rows(&mobile).select_columns(&mobile);
    let reduced = z.transpose() * h * &z;
    let reduced = (&reduced + reduced.transpose()) * 0.5;
    let re = reduced.symmetric_eigen();
    let i = re.eigenvalues.imin();
    let local = &z * re.eigenvectors.column(i);
    let mut v = DVector::zeros(y.dof());
    for (j, &c) in mobile.iter().enumerate() {
        v[c] = local[j];
    }
    Some((re.eigenvalues[i], v))
}

/// SQP step `d` solving `H d + Jᵀν = x0 − y`, `J d = −c`, or `None` when the
/// step is not a descent direction.
fn newton_direction(
    split: &Split,
    y: &Conformation,
    hess: &DMatrix<f64>,
) -> Result<Option<DVector<f64>>> {
    let Split {
        working,
        grads,
        pull,
        tangent,
        ..
    } = split;
    let n = y.dof();
    let m = working.len();
    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(hess);
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(pull);
    for (k, (a, g)) in working.iter().zip(grads).enumerate() {
        for (p, b) in &g.blocks {
            for c in 0..3 {
                kkt[(n + k, 3 * p + c)] = b[c];
                kkt[(3 * p + c, n + k)] = b[c];
            }
        }
        rhs[n + k] = -a.residual(y)?;
    }
    let Some(sol) = kkt.lu().solve(&rhs) else {
        return Ok(None);
    };
    let d = sol.rows(0, n).into_owned();
    if d.iter().any(|v| !v.is_finite()) || d.dot(tangent) <= 0.0 {
        return Ok(None);
    }
    Ok(Some(d))
}

/// Moves a feasible `y` along the constraint set toward `x0`.
///
/// Each iteration splits `x0 − y` into a normal part `Jᵀλ` and a tangential
/// part, takes an SQP step (or the tangential part when the reduced Hessian is
/// not positive definite), and re-projects with the linearized iteration.
/// Steps are halved until the distance to `x0` decreases, so the iteration
/// cannot diverge. Once the tangential part vanishes, `y = x0 − Jᵀλ` holds
/// with `λ` the Lagrange multipliers of the nearest-point problem; if the
/// reduced Hessian still has negative curvature the point is a saddle, and the
/// iteration continues along the most negative direction.
fn refine(
    x0: &Conformation,
    y: &Conformation,
    exprs: &[ConstraintExpr],
    config: &ShakeConfig,
) -> Result<Refined> {
    const MAX_HALVINGS: usize = 30;
    const ARMIJO: f64 = 1e-4;
    // Retractions start close to the constraint set, where the linearized
    // iteration converges in a few steps; slower ones are rejected trials.
    const INNER_ITERATIONS: usize = 50;
    // Stop when this many accepted steps together gain less than the tolerance:
    // slow progress at nearly dependent constraints is not worth the retractions.
    const STALL_WINDOW: usize = 10;
    // Reduced-Hessian eigenvalues below this mark a saddle; the finite-difference
    // Hessian is accurate to far better than this.
    const NEGATIVE_CURVATURE: f64 = 1e-6;
    let anchor = x0.to_flat();
    // Trial points aim tighter than the caller's tolerance so that feasibility
    // noise does not mask the distance decrease, but any trial meeting the
    // caller's tolerance is usable: near-redundant constraints can leave a
    // residual floor above the inner target.
    let inner = ShakeConfig {
        nearest_point: false,
        tolerance: (config.tolerance * 1e-3).max(1e-13),
        max_iterations: config.max_iterations.min(INNER_ITERATIONS),
        ..*config
    };
    let stationarity = |cur: &Conformation| -> Result<Split> {
        let mut working = binding_set(exprs, cur, config.tolerance)?;
        let pull = &anchor - cur.to_flat();
        let (grads, lambda) = tangent_split(&mut working, cur, &pull, config)?;
        let mut tangent = pull.clone();
        for (g, l) in grads.iter().zip(lambda.iter()) {
            apply(&mut tangent, g, *l);
        }
        Ok(Split {
            working,
            grads,
            lambda,
            pull,
            tangent,
        })
    };
    let done = |cur: Conformation, split: Split, iterations: usize| -> Result<Refined> {
        let res: Vec<f64> = active_set(exprs, &cur)?
            .iter()
            .map(|a| a.residual(&cur))
            .collect::<Result<_>>()?;
        Ok(Refined {
            max_residual: max_abs(&res),
            point: cur,
            iterations,
            active: split.working,
            multipliers: split.lambda.as_slice().to_vec(),
        })
    };

    let mut cur = y.clone();
    let mut dist = (&anchor - cur.to_flat()).norm();
    let mut split = stationarity(&cur)?;
    let mut iterations = 0;
    let mut recent = std::collections::VecDeque::from([dist]);
    // Line searches start from twice the last accepted step.
    let mut first_step = 1.0f64;
    for _ in 0..config.max_iterations {
        let size = split.tangent.amax();
        let curvature = match lagrangian_hessian(&split.working, &split.lambda, &cur) {
            Ok(hess) => reduced_curvature(&split, &cur, &hess).map(|c| (hess, c)),
            Err(Error::Degenerate { .. }) => None,
            Err(e) => return Err(e),
        };
        let here = cur.to_flat();
        let mut accepted = None;
        let mut theta = first_step;
        if size <= config.tolerance {
            let Some((_, (mu, v))) = curvature.filter(|(_, (mu, _))| *mu < -NEGATIVE_CURVATURE)
            else {
                break;
            };
            // Second-order decrease ½|μ|α² along ±v from a saddle.
            let mut alpha = dist.max(config.tolerance);
            'escape: for _ in 0..MAX_HALVINGS {
                for sign in [1.0, -1.0] {
                    let trial = cur.with_flat_positions(&(&here + &v * (sign * alpha)))?;
                    let (next, rep) = linearized(&trial, exprs, &inner)?;
                    iterations += rep.iterations + 1;
                    if rep.max_residual <= config.tolerance {
                        let d = (&anchor - next.to_flat()).norm();
                        if 0.5 * d * d < 0.5 * dist * dist - ARMIJO * 0.5 * mu.abs() * alpha * alpha
                        {
                            accepted = Some((next, d, None));
                            break 'escape;
                        }
                    }
                }
                alpha *= 0.5;
            }
            theta = 1.0;
        } else {
            let newton = match &curvature {
                Some((hess, (mu, _))) if *mu > 0.0 => newton_direction(&split, &cur, hess)?,
                _ => None,
            };
            let direction = newton.unwrap_or_else(|| split.tangent.clone());
            // Armijo condition on ½‖y − x0‖², whose slope along `direction` is −tangent·direction.
            // Close to the optimum the decrease drops below rounding, so a step that
            // halves the stationarity residual without moving away is also taken.
            let slope = direction.dot(&split.tangent);
            for _ in 0..MAX_HALVINGS {
                let trial = cur.with_flat_positions(&(&here + &direction * theta))?;
                let (next, rep) = linearized(&trial, exprs, &inner)?;
                iterations += rep.iterations + 1;
                if rep.max_residual <= config.tolerance {
                    let d = (&anchor - next.to_flat()).norm();
                    if 0.5 * d * d < 0.5 * dist * dist - ARMIJO * theta * slope {
                        accepted = Some((next, d, None));
                        break;
                    }
                    if d <= dist * (1.0 + 8.0 * f64::EPSILON) {
                        let s = stationarity(&next)?;
                        if s.tangent.amax() <= 0.5 * size {
                            accepted = Some((next, d, Some(s)));
                            break;
                        }
                    }
                }
                theta *= 0.5;
            }
        }
        // No decrease left to resolve in floating point: `cur` is as close as it gets.
        let Some((next, d, s)) = accepted else { break };
        first_step = (2.0 * theta).min(1.0);
        cur = next;
        dist = d;
        split = match s {
            Some(s) => s,
            None => stationarity(&cur)?,
        };
        recent.push_back(dist);
        if recent.len() > STALL_WINDOW {
            let oldest = recent.pop_front().expect("window is non-empty");
            if oldest - dist < config.tolerance {
                break;
            }
        }
    }
    done(cur, split, iterations)
}

/// `shake_project(z) - z`, flattened: the displacement a projection applies.
pub fn shake_displacement(
    z: &Conformation,
    exprs: &[ConstraintExpr],
    config: &ShakeConfig,
) -> Result<(DVector<f64>, ShakeReport)> {
    let (p, report) = shake_project(z, exprs, config)?;
    Ok((p.to_flat() - z.to_flat(), report))
}
