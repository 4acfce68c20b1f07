//! Constraint data model.
//!
//! A [`Constraint`] pairs a geometric [`Primitive`] with either an exact
//! target or an interval bound. Constraints compose into [`ConstraintExpr`]
//! trees with AND/OR/NOT. Before each projection the tree is reduced to a flat
//! list of [`ActiveConstraint`]s, each an equality on one primitive:
//!
//! - exact atoms are always active;
//! - interval atoms are active only when violated, pinned to the violated bound;
//! - `Or` activates only its least-violated child (ties go to the lowest index);
//! - `Not` is first rewritten by [`lower_not`] into an `Or` of two intervals;
//! - `And` activates the union of its children.
//!
//! Dihedral intervals are arcs: `[lower, upper]` denotes the counterclockwise
//! arc from `lower` to `upper`, so bounds may straddle `±π` (e.g. `[3.0, 3.4]`).

use std::f64::consts::{PI, TAU};
use std::ops::RangeInclusive;

use rand::seq::index;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::geometry::{wrap_angle, Conformation, Primitive, SparseGradient};

/// Target of a constraint: a single value or a closed interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    Exact(f64),
    Interval { lower: f64, upper: f64 },
}

/// A primitive observable with its bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constraint {
    primitive: Primitive,
    bound: Bound,
}

/// Which side of a constraint an active equality enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Equality,
    AtLower,
    AtUpper,
}

/// An interval violation: the bound that binds and how far past it the observable lies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub side: Side,
    pub target: f64,
    pub slack: f64,
}

impl Constraint {
    pub fn new(primitive: Primitive, bound: Bound) -> Result<Self> {
        primitive.validate(None)?;
        match bound {
            Bound::Exact(t) => {
                if !t.is_finite() {
                    return Err(invalid("exact target must be finite"));
                }
                match primitive {
                    Primitive::Angle(_) if !(0.0..=PI).contains(&t) => {
                        return Err(invalid(format!("angle target {t} outside [0, π]")));
                    }
                    Primitive::Dihedral(_) if !(t > -PI && t <= PI) => {
                        return Err(invalid(format!("dihedral target {t} outside (-π, π]")));
                    }
                    _ => {}
                }
            }
            Bound::Interval { lower, upper } => {
                if lower.is_nan() || upper.is_nan() || lower > upper {
                    return Err(invalid(format!("invalid interval [{lower}, {upper}]")));
                }
                if lower == f64::INFINITY || upper == f64::NEG_INFINITY {
                    return Err(invalid(format!("empty interval [{lower}, {upper}]")));
                }
                if primitive.is_periodic()
                    && !(lower.is_finite() && upper.is_finite() && upper - lower <= TAU)
                {
                    return Err(invalid(format!(
                        "dihedral interval [{lower}, {upper}] must be finite and span at most 2π"
                    )));
                }
            }
        }
        Ok(Self { primitive, bound })
    }

    pub fn exact(primitive: Primitive, target: f64) -> Result<Self> {
        Self::new(primitive, Bound::Exact(target))
    }

    pub fn interval(primitive: Primitive, lower: f64, upper: f64) -> Result<Self> {
        Self::new(primitive, Bound::Interval { lower, upper })
    }

    pub fn primitive(&self) -> &Primitive {
        &self.primitive
    }

    pub fn bound(&self) -> Bound {
        self.bound
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.bound, Bound::Exact(_))
    }

    /// For interval bounds: `None` when satisfied, otherwise the binding side.
    ///
    /// Exact constraints always report their signed-residual magnitude with
    /// [`Side::Equality`].
    pub fn violation(&self, x: &Conformation) -> Result<Option<Violation>> {
        let obs = self.primitive.observable(x)?;
        Ok(match self.bound {
            Bound::Exact(t) => Some(Violation {
                side: Side::Equality,
                target: t,
                slack: self.primitive.residual(x, t)?.abs(),
            }),
            Bound::Interval { lower, upper } if self.primitive.is_periodic() => {
                let offset = (obs - lower).rem_euclid(TAU);
                let width = upper - lower;
                if offset <= width {
                    None
                } else {
                    let past_upper = offset - width;
                    let before_lower = TAU - offset;
                    Some(if past_upper <= before_lower {
                        Violation {
                            side: Side::AtUpper,
                            target: wrap_angle(upper),
                            slack: past_upper,
                        }
                    } else {
                        Violation {
                            side: Side::AtLower,
                            target: wrap_angle(lower),
                            slack: before_lower,
                        }
                    })
                }
            }
            Bound::Interval { lower, upper } => {
                if obs > upper {
                    Some(Violation {
                        side: Side::AtUpper,
                        target: upper,
                        slack: obs - upper,
                    })
                } else if obs < lower {
                    Some(Violation {
                        side: Side::AtLower,
                        target: lower,
                        slack: lower - obs,
                    })
                } else {
                    None
                }
            }
        })
    }

    /// Distance from the observable to the constraint's feasible set.
    pub fn violation_amount(&self, x: &Conformation) -> Result<f64> {
        Ok(self.violation(x)?.map_or(0.0, |v| v.slack))
    }
}

impl std::fmt::Display for Constraint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}{:?}", self.primitive.name(), self.primitive.indices())?;
        match self.bound {
            Bound::Exact(t) => write!(f, " = {t}"),
            Bound::Interval { lower, upper } => write!(f, " in [{lower}, {upper}]"),
        }
    }
}

/// Slack variable of an interval constraint: zero when satisfied, otherwise the
/// distance past the binding bound.
pub fn slack_value(c: &Constraint, x: &Conformation) -> Result<f64> {
    if c.is_exact() {
        return Err(invalid("slack is only defined for interval constraints"));
    }
    c.violation_amount(x)
}

/// An interval or exact constraint reduced to one equality for a projection call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveConstraint {
    pub constraint: Constraint,
    pub effective_target: f64,
    pub side: Side,
}

impl ActiveConstraint {
    pub fn residual(&self, x: &Conformation) -> Result<f64> {
        self.constraint.primitive.residual(x, self.effective_target)
    }

    pub fn gradient(&self, x: &Conformation) -> Result<SparseGradient> {
        self.constraint.primitive.sparse_gradient(x)
    }
}

/// Logical composition of constraints.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintExpr {
    Atom(Constraint),
    And(Vec<ConstraintExpr>),
    Or(Vec<ConstraintExpr>),
    Not {
        child: Box<ConstraintExpr>,
        epsilon: f64,
    },
}

impl From<Constraint> for ConstraintExpr {
    fn from(c: Constraint) -> Self {
        ConstraintExpr::Atom(c)
    }
}

impl ConstraintExpr {
    pub fn and(children: Vec<ConstraintExpr>) -> Result<Self> {
        if children.is_empty() {
            return Err(invalid("And needs at least one child"));
        }
        Ok(ConstraintExpr::And(children))
    }

    pub fn or(children: Vec<ConstraintExpr>) -> Result<Self> {
        if children.is_empty() {
            return Err(invalid("Or needs at least one child"));
        }
        Ok(ConstraintExpr::Or(children))
    }

    /// `Not` is only defined over a single exact atom.
    pub fn not(child: ConstraintExpr, epsilon: f64) -> Result<Self> {
        let e = ConstraintExpr::Not {
            child: Box::new(child),
            epsilon,
        };
        lower_not(&e)?;
        Ok(e)
    }

    /// Structural check, plus index range when `n` is given.
    pub fn validate(&self, n: Option<usize>) -> Result<()> {
        match self {
            ConstraintExpr::Atom(c) => c.primitive.validate(n),
            ConstraintExpr::And(ch) | ConstraintExpr::Or(ch) => {
                if ch.is_empty() {
                    return Err(invalid("empty logical node"));
                }
                ch.iter().try_for_each(|c| c.validate(n))
            }
            ConstraintExpr::Not { child, .. } => {
                lower_not(self)?;
                child.validate(n)
            }
        }
    }

    /// All atoms in the tree, depth first.
    pub fn atoms(&self) -> Vec<&Constraint> {
        let mut out = Vec::new();
        fn walk<'a>(e: &'a ConstraintExpr, out: &mut Vec<&'a Constraint>) {
            match e {
                ConstraintExpr::Atom(c) => out.push(c),
                ConstraintExpr::And(ch) | ConstraintExpr::Or(ch) => {
                    ch.iter().for_each(|c| walk(c, out))
                }
                ConstraintExpr::Not { child, .. } => walk(child, out),
            }
        }
        walk(self, &mut out);
        out
    }

    /// True if every atom is a distance constraint.
    pub fn distance_only(&self) -> bool {
        self.atoms()
            .iter()
            .all(|c| matches!(c.primitive, Primitive::Distance(_)))
    }

    /// Composite violation: `|c|` or slack for atoms, max over `And`, min over `Or`.
    pub fn violation(&self, x: &Conformation) -> Result<f64> {
        match self {
            ConstraintExpr::Atom(c) => c.violation_amount(x),
            ConstraintExpr::And(ch) => ch
                .iter()
                .map(|c| c.violation(x))
                .try_fold(0.0f64, |m, v| v.map(|v| m.max(v))),
            ConstraintExpr::Or(ch) => ch
                .iter()
                .map(|c| c.violation(x))
                .try_fold(f64::INFINITY, |m, v| v.map(|v| m.min(v))),
            ConstraintExpr::Not { .. } => lower_not(self)?.violation(x),
        }
    }
}

/// Rewrites `Not(f = t, ε)` as `Or(f <= t - ε, f >= t + ε)`.
///
/// Strict inequalities become closed intervals offset by `ε`. For dihedrals
/// the two branches are the arcs on either side of the forbidden band.
pub fn lower_not(expr: &ConstraintExpr) -> Result<ConstraintExpr> {
    let ConstraintExpr::Not { child, epsilon } = expr else {
        return Err(invalid("lower_not expects a Not node"));
    };
    let eps = *epsilon;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(invalid(format!("Not epsilon must be positive, got {eps}")));
    }
    let ConstraintExpr::Atom(c) = child.as_ref() else {
        return Err(invalid(
            "Not is only defined over a single atomic constraint",
        ));
    };
    let Bound::Exact(t) = c.bound else {
        return Err(invalid("Not is only defined over an exact constraint"));
    };
    let p = c.primitive;
    let (below, above) = if p.is_periodic() {
        if eps >= PI {
            return Err(invalid("dihedral Not epsilon must be below π"));
        }
        (
            Constraint::interval(p, t - PI, t - eps)?,
            Constraint::interval(p, t + eps, t + PI)?,
        )
    } else {
        (
            Constraint::interval(p, f64::NEG_INFINITY, t - eps)?,
            Constraint::interval(p, t + eps, f64::INFINITY)?,
        )
    };
    Ok(ConstraintExpr::Or(vec![below.into(), above.into()]))
}

/// Reduces constraint expressions to the equalities a projection must enforce at `x`.
pub fn active_set(exprs: &[ConstraintExpr], x: &Conformation) -> Result<Vec<ActiveConstraint>> {
    let mut out = Vec::new();
    for e in exprs {
        collect_active(e, x, None, &mut out)?;
    }
    Ok(out)
}

/// Like [`active_set`], but satisfied interval atoms whose observable lies
/// within `margin` of a bound are also returned, pinned to that bound.
pub fn binding_set(
    exprs: &[ConstraintExpr],
    x: &Conformation,
    margin: f64,
) -> Result<Vec<ActiveConstraint>> {
    let mut out = Vec::new();
    for e in exprs {
        collect_active(e, x, Some(margin), &mut out)?;
    }
    Ok(out)
}

/// Bound of a satisfied interval atom within `margin` of the observable.
fn near_bound(c: &Constraint, x: &Conformation, margin: f64) -> Result<Option<(Side, f64)>> {
    let Bound::Interval { lower, upper } = c.bound else {
        return Ok(None);
    };
    let obs = c.primitive.observable(x)?;
    let (to_lower, to_upper) = if c.primitive.is_periodic() {
        let offset = (obs - lower).rem_euclid(TAU);
        (offset, upper - lower - offset)
    } else {
        (obs - lower, upper - obs)
    };
    let lower = if c.primitive.is_periodic() {
        wrap_angle(lower)
    } else {
        lower
    };
    let upper = if c.primitive.is_periodic() {
        wrap_angle(upper)
    } else {
        upper
    };
    Ok(if to_lower <= margin && to_lower <= to_upper {
        Some((Side::AtLower, lower))
    } else if to_upper <= margin {
        Some((Side::AtUpper, upper))
    } else {
        None
    })
}

fn collect_active(
    e: &ConstraintExpr,
    x: &Conformation,
    margin: Option<f64>,
    out: &mut Vec<ActiveConstraint>,
) -> Result<()> {
    match e {
        ConstraintExpr::Atom(c) => match c.bound {
            Bound::Exact(t) => out.push(ActiveConstraint {
                constraint: *c,
                effective_target: t,
                side: Side::Equality,
            }),
            Bound::Interval { .. } => {
                if let Some(v) = c.violation(x)? {
                    out.push(ActiveConstraint {
                        constraint: *c,
                        effective_target: v.target,
                        side: v.side,
                    });
                } else if let Some(m) = margin {
                    if let Some((side, target)) = near_bound(c, x, m)? {
                        out.push(ActiveConstraint {
                            constraint: *c,
                            effective_target: target,
                            side,
                        });
                    }
                }
            }
        },
        ConstraintExpr::And(ch) => {
            for c in ch {
                collect_active(c, x, margin, out)?;
            }
        }
        ConstraintExpr::Or(ch) => {
            let mut best = 0;
            let mut best_v = f64::INFINITY;
            for (k, c) in ch.iter().enumerate() {
                let v = c.violation(x)?;
                if v < best_v {
                    best = k;
                    best_v = v;
                }
            }
            collect_active(&ch[best], x, margin, out)?;
        }
        ConstraintExpr::Not { .. } => collect_active(&lower_not(e)?, x, margin, out)?,
    }
    Ok(())
}

/// How an `Or` node is evaluated in satisfaction checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OrForm {
    /// `min_k v_k <= tol`.
    #[default]
    Min,
    /// `prod_k max(v_k - tol, 0) == 0`, the product form over nonnegative constituents.
    Product,
}

/// Whether `expr` holds at `x` within `tol`. Degenerate geometry counts as unsatisfied.
pub fn satisfied(expr: &ConstraintExpr, x: &Conformation, tol: f64) -> bool {
    satisfied_with(expr, x, tol, OrForm::Min)
}

pub fn satisfied_with(expr: &ConstraintExpr, x: &Conformation, tol: f64, form: OrForm) -> bool {
    match expr {
        ConstraintExpr::Atom(c) => c.violation_amount(x).is_ok_and(|v| v <= tol),
        ConstraintExpr::And(ch) => ch.iter().all(|c| satisfied_with(c, x, tol, form)),
        ConstraintExpr::Or(ch) => match form {
            OrForm::Min => ch.iter().any(|c| satisfied_with(c, x, tol, form)),
            OrForm::Product => {
                let prod: f64 = ch
                    .iter()
                    .map(|c| match c.violation(x) {
                        Ok(v) => (v - tol).max(0.0),
                        // Finite so that a satisfied sibling still zeroes the product.
                        Err(_) => f64::MAX,
                    })
                    .product();
                prod == 0.0
            }
        },
        ConstraintExpr::Not { .. } => {
            lower_not(expr).is_ok_and(|lowered| satisfied_with(&lowered, x, tol, form))
        }
    }
}

/// Linear tightening of bounds over the generative trajectory.
///
/// Step 0 is the start of generation (loosest bounds), step `total_steps`
/// the end, where the user bounds apply exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintSchedule {
    /// Multiplier (>= 1) on interval half-widths at step 0.
    pub initial_widen: f64,
    /// Half-width at step 0 of the interval an exact constraint is relaxed into.
    pub exact_half_width: f64,
    pub total_steps: usize,
}

impl ConstraintSchedule {
    pub const DEFAULT_EXACT_HALF_WIDTH: f64 = 0.5;

    pub fn new(initial_widen: f64, exact_half_width: f64, total_steps: usize) -> Result<Self> {
        if !(initial_widen >= 1.0 && initial_widen.is_finite()) {
            return Err(invalid(format!(
                "initial_widen must be >= 1, got {initial_widen}"
            )));
        }
        if !(exact_half_width >= 0.0 && exact_half_width.is_finite()) {
            return Err(invalid("exact_half_width must be nonnegative"));
        }
        if total_steps == 0 {
            return Err(invalid("schedule needs at least one step"));
        }
        Ok(Self {
            initial_widen,
            exact_half_width,
            total_steps,
        })
    }

    /// A schedule that never relaxes anything.
    pub fn fixed(total_steps: usize) -> Self {
        Self {
            initial_widen: 1.0,
            exact_half_width: 0.0,
            total_steps: total_steps.max(1),
        }
    }

    /// Effective bounds of `c` at generation step `step`.
    pub fn at(&self, c: &Constraint, step: usize) -> Result<Constraint> {
        let total = self.total_steps;
        if step > total {
            return Err(Error::StepOutOfRange { step, steps: total });
        }
        if step == total {
            return Ok(*c);
        }
        let remaining = 1.0 - step as f64 / total as f64;
        let cap = if c.primitive.is_periodic() {
            PI
        } else {
            f64::INFINITY
        };
        match c.bound {
            Bound::Exact(t) => {
                let h = (self.exact_half_width * remaining).min(cap);
                if h == 0.0 {
                    return Ok(*c);
                }
                Constraint::interval(c.primitive, t - h, t + h)
            }
            Bound::Interval { lower, upper } => {
                if !(lower.is_finite() && upper.is_finite()) {
                    return Ok(*c);
                }
                let center = 0.5 * (lower + upper);
                let h = 0.5 * (upper - lower);
                let h0 = h * self.initial_widen;
                let ht = (h0 + (h - h0) * (step as f64 / total as f64))
                    .min(cap)
                    .max(h);
                Constraint::interval(c.primitive, center - ht, center + ht)
            }
        }
    }

    /// Applies [`ConstraintSchedule::at`] to every atom outside `Not` nodes.
    pub fn apply(&self, expr: &ConstraintExpr, step: usize) -> Result<ConstraintExpr> {
        Ok(match expr {
            ConstraintExpr::Atom(c) => ConstraintExpr::Atom(self.at(c, step)?),
            ConstraintExpr::And(ch) => ConstraintExpr::And(
                ch.iter()
                    .map(|c| self.apply(c, step))
                    .collect::<Result<_>>()?,
            ),
            ConstraintExpr::Or(ch) => ConstraintExpr::Or(
                ch.iter()
                    .map(|c| self.apply(c, step))
                    .collect::<Result<_>>()?,
            ),
            ConstraintExpr::Not { .. } => {
                if step > self.total_steps {
                    return Err(Error::StepOutOfRange {
                        step,
                        steps: self.total_steps,
                    });
                }
                expr.clone()
            }
        })
    }
}

pub fn schedule_at(s: &ConstraintSchedule, c: &Constraint, step: usize) -> Result<Constraint> {
    s.at(c, step)
}

/// Default number of sampled constraints per conformation.
pub const SAMPLE_COUNT_RANGE: RangeInclusive<usize> = 5..=15;

/// Draws exact constraints that `x` satisfies.
///
/// The count is uniform in `count_range`; each draw picks a primitive kind
/// uniformly among those the particle count supports, then a uniformly random
/// tuple of distinct particles. Targets are the current observables, so every
/// residual is zero at `x`. Tuples with degenerate geometry are redrawn.
pub fn sample_constraints<R: Rng + ?Sized>(
    x: &Conformation,
    rng: &mut R,
    count_range: RangeInclusive<usize>,
) -> Result<Vec<Constraint>> {
    let n = x.len();
    if n < 2 {
        return Err(invalid("sampling constraints needs at least two particles"));
    }
    if count_range.is_empty() {
        return Err(invalid("empty constraint count range"));
    }
    let kinds = n.min(4) - 1;
    let count = rng.random_range(count_range);
    let mut out = Vec::with_capacity(count);
    const MAX_REDRAWS: usize = 1000;
    for _ in 0..count {
        let mut drawn = None;
        for _ in 0..MAX_REDRAWS {
            let kind = rng.random_range(0..kinds);
            let ix = index::sample(rng, n, kind + 2).into_vec();
            let p = match kind {
                0 => Primitive::Distance([ix[0], ix[1]]),
                1 => Primitive::Angle([ix[0], ix[1], ix[2]]),
                _ => Primitive::Dihedral([ix[0], ix[1], ix[2], ix[3]]),
            };
            if p.sparse_gradient(x).is_err() {
                continue;
            }
            drawn = Some(Constraint::exact(p, p.observable(x)?)?);
            break;
        }
        out.push(drawn.ok_or_else(|| invalid("could not draw a non-degenerate constraint"))?);
    }
    Ok(out)
}
