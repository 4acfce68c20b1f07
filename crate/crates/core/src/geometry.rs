//! Geometric observables on particle conformations.
//!
//! Distances, bond angles and dihedral angles, their signed residuals against
//! a target value, analytic gradients with respect to all `3N` Cartesian
//! coordinates, and a central finite-difference gradient used as a test
//! oracle.
//!
//! Units are Angstroms and radians throughout.
//!
//! # Dihedral sign convention
//!
//! For particles `(i, j, k, l)` with bond vectors `b1 = x_j - x_i`,
//! `b2 = x_k - x_j`, `b3 = x_l - x_k` and plane normals `n1 = b1 × b2`,
//! `n2 = b2 × b3`, the dihedral is
//!
//! ```text
//! psi = atan2(|b2| (b1 · n2), n1 · n2)
//! ```
//!
//! which is right-handed about the `j -> k` axis (the IUPAC convention):
//! looking down `j -> k`, a clockwise rotation of `l` relative to `i` is
//! positive. `cis` is 0 and `trans` is `π`; the range is `(-π, π]`.
//! A mirrored convention flips the sign of every dihedral residual.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{invalid, Error, Result};

/// Arm lengths and plane normals shorter than this are treated as degenerate.
pub const DEGENERACY_EPS: f64 = 1e-9;

/// Particle positions plus optional per-particle payloads that constraints never touch.
#[derive(Debug, Clone, PartialEq)]
pub struct Conformation {
    positions: Vec<Vector3<f64>>,
    features: Option<DMatrix<f64>>,
    labels: Option<Vec<String>>,
    frozen: Option<Vec<bool>>,
}

impl Conformation {
    pub fn new(positions: Vec<Vector3<f64>>) -> Result<Self> {
        if positions.is_empty() {
            return Err(invalid("a conformation needs at least one particle"));
        }
        if positions.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(invalid("non-finite coordinate"));
        }
        Ok(Self {
            positions,
            features: None,
            labels: None,
            frozen: None,
        })
    }

    pub fn from_rows(rows: &[[f64; 3]]) -> Result<Self> {
        Self::new(
            rows.iter()
                .map(|r| Vector3::new(r[0], r[1], r[2]))
                .collect(),
        )
    }

    /// Builds a conformation from a flattened `[x0, y0, z0, x1, ...]` vector.
    pub fn from_flat(flat: &DVector<f64>) -> Result<Self> {
        if flat.len() % 3 != 0 {
            return Err(invalid(format!(
                "flattened coordinate length {} is not a multiple of 3",
                flat.len()
            )));
        }
        Self::new(
            flat.as_slice()
                .chunks_exact(3)
                .map(|c| Vector3::new(c[0], c[1], c[2]))
                .collect(),
        )
    }

    /// Per-particle feature rows (`N × F`).
    pub fn with_features(mut self, features: DMatrix<f64>) -> Result<Self> {
        if features.nrows() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: features.nrows(),
            });
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Marks individual coordinates (length `3N`) as immovable.
    ///
    /// Frozen coordinates behave like infinite mass: projections and noise
    /// never displace them.
    pub fn with_frozen(mut self, frozen: Vec<bool>) -> Result<Self> {
        if frozen.len() != self.dof() {
            return Err(Error::DimensionMismatch {
                expected: self.dof(),
                got: frozen.len(),
            });
        }
        self.frozen = Some(frozen);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Number of Cartesian degrees of freedom, `3N`.
    pub fn dof(&self) -> usize {
        3 * self.positions.len()
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn position(&self, i: usize) -> &Vector3<f64> {
        &self.positions[i]
    }

    pub fn features(&self) -> Option<&DMatrix<f64>> {
        self.features.as_ref()
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn frozen(&self) -> Option<&[bool]> {
        self.frozen.as_deref()
    }

    /// Mobility of coordinate `c` (in `0..3N`).
    pub fn is_mobile(&self, c: usize) -> bool {
        self.frozen.as_ref().is_none_or(|f| !f[c])
    }

    pub(crate) fn set_features(&mut self, features: Option<DMatrix<f64>>) {
        self.features = features;
    }

    pub fn to_flat(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dof(),
            self.positions.iter().flat_map(|p| p.iter().copied()),
        )
    }

    /// Replaces positions from a flattened vector, keeping features, labels and mask.
    pub fn with_flat_positions(&self, flat: &DVector<f64>) -> Result<Self> {
        if flat.len() != self.dof() {
            return Err(Error::DimensionMismatch {
                expected: self.dof(),
                got: flat.len(),
            });
        }
        let mut out = self.clone();
        for (p, c) in out
            .positions
            .iter_mut()
            .zip(flat.as_slice().chunks_exact(3))
        {
            *p = Vector3::new(c[0], c[1], c[2]);
        }
        Ok(out)
    }

    pub fn center_of_gravity(&self) -> Vector3<f64> {
        self.positions.iter().sum::<Vector3<f64>>() / self.len() as f64
    }

    pub fn translate(&mut self, shift: &Vector3<f64>) {
        for p in &mut self.positions {
            *p += shift;
        }
    }
}

/// A dense `3N` gradient of one residual with respect to every coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(pub DVector<f64>);

impl GradientVector {
    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

/// Nonzero per-particle blocks of a residual gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGradient {
    pub blocks: Vec<(usize, Vector3<f64>)>,
}

impl SparseGradient {
    pub fn to_dense(&self, n: usize) -> GradientVector {
        let mut g = DVector::zeros(3 * n);
        for (i, b) in &self.blocks {
            g.fixed_rows_mut::<3>(3 * i).copy_from(b);
        }
        GradientVector(g)
    }

    pub fn dot(&self, other: &SparseGradient) -> f64 {
        let mut s = 0.0;
        for (i, a) in &self.blocks {
            for (j, b) in &other.blocks {
                if i == j {
                    s += a.dot(b);
                }
            }
        }
        s
    }

    pub fn norm_squared(&self) -> f64 {
        self.blocks.iter().map(|(_, b)| b.norm_squared()).sum()
    }

    /// Zeroes the components of frozen coordinates.
    pub fn masked(mut self, x: &Conformation) -> Self {
        if x.frozen().is_some() {
            for (i, b) in &mut self.blocks {
                for a in 0..3 {
                    if !x.is_mobile(3 * *i + a) {
                        b[a] = 0.0;
                    }
                }
            }
        }
        self
    }
}

/// A geometric observable over a tuple of particle indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Primitive {
    Distance([usize; 2]),
    Angle([usize; 3]),
    Dihedral([usize; 4]),
}

impl Primitive {
    pub fn indices(&self) -> &[usize] {
        match self {
            Primitive::Distance(ix) => ix,
            Primitive::Angle(ix) => ix,
            Primitive::Dihedral(ix) => ix,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Distance(_) => "distance",
            Primitive::Angle(_) => "angle",
            Primitive::Dihedral(_) => "dihedral",
        }
    }

    /// Dihedral observables live on the circle.
    pub fn is_periodic(&self) -> bool {
        matches!(self, Primitive::Dihedral(_))
    }

    /// Checks the index tuple for distinctness and, if `n` is given, range.
    pub fn validate(&self, n: Option<usize>) -> Result<()> {
        let ix = self.indices();
        for (a, &i) in ix.iter().enumerate() {
            if let Some(n) = n {
                if i >= n {
                    return Err(Error::IndexOutOfRange { index: i, n });
                }
            }
            if ix[..a].contains(&i) {
                return Err(Error::RepeatedIndex(i));
            }
        }
        Ok(())
    }

    pub fn observable(&self, x: &Conformation) -> Result<f64> {
        self.validate(Some(x.len()))?;
        Ok(match *self {
            Primitive::Distance([i, j]) => (x.positions[i] - x.positions[j]).norm(),
            Primitive::Angle([i, j, k]) => angle_unchecked(x, i, j, k)?,
            Primitive::Dihedral([i, j, k, l]) => dihedral_frame(x, [i, j, k, l])?.angle(),
        })
    }

    /// Signed residual `observable - target`, wrapped to `(-π, π]` for dihedrals.
    pub fn residual(&self, x: &Conformation, target: f64) -> Result<f64> {
        if !target.is_finite() {
            return Err(invalid("residual target must be finite"));
        }
        let d = self.observable(x)? - target;
        Ok(if self.is_periodic() { wrap_angle(d) } else { d })
    }

    /// Analytic gradient of the residual, as per-particle blocks.
    pub fn sparse_gradient(&self, x: &Conformation) -> Result<SparseGradient> {
        self.validate(Some(x.len()))?;
        let blocks = match *self {
            Primitive::Distance([i, j]) => {
                let d = x.positions[i] - x.positions[j];
                let r = d.norm();
                if r < DEGENERACY_EPS {
                    return Err(Error::Degenerate {
                        indices: vec![i, j],
                        reason: "coincident particles",
                    });
                }
                let u = d / r;
                vec![(i, u), (j, -u)]
            }
            Primitive::Angle([i, j, k]) => {
                let (u, v) = arms(x, i, j, k)?;
                let n = u.cross(&v);
                let nn = n.norm();
                if nn < DEGENERACY_EPS * u.norm() * v.norm() {
                    return Err(Error::Degenerate {
                        indices: vec![i, j, k],
                        reason: "collinear angle has no unique gradient",
                    });
                }
                let gi = u.cross(&n) / (u.norm_squared() * nn);
                let gk = -v.cross(&n) / (v.norm_squared() * nn);
                vec![(i, gi), (j, -gi - gk), (k, gk)]
            }
            Primitive::Dihedral(ix) => {
                let f = dihedral_frame(x, ix)?;
                // F = x_i - x_j, G = x_j - x_k, H = x_l - x_k.
                let g = -f.b2;
                let fv = -f.b1;
                let h = f.b3;
                let a = f.n1;
                let b = f.n2;
                let gn = g.norm();
                let a2 = a.norm_squared();
                let b2 = b.norm_squared();
                let gi = -a * (gn / a2);
                let gl = b * (gn / b2);
                let fg = fv.dot(&g) / (a2 * gn);
                let hg = h.dot(&g) / (b2 * gn);
                let gj = -gi + a * fg - b * hg;
                let gk = -gl - a * fg + b * hg;
                vec![(ix[0], gi), (ix[1], gj), (ix[2], gk), (ix[3], gl)]
            }
        };
        Ok(SparseGradient { blocks })
    }
}

/// Maps an angle difference onto `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

fn arms(x: &Conformation, i: usize, j: usize, k: usize) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let u = x.positions[i] - x.positions[j];
    let v = x.positions[k] - x.positions[j];
    if u.norm() < DEGENERACY_EPS || v.norm() < DEGENERACY_EPS {
        return Err(Error::Degenerate {
            indices: vec![i, j, k],
            reason: "angle arm shorter than the degeneracy threshold",
        });
    }
    Ok((u, v))
}

fn angle_unchecked(x: &Conformation, i: usize, j: usize, k: usize) -> Result<f64> {
    let (u, v) = arms(x, i, j, k)?;
    let c = u.dot(&v) / (u.norm() * v.norm());
    Ok(c.clamp(-1.0, 1.0).acos())
}

struct DihedralFrame {
    b1: Vector3<f64>,
    b2: Vector3<f64>,
    b3: Vector3<f64>,
    n1: Vector3<f64>,
    n2: Vector3<f64>,
}

impl DihedralFrame {
    fn angle(&self) -> f64 {
        let y = self.b2.norm() * self.b1.dot(&self.n2);
        let xx = self.n1.dot(&self.n2);
        let psi = y.atan2(xx);
        if psi <= -PI {
            PI
        } else {
            psi
        }
    }
}

fn dihedral_frame(x: &Conformation, [i, j, k, l]: [usize; 4]) -> Result<DihedralFrame> {
    let p = &x.positions;
    let b1 = p[j] - p[i];
    let b2 = p[k] - p[j];
    let b3 = p[l] - p[k];
    let n1 = b1.cross(&b2);
    let n2 = b2.cross(&b3);
    if b2.norm() < DEGENERACY_EPS || n1.norm() < DEGENERACY_EPS || n2.norm() < DEGENERACY_EPS {
        return Err(Error::Degenerate {
            indices: vec![i, j, k, l],
            reason: "dihedral plane normal below the degeneracy threshold",
        });
    }
    Ok(DihedralFrame { b1, b2, b3, n1, n2 })
}

pub fn pairwise_distance(x: &Conformation, i: usize, j: usize) -> Result<f64> {
    Primitive::Distance([i, j]).observable(x)
}

/// Angle at vertex `j`, in `[0, π]`.
pub fn bond_angle(x: &Conformation, i: usize, j: usize, k: usize) -> Result<f64> {
    Primitive::Angle([i, j, k]).observable(x)
}

/// Signed torsion in `(-π, π]`; see the module docs for the sign convention.
pub fn dihedral_angle(x: &Conformation, i: usize, j: usize, k: usize, l: usize) -> Result<f64> {
    Primitive::Dihedral([i, j, k, l]).observable(x)
}

pub fn residual(kind: &Primitive, x: &Conformation, target: f64) -> Result<f64> {
    kind.residual(x, target)
}

/// Analytic gradient of [`residual`]; the target does not enter it.
pub fn residual_gradient(
    kind: &Primitive,
    x: &Conformation,
    target: f64,
) -> Result<GradientVector> {
    if !target.is_finite() {
        return Err(invalid("residual target must be finite"));
    }
    Ok(kind.sparse_gradient(x)?.to_dense(x.len()))
}

/// Central-difference approximation of [`residual_gradient`].
pub fn finite_difference_gradient(
    kind: &Primitive,
    x: &Conformation,
    target: f64,
    step: f64,
) -> Result<GradientVector> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(invalid(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    kind.validate(Some(x.len()))?;
    let mut g = DVector::zeros(x.dof());
    let mut probe = x.clone();
    for &p in kind.indices() {
        for a in 0..3 {
            let orig = x.positions[p][a];
            probe.positions[p][a] = orig + step;
            let plus = kind.residual(&probe, target)?;
            probe.positions[p][a] = orig - step;
            let minus = kind.residual(&probe, target)?;
            probe.positions[p][a] = orig;
            let mut diff = plus - minus;
            if kind.is_periodic() {
                diff = wrap_angle(diff);
            }
            g[3 * p + a] = diff / (2.0 * step);
        }
    }
    Ok(GradientVector(g))
}

/// `max |analytic - numeric| / max |analytic|` (infinity norms).
pub fn gradient_relative_error(analytic: &DVector<f64>, numeric: &DVector<f64>) -> f64 {
    let diff = (analytic - numeric).amax();
    diff / analytic.amax().max(f64::MIN_POSITIVE)
}
