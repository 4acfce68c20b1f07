//! Linearized Gaussian machinery around the active constraint set.
//!
//! The constraint Jacobian `J` (one row per active constraint) defines two
//! projections:
//!
//! - the nullspace projector `P = I − Jᵀ (J Jᵀ)⁺ J`, applied to Brownian
//!   increments so noise never leaves the tangent space of the constraints;
//! - the Schur-complement covariance `Σ' = Σ − Σ Jᵀ (J Σ Jᵀ)⁺ J Σ`, under which
//!   the constrained directions carry zero variance.
//!
//! Pseudo-inverses drop directions below `1e-10` of the largest, so
//! redundant constraint sets (rings, duplicated rows) are handled.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::constraints::ActiveConstraint;
use crate::error::{Error, Result};
use crate::geometry::Conformation;

/// Relative singular-value cutoff for pseudo-inverses.
pub const PINV_RTOL: f64 = 1e-10;

/// Stacked residual gradients, `M × 3N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintJacobian {
    pub matrix: DMatrix<f64>,
    pub rows: Vec<ActiveConstraint>,
}

impl ConstraintJacobian {
    /// Wraps an arbitrary matrix without row labels.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        Self {
            matrix,
            rows: Vec::new(),
        }
    }

    pub fn dof(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Jacobian of the active constraints at `x`. Columns of frozen coordinates are zero.
pub fn constraint_jacobian(
    active: &[ActiveConstraint],
    x: &Conformation,
) -> Result<ConstraintJacobian> {
    let n = x.len();
    let mut matrix = DMatrix::zeros(active.len(), 3 * n);
    for (r, a) in active.iter().enumerate() {
        let g = a.gradient(x)?.masked(x);
        for (p, b) in &g.blocks {
            for c in 0..3 {
                matrix[(r, 3 * p + c)] = b[c];
            }
        }
    }
    Ok(ConstraintJacobian {
        matrix,
        rows: active.to_vec(),
    })
}

/// Orthogonal projector onto the nullspace of a Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub matrix: DMatrix<f64>,
    /// Rank of `J`, i.e. the number of directions removed.
    pub rank: usize,
}

impl Projector {
    pub fn identity(dof: usize) -> Self {
        Self {
            matrix: DMatrix::identity(dof, dof),
            rank: 0,
        }
    }

    /// `D P D` with `D = diag(mobile)`; valid when `J` has zero frozen columns.
    pub fn restricted(&self, mobile: &[bool]) -> Result<Projector> {
        let n = self.matrix.nrows();
        if mobile.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: mobile.len(),
            });
        }
        let mut m = self.matrix.clone();
        for i in 0..n {
            for j in 0..n {
                if !(mobile[i] && mobile[j]) {
                    m[(i, j)] = 0.0;
                }
            }
        }
        Ok(Projector {
            matrix: m,
            rank: self.rank + mobile.iter().filter(|&&b| !b).count(),
        })
    }
}

/// `P = I − Jᵀ (J Jᵀ)⁺ J`, computed as `I − Q Qᵀ` from a column-pivoted QR
/// factorization of `Jᵀ`, keeping the leading columns of `Q` whose `|R_kk|`
/// exceeds `PINV_RTOL · |R_00|`.
pub fn nullspace_projector(j: &ConstraintJacobian) -> Projector {
    let n = j.dof();
    if j.matrix.nrows() == 0 || n == 0 {
        return Projector::identity(n);
    }
    let qr = j.matrix.transpose().col_piv_qr();
    let r = qr.r();
    let lead = r[(0, 0)].abs();
    let rank = (0..r.nrows().min(r.ncols()))
        .take_while(|&k| lead > 0.0 && r[(k, k)].abs() > PINV_RTOL * lead)
        .count();
    let q = qr.q();
    let basis = q.columns(0, rank);
    let p = DMatrix::identity(n, n) - &basis * basis.transpose();
    let p = (&p + p.transpose()) * 0.5;
    Projector { matrix: p, rank }
}

/// Applies a projector to a `3N` noise vector.
pub fn project_noise(p: &Projector, noise: &DVector<f64>) -> Result<DVector<f64>> {
    if noise.len() != p.matrix.ncols() {
        return Err(Error::DimensionMismatch {
            expected: p.matrix.ncols(),
            got: noise.len(),
        });
    }
    Ok(&p.matrix * noise)
}

fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::NotPositiveDefinite(format!("{what} is not square")));
    }
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > 1e-10 * scale {
        return Err(Error::NotPositiveDefinite(format!(
            "{what} is not symmetric (max asymmetry {asym:e})"
        )));
    }
    Ok(())
}

/// Moore–Penrose inverse of a symmetric PSD matrix via its eigendecomposition.
fn symmetric_pinv(s: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = s.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let inv = eig.eigenvalues.map(|l| {
        if lmax > 0.0 && l > PINV_RTOL * lmax {
            1.0 / l
        } else {
            0.0
        }
    });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Generalized Schur complement `Σ' = Σ − Σ Jᵀ (J Σ Jᵀ)⁺ J Σ`.
///
/// The result is symmetric PSD with `J Σ' Jᵀ = 0`.
pub fn schur_project_covariance(
    sigma: &DMatrix<f64>,
    j: &ConstraintJacobian,
) -> Result<DMatrix<f64>> {
    check_symmetric(sigma, "covariance")?;
    let n = sigma.nrows();
    if j.dof() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: j.dof(),
        });
    }
    if j.matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "Jacobian has non-finite entries".into(),
        ));
    }
    if sigma.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite(
            "covariance is not positive definite".into(),
        ));
    }
    if j.matrix.nrows() == 0 {
        return Ok(sigma.clone());
    }
    let sjt = sigma * j.matrix.transpose();
    let s = &j.matrix * &sjt;
    let s = (&s + s.transpose()) * 0.5;
    let out = sigma - &sjt * symmetric_pinv(&s) * sjt.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

/// Draws `mean + L ξ` with `L` the symmetric PSD square root of a covariance.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    root: DMatrix<f64>,
}

impl GaussianSampler {
    /// Eigenvalues below `1e-12` of the largest are clamped to zero.
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        check_symmetric(cov, "covariance")?;
        let eig = cov.clone().symmetric_eigen();
        let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v));
        let roots = eig
            .eigenvalues
            .map(|l| if l > 1e-12 * lmax { l.sqrt() } else { 0.0 });
        let root =
            &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
        Ok(Self { root })
    }

    pub fn dim(&self) -> usize {
        self.root.nrows()
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        mean: &DVector<f64>,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        if mean.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: mean.len(),
            });
        }
        let xi = DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)),
        );
        Ok(mean + &self.root * xi)
    }
}

pub fn constrained_gaussian_sample<R: Rng + ?Sized>(
    cov: &DMatrix<f64>,
    mean: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    GaussianSampler::new(cov)?.sample(mean, rng)
}
