//! Reference solvers that share no code path with the library's projection.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3};
use shakegen::{Conformation, Primitive};

/// Nearest point to `x0` with every `(primitive, target)` residual at zero.
///
/// Minimizes `‖y − x0‖² + μ Σ c(y)²` by Levenberg–Marquardt with
/// central-difference Jacobians, raising `μ` from 1 to 1e12 with warm starts.
pub fn penalty_projection(
    x0: &Conformation,
    constraints: &[(Primitive, f64)],
) -> Option<Conformation> {
    let start = x0.to_flat();
    let n = start.len();
    let residuals = |y: &DVector<f64>| -> Option<DVector<f64>> {
        let c = Conformation::from_flat(y).ok()?;
        let v: Option<Vec<f64>> = constraints
            .iter()
            .map(|(p, t)| p.residual(&c, *t).ok())
            .collect();
        Some(DVector::from_vec(v?))
    };
    let jacobian = |y: &DVector<f64>| -> Option<DMatrix<f64>> {
        let h = 1e-6;
        let mut j = DMatrix::zeros(constraints.len(), n);
        for k in 0..n {
            let mut plus = y.clone();
            plus[k] += h;
            let mut minus = y.clone();
            minus[k] -= h;
            let d = (residuals(&plus)? - residuals(&minus)?) / (2.0 * h);
            j.set_column(k, &d);
        }
        Some(j)
    };
    let objective = |y: &DVector<f64>, mu: f64| -> Option<f64> {
        Some((y - &start).norm_squared() + mu * residuals(y)?.norm_squared())
    };

    let mut y = start.clone();
    let mut mu = 1.0;
    while mu <= 1e12 {
        let mut damping = 1e-3;
        for _ in 0..500 {
            let c = residuals(&y)?;
            let j = jacobian(&y)?;
            let grad = (&y - &start) + j.transpose() * &c * mu;
            let hess = DMatrix::identity(n, n) + j.transpose() * &j * mu;
            let f0 = objective(&y, mu)?;
            let mut accepted = false;
            for _ in 0..60 {
                let mut damped = hess.clone();
                for d in 0..n {
                    damped[(d, d)] += damping * hess[(d, d)];
                }
                let step = damped.cholesky()?.solve(&(-&grad));
                let cand = &y + &step;
                if let Some(f1) = objective(&cand, mu) {
                    if f1 <= f0 {
                        let small = step.amax() < 1e-15;
                        y = cand;
                        damping = (damping * 0.3).max(1e-12);
                        accepted = !small;
                        break;
                    }
                }
                damping *= 10.0;
            }
            if !accepted {
                break;
            }
        }
        mu *= 10.0;
    }
    Conformation::from_flat(&y).ok()
}

/// RMSD between two conformations after optimal rigid superposition.
///
/// The optimal rotation is the top eigenvector of Horn's 4×4 quaternion
/// matrix; the minimal squared deviation follows from its eigenvalue.
pub fn aligned_rmsd(a: &Conformation, b: &Conformation) -> f64 {
    let ca = a.center_of_gravity();
    let cb = b.center_of_gravity();
    let pa: Vec<Vector3<f64>> = a.positions().iter().map(|p| p - ca).collect();
    let pb: Vec<Vector3<f64>> = b.positions().iter().map(|p| p - cb).collect();
    let mut s = Matrix3::zeros();
    for (p, q) in pa.iter().zip(&pb) {
        s += p * q.transpose();
    }
    let (sxx, sxy, sxz) = (s[(0, 0)], s[(0, 1)], s[(0, 2)]);
    let (syx, syy, syz) = (s[(1, 0)], s[(1, 1)], s[(1, 2)]);
    let (szx, szy, szz) = (s[(2, 0)], s[(2, 1)], s[(2, 2)]);
    let k = Matrix4::new(
        sxx + syy + szz,
        syz - szy,
        szx - sxz,
        sxy - syx,
        syz - szy,
        sxx - syy - szz,
        sxy + syx,
        szx + sxz,
        szx - sxz,
        sxy + syx,
        -sxx + syy - szz,
        syz + szy,
        sxy - syx,
        szx + sxz,
        syz + szy,
        -sxx - syy + szz,
    );
    let top = k.symmetric_eigen().eigenvalues.max();
    let g: f64 = pa.iter().chain(&pb).map(|p| p.norm_squared()).sum();
    ((g - 2.0 * top).max(0.0) / pa.len() as f64).sqrt()
}
