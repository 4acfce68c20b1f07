use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::constraints::{active_set, ConstraintExpr};
use crate::error::{invalid, Error, Result};
use crate::geometry::Conformation;
use crate::projection::{constraint_jacobian, nullspace_projector};
use crate::shake::{shake_project, ShakeConfig, ShakeReport};

/// One Euler–Maruyama step of constrained overdamped Langevin dynamics:
///
/// ```text
/// x' = x + D·score·dt + sqrt(2·D·dt)·P·ξ
/// ```
///
/// where `P` projects onto the nullspace of the active constraint Jacobian
/// at `x`, followed by a SHAKE projection that removes the second-order drift
/// off the constraint set. Frozen coordinates receive neither drift nor noise.
pub fn langevin_step<R: Rng + ?Sized>(
    x: &Conformation,
    score: &DVector<f64>,
    exprs: &[ConstraintExpr],
    diffusion_constant: f64,
    step_size: f64,
    shake: &ShakeConfig,
    rng: &mut R,
) -> Result<(Conformation, ShakeReport)> {
    if !(step_size > 0.0 && step_size.is_finite()) {
        return Err(invalid("Langevin step size must be positive"));
    }
    if !(diffusion_constant >= 0.0 && diffusion_constant.is_finite()) {
        return Err(invalid("diffusion constant must be nonnegative"));
    }
    let dof = x.dof();
    if score.len() != dof {
        return Err(Error::DimensionMismatch {
            expected: dof,
            got: score.len(),
        });
    }
    let mobile: Vec<bool> = (0..dof).map(|c| x.is_mobile(c)).collect();
    let mut step = score * (diffusion_constant * step_size);

    if diffusion_constant > 0.0 {
        let active = active_set(exprs, x)?;
        let mut p = nullspace_projector(&constraint_jacobian(&active, x)?);
        if x.frozen().is_some() {
            p = p.restricted(&mobile)?;
        }
        let xi =
            DVector::from_iterator(dof, (0..dof).map(|_| rng.sample::<f64, _>(StandardNormal)));
        step += (&p.matrix * xi) * (2.0 * diffusion_constant * step_size).sqrt();
    }
    for (c, m) in mobile.iter().enumerate() {
        if !m {
            step[c] = 0.0;
        }
    }
    let moved = x.with_flat_positions(&(x.to_flat() + step))?;
    shake_project(&moved, exprs, shake)
}
