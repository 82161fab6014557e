use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Blocks whose reciprocal condition number falls below this are singular.
pub const SINGULAR_RCOND: f64 = 1e-12;

fn norm1(a: &DMatrix<Complex64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Reciprocal 1-norm condition number, computed from the explicit inverse
/// (the blocks here are at most a few dozen rows).
pub fn rcond(a: &DMatrix<Complex64>, inverse: &DMatrix<Complex64>) -> f64 {
    1.0 / (norm1(a) * norm1(inverse))
}

pub fn checked_inverse(
    a: &DMatrix<Complex64>,
    block: &'static str,
    omega: f64,
) -> Result<DMatrix<Complex64>> {
    if a.is_empty() {
        return Ok(a.clone());
    }
    let singular = |rcond| Error::SingularSubsystem { block, omega, rcond };
    let inv = a.clone().lu().try_inverse().ok_or_else(|| singular(0.0))?;
    let rc = rcond(a, &inv);
    if !(rc >= SINGULAR_RCOND) {
        return Err(singular(rc));
    }
    Ok(inv)
}
