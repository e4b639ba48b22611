use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::group::{Block, RepSpec};
use crate::math;

/// ELU with unit scale: `x` for `x > 0`, `exp(x) - 1` otherwise.
#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        math::expm1(x)
    }
}

#[inline]
pub fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        math::exp(x)
    }
}

/// Coordinatewise ELU on regular-representation features.
///
/// Regular channels are permuted by the group, so any coordinatewise map commutes
/// with the action. Standard or trivial channels are rejected.
pub fn pointwise_nonlinearity(rep: &RepSpec, v: &[f64]) -> Result<Vec<f64>> {
    if rep.blocks().iter().any(|b| *b != Block::Regular) {
        return Err(Error::Type(
            "pointwise nonlinearity requires regular-representation channels",
        ));
    }
    crate::error::check_len("nonlinearity input", rep.total_dim(), v.len())?;
    Ok(v.iter().map(|&x| elu(x)).collect())
}
