use crate::error::{Error, Result};

/// Smallest probability passed to a logarithm.
pub const LIKELIHOOD_FLOOR: f64 = 1e-9;

/// Information content `-sum log2 p` of independent symbols.
pub fn rate_bits(probabilities: &[f64]) -> Result<f64> {
    let mut bits = 0.0;
    for &p in probabilities {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Domain(format!("probability {p} outside (0, 1]")));
        }
        bits -= p.log2();
    }
    Ok(bits)
}

/// Applies the floor and returns `(p, dp_scale)` where `dp_scale` zeroes the
/// gradient for floored values.
#[inline]
pub(crate) fn floored(p: f64) -> (f64, f64) {
    if p > LIKELIHOOD_FLOOR {
        (p, 1.0)
    } else {
        (LIKELIHOOD_FLOOR, 0.0)
    }
}
