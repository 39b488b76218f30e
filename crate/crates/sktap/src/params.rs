use serde::{Deserialize, Serialize};

use crate::error::{Result, SkError};

/// Smallest inverse temperature the scalar layer accepts. The zero-temperature
/// limits in the docs are analytic statements; numerically we stay above this.
pub const BETA_MIN: f64 = 1e-8;

/// Inverse temperature and external field, the two scalars parameterizing
/// the whole model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: f64,
    pub h: f64,
}

impl ModelParams {
    /// Validates `beta > 0` (in practice `beta >= BETA_MIN`) and `h != 0`.
    pub fn new(beta: f64, h: f64) -> Result<Self> {
        if !beta.is_finite() || beta < BETA_MIN {
            return Err(SkError::InvalidParams(format!(
                "beta must be a finite positive real >= {BETA_MIN:e}, got {beta}"
            )));
        }
        if !h.is_finite() || h == 0.0 {
            return Err(SkError::InvalidParams(format!(
                "h must be a finite nonzero real, got {h}"
            )));
        }
        Ok(Self { beta, h })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_params() {
        assert!(ModelParams::new(0.0, 0.5).is_err());
        assert!(ModelParams::new(-1.0, 0.5).is_err());
        assert!(ModelParams::new(1.0, 0.0).is_err());
        assert!(ModelParams::new(f64::NAN, 0.5).is_err());
        assert!(ModelParams::new(1.0, f64::INFINITY).is_err());
        assert!(ModelParams::new(1.0, -0.3).is_ok());
    }
}
