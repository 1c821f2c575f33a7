//! 2x2 Gaussian covariance for pair expectations.

use crate::error::CoreError;
use crate::Result;

/// Tolerance for clamping the off-diagonal into the PSD range.
pub const PSD_TOL: f64 = 1e-9;
/// Below this a variance is treated as exactly zero.
pub const DEGENERATE_TOL: f64 = 1e-12;

/// Covariance of a centered bivariate Gaussian `(u1, u2)`.
///
/// Construction clamps `k12` into the PSD range; a clamp larger than
/// [`PSD_TOL`] is an error. Deep ordered-phase kernel recursions drift to
/// `|rho| = 1` at machine precision, which is why the clamp exists.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cov2 {
    k11: f64,
    k12: f64,
    k22: f64,
}

impl Cov2 {
    pub fn new(k11: f64, k12: f64, k22: f64) -> Result<Self> {
        if k11 < 0.0 {
            return Err(CoreError::NegativeVariance(k11));
        }
        if k22 < 0.0 {
            return Err(CoreError::NegativeVariance(k22));
        }
        let bound = (k11 * k22).sqrt();
        let excess = k12.abs() - bound;
        if excess > PSD_TOL {
            return Err(CoreError::NotPsd { excess });
        }
        let k12 = k12.clamp(-bound, bound);
        Ok(Cov2 { k11, k12, k22 })
    }

    pub fn k11(&self) -> f64 {
        self.k11
    }

    pub fn k12(&self) -> f64 {
        self.k12
    }

    pub fn k22(&self) -> f64 {
        self.k22
    }

    /// Correlation coefficient, clamped to `[-1, 1]`.
    pub fn rho(&self) -> f64 {
        let denom = (self.k11 * self.k22).sqrt();
        if denom < DEGENERATE_TOL {
            0.0
        } else {
            (self.k12 / denom).clamp(-1.0, 1.0)
        }
    }

    /// Swap the two variances, keeping the covariance.
    pub fn swapped(&self) -> Cov2 {
        Cov2 {
            k11: self.k22,
            k12: self.k12,
            k22: self.k11,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_within_tolerance() {
        let c = Cov2::new(1.0, 1.0 + 0.5e-9, 1.0).unwrap();
        assert_eq!(c.k12(), 1.0);
        assert_eq!(c.rho(), 1.0);
    }

    #[test]
    fn rejects_large_violation() {
        assert!(matches!(
            Cov2::new(1.0, 1.1, 1.0),
            Err(CoreError::NotPsd { .. })
        ));
        assert!(matches!(
            Cov2::new(-0.1, 0.0, 1.0),
            Err(CoreError::NegativeVariance(_))
        ));
    }
}
