//! Gaussian pair expectations of activations, 1D Gaussian integrals, and
//! Wick-pairing moments: the integral engine behind every kernel recursion.

use nalgebra::DMatrix;

use crate::cov::{Cov2, DEGENERATE_TOL, PSD_TOL};
use crate::error::CoreError;
use crate::nonlin::Nonlinearity;
use crate::quadrature::{default_rule, gauss_expect_kinked, QuadratureRule};
use crate::Result;

/// Cap on half the index count in [`wick_moment`]: at most 10 indices,
/// i.e. 9!! = 945 pairings. The theory here never needs degree > 4.
pub const WICK_PAIR_CAP: usize = 5;

/// `E[phi(u1) phi(u2)]` for `(u1, u2) ~ N(0, cov)`.
///
/// Closed forms are used for ReLU (arc-cosine kernel) and linear; everything
/// else is integrated numerically with the default order-80 rule.
pub fn f_phi(cov: &Cov2, phi: &Nonlinearity) -> Result<f64> {
    f_phi_with(cov, phi, default_rule())
}

/// [`f_phi`] with an explicit quadrature rule for the numeric path.
pub fn f_phi_with(cov: &Cov2, phi: &Nonlinearity, rule: &QuadratureRule) -> Result<f64> {
    match phi {
        Nonlinearity::Linear => Ok(cov.k12()),
        Nonlinearity::Relu => Ok(f_relu_closed(cov)),
        _ => f_phi_quadrature(cov, phi, rule),
    }
}

/// `E[phi'(u1) phi'(u2)]` for `(u1, u2) ~ N(0, cov)`.
///
/// ReLU closed form is the orthant probability `(pi - theta) / (2 pi)`.
pub fn f_phi_prime(cov: &Cov2, phi: &Nonlinearity) -> Result<f64> {
    f_phi_prime_with(cov, phi, default_rule())
}

pub fn f_phi_prime_with(cov: &Cov2, phi: &Nonlinearity, rule: &QuadratureRule) -> Result<f64> {
    match phi {
        Nonlinearity::Linear => Ok(1.0),
        Nonlinearity::Relu => {
            let theta = cov.rho().clamp(-1.0, 1.0).acos();
            Ok((std::f64::consts::PI - theta) / (2.0 * std::f64::consts::PI))
        }
        _ => pair_expectation_quadrature(cov, &|z| phi.d1(z), phi.kinks(), rule),
    }
}

/// Closed-form `F_ReLU`: `sqrt(k11 k22) [sin t + (pi - t) cos t] / (2 pi)`
/// with `t = arccos(rho)`.
fn f_relu_closed(cov: &Cov2) -> f64 {
    let theta = cov.rho().acos();
    (cov.k11() * cov.k22()).sqrt() / (2.0 * std::f64::consts::PI)
        * (theta.sin() + (std::f64::consts::PI - theta) * theta.cos())
}

/// The numeric path of [`f_phi`], exposed so closed forms can be
/// cross-checked against it.
pub fn f_phi_quadrature(cov: &Cov2, phi: &Nonlinearity, rule: &QuadratureRule) -> Result<f64> {
    pair_expectation_quadrature(cov, &|z| phi.value(z), phi.kinks(), rule)
}

/// Conditional decomposition of the 2D Gaussian integral: with
/// `rho = k12 / sqrt(k11 k22)`, substitute
/// `u2 = sqrt(k22) (rho s1 + sqrt(1 - rho^2) s2)`.
///
/// Smooth integrands use the tensorized Gauss-Hermite rule. Integrands with
/// declared kinks instead use panel quadrature split at the kink locations
/// in both the inner and outer integrals, which restores spectral accuracy.
fn pair_expectation_quadrature(
    cov: &Cov2,
    g: &dyn Fn(f64) -> f64,
    kinks: &[f64],
    rule: &QuadratureRule,
) -> Result<f64> {
    let (k11, k12, k22) = (cov.k11(), cov.k12(), cov.k22());
    if k11 < DEGENERATE_TOL || k22 < DEGENERATE_TOL {
        if k12.abs() > PSD_TOL {
            return Err(CoreError::DegenerateCovariance {
                variance: k11.min(k22),
                covariance: k12,
            });
        }
        // One factor collapses to g(0); the other is a 1D integral.
        let live_var = if k11 < DEGENERATE_TOL { k22 } else { k11 };
        let live = if live_var < DEGENERATE_TOL {
            g(0.0)
        } else {
            gauss_expect_kinked(g, 0.0, live_var.sqrt(), kinks)?
        };
        return Ok(g(0.0) * live);
    }

    let rho = cov.rho();
    let s1_scale = k11.sqrt();
    let s2_scale = k22.sqrt();
    let cross = (1.0 - rho * rho).max(0.0).sqrt();

    if kinks.is_empty() {
        // Tensorized Gauss-Hermite.
        let nodes = rule.nodes();
        let weights = rule.weights();
        let mut total = 0.0;
        for (i, &s1) in nodes.iter().enumerate() {
            let a = g(s1_scale * s1);
            if a == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for (j, &s2) in nodes.iter().enumerate() {
                inner += weights[j] * g(s2_scale * (rho * s1 + cross * s2));
            }
            total += weights[i] * a * inner;
        }
        Ok(total)
    } else {
        // Outer integral over u1 ~ N(0, k11); inner over
        // u2 | u1 ~ N(rho sqrt(k22/k11) u1, k22 (1 - rho^2)).
        let cond_slope = rho * (k22 / k11).sqrt();
        let cond_sigma = (k22 * (1.0 - rho * rho)).max(0.0).sqrt();
        let outer = |u1: f64| -> f64 {
            let a = g(u1);
            if a == 0.0 {
                return 0.0;
            }
            let inner = gauss_expect_kinked(g, cond_slope * u1, cond_sigma, kinks)
                .expect("inner panel integral with non-negative sigma");
            a * inner
        };
        gauss_expect_kinked(outer, 0.0, s1_scale, kinks)
    }
}

/// `E[f(Z)]` for `Z ~ N(0, variance)` via Gauss-Hermite; `f(0)` when the
/// variance is exactly zero.
pub fn gauss1d<F: Fn(f64) -> f64>(f: F, variance: f64) -> Result<f64> {
    gauss1d_with(f, variance, default_rule())
}

pub fn gauss1d_with<F: Fn(f64) -> f64>(f: F, variance: f64, rule: &QuadratureRule) -> Result<f64> {
    if variance < 0.0 {
        return Err(CoreError::NegativeVariance(variance));
    }
    if variance == 0.0 {
        return Ok(f(0.0));
    }
    let s = variance.sqrt();
    Ok(rule.integrate(|z| f(s * z)))
}

/// Wick's theorem: the expectation of a product of centered jointly Gaussian
/// variables `z_{i1} ... z_{ik}` is the sum over perfect pairings of products
/// of covariances. Odd-length products vanish.
pub fn wick_moment(cov: &DMatrix<f64>, indices: &[usize]) -> Result<f64> {
    let dim = cov.nrows();
    for &i in indices {
        if i >= dim {
            return Err(CoreError::IndexOutOfRange { index: i, dim });
        }
    }
    if indices.len() % 2 == 1 {
        return Ok(0.0);
    }
    if indices.len() / 2 > WICK_PAIR_CAP {
        return Err(CoreError::EnumerationTooLarge {
            len: indices.len(),
            cap: 2 * WICK_PAIR_CAP,
        });
    }
    let mut idx = indices.to_vec();
    Ok(wick_recurse(cov, &mut idx))
}

fn wick_recurse(cov: &DMatrix<f64>, idx: &mut Vec<usize>) -> f64 {
    if idx.is_empty() {
        return 1.0;
    }
    let first = idx[0];
    let mut total = 0.0;
    for k in 1..idx.len() {
        let partner = idx[k];
        let mut rest: Vec<usize> = Vec::with_capacity(idx.len() - 2);
        rest.extend_from_slice(&idx[1..k]);
        rest.extend_from_slice(&idx[k + 1..]);
        total += cov[(first, partner)] * wick_recurse(cov, &mut rest);
    }
    total
}
