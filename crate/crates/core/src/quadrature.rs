//! Quadrature rules for Gaussian expectations.
//!
//! The workhorse is a Gauss-Hermite rule normalized to the standard normal
//! measure, built with the Golub-Welsch algorithm: nodes are eigenvalues of
//! the symmetric tridiagonal Jacobi matrix, weights come from the squared
//! first components of its eigenvectors.

use nalgebra::{DMatrix, SymmetricEigen};
use std::sync::OnceLock;

use crate::error::CoreError;
use crate::Result;

/// Default per-axis Gauss-Hermite order used across the crate.
pub const DEFAULT_GH_ORDER: usize = 80;

/// Integration cutoff in standard deviations for panel-based rules.
const PANEL_LIMIT_SIGMAS: f64 = 8.5;
/// Sub-panels per smooth piece in the kink-splitting integrator.
const PANEL_SUBDIVISIONS: usize = 6;
/// Gauss-Legendre order per sub-panel.
const PANEL_GL_ORDER: usize = 24;

/// A 1D quadrature rule: nodes, weights, and the defining order.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    order: usize,
}

impl QuadratureRule {
    /// Gauss-Hermite rule normalized so that `sum(weights) == 1` and
    /// `integrate(f)` approximates `E[f(Z)]` for `Z ~ N(0, 1)`.
    pub fn gauss_hermite(order: usize) -> Self {
        assert!(order >= 1, "quadrature order must be >= 1");
        let mut jacobi = DMatrix::<f64>::zeros(order, order);
        for k in 1..order {
            let off = (k as f64 / 2.0).sqrt();
            jacobi[(k - 1, k)] = off;
            jacobi[(k, k - 1)] = off;
        }
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..order)
            .map(|i| {
                let node = eig.eigenvalues[i] * std::f64::consts::SQRT_2;
                let w = eig.eigenvectors[(0, i)].powi(2);
                (node, w)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Enforce exact +/- symmetry so odd moments vanish identically.
        for i in 0..order / 2 {
            let j = order - 1 - i;
            let node = 0.5 * (pairs[j].0 - pairs[i].0);
            let w = 0.5 * (pairs[i].1 + pairs[j].1);
            pairs[i] = (-node, w);
            pairs[j] = (node, w);
        }
        if order % 2 == 1 {
            pairs[order / 2].0 = 0.0;
        }
        let norm: f64 = pairs.iter().map(|p| p.1).sum();
        QuadratureRule {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / norm).collect(),
            order,
        }
    }

    /// Gauss-Legendre rule on `[-1, 1]` (weights sum to 2).
    pub fn gauss_legendre(order: usize) -> Self {
        assert!(order >= 1, "quadrature order must be >= 1");
        let mut jacobi = DMatrix::<f64>::zeros(order, order);
        for k in 1..order {
            let kf = k as f64;
            let off = kf / (4.0 * kf * kf - 1.0).sqrt();
            jacobi[(k - 1, k)] = off;
            jacobi[(k, k - 1)] = off;
        }
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..order)
            .map(|i| (eig.eigenvalues[i], 2.0 * eig.eigenvectors[(0, i)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        QuadratureRule {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
            order,
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// `E[f(Z)]` for `Z ~ N(0,1)` under a Gauss-Hermite rule.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * f(z))
            .sum()
    }
}

/// Shared default Gauss-Hermite rule (order 80).
pub fn default_rule() -> &'static QuadratureRule {
    static RULE: OnceLock<QuadratureRule> = OnceLock::new();
    RULE.get_or_init(|| QuadratureRule::gauss_hermite(DEFAULT_GH_ORDER))
}

fn panel_gl_rule() -> &'static QuadratureRule {
    static RULE: OnceLock<QuadratureRule> = OnceLock::new();
    RULE.get_or_init(|| QuadratureRule::gauss_legendre(PANEL_GL_ORDER))
}

/// `E[f(U)]` for `U ~ N(mu, sigma^2)` by composite Gauss-Legendre panels,
/// splitting the domain at the supplied kink locations so every panel sees a
/// smooth integrand. `sigma == 0` degenerates to `f(mu)`.
pub fn gauss_expect_kinked<F: Fn(f64) -> f64>(f: F, mu: f64, sigma: f64, kinks: &[f64]) -> Result<f64> {
    if sigma < 0.0 {
        return Err(CoreError::NegativeVariance(sigma));
    }
    if sigma == 0.0 {
        return Ok(f(mu));
    }
    let lo = mu - PANEL_LIMIT_SIGMAS * sigma;
    let hi = mu + PANEL_LIMIT_SIGMAS * sigma;
    let mut cuts: Vec<f64> = vec![lo, hi];
    for &k in kinks {
        if lo < k && k < hi {
            cuts.push(k);
        }
    }
    cuts.sort_by(|a, b| a.total_cmp(b));

    let gl = panel_gl_rule();
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let mut total = 0.0;
    for piece in cuts.windows(2) {
        let (a, b) = (piece[0], piece[1]);
        let h = (b - a) / PANEL_SUBDIVISIONS as f64;
        for s in 0..PANEL_SUBDIVISIONS {
            let p0 = a + s as f64 * h;
            let mid = p0 + 0.5 * h;
            let half = 0.5 * h;
            let mut acc = 0.0;
            for (&x, &w) in gl.nodes().iter().zip(gl.weights()) {
                let u = mid + half * x;
                let t = (u - mu) / sigma;
                acc += w * f(u) * (-0.5 * t * t).exp();
            }
            total += half * acc * norm;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gaussian_moment(p: u32) -> f64 {
        // E[Z^p] for Z ~ N(0,1): 0 for odd p, (p-1)!! for even p.
        if p % 2 == 1 {
            return 0.0;
        }
        let mut acc = 1.0;
        let mut k = p as i64 - 1;
        while k > 0 {
            acc *= k as f64;
            k -= 2;
        }
        acc
    }

    #[test]
    fn weights_normalized() {
        for order in [4, 8, 20, 80, 160] {
            let rule = QuadratureRule::gauss_hermite(order);
            let sum: f64 = rule.weights().iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn monomials_exact_to_degree_2n_minus_1() {
        for order in [4, 8, 16] {
            let rule = QuadratureRule::gauss_hermite(order);
            for p in 0..(2 * order) {
                let got = rule.integrate(|z| z.powi(p as i32));
                let want = gaussian_moment(p as u32);
                // Condition the comparison on the magnitude of the summed
                // terms, which is E[|Z|^p] rather than the (possibly zero)
                // signed moment.
                let scale = rule.integrate(|z| z.abs().powi(p as i32)).max(1.0);
                assert!(
                    (got - want).abs() / scale < 1e-10,
                    "order {order}, degree {p}: got {got}, want {want}"
                );
            }
        }
    }

    #[test]
    fn second_moment_matches_variance() {
        let rule = QuadratureRule::gauss_hermite(40);
        let v = rule.integrate(|z| (3.0f64.sqrt() * z).powi(2));
        assert_abs_diff_eq!(v, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn kinked_integrator_handles_relu_mean() {
        // Oracle: dense Simpson integration of the same integrand, split at 0.
        let mu = 0.37;
        let s = 1.21;
        let f = |u: f64| u.max(0.0);
        let simpson = |a: f64, b: f64| {
            let n = 40_000usize; // even
            let h = (b - a) / n as f64;
            let dens = |u: f64| {
                let t = (u - mu) / s;
                (-0.5 * t * t).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
            };
            let mut acc = f(a) * dens(a) + f(b) * dens(b);
            for i in 1..n {
                let u = a + i as f64 * h;
                acc += f(u) * dens(u) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            acc * h / 3.0
        };
        let want = simpson(0.0, mu + 10.0 * s);
        let got = gauss_expect_kinked(f, mu, s, &[0.0]).unwrap();
        assert_abs_diff_eq!(got, want, epsilon = 1e-10);

        // mu = 0 closed form: E[max(U,0)] = s / sqrt(2 pi)
        let got0 = gauss_expect_kinked(f, 0.0, s, &[0.0]).unwrap();
        assert_abs_diff_eq!(got0, s / (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-12);
    }
}
