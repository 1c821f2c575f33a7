//! Fixed points of the NNGP recursion, stability coefficients, depth scales,
//! and the ordered/chaotic phase diagram.

use crate::cov::Cov2;
use crate::error::CoreError;
use crate::gauss::{f_phi, f_phi_prime, gauss1d};
use crate::nonlin::Nonlinearity;
use crate::Result;

/// Half-width of the band around `chi_1 = 1` classified as critical.
/// The critical line is measure-zero analytically; floating point needs a band.
pub const CRIT_BAND: f64 = 1e-3;
/// Damping factor on fixed-point iterations (the raw ReLU off-critical map
/// can oscillate or diverge).
pub const FP_DAMPING: f64 = 0.5;
/// Iteration cap for fixed-point searches.
pub const FP_MAX_ITERS: usize = 10_000;
/// Relative convergence tolerance on fixed-point iterations.
pub const FP_TOL: f64 = 1e-12;

/// Outcome of a fixed-point search. `Marginal` flags maps that are the
/// identity along the probed direction (every point is fixed), e.g. the
/// critical-ReLU diagonal map or the zero-bias linear correlation map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FixedPoint {
    Converged(f64),
    Marginal(f64),
    NotConverged(f64),
}

impl FixedPoint {
    pub fn value(&self) -> f64 {
        match *self {
            FixedPoint::Converged(v) | FixedPoint::Marginal(v) | FixedPoint::NotConverged(v) => v,
        }
    }

    pub fn converged(&self) -> bool {
        !matches!(self, FixedPoint::NotConverged(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Ordered,
    Chaotic,
    Critical,
    NoFixedPoint,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Phase::Ordered => "ordered",
            Phase::Chaotic => "chaotic",
            Phase::Critical => "critical",
            Phase::NoFixedPoint => "no-fixed-point",
        };
        write!(f, "{s}")
    }
}

/// One point of the phase diagram.
#[derive(Debug, Clone)]
pub struct PhasePoint {
    pub sigma_b2: f64,
    pub sigma_w2: f64,
    pub q_star: FixedPoint,
    pub chi1: f64,
    pub chi_parallel: f64,
    pub c_star: f64,
    /// Depth scale of diagonal convergence; `None` when the linearized map is
    /// expanding, `+inf` on the critical band.
    pub xi_q: Option<f64>,
    pub xi_c: Option<f64>,
    pub phase: Phase,
    pub status: String,
}

fn diag_map(phi: &Nonlinearity, sigma_b2: f64, sigma_w2: f64, q: f64) -> Result<f64> {
    Ok(sigma_b2 + sigma_w2 * gauss1d(|z| phi.value(z).powi(2), q)?)
}

/// Fixed point of `q -> sigma_b^2 + sigma_w^2 <phi^2>_q` by damped iteration
/// from `q_0 = sigma_b^2 + sigma_w^2` (the depth-1 diagonal value).
///
/// A map that is the identity near `q_0` (critical ReLU) returns
/// `Marginal(q_0)`; divergence or an exhausted iteration budget returns
/// `NotConverged` with the last iterate.
pub fn find_qstar(phi: &Nonlinearity, sigma_b2: f64, sigma_w2: f64) -> Result<FixedPoint> {
    let q0 = sigma_b2 + sigma_w2;
    // Identity-map probe at two separated points.
    let fixed_at = |q: f64| -> Result<bool> {
        Ok((diag_map(phi, sigma_b2, sigma_w2, q)? - q).abs() <= FP_TOL * (1.0 + q.abs()))
    };
    if fixed_at(q0)? && fixed_at(0.5 * q0)? && fixed_at(0.25 * q0 + 0.1)? {
        return Ok(FixedPoint::Marginal(q0));
    }

    let mut q = q0;
    let mut monotone_down = true;
    for _ in 0..FP_MAX_ITERS {
        let mapped = diag_map(phi, sigma_b2, sigma_w2, q)?;
        if !mapped.is_finite() || mapped > 1e12 {
            return Ok(FixedPoint::NotConverged(q));
        }
        if mapped > q {
            monotone_down = false;
        }
        let next = q + FP_DAMPING * (mapped - q);
        if (next - q).abs() < FP_TOL * (1.0 + next.abs()) {
            return Ok(FixedPoint::Converged(next.max(0.0)));
        }
        q = next.max(0.0);
    }
    // Bounded activations with phi(0) = 0 and zero bias collapse to q* = 0
    // algebraically (Delta q ~ q^2 near criticality); the damped iteration
    // cannot resolve that in finitely many steps, but 0 is then an exact
    // fixed point.
    if monotone_down && q < 1e-3 && sigma_b2 == 0.0 && phi.value(0.0) == 0.0 {
        return Ok(FixedPoint::Converged(0.0));
    }
    Ok(FixedPoint::NotConverged(q))
}

/// `chi_1 = sigma_w^2 E[(phi'(sqrt(q*) s))^2]`, the derivative of the
/// correlation map at `c = 1`.
pub fn chi1(phi: &Nonlinearity, q_star: f64, sigma_w2: f64) -> Result<f64> {
    if q_star < 0.0 {
        return Err(CoreError::NegativeQ(q_star));
    }
    Ok(sigma_w2 * gauss1d(|z| phi.d1(z).powi(2), q_star)?)
}

/// `chi_parallel = (sigma_w^2 / 2) <d^2(phi^2)>_{q*}` with
/// `d^2(phi^2) = 2 (phi')^2 + 2 phi phi''`: the derivative of the diagonal
/// map at its fixed point.
pub fn chi_parallel(phi: &Nonlinearity, q_star: f64, sigma_w2: f64) -> Result<f64> {
    if q_star < 0.0 {
        return Err(CoreError::NegativeQ(q_star));
    }
    Ok(sigma_w2 / 2.0
        * gauss1d(
            |z| 2.0 * phi.d1(z).powi(2) + 2.0 * phi.value(z) * phi.d2(z),
            q_star,
        )?)
}

fn corr_map(
    phi: &Nonlinearity,
    q_star: f64,
    sigma_w2: f64,
    sigma_b2: f64,
    c: f64,
) -> Result<f64> {
    let cov = Cov2::new(q_star, c * q_star, q_star)?;
    Ok((sigma_b2 + sigma_w2 * f_phi(&cov, phi)?) / q_star)
}

/// Stable correlation fixed point. Returns `Converged(1.0)` whenever
/// `chi_1 <= 1` (`c* = 1` is then stable); in the chaotic regime iterates the
/// off-diagonal map from `c_0 = 0.5` with damping.
pub fn find_cstar(
    phi: &Nonlinearity,
    q_star: f64,
    sigma_w2: f64,
    sigma_b2: f64,
) -> Result<FixedPoint> {
    if q_star < 0.0 {
        return Err(CoreError::NegativeQ(q_star));
    }
    let x1 = chi1(phi, q_star, sigma_w2)?;
    if q_star == 0.0 {
        return if x1 <= 1.0 {
            Ok(FixedPoint::Converged(1.0))
        } else {
            Ok(FixedPoint::NotConverged(0.0))
        };
    }
    let c0 = 0.5;
    let fixed_at = |c: f64| -> Result<bool> {
        Ok((corr_map(phi, q_star, sigma_w2, sigma_b2, c)? - c).abs() <= FP_TOL * (1.0 + c.abs()))
    };
    if fixed_at(c0)? && fixed_at(0.25)? && fixed_at(0.75)? {
        return Ok(FixedPoint::Marginal(c0));
    }
    if x1 <= 1.0 {
        return Ok(FixedPoint::Converged(1.0));
    }
    let mut c = c0;
    for _ in 0..FP_MAX_ITERS {
        let mapped = corr_map(phi, q_star, sigma_w2, sigma_b2, c)?;
        let next = (c + FP_DAMPING * (mapped - c)).clamp(-1.0, 1.0);
        if (next - c).abs() < FP_TOL * (1.0 + next.abs()) {
            return Ok(FixedPoint::Converged(next));
        }
        c = next;
    }
    Ok(FixedPoint::NotConverged(c))
}

/// Depth scales of convergence toward the fixed points.
#[derive(Debug, Clone, Copy)]
pub struct DepthScales {
    /// `xi_q` from `1/xi_q = -log[chi_1 + sigma_w^2 <phi'' phi>_{q*}]`.
    pub xi_q: Option<f64>,
    /// `xi_c` from `1/xi_c = -log[sigma_w^2 E phi'(u1*) phi'(u2*)]` at `c*`.
    pub xi_c: Option<f64>,
}

fn scale_from_factor(factor: f64) -> Result<Option<f64>> {
    if factor <= 0.0 {
        return Err(CoreError::LogOfNonPositive(factor));
    }
    if (factor - 1.0).abs() <= CRIT_BAND {
        return Ok(Some(f64::INFINITY));
    }
    if factor > 1.0 {
        // Expanding direction: no decay scale is defined.
        return Ok(None);
    }
    Ok(Some(-1.0 / factor.ln()))
}

pub fn depth_scales(
    phi: &Nonlinearity,
    q_star: f64,
    c_star: f64,
    sigma_w2: f64,
) -> Result<DepthScales> {
    if q_star < 0.0 {
        return Err(CoreError::NegativeQ(q_star));
    }
    let x1 = chi1(phi, q_star, sigma_w2)?;
    let factor_q = x1 + sigma_w2 * gauss1d(|z| phi.d2(z) * phi.value(z), q_star)?;
    let cov = Cov2::new(q_star, c_star * q_star, q_star)?;
    let factor_c = sigma_w2 * f_phi_prime(&cov, phi)?;
    Ok(DepthScales {
        xi_q: scale_from_factor(factor_q)?,
        xi_c: scale_from_factor(factor_c)?,
    })
}

/// Classify one `(sigma_b^2, sigma_w^2)` point.
pub fn phase_classify(phi: &Nonlinearity, sigma_b2: f64, sigma_w2: f64) -> Result<PhasePoint> {
    let q_fp = find_qstar(phi, sigma_b2, sigma_w2)?;
    let mut status = String::from("ok");
    let phase;
    let (mut x1, mut x_par, mut c_star) = (f64::NAN, f64::NAN, f64::NAN);
    let (mut xi_q, mut xi_c) = (None, None);

    match q_fp {
        FixedPoint::NotConverged(last) => {
            // A divergent diagonal still admits a classification when chi1
            // does not depend on q at all (ReLU and linear families): probe
            // at two separated scales.
            let probe = last.abs().max(1.0);
            let a = chi1(phi, probe, sigma_w2)?;
            let b = chi1(phi, 2.0 * probe + 1.0, sigma_w2)?;
            if (a - b).abs() < 1e-9 {
                x1 = a;
                phase = if (x1 - 1.0).abs() <= CRIT_BAND {
                    Phase::Critical
                } else if x1 < 1.0 {
                    Phase::Ordered
                } else {
                    Phase::Chaotic
                };
                status = "q* did not converge; classified by scale-free chi1".into();
            } else {
                phase = Phase::NoFixedPoint;
                status = "q* did not converge".into();
            }
        }
        FixedPoint::Converged(q) | FixedPoint::Marginal(q) => {
            if matches!(q_fp, FixedPoint::Marginal(_)) {
                status = "q map marginal: every q is fixed".into();
            }
            x1 = chi1(phi, q, sigma_w2)?;
            x_par = chi_parallel(phi, q, sigma_w2)?;
            phase = if (x1 - 1.0).abs() <= CRIT_BAND {
                Phase::Critical
            } else if x1 < 1.0 {
                Phase::Ordered
            } else {
                Phase::Chaotic
            };
            let c_fp = find_cstar(phi, q, sigma_w2, sigma_b2)?;
            c_star = c_fp.value();
            if let FixedPoint::Marginal(_) = c_fp {
                status = "c map marginal: every c is fixed".into();
            }
            if q > 0.0 || phase != Phase::Chaotic {
                match depth_scales(phi, q, c_star, sigma_w2) {
                    Ok(ds) => {
                        xi_q = ds.xi_q;
                        xi_c = ds.xi_c;
                    }
                    Err(e) => status = format!("depth scales: {e}"),
                }
            }
        }
    }

    Ok(PhasePoint {
        sigma_b2,
        sigma_w2,
        q_star: q_fp,
        chi1: x1,
        chi_parallel: x_par,
        c_star,
        xi_q,
        xi_c,
        phase,
        status,
    })
}

/// Sweep a grid; per-point failures are recorded in the row status and never
/// abort the sweep.
pub fn phase_diagram(
    phi: &Nonlinearity,
    sigma_b2_grid: &[f64],
    sigma_w2_grid: &[f64],
) -> Vec<PhasePoint> {
    let mut rows = Vec::with_capacity(sigma_b2_grid.len() * sigma_w2_grid.len());
    for &sb2 in sigma_b2_grid {
        for &sw2 in sigma_w2_grid {
            match phase_classify(phi, sb2, sw2) {
                Ok(p) => rows.push(p),
                Err(e) => rows.push(PhasePoint {
                    sigma_b2: sb2,
                    sigma_w2: sw2,
                    q_star: FixedPoint::NotConverged(f64::NAN),
                    chi1: f64::NAN,
                    chi_parallel: f64::NAN,
                    c_star: f64::NAN,
                    xi_q: None,
                    xi_c: None,
                    phase: Phase::NoFixedPoint,
                    status: format!("error: {e}"),
                }),
            }
        }
    }
    rows
}
