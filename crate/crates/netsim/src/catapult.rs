//! Large-learning-rate dynamics: the two-variable catapult map, its regime
//! classification, the critical-slowdown scan, and exact gradient descent on
//! the two-layer linear (uv) model it is derived from.

use ndarray::{Array1, Array2};

use crate::error::NetsimError;
use crate::mlp::top_eigenvalue;
use crate::Result;

/// One step of the catapult trajectory.
#[derive(Debug, Clone, Copy)]
pub struct CatapultStep {
    pub t: usize,
    pub f: f64,
    pub lambda: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct CatapultTrajectory {
    pub steps: Vec<CatapultStep>,
    pub diverged: bool,
}

impl CatapultTrajectory {
    pub fn peak_abs_f(&self) -> f64 {
        self.steps.iter().map(|s| s.f.abs()).fold(0.0, f64::max)
    }

    pub fn final_step(&self) -> &CatapultStep {
        self.steps.last().expect("nonempty")
    }
}

/// Iterate the closed two-variable map of the single-sample uv model:
/// `f <- f (1 - eta lam + eta^2 f^2 / n)`,
/// `lam <- lam + (eta f^2 / n)(eta lam - 4)`.
///
/// The lambda update carries a single factor of eta; that is what exact
/// parameter-space gradient descent on `f = v^T u x / sqrt(n)` with loss
/// `f^2/2` yields, and the uv reduction below reproduces it to 1e-10.
/// Divergence is recorded in the trajectory, never raised.
pub fn catapult_map(f0: f64, lambda0: f64, n: f64, eta: f64, steps: usize) -> CatapultTrajectory {
    let mut f = f0;
    let mut lam = lambda0;
    let mut out = CatapultTrajectory {
        steps: Vec::with_capacity(steps + 1),
        diverged: false,
    };
    for t in 0..=steps {
        let loss = 0.5 * f * f;
        out.steps.push(CatapultStep { t, f, lambda: lam, loss });
        if !f.is_finite() || !lam.is_finite() || loss > 1e250 {
            out.diverged = true;
            break;
        }
        if t == steps {
            break;
        }
        let f_next = f * (1.0 - eta * lam + eta * eta * f * f / n);
        let lam_next = lam + (eta * f * f / n) * (eta * lam - 4.0);
        f = f_next;
        lam = lam_next;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CatapultRegime {
    Ntk,
    Catapult,
    Divergent,
}

impl std::fmt::Display for CatapultRegime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CatapultRegime::Ntk => "ntk",
            CatapultRegime::Catapult => "catapult",
            CatapultRegime::Divergent => "divergent",
        };
        write!(f, "{s}")
    }
}

/// Classify a learning rate against the minimal model's thresholds
/// `2/lambda_0` (curvature adaptation sets in) and `4/lambda_0` (divergence).
pub fn catapult_regime(eta: f64, lambda0: f64) -> CatapultRegime {
    if eta < 2.0 / lambda0 {
        CatapultRegime::Ntk
    } else if eta <= 4.0 / lambda0 {
        CatapultRegime::Catapult
    } else {
        CatapultRegime::Divergent
    }
}

/// Steps needed to reach `loss < epsilon`, per learning rate.
#[derive(Debug, Clone)]
pub struct TEpsilonRow {
    pub eta: f64,
    /// `None` when the trajectory diverged or hit the step cap first.
    pub steps_to_epsilon: Option<usize>,
    pub capped: bool,
}

/// Scan learning rates for the time-to-epsilon divergence near the critical
/// learning rate. All runs start from `f0 = 1`.
pub fn t_epsilon_scan(
    lambda0: f64,
    n: f64,
    epsilon: f64,
    etas: &[f64],
    step_cap: usize,
) -> Vec<TEpsilonRow> {
    etas.iter()
        .map(|&eta| {
            let traj = catapult_map(1.0, lambda0, n, eta, step_cap);
            let hit = traj
                .steps
                .iter()
                .find(|s| s.loss < epsilon)
                .map(|s| s.t);
            TEpsilonRow {
                eta,
                steps_to_epsilon: if traj.diverged { None } else { hit },
                capped: !traj.diverged && hit.is_none(),
            }
        })
        .collect()
}

/// One recorded step of uv-model training.
#[derive(Debug, Clone)]
pub struct UvStep {
    pub t: usize,
    pub f: Vec<f64>,
    pub residual: Vec<f64>,
    /// NTK matrix `Theta_{ab} = (|v|^2 x_a.x_b + x_a^T u^T u x_b) / (n m)`,
    /// flattened row-major.
    pub theta: Vec<f64>,
    pub projected_kernel: f64,
    pub lambda_top: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct UvTrajectory {
    pub steps: Vec<UvStep>,
    pub diverged: bool,
}

/// Exact full-batch gradient descent on `f(x) = v^T u x / sqrt(n)` with loss
/// `(1/2m) sum_a R_a^2`, recording the residual, the NTK matrix, its
/// projection onto the residual, and the top eigenvalue.
pub fn uv_model_train(
    u0: &Array2<f64>,
    v0: &Array1<f64>,
    inputs: &Array2<f64>,
    targets: &Array1<f64>,
    eta: f64,
    steps: usize,
) -> Result<UvTrajectory> {
    let n = v0.len();
    let n0 = u0.ncols();
    let m = inputs.nrows();
    if u0.nrows() != n || inputs.ncols() != n0 || targets.len() != m {
        return Err(NetsimError::ShapeMismatch(format!(
            "u {}x{}, v {}, X {}x{}, y {}",
            u0.nrows(),
            u0.ncols(),
            n,
            inputs.nrows(),
            inputs.ncols(),
            targets.len()
        )));
    }
    let sqrt_n = (n as f64).sqrt();
    let mut u = u0.clone();
    let mut v = v0.clone();
    let mut out = UvTrajectory {
        steps: Vec::new(),
        diverged: false,
    };

    for t in 0..=steps {
        // f_a = v^T u x_a / sqrt(n)
        let ux = u.dot(&inputs.t()); // n x m
        let f = ux.t().dot(&v) / sqrt_n; // m
        let resid = &f - targets;
        let loss = resid.dot(&resid) / (2.0 * m as f64);

        // Theta_{ab} = (|v|^2 x_a.x_b + (u x_a).(u x_b)) / (n m)
        let v2 = v.dot(&v);
        let xgram = inputs.dot(&inputs.t());
        let ugram = ux.t().dot(&ux);
        let mut theta = Array2::<f64>::zeros((m, m));
        for a in 0..m {
            for b in 0..m {
                theta[(a, b)] = (v2 * xgram[(a, b)] + ugram[(a, b)]) / (n as f64 * m as f64);
            }
        }
        let projected = resid.dot(&theta.dot(&resid));
        let lam = top_eigenvalue(&theta);
        out.steps.push(UvStep {
            t,
            f: f.to_vec(),
            residual: resid.to_vec(),
            theta: theta.iter().cloned().collect(),
            projected_kernel: projected,
            lambda_top: lam,
            loss,
        });
        if !loss.is_finite() || loss > crate::train::DIVERGENCE_CAP {
            out.diverged = true;
            break;
        }
        if t == steps {
            break;
        }

        // u_{ia} -= eta/(m sqrt n) v_i (X^T R)_a ; v_i -= eta/(m sqrt n) (u X^T R)_i
        let xr = inputs.t().dot(&resid); // n0
        let coef = eta / (m as f64 * sqrt_n);
        let u_step = {
            let mut s = Array2::<f64>::zeros((n, n0));
            for i in 0..n {
                for a in 0..n0 {
                    s[(i, a)] = v[i] * xr[a];
                }
            }
            s
        };
        let v_step = u.dot(&xr);
        u.scaled_add(-coef, &u_step);
        v.scaled_add(-coef, &v_step);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::StandardNormal;

    use crate::rng::RngPlan;

    #[test]
    fn regimes_by_threshold() {
        assert_eq!(catapult_regime(1.0 / 2.0, 2.0), CatapultRegime::Ntk);
        assert_eq!(catapult_regime(3.0 / 2.0, 2.0), CatapultRegime::Catapult);
        assert_eq!(catapult_regime(5.0 / 2.0, 2.0), CatapultRegime::Divergent);
    }

    #[test]
    fn ntk_regime_keeps_lambda_and_converges() {
        let traj = catapult_map(1.0, 2.0, 1e8, 0.9, 400);
        assert!(!traj.diverged);
        let last = traj.final_step();
        assert!((last.lambda - 2.0).abs() < 1e-6 * 2.0);
        assert!(last.f.abs() < 1e-10);
    }

    #[test]
    fn catapult_regime_rises_then_converges() {
        let n = 1e6;
        let traj = catapult_map(1.0, 2.0, n, 1.5, 4000);
        assert!(!traj.diverged);
        let last = traj.final_step();
        assert!(last.loss < 1e-10, "final loss {}", last.loss);
        assert!(1.5 * last.lambda < 2.0, "final eta*lambda {}", 1.5 * last.lambda);
        assert!(traj.peak_abs_f() >= 0.1 * n.sqrt(), "peak {}", traj.peak_abs_f());
    }

    #[test]
    fn beyond_four_over_lambda_diverges() {
        let traj = catapult_map(1.0, 2.0, 1e6, 2.1, 4000);
        assert!(traj.diverged);
    }

    #[test]
    fn single_sample_uv_reduces_to_catapult_map() {
        // (x, y) = (1, 0), m = n0 = 1: the uv trajectories and the map agree
        // to 1e-10 over 500 steps.
        let n = 64usize;
        let plan = RngPlan::new(301);
        let mut rng = plan.substream(0);
        let u0 = Array2::from_shape_fn((n, 1), |_| rng.sample::<f64, _>(StandardNormal));
        let v0 = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
        let x = array![[1.0]];
        let y = array![0.0];
        let eta = 1.3;
        let uv = uv_model_train(&u0, &v0, &x, &y, eta, 500).unwrap();
        let f0 = uv.steps[0].f[0];
        let lam0 = uv.steps[0].lambda_top;
        let map = catapult_map(f0, lam0, n as f64, eta, 500);
        for (a, b) in uv.steps.iter().zip(&map.steps) {
            assert!(
                (a.f[0] - b.f).abs() < 1e-10,
                "t = {}: f {} vs {}",
                a.t,
                a.f[0],
                b.f
            );
            assert!(
                (a.lambda_top - b.lambda).abs() < 1e-10,
                "t = {}: lambda {} vs {}",
                a.t,
                a.lambda_top,
                b.lambda
            );
        }
    }

    #[test]
    fn frozen_when_targets_equal_initial_outputs() {
        let n = 16usize;
        let plan = RngPlan::new(302);
        let mut rng = plan.substream(0);
        let u0 = Array2::from_shape_fn((n, 2), |_| rng.sample::<f64, _>(StandardNormal));
        let v0 = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
        let x = array![[1.0, 0.0], [0.0, 1.0]];
        let sqrt_n = (n as f64).sqrt();
        let f0 = x.dot(&u0.t()).dot(&v0) / sqrt_n;
        let uv = uv_model_train(&u0, &v0, &x, &f0, 0.7, 50).unwrap();
        for s in &uv.steps {
            for (a, b) in s.f.iter().zip(f0.iter()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn t_epsilon_product_is_roughly_constant() {
        let lambda0 = 2.0;
        let eta_crit = 2.0 / lambda0;
        let etas: Vec<f64> = [0.99, 0.995, 0.999].iter().map(|c| c * eta_crit).collect();
        let rows = t_epsilon_scan(lambda0, 1e6, 1e-8, &etas, 200_000);
        let mut products = Vec::new();
        for r in &rows {
            let t = r.steps_to_epsilon.expect("converges below eta_crit") as f64;
            products.push(t * (eta_crit - r.eta).abs());
        }
        let mean: f64 = products.iter().sum::<f64>() / products.len() as f64;
        for p in &products {
            assert!(
                (p - mean).abs() / mean < 0.5,
                "products {products:?} not within +/-50%"
            );
        }
        // far below the critical rate the approach is fast
        let quick = t_epsilon_scan(lambda0, 1e6, 1e-8, &[0.5], 200_000);
        assert!(quick[0].steps_to_epsilon.unwrap() < rows[0].steps_to_epsilon.unwrap());
        // at the critical rate exactly, the map stalls at the cap
        let stall = t_epsilon_scan(lambda0, 1e12, 1e-8, &[eta_crit], 2_000);
        assert!(stall[0].capped);
    }
}
