//! Finite-difference measurement of the third and fourth contraction tensors
//! of the dynamical hierarchy: directional derivatives of the empirical
//! tangent kernel along output-gradient directions.

use ndarray::Array2;

use widthlab_core::finitewidth::{Tensor3, Tensor4};

use crate::error::NetsimError;
use crate::mlp::{backprop_grads, empirical_ntk, MlpParams};
use crate::Result;

/// Dense-gradient parameter cap for the finite-difference tensors.
pub const PARAM_CAP: usize = 100_000;

/// Default relative finite-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// Relative change allowed between the full-step and half-step estimates
/// before the measurement is declared noise-dominated.
const RICHARDSON_TOL: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct OsTensors {
    pub o3: Tensor3,
    pub o4: Option<Tensor4>,
}

/// Measure `O_3(x_i, x_j; x_k) = sum_mu dTheta(x_i,x_j)/dtheta_mu df(x_k)/dtheta_mu`
/// as the centered finite difference of the empirical NTK along the
/// unnormalized direction `grad f(x_k)`, with step
/// `h = fd_step (1 + |theta|) / |grad|`; `O_4` nests the same construction
/// once more. `s_max` selects 3 (O3 only) or 4 (both).
///
/// The O3 result is the half-step estimate, cross-checked against the
/// full-step one (noise floor => `StepTooSmall`).
pub fn measure_os(
    params: &MlpParams,
    inputs: &Array2<f64>,
    s_max: usize,
    fd_step: f64,
) -> Result<OsTensors> {
    if !(s_max == 3 || s_max == 4) {
        return Err(NetsimError::ShapeMismatch("s_max must be 3 or 4".into()));
    }
    let n_params = params.param_count();
    if n_params > PARAM_CAP {
        return Err(NetsimError::TooManyParameters {
            params: n_params,
            cap: PARAM_CAP,
        });
    }
    let m = inputs.nrows();
    let theta_norm = params.to_flat().iter().map(|v| v * v).sum::<f64>().sqrt();

    let grads: Vec<Vec<f64>> = (0..m)
        .map(|k| {
            backprop_grads(params, inputs.row(k).as_slice().expect("contiguous row"))
                .map(|g| g.to_flat())
        })
        .collect::<Result<_>>()?;
    let grad_norms: Vec<f64> = grads
        .iter()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300))
        .collect();

    let ntk_at = |base: &MlpParams, dir: &[f64], eps: f64| -> Result<Array2<f64>> {
        let mut shifted = base.clone();
        shifted.add_scaled(dir, eps);
        empirical_ntk(&shifted, inputs)
    };

    // O3 slice [., ., k] at a given step scale.
    let o3_slice = |base: &MlpParams, k: usize, h: f64| -> Result<Array2<f64>> {
        let plus = ntk_at(base, &grads[k], h)?;
        let minus = ntk_at(base, &grads[k], -h)?;
        Ok((&plus - &minus) / (2.0 * h))
    };

    let full_o3 = |base: &MlpParams, scale: f64| -> Result<Vec<Array2<f64>>> {
        (0..m)
            .map(|k| {
                let h = scale * (1.0 + theta_norm) / grad_norms[k];
                o3_slice(base, k, h)
            })
            .collect()
    };

    let o3_full_step = full_o3(params, fd_step)?;
    let o3_half_step = full_o3(params, fd_step / 2.0)?;
    let mut diff = 0.0f64;
    let mut scale = 0.0f64;
    for (a, b) in o3_full_step.iter().zip(&o3_half_step) {
        diff += (a - b).iter().map(|v| v * v).sum::<f64>();
        scale += b.iter().map(|v| v * v).sum::<f64>();
    }
    let rel_change = (diff / scale.max(1e-300)).sqrt();
    if rel_change > RICHARDSON_TOL {
        return Err(NetsimError::StepTooSmall { rel_change });
    }
    let o3 = Tensor3::from_fn(m, |i, j, k| o3_half_step[k][(i, j)]);

    if s_max == 3 {
        return Ok(OsTensors { o3, o4: None });
    }

    // O4[., ., k, l]: directional derivative of the O3 slice [., ., k]
    // along grad f(x_l). Gradients are re-evaluated at the shifted
    // parameters so the nested derivative differentiates O3 itself.
    let mut o4 = Tensor4::zeros(m);
    for l in 0..m {
        let h_l = fd_step * (1.0 + theta_norm) / grad_norms[l];
        let mut plus = params.clone();
        plus.add_scaled(&grads[l], h_l);
        let mut minus = params.clone();
        minus.add_scaled(&grads[l], -h_l);
        for k in 0..m {
            let h_k = fd_step * (1.0 + theta_norm) / grad_norms[k];
            // O3 at the shifted parameter points uses the shifted gradient
            // direction df(x_k)/dtheta evaluated there.
            let slice_at = |base: &MlpParams| -> Result<Array2<f64>> {
                let g =
                    backprop_grads(base, inputs.row(k).as_slice().expect("contiguous"))?
                        .to_flat();
                let p = ntk_at(base, &g, h_k)?;
                let mn = ntk_at(base, &g, -h_k)?;
                Ok((&p - &mn) / (2.0 * h_k))
            };
            let sp = slice_at(&plus)?;
            let sm = slice_at(&minus)?;
            let deriv = (&sp - &sm) / (2.0 * h_l);
            for i in 0..m {
                for j in 0..m {
                    o4.set(i, j, k, l, deriv[(i, j)]);
                }
            }
        }
    }
    Ok(OsTensors { o3, o4: Some(o4) })
}
