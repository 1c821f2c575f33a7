//! Estimators over fresh network initializations.
//!
//! The heavy estimators sample networks with the weights marginalized layer
//! by layer: conditional on the previous layer's activations, the next
//! layer's preactivations over a fixed input set are iid Gaussian rows whose
//! covariance is the collective observable
//! `S = sigma_b^2 + sigma_w^2 (A^T A) / n`. Drawing from that conditional is
//! exact in distribution and replaces `n x n` weight materialization with
//! `n x m` normal draws, which is what makes 1e5-draw runs at width 2048
//! affordable. A materialized-network variant is kept for cross-validation
//! and for the parameterization-equivalence checks.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use widthlab_core::arch::{ArchKind, ArchSpec, WidthProfile};

use crate::error::NetsimError;
use crate::estimate::{block_jackknife, chunked_sums, estimate_mean, EstimatorResult};
use crate::mlp::{forward_batch, init_network_with_outputs, Parameterization};
use crate::rng::RngPlan;
use crate::Result;

/// Cholesky factor of a small symmetric PSD matrix (row-major, dim x dim),
/// with a relative jitter fallback for numerically semidefinite inputs.
fn small_cholesky(mat: &[f64], dim: usize) -> Vec<f64> {
    let mut m = mat.to_vec();
    let trace: f64 = (0..dim).map(|i| m[i * dim + i]).sum();
    let jitter = 1e-14 * trace.max(1e-300);
    for attempt in 0..3 {
        let mut l = vec![0.0f64; dim * dim];
        let mut ok = true;
        'outer: for i in 0..dim {
            for j in 0..=i {
                let mut s = m[i * dim + j];
                for k in 0..j {
                    s -= l[i * dim + k] * l[j * dim + k];
                }
                if i == j {
                    if s <= 0.0 {
                        ok = false;
                        break 'outer;
                    }
                    l[i * dim + i] = s.sqrt();
                } else {
                    l[i * dim + j] = s / l[j * dim + j];
                }
            }
        }
        if ok {
            return l;
        }
        let bump = jitter * 10f64.powi(attempt);
        for i in 0..dim {
            m[i * dim + i] += bump;
        }
    }
    // Fully degenerate: fall back to the diagonal square root.
    let mut l = vec![0.0f64; dim * dim];
    for i in 0..dim {
        l[i * dim + i] = m[i * dim + i].max(0.0).sqrt();
    }
    l
}

fn check_fc(arch: &ArchSpec, widths: &WidthProfile) -> Result<()> {
    if !matches!(arch.kind, ArchKind::Fc) {
        return Err(NetsimError::ShapeMismatch("fc architecture required".into()));
    }
    if widths.depth() != arch.depth_l || widths.input_dim != arch.input_dim {
        return Err(NetsimError::ShapeMismatch(
            "width profile inconsistent with architecture".into(),
        ));
    }
    Ok(())
}

/// Draw `keep` preactivation rows of layer `layer` (1-based; layer `L+1` is
/// the output) of one random network over the inputs (rows of `inputs`),
/// with weights marginalized exactly.
///
/// Returns a `keep x m` matrix.
pub fn sample_layer_rows(
    arch: &ArchSpec,
    widths: &WidthProfile,
    inputs: &Array2<f64>,
    layer: usize,
    keep: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Array2<f64>> {
    check_fc(arch, widths)?;
    if layer < 1 || layer > widths.depth() + 1 {
        return Err(NetsimError::ShapeMismatch(format!(
            "layer {layer} outside 1..={}",
            widths.depth() + 1
        )));
    }
    let m = inputs.nrows();
    let n0 = arch.input_dim as f64;

    // S^(1) from the inputs themselves (first layer is exactly Gaussian).
    let mut s = vec![0.0f64; m * m];
    for a in 0..m {
        for b in 0..m {
            let dot: f64 = inputs.row(a).dot(&inputs.row(b));
            s[a * m + b] = arch.sigma_b2 + arch.sigma_w2 * dot / n0;
        }
    }

    for level in 1..layer {
        // Draw the full layer at width n_level, then form the next S from
        // the realized activations.
        let n = widths.widths[level - 1];
        let l = small_cholesky(&s, m);
        let mut gram = vec![0.0f64; m * m];
        let mut z = vec![0.0f64; m];
        let mut g = vec![0.0f64; m];
        for _ in 0..n {
            for gi in g.iter_mut() {
                *gi = rng.sample(StandardNormal);
            }
            for a in 0..m {
                let mut acc = 0.0;
                for k in 0..=a {
                    acc += l[a * m + k] * g[k];
                }
                z[a] = arch.phi.value(acc);
            }
            for a in 0..m {
                for b in a..m {
                    gram[a * m + b] += z[a] * z[b];
                }
            }
        }
        for a in 0..m {
            for b in a..m {
                let v = arch.sigma_b2 + arch.sigma_w2 * gram[a * m + b] / n as f64;
                s[a * m + b] = v;
                s[b * m + a] = v;
            }
        }
    }

    // Draw the requested rows at the target layer.
    let l = small_cholesky(&s, m);
    let mut out = Array2::<f64>::zeros((keep, m));
    let mut g = vec![0.0f64; m];
    for r in 0..keep {
        for gi in g.iter_mut() {
            *gi = rng.sample(StandardNormal);
        }
        for a in 0..m {
            let mut acc = 0.0;
            for k in 0..=a {
                acc += l[a * m + k] * g[k];
            }
            out[(r, a)] = acc;
        }
    }
    Ok(out)
}

/// Empirical NNGP kernel: mean outer product of scalar-network outputs over
/// fresh initializations (weights marginalized exactly per draw).
pub fn empirical_nngp(
    arch: &ArchSpec,
    widths: &WidthProfile,
    inputs: &Array2<f64>,
    n_samples: usize,
    plan: &RngPlan,
) -> Result<EstimatorResult> {
    check_fc(arch, widths)?;
    let m = inputs.nrows();
    let layer = widths.depth() + 1;
    let arch = arch.clone();
    let widths = widths.clone();
    let inputs = inputs.clone();
    Ok(estimate_mean(plan, n_samples, m, m, move |_, rng, out| {
        let row = sample_layer_rows(&arch, &widths, &inputs, layer, 1, rng)
            .expect("validated dimensions");
        for a in 0..m {
            for b in 0..m {
                out[a * m + b] = row[(0, a)] * row[(0, b)];
            }
        }
    }))
}

/// Empirical NNGP kernel from fully materialized networks (slow path, used
/// to cross-validate the marginalized sampler and to compare
/// parameterizations).
pub fn empirical_nngp_networks(
    arch: &ArchSpec,
    widths: &WidthProfile,
    parameterization: Parameterization,
    inputs: &Array2<f64>,
    n_samples: usize,
    plan: &RngPlan,
) -> Result<EstimatorResult> {
    check_fc(arch, widths)?;
    let m = inputs.nrows();
    let arch = arch.clone();
    let widths = widths.clone();
    let x_t = inputs.t().to_owned();
    Ok(estimate_mean(plan, n_samples, m, m, move |_, rng, out| {
        let net = init_network_with_outputs(&arch, &widths, 1, parameterization, rng)
            .expect("validated dimensions");
        let f = forward_batch(&net, &x_t).expect("validated dimensions");
        let row = f.output().row(0);
        for a in 0..m {
            for b in 0..m {
                out[a * m + b] = row[a] * row[b];
            }
        }
    }))
}

/// Both fourth-cumulant estimators at a single input: the single-neuron
/// quartic `(E z^4 - 3 (E z^2)^2) / 3` and the cross-neuron `Cov(z_i^2, z_j^2)`,
/// with delete-one-block jackknife standard errors.
#[derive(Debug, Clone)]
pub struct Kappa4Estimators {
    pub single_neuron: (f64, f64),
    pub cross_neuron: (f64, f64),
    pub k_diag: (f64, f64),
    pub n_samples: usize,
}

pub fn empirical_kappa4(
    arch: &ArchSpec,
    widths: &WidthProfile,
    x: &[f64],
    layer: usize,
    n_samples: usize,
    plan: &RngPlan,
) -> Result<Kappa4Estimators> {
    check_fc(arch, widths)?;
    let inputs = Array2::from_shape_vec((1, x.len()), x.to_vec())
        .map_err(|e| NetsimError::ShapeMismatch(e.to_string()))?;
    let arch = arch.clone();
    let widths = widths.clone();
    // sums: [z1^2 + z2^2, z1^4 + z2^4, z1^2 z2^2, count2]
    let chunks = chunked_sums(plan, n_samples, 3, move |_, rng, out| {
        let rows = sample_layer_rows(&arch, &widths, &inputs, layer, 2, rng)
            .expect("validated dimensions");
        let (z1, z2) = (rows[(0, 0)], rows[(1, 0)]);
        out[0] = 0.5 * (z1 * z1 + z2 * z2);
        out[1] = 0.5 * (z1 * z1 * z1 * z1 + z2 * z2 * z2 * z2);
        out[2] = z1 * z1 * z2 * z2;
    });
    let single = block_jackknife(&chunks, |s, n| {
        let m2 = s[0] / n as f64;
        let m4 = s[1] / n as f64;
        (m4 - 3.0 * m2 * m2) / 3.0
    });
    let cross = block_jackknife(&chunks, |s, n| {
        let m2 = s[0] / n as f64;
        let m22 = s[2] / n as f64;
        m22 - m2 * m2
    });
    let kdiag = block_jackknife(&chunks, |s, n| s[0] / n as f64);
    Ok(Kappa4Estimators {
        single_neuron: single,
        cross_neuron: cross,
        k_diag: kdiag,
        n_samples,
    })
}

/// Second and fourth moments (`E z^2`, `E z^4 / 3`) of one preactivation at
/// `layer`, with jackknife errors — the deep-linear four-point observable.
#[derive(Debug, Clone)]
pub struct LayerMoments {
    pub m2: (f64, f64),
    pub g4: (f64, f64),
    pub n_samples: usize,
}

pub fn empirical_layer_moments(
    arch: &ArchSpec,
    widths: &WidthProfile,
    x: &[f64],
    layer: usize,
    n_samples: usize,
    plan: &RngPlan,
) -> Result<LayerMoments> {
    check_fc(arch, widths)?;
    let inputs = Array2::from_shape_vec((1, x.len()), x.to_vec())
        .map_err(|e| NetsimError::ShapeMismatch(e.to_string()))?;
    let arch = arch.clone();
    let widths = widths.clone();
    let chunks = chunked_sums(plan, n_samples, 2, move |_, rng, out| {
        let rows = sample_layer_rows(&arch, &widths, &inputs, layer, 1, rng)
            .expect("validated dimensions");
        let z = rows[(0, 0)];
        out[0] = z * z;
        out[1] = z * z * z * z;
    });
    let m2 = block_jackknife(&chunks, |s, n| s[0] / n as f64);
    let g4 = block_jackknife(&chunks, |s, n| s[1] / n as f64 / 3.0);
    Ok(LayerMoments {
        m2,
        g4,
        n_samples,
    })
}

/// Collective observable `Sigma = sigma_b^2 + (sigma_w^2 / n) sum_j phi(z_j)^2`
/// at the final hidden layer: per-draw value (for self-averaging checks).
pub fn sample_collective_observable(
    arch: &ArchSpec,
    widths: &WidthProfile,
    x: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    check_fc(arch, widths)?;
    let inputs = Array2::from_shape_vec((1, x.len()), x.to_vec())
        .map_err(|e| NetsimError::ShapeMismatch(e.to_string()))?;
    let depth = widths.depth();
    let n_last = widths.widths[depth - 1];
    let rows = sample_layer_rows(arch, widths, &inputs, depth, n_last, rng)?;
    let mean_sq: f64 = rows
        .column(0)
        .iter()
        .map(|&z| arch.phi.value(z).powi(2))
        .sum::<f64>()
        / n_last as f64;
    Ok(arch.sigma_b2 + arch.sigma_w2 * mean_sq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use widthlab_core::nonlin::Nonlinearity;
    use widthlab_core::ArchSpec;

    #[test]
    fn linear_network_kernel_is_exact_at_any_width() {
        // For linear activations the empirical NNGP equals K^0-recursion
        // exactly in expectation at finite width.
        let arch = ArchSpec::fc(2, 2, 0.0, 1.0, Nonlinearity::Linear).unwrap();
        let widths = WidthProfile::uniform(16, 2, 2).unwrap();
        let inputs = ndarray::array![[1.0, 0.0], [0.6, 0.8]];
        let plan = RngPlan::new(101);
        let est = empirical_nngp(&arch, &widths, &inputs, 40_000, &plan).unwrap();
        // analytic: K = x.x'/2 at every layer (sigma_w2 = 1)
        for a in 0..2 {
            for b in 0..2 {
                let want = inputs.row(a).dot(&inputs.row(b)) / 2.0;
                let got = est.get(a, b);
                assert!(
                    (got - want).abs() < 4.0 * est.se(a, b),
                    "({a},{b}): {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn marginalized_and_materialized_samplers_agree() {
        let arch = ArchSpec::fc(2, 2, 0.05, 1.5, Nonlinearity::Tanh).unwrap();
        let widths = WidthProfile::uniform(64, 2, 2).unwrap();
        let inputs = ndarray::array![[1.0, 0.0], [0.3, -0.9]];
        let plan = RngPlan::new(102);
        let fast = empirical_nngp(&arch, &widths, &inputs, 60_000, &plan).unwrap();
        let slow = empirical_nngp_networks(
            &arch,
            &widths,
            Parameterization::Standard,
            &inputs,
            60_000,
            &plan.fork(1),
        )
        .unwrap();
        for a in 0..2 {
            for b in 0..2 {
                let comb = (fast.se(a, b).powi(2) + slow.se(a, b).powi(2)).sqrt();
                assert!(
                    (fast.get(a, b) - slow.get(a, b)).abs() < 4.0 * comb,
                    "({a},{b}): {} vs {}",
                    fast.get(a, b),
                    slow.get(a, b)
                );
            }
        }
    }

    #[test]
    fn parameterizations_induce_the_same_prior() {
        let arch = ArchSpec::fc(2, 2, 0.05, 1.5, Nonlinearity::Tanh).unwrap();
        let widths = WidthProfile::uniform(48, 2, 2).unwrap();
        let inputs = ndarray::array![[1.0, 0.0], [0.3, -0.9]];
        let plan = RngPlan::new(103);
        let std_est = empirical_nngp_networks(
            &arch,
            &widths,
            Parameterization::Standard,
            &inputs,
            50_000,
            &plan,
        )
        .unwrap();
        let ntk_est = empirical_nngp_networks(
            &arch,
            &widths,
            Parameterization::Ntk,
            &inputs,
            50_000,
            &plan.fork(9),
        )
        .unwrap();
        for a in 0..2 {
            for b in 0..2 {
                let comb = (std_est.se(a, b).powi(2) + ntk_est.se(a, b).powi(2)).sqrt();
                assert!(
                    (std_est.get(a, b) - ntk_est.get(a, b)).abs() < 4.0 * comb,
                    "({a},{b})"
                );
            }
        }
    }

    #[test]
    fn first_layer_kappa4_vanishes() {
        let arch = ArchSpec::fc(2, 3, 0.0, 2.0, Nonlinearity::Relu).unwrap();
        let widths = WidthProfile::uniform(32, 2, 3).unwrap();
        let plan = RngPlan::new(104);
        let est = empirical_kappa4(&arch, &widths, &[0.9, -0.2, 0.5], 1, 30_000, &plan).unwrap();
        assert!(
            est.single_neuron.0.abs() < 3.0 * est.single_neuron.1,
            "single: {:?}",
            est.single_neuron
        );
        assert!(
            est.cross_neuron.0.abs() < 3.0 * est.cross_neuron.1,
            "cross: {:?}",
            est.cross_neuron
        );
    }
}
