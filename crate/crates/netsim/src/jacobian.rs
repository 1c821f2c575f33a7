//! Input-output Jacobian statistics of critical ReLU networks and the
//! equivalent dropout-linear matrix model.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use widthlab_core::arch::{ArchSpec, WidthProfile};

use crate::error::NetsimError;
use crate::estimate::{block_jackknife, chunked_sums};
use crate::mlp::{init_network, input_jacobian, Parameterization};
use crate::rng::RngPlan;
use crate::Result;

/// Monte Carlo second and fourth moments of one Jacobian entry
/// `d f / d x_0`, over fresh initializations (jackknife errors).
#[derive(Debug, Clone)]
pub struct JacobianMoments {
    pub m2: (f64, f64),
    pub m4: (f64, f64),
    pub n_samples: usize,
}

pub fn empirical_jacobian_moments(
    arch: &ArchSpec,
    widths: &WidthProfile,
    x: &[f64],
    n_samples: usize,
    plan: &RngPlan,
) -> Result<JacobianMoments> {
    if x.iter().all(|&v| v == 0.0) {
        return Err(NetsimError::ZeroInput);
    }
    let arch = arch.clone();
    let widths = widths.clone();
    let x = x.to_vec();
    let chunks = chunked_sums(plan, n_samples, 2, move |_, rng, out| {
        let net = init_network(&arch, &widths, Parameterization::Standard, rng)
            .expect("validated dimensions");
        let j = input_jacobian(&net, &x).expect("scalar output")[0];
        out[0] = j * j;
        out[1] = j * j * j * j;
    });
    let m2 = block_jackknife(&chunks, |s, n| s[0] / n as f64);
    let m4 = block_jackknife(&chunks, |s, n| s[1] / n as f64);
    Ok(JacobianMoments {
        m2,
        m4,
        n_samples,
    })
}

/// One draw of the dropout-linear model
/// `W^(L+1) D^(L) W^(L) ... D^(1) W^(1) x` with critical weight scaling
/// `W ~ sqrt(2/n_in) N(0,1)` and iid Bernoulli(1/2) masks; scalar output.
pub fn sample_dropout_linear(
    widths: &WidthProfile,
    x: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    sample_dropout_linear_with_keep(widths, x, 0.5, rng)
}

/// [`sample_dropout_linear`] with an explicit mask keep-probability;
/// `p_keep = 1` degenerates to the plain linear matrix product.
pub fn sample_dropout_linear_with_keep(
    widths: &WidthProfile,
    x: &[f64],
    p_keep: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if x.iter().all(|&v| v == 0.0) {
        return Err(NetsimError::ZeroInput);
    }
    if x.len() != widths.input_dim {
        return Err(NetsimError::ShapeMismatch(format!(
            "input {} vs n0 {}",
            x.len(),
            widths.input_dim
        )));
    }
    let mut state: Vec<f64> = x.to_vec();
    for &n_out in widths.widths.iter() {
        let n_in = state.len();
        let sd = (2.0 / n_in as f64).sqrt();
        let mut next = vec![0.0f64; n_out];
        for item in next.iter_mut() {
            // The masks are iid and independent of the weights, so masked
            // rows simply skip their weight draws.
            let keep = p_keep >= 1.0 || rng.random::<f64>() < p_keep;
            if keep {
                let mut acc = 0.0;
                for &s in &state {
                    acc += sd * rng.sample::<f64, _>(StandardNormal) * s;
                }
                *item = acc;
            }
        }
        state = next;
    }
    // final read-out row
    let n_in = state.len();
    let sd = (2.0 / n_in as f64).sqrt();
    let mut acc = 0.0;
    for &s in &state {
        acc += sd * rng.sample::<f64, _>(StandardNormal) * s;
    }
    Ok(acc)
}

/// Row of the dropout-linear Jacobian `e_1^T W^(L+1) D^(L) ... D^(1) W^(1)`,
/// i.e. `d z / d x_p` for every input coordinate `p`.
pub fn dropout_linear_jacobian(widths: &WidthProfile, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Build from the output side: r <- r W D progressively.
    let mut dims = vec![widths.input_dim];
    dims.extend(widths.widths.iter().copied());
    dims.push(1);
    // r starts as the single output row of W^(L+1)
    let mut r = vec![1.0f64];
    for level in (0..dims.len() - 1).rev() {
        let (n_in, n_out) = (dims[level], dims[level + 1]);
        let sd = (2.0 / n_in as f64).sqrt();
        // weights of this layer: n_out x n_in
        let mut next = vec![0.0f64; n_in];
        for i in 0..n_out {
            let ri = r[i];
            for item in next.iter_mut() {
                *item += ri * sd * rng.sample::<f64, _>(StandardNormal);
            }
        }
        // mask applies to the inputs of this layer (hidden layers only)
        if level > 0 {
            for item in next.iter_mut() {
                let keep: bool = rng.random();
                if !keep {
                    *item = 0.0;
                }
            }
        }
        r = next;
    }
    r
}

/// Two-sample Kolmogorov-Smirnov distance.
pub fn ks_distance(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let va = a[i];
        let vb = b[j];
        if va <= vb {
            i += 1;
        }
        if vb <= va {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use widthlab_core::nonlin::Nonlinearity;

    #[test]
    fn ks_distance_of_identical_samples_is_zero() {
        let mut a = vec![0.3, -1.0, 0.5, 2.0];
        let mut b = a.clone();
        assert_eq!(ks_distance(&mut a, &mut b), 0.0);
    }

    #[test]
    fn jacobian_second_moment_is_two_over_n0() {
        let widths = WidthProfile::new(vec![24, 24], 4).unwrap();
        let arch = ArchSpec::fc(2, 4, 0.0, 2.0, Nonlinearity::Relu).unwrap();
        let plan = RngPlan::new(201);
        let est =
            empirical_jacobian_moments(&arch, &widths, &[1.0, -0.5, 0.25, 0.8], 30_000, &plan)
                .unwrap();
        assert!(
            (est.m2.0 - 0.5).abs() < 3.0 * est.m2.1,
            "m2 {:?} vs 0.5",
            est.m2
        );
    }

    #[test]
    fn jacobian_moment_scale_invariance() {
        // The Jacobian-entry distribution is the same for x and 3x.
        let widths = WidthProfile::new(vec![16, 16], 3).unwrap();
        let arch = ArchSpec::fc(2, 3, 0.0, 2.0, Nonlinearity::Relu).unwrap();
        let plan = RngPlan::new(202);
        let x1 = [0.4, -0.7, 1.1];
        let x3: Vec<f64> = x1.iter().map(|v| 3.0 * v).collect();
        let a = empirical_jacobian_moments(&arch, &widths, &x1, 40_000, &plan).unwrap();
        let b = empirical_jacobian_moments(&arch, &widths, &x3, 40_000, &plan.fork(3)).unwrap();
        let comb = (a.m2.1.powi(2) + b.m2.1.powi(2)).sqrt();
        assert!((a.m2.0 - b.m2.0).abs() < 4.0 * comb);
    }

    #[test]
    fn dropout_second_moments_hand_wick() {
        // Hand Wick at L = 1, |x|^2 = 1: each hidden layer contributes a
        // factor 2 E[mask] = 1 on top of the base 2 |x|^2 / n0, so
        // E[z^2] = 2/n0 with masks on and 2^L * 2/n0 with masks forced to 1.
        let widths = WidthProfile::new(vec![8], 2).unwrap();
        let plan = RngPlan::new(203);
        let x = [0.6, -0.8]; // |x|^2 = 1
        let n = 200_000;
        let run = |p_keep: f64, offset: u64| {
            let (mut sum, mut sum2) = (0.0f64, 0.0f64);
            for i in 0..n {
                let z = sample_dropout_linear_with_keep(
                    &widths,
                    &x,
                    p_keep,
                    &mut plan.substream(offset + i),
                )
                .unwrap();
                sum += z * z;
                sum2 += z * z * z * z;
            }
            let mean = sum / n as f64;
            let se = ((sum2 / n as f64 - mean * mean) / n as f64).sqrt();
            (mean, se)
        };
        let (mean_half, se_half) = run(0.5, 0);
        assert!((mean_half - 1.0).abs() < 4.0 * se_half, "{mean_half} vs 1");
        let (mean_one, se_one) = run(1.0, n);
        assert!((mean_one - 2.0).abs() < 4.0 * se_one, "{mean_one} vs 2");
    }

    #[test]
    fn dropout_jacobian_matches_bruteforce_fourth_moment() {
        // MC fourth moment of the dropout-linear Jacobian entry vs the exact
        // path-sum enumeration (Gaussian weights, mu4 = 3), widths [2,2].
        let widths = WidthProfile::new(vec![2, 2], 3).unwrap();
        let plan = RngPlan::new(204);
        let n = 2_000_000usize;
        let (mut s2, mut s4, mut s8) = (0.0f64, 0.0f64, 0.0f64);
        for i in 0..n {
            let row = dropout_linear_jacobian(&widths, &mut plan.substream(i as u64));
            let j = row[0];
            s2 += j * j;
            s4 += j * j * j * j;
            s8 += j.powi(8);
        }
        let m2 = s2 / n as f64;
        let m4 = s4 / n as f64;
        let se4 = ((s8 / n as f64 - m4 * m4).max(0.0) / n as f64).sqrt();
        assert!((m2 - 2.0 / 3.0).abs() < 0.01, "m2 {m2}");
        let want = widthlab_core::finitewidth::path_moment_bruteforce(
            &widths,
            widthlab_core::finitewidth::PathMomentOrder::Fourth,
            3.0,
        )
        .unwrap();
        assert!(
            (m4 - want).abs() < 4.0 * se4,
            "m4 {m4} vs path enumeration {want} (se {se4})"
        );
    }
}
