//! Analytic finite-width corrections: deep-linear Wick recursions, the
//! fourth-cumulant recursion with its ReLU/tanh solutions, Edgeworth-corrected
//! moments, the perturbative late-time NTK correction, ReLU path-sum Jacobian
//! moments, and chi-square log statistics.

use nalgebra::{DMatrix, DVector};

use crate::arch::{ArchKind, ArchSpec, WidthProfile};
use crate::error::CoreError;
use crate::gauss::gauss1d;
use crate::gp::SpectralKernel;
use crate::nonlin::Nonlinearity;
use crate::special::{digamma, trigamma};
use crate::Result;

/// Deep-linear two-point function `G_2^l = (sigma_w^2)^l G_2^0`.
pub fn deep_linear_g2(layer: usize, sigma_w2: f64, g2_0: f64) -> f64 {
    sigma_w2.powi(layer as i32) * g2_0
}

/// Deep-linear fourth moment `G_4^l = (1 + 2/n)^l (G_2^l)^2`, exact at finite
/// width; `width = None` takes the infinite-width limit `(G_2^l)^2`.
pub fn deep_linear_g4(layer: usize, width: Option<usize>, sigma_w2: f64, g2_0: f64) -> f64 {
    let g2l = deep_linear_g2(layer, sigma_w2, g2_0);
    match width {
        None => g2l * g2l,
        Some(n) => (1.0 + 2.0 / n as f64).powi(layer as i32) * g2l * g2l,
    }
}

/// `Var_K[sigma^2] = <sigma^4>_K - <sigma^2>_K^2`. ReLU closed form
/// `(5/4) K^2`; linear `2 K^2`.
pub fn var_sigma2(k: f64, phi: &Nonlinearity) -> Result<f64> {
    if k < 0.0 {
        return Err(CoreError::NegativeVariance(k));
    }
    match phi {
        Nonlinearity::Relu => Ok(1.25 * k * k),
        Nonlinearity::Linear => Ok(2.0 * k * k),
        _ => {
            let m4 = gauss1d(|z| phi.value(z).powi(4), k)?;
            let m2 = gauss1d(|z| phi.value(z).powi(2), k)?;
            Ok(m4 - m2 * m2)
        }
    }
}

/// `<sigma^2>_K` with closed forms where they exist.
fn sigma2_mean(k: f64, phi: &Nonlinearity) -> Result<f64> {
    match phi {
        Nonlinearity::Relu => Ok(0.5 * k),
        Nonlinearity::Linear => Ok(k),
        _ => gauss1d(|z| phi.value(z).powi(2), k),
    }
}

/// `chi_parallel` at a running diagonal `K` (not at the fixed point).
fn chi_parallel_at(k: f64, phi: &Nonlinearity, sigma_w2: f64) -> Result<f64> {
    match phi {
        Nonlinearity::Relu => Ok(sigma_w2 / 2.0),
        Nonlinearity::Linear => Ok(sigma_w2),
        _ => Ok(sigma_w2 / 2.0
            * gauss1d(
                |z| 2.0 * phi.d1(z).powi(2) + 2.0 * phi.value(z) * phi.d2(z),
                k,
            )?),
    }
}

/// Per-layer diagonal kernel and fourth cumulant.
#[derive(Debug, Clone, Copy)]
pub struct Kappa4Layer {
    /// Layer index in the 1-based convention: layer 1 is the first
    /// preactivation (exactly Gaussian), layer L+1 the output.
    pub layer: usize,
    pub k_diag: f64,
    pub kappa4: f64,
}

#[derive(Debug, Clone)]
pub struct Kappa4Profile {
    pub layers: Vec<Kappa4Layer>,
}

impl Kappa4Profile {
    pub fn output(&self) -> Kappa4Layer {
        *self.layers.last().expect("profile has at least one layer")
    }
}

/// Fourth-cumulant recursion at a single input:
/// `kappa_4^{(l+1)} = (C_W^2 / n_l) Var_K[sigma^2] + chi_par(K^{(l)})^2 kappa_4^{(l)}`
/// alongside the diagonal kernel recursion, starting from the exactly
/// Gaussian first layer (`kappa_4^{(1)} = 0`).
pub fn kappa4_recursion(
    arch: &ArchSpec,
    widths: &WidthProfile,
    input: &DVector<f64>,
) -> Result<Kappa4Profile> {
    if !matches!(arch.kind, ArchKind::Fc) {
        return Err(CoreError::InvalidArch("kappa4_recursion requires fc".into()));
    }
    if widths.depth() != arch.depth_l || widths.input_dim != arch.input_dim {
        return Err(CoreError::DimensionMismatch {
            expected: arch.depth_l,
            got: widths.depth(),
        });
    }
    if input.len() != arch.input_dim {
        return Err(CoreError::DimensionMismatch {
            expected: arch.input_dim,
            got: input.len(),
        });
    }
    let cw = arch.sigma_w2;
    let mut k = arch.sigma_b2 + cw * input.norm_squared() / arch.input_dim as f64;
    let mut kappa = 0.0;
    let mut layers = vec![Kappa4Layer {
        layer: 1,
        k_diag: k,
        kappa4: kappa,
    }];
    for (idx, &n) in widths.widths.iter().enumerate() {
        let chi = chi_parallel_at(k, &arch.phi, cw)?;
        kappa = cw * cw / n as f64 * var_sigma2(k, &arch.phi)? + chi * chi * kappa;
        k = arch.sigma_b2 + cw * sigma2_mean(k, &arch.phi)?;
        layers.push(Kappa4Layer {
            layer: idx + 2,
            k_diag: k,
            kappa4: kappa,
        });
    }
    Ok(Kappa4Profile { layers })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeworthKind {
    /// `E[z_i^4] = 3 K^2 + 3 kappa_4`.
    M4Single,
    /// `E[z_i^2 z_j^2] = K^2 + kappa_4` for distinct neurons.
    M2M2Cross,
}

/// Gaussian moments corrected to first order in the fourth cumulant.
pub fn edgeworth_moment(kind: EdgeworthKind, k: f64, kappa4: f64) -> f64 {
    match kind {
        EdgeworthKind::M4Single => 3.0 * k * k + 3.0 * kappa4,
        EdgeworthKind::M2M2Cross => k * k + kappa4,
    }
}

/// Inputs of the perturbative NTK correction: the spectral form of the
/// empirical NTK at initialization, the initial residual, and the measured
/// third/fourth contraction tensors over the training samples.
#[derive(Debug, Clone)]
pub struct PerturbationInputs {
    pub theta0: SpectralKernel,
    pub r0: DVector<f64>,
    pub o3: Tensor3,
    pub o4: Tensor4,
}

/// Dense rank-3 tensor over samples, symmetric in its first two slots.
#[derive(Debug, Clone)]
pub struct Tensor3 {
    m: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(m: usize) -> Self {
        Tensor3 {
            m,
            data: vec![0.0; m * m * m],
        }
    }

    pub fn from_fn<F: Fn(usize, usize, usize) -> f64>(m: usize, f: F) -> Self {
        let mut t = Tensor3::zeros(m);
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    t.set(i, j, k, f(i, j, k));
                }
            }
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.m + j) * self.m + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[(i * self.m + j) * self.m + k] = v;
    }

    /// Max asymmetry in the first two slots.
    pub fn slot12_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.m {
            for j in 0..self.m {
                for k in 0..self.m {
                    worst = worst.max((self.get(i, j, k) - self.get(j, i, k)).abs());
                }
            }
        }
        worst
    }

    /// Contract the third slot: `A_i[a,b] = sum_g T[a,b,g] v[g]`.
    pub fn contract3(&self, v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.m, self.m, |a, b| {
            (0..self.m).map(|g| self.get(a, b, g) * v[g]).sum()
        })
    }

    pub fn scale(&self, s: f64) -> Tensor3 {
        Tensor3 {
            m: self.m,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }
}

/// Dense rank-4 tensor over samples, symmetric in its first two slots.
#[derive(Debug, Clone)]
pub struct Tensor4 {
    m: usize,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(m: usize) -> Self {
        Tensor4 {
            m,
            data: vec![0.0; m * m * m * m],
        }
    }

    pub fn from_fn<F: Fn(usize, usize, usize, usize) -> f64>(m: usize, f: F) -> Self {
        let mut t = Tensor4::zeros(m);
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    for l in 0..m {
                        t.set(i, j, k, l, f(i, j, k, l));
                    }
                }
            }
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.data[((i * self.m + j) * self.m + k) * self.m + l]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, v: f64) {
        self.data[((i * self.m + j) * self.m + k) * self.m + l] = v;
    }

    /// Contract slots 3 and 4: `B_{ij}[a,b] = sum_{g,d} T[a,b,g,d] u[g] v[d]`.
    pub fn contract34(&self, u: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.m, self.m, |a, b| {
            let mut acc = 0.0;
            for g in 0..self.m {
                for d in 0..self.m {
                    acc += self.get(a, b, g, d) * u[g] * v[d];
                }
            }
            acc
        })
    }

    pub fn scale(&self, s: f64) -> Tensor4 {
        Tensor4 {
            m: self.m,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }
}

fn check_perturbation(p: &PerturbationInputs) -> Result<()> {
    let m = p.theta0.dim();
    if p.r0.len() != m || p.o3.dim() != m || p.o4.dim() != m {
        return Err(CoreError::DimensionMismatch {
            expected: m,
            got: p.r0.len(),
        });
    }
    let lam_max = p.theta0.eigenvalues[0];
    let lam_min = p.theta0.min_eigenvalue();
    if lam_min <= 1e-12 * lam_max.max(1e-300) {
        return Err(CoreError::ZeroEigenvalue(lam_min));
    }
    Ok(())
}

/// Shared evaluation of the time-dependent first-order NTK correction in the
/// eigenbasis of `Theta_0`. `t = +inf` gives the late-time limit.
fn theta1_at(p: &PerturbationInputs, t: f64) -> DMatrix<f64> {
    let m = p.theta0.dim();
    let lam = &p.theta0.eigenvalues;
    let v = &p.theta0.eigenvectors;
    let r_proj = v.transpose() * &p.r0;
    let mut total = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        let ei = v.column(i).into_owned();
        let a_i = p.o3.contract3(&ei);
        let g_i = if t.is_infinite() {
            1.0 / lam[i]
        } else {
            (-(-lam[i] * t).exp_m1()) / lam[i]
        };
        total -= a_i * (r_proj[i] * g_i);
        for j in 0..m {
            let ej = v.column(j).into_owned();
            let b_ij = p.o4.contract34(&ei, &ej);
            let coeff = if t.is_infinite() {
                1.0 / (lam[i] * (lam[i] + lam[j]))
            } else {
                let gi = (-(-lam[i] * t).exp_m1()) / lam[i];
                let gij = (-(-(lam[i] + lam[j]) * t).exp_m1()) / (lam[i] + lam[j]);
                (gi - gij) / lam[j]
            };
            total += b_ij * (r_proj[i] * r_proj[j] * coeff);
        }
    }
    (&total + total.transpose()) * 0.5
}

/// Late-time NTK correction `Theta^(1)_inf`, symmetrized.
pub fn theta1_infinity(p: &PerturbationInputs) -> Result<DMatrix<f64>> {
    check_perturbation(p)?;
    Ok(theta1_at(p, f64::INFINITY))
}

/// Time-dependent NTK correction `Theta^(1)_t`; approaches
/// [`theta1_infinity`] as `t -> inf` and vanishes at `t = 0`.
pub fn theta1_t(p: &PerturbationInputs, t: f64) -> Result<DMatrix<f64>> {
    check_perturbation(p)?;
    Ok(theta1_at(p, t))
}

/// Train-set prediction corrected to first order in 1/width:
/// `f_t = y + e^{-Theta_0 t} (I - Int_0^t e^{-Theta_0 t'} Theta^(1)_{t'} e^{-Theta_0 t'} dt') (f_0 - y)`.
/// The time integral is evaluated in the eigenbasis by adaptive trapezoid
/// refinement to 1e-8.
pub fn perturbative_train_prediction(
    p: &PerturbationInputs,
    f0: &DVector<f64>,
    y: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    check_perturbation(p)?;
    let m = p.theta0.dim();
    if f0.len() != m || y.len() != m {
        return Err(CoreError::DimensionMismatch {
            expected: m,
            got: f0.len(),
        });
    }
    if t == 0.0 {
        return Ok(f0.clone());
    }
    let lam = &p.theta0.eigenvalues;
    let v = &p.theta0.eigenvectors;

    // Integrand in the eigenbasis: I(t')_{ij} = e^{-l_i t'} T1~(t')_{ij} e^{-l_j t'}
    let integrand = |tp: f64| -> DMatrix<f64> {
        let t1 = theta1_at(p, tp);
        let t1_eig = v.transpose() * t1 * v;
        DMatrix::from_fn(m, m, |i, j| {
            ((-lam[i] * tp).exp()) * t1_eig[(i, j)] * ((-lam[j] * tp).exp())
        })
    };

    // Adaptive trapezoid by interval doubling.
    let mut n = 16usize;
    let mut prev: Option<DMatrix<f64>> = None;
    let integral = loop {
        let h = t / n as f64;
        let mut acc = (integrand(0.0) + integrand(t)) * 0.5;
        for k in 1..n {
            acc += integrand(h * k as f64);
        }
        acc *= h;
        if let Some(prior) = &prev {
            let diff = (&acc - prior).amax();
            if diff < 1e-8 || n >= 4096 {
                break acc;
            }
        }
        prev = Some(acc);
        n *= 2;
    };

    let resid0 = v.transpose() * (f0 - y);
    let corrected = (DMatrix::<f64>::identity(m, m) - integral) * &resid0;
    let decayed = DVector::from_fn(m, |i, _| (-lam[i] * t).exp() * corrected[i]);
    Ok(y + v * decayed)
}

/// Second moment of one input-output Jacobian entry of a critical ReLU
/// network: exactly `2 / n_0`.
pub fn jacobian_moment2(n0: usize) -> f64 {
    2.0 / n0 as f64
}

/// Leading-order fourth moment of a Jacobian entry:
/// `(12 / n_0^2) exp(5 sum_l 1/n_l)`, dropping `O(L/n^2)`. The weight
/// kurtosis `mu4` enters only the exact path oracle
/// ([`path_moment_bruteforce`]), not this leading-order form.
pub fn jacobian_moment4(widths: &WidthProfile, _mu4: f64) -> f64 {
    let n0 = widths.input_dim as f64;
    12.0 / (n0 * n0) * widths.beta().exp()
}

/// Caps on the exact path enumerations.
pub const PATH_CAP_ORDER2: usize = 10_000;
pub const PATH_PAIR_CAP_ORDER4: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathMomentOrder {
    Second,
    Fourth,
}

/// Exact Jacobian moments of the critical ReLU ensemble by brute-force path
/// enumeration; no large-n approximation.
///
/// Order 2 sums `prod_l (2/n_{l-1}) * (1/2)^L` over all single paths, giving
/// `2/n_0` identically. Order 4 averages the collision product
/// `prod_l (1 + 5 1_{C_l} + 1_{C_l C_{l-1}} 6 (mu4 - 3))` over all pairs of
/// interior paths (endpoints are pinned, so the first and last collision
/// indicators are certain), with the `2/n_0^2` prefactor.
pub fn path_moment_bruteforce(
    widths: &WidthProfile,
    order: PathMomentOrder,
    mu4: f64,
) -> Result<f64> {
    let n0 = widths.input_dim as f64;
    let interior: usize = widths.widths.iter().product();
    match order {
        PathMomentOrder::Second => {
            if interior > PATH_CAP_ORDER2 {
                return Err(CoreError::EnumerationTooLarge {
                    len: interior,
                    cap: PATH_CAP_ORDER2,
                });
            }
            let l = widths.depth();
            let mut total = 0.0;
            // Every path contributes prod_l var(W^(l)) * E[xi]^L with all
            // factors equal; enumerate literally anyway.
            let dims: Vec<usize> = std::iter::once(widths.input_dim)
                .chain(widths.widths.iter().copied())
                .collect();
            for _path in 0..interior.max(1) {
                let mut term = 1.0;
                for &n_in in &dims {
                    term *= 2.0 / n_in as f64;
                }
                term *= 0.5f64.powi(l as i32);
                total += term;
            }
            Ok(total)
        }
        PathMomentOrder::Fourth => {
            let pairs = interior.checked_mul(interior).unwrap_or(usize::MAX);
            if pairs > PATH_PAIR_CAP_ORDER4 {
                return Err(CoreError::EnumerationTooLarge {
                    len: pairs,
                    cap: PATH_PAIR_CAP_ORDER4,
                });
            }
            let l = widths.depth();
            let mut total = 0.0;
            let mut gamma1 = vec![0usize; l];
            let mut gamma2 = vec![0usize; l];
            loop {
                // collision product over layers 1..=L+1; layer 0 and L+1
                // endpoints always collide.
                let mut prod = 1.0;
                for layer in 1..=(l + 1) {
                    let c_here = layer == l + 1 || gamma1[layer - 1] == gamma2[layer - 1];
                    let c_prev = layer == 1
                        || layer >= 2 && gamma1[layer - 2] == gamma2[layer - 2];
                    let mut f = 1.0;
                    if c_here {
                        f += 5.0;
                        if c_prev {
                            f += 6.0 * (mu4 - 3.0);
                        }
                    }
                    prod *= f;
                }
                total += prod;
                if !advance(&mut gamma1, &mut gamma2, &widths.widths) {
                    break;
                }
            }
            Ok(2.0 / (n0 * n0) * total / pairs as f64)
        }
    }
}

/// Advance the pair of interior paths in mixed-radix order.
fn advance(gamma1: &mut [usize], gamma2: &mut [usize], widths: &[usize]) -> bool {
    for (g, &w) in gamma1.iter_mut().zip(widths) {
        *g += 1;
        if *g < w {
            return true;
        }
        *g = 0;
    }
    for (g, &w) in gamma2.iter_mut().zip(widths) {
        *g += 1;
        if *g < w {
            return true;
        }
        *g = 0;
    }
    false
}

/// Exact and leading-order statistics of `(1/2) log(chi^2_k / k)`.
#[derive(Debug, Clone, Copy)]
pub struct ChiSquareLogStats {
    pub mean: f64,
    pub variance: f64,
    /// Commonly quoted leading-order value `-1/(4k)`. Note the exact mean
    /// behaves as `-1/(2k) - 1/(6k^2)` at large `k`; the quoted figure sits a
    /// factor of two below it.
    pub asymptotic_mean: f64,
    /// Commonly quoted `1/(4k)`; the exact variance behaves as `1/(2k)`.
    pub asymptotic_variance: f64,
}

/// `E[(1/2) log(chi^2_k / k)] = (psi(k/2) + log 2 - log k) / 2` and
/// `Var = psi'(k/2) / 4`, with the quoted `-1/(4k)`, `1/(4k)` leading-order
/// figures carried alongside for comparison.
pub fn chi_square_log_stats(k: usize) -> ChiSquareLogStats {
    assert!(k >= 1, "chi-square needs k >= 1");
    let kf = k as f64;
    ChiSquareLogStats {
        mean: 0.5 * (digamma(kf / 2.0) + std::f64::consts::LN_2 - kf.ln()),
        variance: 0.25 * trigamma(kf / 2.0),
        asymptotic_mean: -1.0 / (4.0 * kf),
        asymptotic_variance: 1.0 / (4.0 * kf),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianKind {
    Relu,
    Linear,
}

/// Parameters `(log_mean, log_variance)` of the log-normal law of a squared
/// Jacobian entry. ReLU: `(-beta/2, beta)` with `beta = 5 sum 1/n_l`.
/// Linear: exact digamma/trigamma sums of the per-layer chi-square factors,
/// the rigorous version of the `(-L/4n, L/4n)` asymptotics.
pub fn lognormal_jacobian_params(widths: &WidthProfile, kind: JacobianKind) -> (f64, f64) {
    match kind {
        JacobianKind::Relu => {
            let beta = widths.beta();
            (-beta / 2.0, beta)
        }
        JacobianKind::Linear => {
            let mut mean = 0.0;
            let mut var = 0.0;
            for &n in &widths.widths {
                let s = chi_square_log_stats(n);
                mean += s.mean;
                var += s.variance;
            }
            (mean, var)
        }
    }
}
