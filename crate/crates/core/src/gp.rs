//! Exact inference: Bayesian GP posterior and marginal likelihood, plus the
//! closed-form gradient-flow training solution of the linearized network and
//! the GP it induces over initializations.
//!
//! All solves factor the kernel (Cholesky or eigendecomposition); explicit
//! inverses never appear.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::CoreError;
use crate::kernel::KernelMatrix;
use crate::Result;

/// Supervised dataset: inputs one row per sample, one scalar target each.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: DMatrix<f64>,
    pub targets: DVector<f64>,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, targets: DVector<f64>) -> Result<Self> {
        if inputs.nrows() != targets.len() || inputs.nrows() == 0 {
            return Err(CoreError::DimensionMismatch {
                expected: inputs.nrows(),
                got: targets.len(),
            });
        }
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(CoreError::NonFiniteInput);
        }
        Ok(Dataset { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.len() == 0
    }
}

/// Posterior mean and (clipped) pointwise variance over query points.
#[derive(Debug, Clone)]
pub struct PosteriorResult {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
}

fn clip_variance(mut v: DVector<f64>) -> DVector<f64> {
    for x in v.iter_mut() {
        if *x < 0.0 && *x >= -1e-9 {
            *x = 0.0;
        }
    }
    v
}

fn chol(matrix: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(matrix).ok_or(CoreError::SingularKernel)
}

/// Gaussian-process posterior under observation noise `sigma_eps^2`:
/// `mu* = k*^T (K + noise I)^{-1} y`,
/// `var* = k** - k*^T (K + noise I)^{-1} k*`.
pub fn gp_posterior(
    k_train: &KernelMatrix,
    k_cross: &DMatrix<f64>,
    k_query_diag: &DVector<f64>,
    y: &DVector<f64>,
    noise: f64,
) -> Result<PosteriorResult> {
    let m = k_train.dim();
    let q = k_query_diag.len();
    if k_cross.nrows() != m || k_cross.ncols() != q || y.len() != m {
        return Err(CoreError::DimensionMismatch {
            expected: m * q,
            got: k_cross.nrows() * k_cross.ncols(),
        });
    }
    let mut a = k_train.values.clone();
    for i in 0..m {
        a[(i, i)] += noise;
    }
    let f = chol(a)?;
    let alpha = f.solve(y);
    let mean = k_cross.transpose() * &alpha;
    let solved_cross = f.solve(k_cross);
    let mut variance = DVector::zeros(q);
    for j in 0..q {
        variance[j] = k_query_diag[j] - k_cross.column(j).dot(&solved_cross.column(j));
    }
    Ok(PosteriorResult {
        mean,
        variance: clip_variance(variance),
    })
}

/// Log marginal likelihood
/// `-1/2 y^T (K + noise I)^{-1} y - 1/2 log det(K + noise I) - m/2 log 2 pi`.
pub fn gp_log_marginal(k_train: &KernelMatrix, y: &DVector<f64>, noise: f64) -> Result<f64> {
    let m = k_train.dim();
    if y.len() != m {
        return Err(CoreError::DimensionMismatch {
            expected: m,
            got: y.len(),
        });
    }
    let mut a = k_train.values.clone();
    for i in 0..m {
        a[(i, i)] += noise;
    }
    let f = chol(a)?;
    let alpha = f.solve(y);
    let log_det: f64 = f.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    Ok(-0.5 * y.dot(&alpha)
        - 0.5 * log_det
        - 0.5 * m as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Eigendecomposition of a kernel: eigenvalues descending, tiny negative
/// values clipped to zero, orthonormal eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct SpectralKernel {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl SpectralKernel {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    /// Apply `f` to the spectrum: `V f(Lambda) V^T x`.
    pub fn apply_spectral<F: Fn(f64) -> f64>(&self, x: &DVector<f64>, f: F) -> DVector<f64> {
        let proj = self.eigenvectors.transpose() * x;
        let scaled = DVector::from_fn(proj.len(), |i, _| f(self.eigenvalues[i]) * proj[i]);
        &self.eigenvectors * scaled
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.eigenvectors
            * DMatrix::from_diagonal(&self.eigenvalues)
            * self.eigenvectors.transpose()
    }
}

/// Symmetric eigendecomposition with validity checks: asymmetry beyond 1e-12
/// (relative) raises `NotSymmetric`; eigenvalues below `-1e-9 * trace` raise
/// `IndefiniteKernel`.
pub fn spectral_decompose(k: &KernelMatrix) -> Result<SpectralKernel> {
    let m = k.dim();
    let scale = k
        .values
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1.0);
    let asym = k.asymmetry();
    if asym > 1e-12 * scale {
        return Err(CoreError::NotSymmetric(asym));
    }
    let sym = (&k.values + k.values.transpose()) * 0.5;
    let trace: f64 = sym.diagonal().iter().sum();
    let eig = SymmetricEigen::new(sym);
    let tol = 1e-9 * trace.abs().max(1e-300);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut eigenvalues = DVector::zeros(m);
    let mut eigenvectors = DMatrix::zeros(m, m);
    for (pos, &src) in order.iter().enumerate() {
        let lam = eig.eigenvalues[src];
        if lam < -tol {
            return Err(CoreError::IndefiniteKernel { min_eig: lam, tol });
        }
        eigenvalues[pos] = lam.max(0.0);
        eigenvectors.set_column(pos, &eig.eigenvectors.column(src));
    }
    Ok(SpectralKernel {
        eigenvalues,
        eigenvectors,
    })
}

/// Train-set gradient-flow solution of the linearized model:
/// `f_t = (I - e^{-Theta_0 t}) y + e^{-Theta_0 t} f_0`, one vector per
/// requested time. Zero eigendirections stay frozen automatically.
pub fn ntk_gd_train_evolution(
    theta0_train: &KernelMatrix,
    f0_train: &DVector<f64>,
    y: &DVector<f64>,
    times: &[f64],
) -> Result<Vec<DVector<f64>>> {
    let spec = spectral_decompose(theta0_train)?;
    let resid0 = f0_train - y;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let decayed = spec.apply_spectral(&resid0, |lam| {
            if t.is_infinite() {
                if lam > 0.0 {
                    0.0
                } else {
                    1.0
                }
            } else {
                (-lam * t).exp()
            }
        });
        out.push(y + decayed);
    }
    Ok(out)
}

/// The `(1 - e^{-lam t}) / lam` spectral filter with its `lam -> 0` limit `t`.
fn growth_filter(lam: f64, t: f64) -> f64 {
    if t.is_infinite() {
        return 1.0 / lam;
    }
    if lam.abs() < 1e-14 {
        t
    } else {
        (-(-lam * t).exp_m1()) / lam
    }
}

/// Query-point gradient-flow solution, split into the target-driven mean term
/// `mu_t(x) = Theta_0(x,X) Theta_0^{-1} (I - e^{-Theta_0 t}) y` and the
/// initialization-driven term
/// `gamma_t(x) = f_0(x) - Theta_0(x,X) Theta_0^{-1} (I - e^{-Theta_0 t}) f_0(X)`.
pub fn ntk_gd_query_evolution(
    theta0_train: &KernelMatrix,
    theta0_cross: &DMatrix<f64>,
    f0_train: &DVector<f64>,
    f0_query: &DVector<f64>,
    y: &DVector<f64>,
    times: &[f64],
) -> Result<Vec<(DVector<f64>, DVector<f64>)>> {
    let m = theta0_train.dim();
    if theta0_cross.nrows() != m {
        return Err(CoreError::DimensionMismatch {
            expected: m,
            got: theta0_cross.nrows(),
        });
    }
    let spec = spectral_decompose(theta0_train)?;
    let lam_max = spec.eigenvalues[0];
    if spec.min_eigenvalue() <= 1e-12 * lam_max.max(1e-300) {
        return Err(CoreError::SingularKernel);
    }
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let by = spec.apply_spectral(y, |lam| growth_filter(lam, t));
        let bf = spec.apply_spectral(f0_train, |lam| growth_filter(lam, t));
        let mu = theta0_cross.transpose() * by;
        let gamma = f0_query - theta0_cross.transpose() * bf;
        out.push((mu, gamma));
    }
    Ok(out)
}

/// Mean and variance of the trained-network GP at `t -> infinity`:
/// `mu(x) = Theta_0(x,X) Theta_0^{-1} y` and the four-term variance
/// `K(x,x) + Th Th^{-1} K Th^{-1} Th - (Th Th^{-1} K(X,x) + K(x,X) Th^{-1} Th)`.
pub fn ntk_gd_mean_var(
    theta0_train: &KernelMatrix,
    theta0_cross: &DMatrix<f64>,
    k_train: &KernelMatrix,
    k_cross: &DMatrix<f64>,
    k_query_diag: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<PosteriorResult> {
    let m = theta0_train.dim();
    let q = k_query_diag.len();
    if theta0_cross.ncols() != q || k_cross.ncols() != q || k_cross.nrows() != m {
        return Err(CoreError::DimensionMismatch {
            expected: m * q,
            got: k_cross.nrows() * k_cross.ncols(),
        });
    }
    let f = chol(theta0_train.values.clone())?;
    let alpha = f.solve(y);
    let mean = theta0_cross.transpose() * &alpha;

    let b = f.solve(theta0_cross); // Theta^{-1} theta_x per query column
    let c = f.solve(k_cross); // Theta^{-1} k_x per query column
    let kb = &k_train.values * &b;
    let mut variance = DVector::zeros(q);
    for j in 0..q {
        let quad = b.column(j).dot(&kb.column(j));
        let cross1 = theta0_cross.column(j).dot(&c.column(j));
        let cross2 = k_cross.column(j).dot(&b.column(j));
        variance[j] = k_query_diag[j] + quad - (cross1 + cross2);
    }
    Ok(PosteriorResult {
        mean,
        variance: clip_variance(variance),
    })
}
