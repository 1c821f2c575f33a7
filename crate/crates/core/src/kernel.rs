//! Layer-by-layer NNGP and NTK kernel recursions for fully-connected,
//! residual, and 1D-convolutional stacks.
//!
//! Everything is dense over all sample pairs; kernels here are desk-scale
//! (m up to a few hundred), so no structure is exploited.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::arch::{ArchKind, ArchSpec, ConvGeometry};
use crate::cov::Cov2;
use crate::error::CoreError;
use crate::gauss::{f_phi, f_phi_prime};
use crate::Result;

/// Relative eigenvalue tolerance for the PSD repair: eigenvalues in
/// `(-PSD_EIG_TOL * trace, 0)` are clipped to zero, anything lower raises.
pub const PSD_EIG_TOL: f64 = 1e-9;

/// A symmetric PSD kernel over a sample set, tagged with its layer index.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    pub layer: usize,
    pub values: DMatrix<f64>,
    pub sample_ids: Vec<usize>,
}

impl KernelMatrix {
    pub fn new(layer: usize, values: DMatrix<f64>) -> Self {
        let m = values.nrows();
        KernelMatrix {
            layer,
            values,
            sample_ids: (0..m).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// Max absolute asymmetry, for invariant checks.
    pub fn asymmetry(&self) -> f64 {
        let m = self.values.nrows();
        let mut worst = 0.0f64;
        for i in 0..m {
            for j in (i + 1)..m {
                worst = worst.max((self.values[(i, j)] - self.values[(j, i)]).abs());
            }
        }
        worst
    }
}

/// Symmetrize, then clip slightly negative eigenvalues to zero. Eigenvalues
/// below `-PSD_EIG_TOL * trace` signal a genuine defect and raise.
pub fn psd_repair(values: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = values.nrows();
    let sym = (&values + values.transpose()) * 0.5;
    if m == 1 {
        let v = sym[(0, 0)];
        if v < -PSD_EIG_TOL * v.abs().max(1.0) {
            return Err(CoreError::IndefiniteKernel {
                min_eig: v,
                tol: PSD_EIG_TOL,
            });
        }
        return Ok(DMatrix::from_element(1, 1, v.max(0.0)));
    }
    let trace: f64 = sym.diagonal().iter().sum();
    let eig = SymmetricEigen::new(sym.clone());
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let tol = PSD_EIG_TOL * trace.abs().max(1e-300);
    if min_eig >= 0.0 {
        return Ok(sym);
    }
    if min_eig < -tol {
        return Err(CoreError::IndefiniteKernel { min_eig, tol });
    }
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let v = &eig.eigenvectors;
    let repaired = v * DMatrix::from_diagonal(&vals) * v.transpose();
    Ok((&repaired + repaired.transpose()) * 0.5)
}

fn check_finite(inputs: &DMatrix<f64>) -> Result<()> {
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFiniteInput);
    }
    Ok(())
}

/// Base kernel `K^0(x, x') = sigma_b^2 + sigma_w^2 (x . x') / n_0`.
fn base_kernel(inputs: &DMatrix<f64>, arch: &ArchSpec) -> DMatrix<f64> {
    let m = inputs.nrows();
    let n0 = inputs.ncols() as f64;
    let gram = inputs * inputs.transpose();
    DMatrix::from_fn(m, m, |i, j| arch.sigma_b2 + arch.sigma_w2 * gram[(i, j)] / n0)
}

/// One NNGP layer map: `sigma_b^2 + sigma_w^2 F_phi(K_ii, K_ij, K_jj)`.
fn nngp_layer(prev: &DMatrix<f64>, arch: &ArchSpec) -> Result<DMatrix<f64>> {
    let m = prev.nrows();
    let mut next = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let cov = Cov2::new(prev[(i, i)], prev[(i, j)], prev[(j, j)])?;
            let val = arch.sigma_b2 + arch.sigma_w2 * f_phi(&cov, &arch.phi)?;
            next[(i, j)] = val;
            next[(j, i)] = val;
        }
    }
    Ok(next)
}

/// NNGP kernels `K^0 .. K^L` of a fully-connected stack over the given
/// inputs (one row per sample).
pub fn nngp_fc(inputs: &DMatrix<f64>, arch: &ArchSpec) -> Result<Vec<KernelMatrix>> {
    if !matches!(arch.kind, ArchKind::Fc) {
        return Err(CoreError::InvalidArch("nngp_fc requires kind = fc".into()));
    }
    check_finite(inputs)?;
    let mut out = Vec::with_capacity(arch.depth_l + 1);
    let mut current = psd_repair(base_kernel(inputs, arch))?;
    out.push(KernelMatrix::new(0, current.clone()));
    for layer in 1..=arch.depth_l {
        current = psd_repair(nngp_layer(&current, arch)?)?;
        out.push(KernelMatrix::new(layer, current.clone()));
    }
    Ok(out)
}

/// NNGP recursion with residual skips:
/// `K^l = sigma_b^2 + sigma_w^2 F_phi(K^{l-1}) + gamma_l^2 K^{l-1}`.
pub fn nngp_residual(inputs: &DMatrix<f64>, arch: &ArchSpec) -> Result<Vec<KernelMatrix>> {
    let gamma = match &arch.kind {
        ArchKind::Residual { gamma } => gamma.clone(),
        _ => {
            return Err(CoreError::InvalidArch(
                "nngp_residual requires kind = residual".into(),
            ))
        }
    };
    check_finite(inputs)?;
    let mut out = Vec::with_capacity(arch.depth_l + 1);
    let mut current = psd_repair(base_kernel(inputs, arch))?;
    out.push(KernelMatrix::new(0, current.clone()));
    for layer in 1..=arch.depth_l {
        let g2 = gamma[layer - 1] * gamma[layer - 1];
        let dense = nngp_layer(&current, arch)?;
        current = psd_repair(dense + &current * g2)?;
        out.push(KernelMatrix::new(layer, current.clone()));
    }
    Ok(out)
}

/// NTK recursion in NTK parameterization. Returns the tangent kernels
/// `Theta^(1) .. Theta^(L+1)` alongside the NNGP list `K^0 .. K^L`; the
/// scalar-output kernel is computed (the delta_{kj} block structure of the
/// multi-output case is implied, not materialized).
///
/// Indexing: `Theta^(1) = K^0` (no earlier parameters), then
/// `Theta^(l+1) = K^l + sigma_w^2 F~_phi(K^{l-1}) . Theta^(l)`.
pub fn ntk_fc(
    inputs: &DMatrix<f64>,
    arch: &ArchSpec,
) -> Result<(Vec<KernelMatrix>, Vec<KernelMatrix>)> {
    let nngp = nngp_fc(inputs, arch)?;
    let m = inputs.nrows();
    let mut thetas: Vec<KernelMatrix> = Vec::with_capacity(arch.depth_l + 1);
    thetas.push(KernelMatrix::new(1, nngp[0].values.clone()));
    for layer in 1..=arch.depth_l {
        let prev_k = &nngp[layer - 1].values;
        let prev_theta = &thetas[layer - 1].values;
        let k = &nngp[layer].values;
        let mut theta = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let cov = Cov2::new(prev_k[(i, i)], prev_k[(i, j)], prev_k[(j, j)])?;
                let fdot = f_phi_prime(&cov, &arch.phi)?;
                let val = k[(i, j)] + arch.sigma_w2 * fdot * prev_theta[(i, j)];
                theta[(i, j)] = val;
                theta[(j, i)] = val;
            }
        }
        thetas.push(KernelMatrix::new(layer + 1, psd_repair(theta)?));
    }
    Ok((thetas, nngp))
}

/// Spatially-resolved conv kernel `K^l_{a,a'}(x, x')`, stored dense as a
/// `(D*m) x (D*m)` matrix with composite index `a * m + sample`.
#[derive(Debug, Clone)]
pub struct ConvKernelTensor {
    pub layer: usize,
    pub spatial_d: usize,
    pub samples: usize,
    values: DMatrix<f64>,
}

impl ConvKernelTensor {
    fn flat(&self, a: usize, s: usize) -> usize {
        a * self.samples + s
    }

    pub fn get(&self, a: usize, ap: usize, s: usize, sp: usize) -> f64 {
        self.values[(self.flat(a, s), self.flat(ap, sp))]
    }

    /// Max deviation from symmetry under the joint swap
    /// `(a, sample) <-> (a', sample')`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.values.nrows();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                worst = worst.max((self.values[(i, j)] - self.values[(j, i)]).abs());
            }
        }
        worst
    }
}

fn wrap(idx: isize, d: usize) -> usize {
    idx.rem_euclid(d as isize) as usize
}

/// Conv-1D NNGP recursion over all spatial and sample pairs. Inputs are one
/// `n0 x D` matrix per sample; spatial indices wrap circularly.
pub fn nngp_conv1d(inputs: &[DMatrix<f64>], arch: &ArchSpec) -> Result<Vec<ConvKernelTensor>> {
    let geo = match &arch.kind {
        ArchKind::Conv1d(geo) => geo.clone(),
        _ => {
            return Err(CoreError::InvalidArch(
                "nngp_conv1d requires kind = conv1d".into(),
            ))
        }
    };
    let m = inputs.len();
    let d = geo.spatial_d;
    let k = geo.filter_half_width as isize;
    let n0 = arch.input_dim as f64;
    for x in inputs {
        check_finite(x)?;
        if x.nrows() != arch.input_dim || x.ncols() != d {
            return Err(CoreError::DimensionMismatch {
                expected: arch.input_dim * d,
                got: x.nrows() * x.ncols(),
            });
        }
    }

    let dim = d * m;
    // Base case: sigma_b^2 + sigma_w^2 sum_beta v_beta (x_{.,a+b} . x'_{.,a'+b}) / n0
    let mut current = DMatrix::<f64>::zeros(dim, dim);
    for a in 0..d {
        for ap in 0..d {
            for s in 0..m {
                for sp in 0..m {
                    let mut acc = 0.0;
                    for (bi, &v) in geo.v_beta.iter().enumerate() {
                        let beta = bi as isize - k;
                        let col = wrap(a as isize + beta, d);
                        let colp = wrap(ap as isize + beta, d);
                        let dot = inputs[s].column(col).dot(&inputs[sp].column(colp));
                        acc += v * dot / n0;
                    }
                    current[(a * m + s, ap * m + sp)] = arch.sigma_b2 + arch.sigma_w2 * acc;
                }
            }
        }
    }
    current = psd_repair(current)?;
    let mut out = vec![ConvKernelTensor {
        layer: 0,
        spatial_d: d,
        samples: m,
        values: current.clone(),
    }];

    for layer in 1..=arch.depth_l {
        let mut next = DMatrix::<f64>::zeros(dim, dim);
        for a in 0..d {
            for ap in 0..d {
                for s in 0..m {
                    for sp in 0..m {
                        let row = a * m + s;
                        let col = ap * m + sp;
                        if col < row {
                            next[(row, col)] = next[(col, row)];
                            continue;
                        }
                        let mut acc = 0.0;
                        for (bi, &v) in geo.v_beta.iter().enumerate() {
                            if v == 0.0 {
                                continue;
                            }
                            let beta = bi as isize - k;
                            let ab = wrap(a as isize + beta, d);
                            let apb = wrap(ap as isize + beta, d);
                            let k11 = current[(ab * m + s, ab * m + s)];
                            let k12 = current[(ab * m + s, apb * m + sp)];
                            let k22 = current[(apb * m + sp, apb * m + sp)];
                            acc += v * f_phi(&Cov2::new(k11, k12, k22)?, &arch.phi)?;
                        }
                        let val = arch.sigma_b2 + arch.sigma_w2 * acc;
                        next[(row, col)] = val;
                        next[(col, row)] = val;
                    }
                }
            }
        }
        current = psd_repair(next)?;
        out.push(ConvKernelTensor {
            layer,
            spatial_d: d,
            samples: m,
            values: current.clone(),
        });
    }
    Ok(out)
}

/// Dense readout after flattening channels and sites together:
/// `sigma_b^2 + (sigma_w^2 / D) sum_a F_phi(K_{aa}(x,x), K_{aa}(x,x'), K_{aa}(x',x'))`.
/// Only spatially-diagonal entries of the final conv kernel contribute.
pub fn readout_vectorize(conv_k: &ConvKernelTensor, arch: &ArchSpec) -> Result<KernelMatrix> {
    let d = conv_k.spatial_d;
    let m = conv_k.samples;
    let mut out = DMatrix::zeros(m, m);
    for s in 0..m {
        for sp in s..m {
            let mut acc = 0.0;
            for a in 0..d {
                let cov = Cov2::new(
                    conv_k.get(a, a, s, s),
                    conv_k.get(a, a, s, sp),
                    conv_k.get(a, a, sp, sp),
                )?;
                acc += f_phi(&cov, &arch.phi)?;
            }
            let val = arch.sigma_b2 + arch.sigma_w2 * acc / d as f64;
            out[(s, sp)] = val;
            out[(sp, s)] = val;
        }
    }
    Ok(KernelMatrix::new(conv_k.layer + 1, psd_repair(out)?))
}

/// Readout that aggregates sites with fixed weights `h` before the dense
/// layer; spatially off-diagonal kernel entries contribute:
/// `sigma_b^2 + sigma_w^2 sum_{a,a'} h_a h_a' F_phi(K_{aa}(x,x), K_{aa'}(x,x'), K_{a'a'}(x',x'))`.
pub fn readout_spatial_agg(
    conv_k: &ConvKernelTensor,
    h: &[f64],
    arch: &ArchSpec,
) -> Result<KernelMatrix> {
    let d = conv_k.spatial_d;
    if h.len() != d {
        return Err(CoreError::DimensionMismatch {
            expected: d,
            got: h.len(),
        });
    }
    let m = conv_k.samples;
    let mut out = DMatrix::zeros(m, m);
    for s in 0..m {
        for sp in s..m {
            let mut acc = 0.0;
            for a in 0..d {
                for ap in 0..d {
                    let w = h[a] * h[ap];
                    if w == 0.0 {
                        continue;
                    }
                    let cov = Cov2::new(
                        conv_k.get(a, a, s, s),
                        conv_k.get(a, ap, s, sp),
                        conv_k.get(ap, ap, sp, sp),
                    )?;
                    acc += w * f_phi(&cov, &arch.phi)?;
                }
            }
            let val = arch.sigma_b2 + arch.sigma_w2 * acc;
            out[(s, sp)] = val;
            out[(sp, s)] = val;
        }
    }
    Ok(KernelMatrix::new(conv_k.layer + 1, psd_repair(out)?))
}

pub fn geometry_of(arch: &ArchSpec) -> Option<&ConvGeometry> {
    match &arch.kind {
        ArchKind::Conv1d(geo) => Some(geo),
        _ => None,
    }
}

/// Helper for criticality and netsim cross-checks: run only the diagonal
/// recursion `K -> sigma_b^2 + sigma_w^2 <phi^2>_K` for a given number of
/// layers, starting from `k0`.
pub fn diagonal_recursion(k0: f64, arch: &ArchSpec, layers: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(layers + 1);
    let mut k = k0;
    out.push(k);
    for _ in 0..layers {
        let cov = Cov2::new(k, k, k)?;
        k = arch.sigma_b2 + arch.sigma_w2 * f_phi(&cov, &arch.phi)?;
        out.push(k);
    }
    Ok(out)
}
