//! Architecture descriptions shared by the kernel recursions and the
//! Monte Carlo simulator.

use crate::error::CoreError;
use crate::nonlin::Nonlinearity;
use crate::Result;

/// Geometry of a 1D convolutional stack: filters span `2k + 1` sites with
/// per-offset weight variances `v_beta`, acting on `spatial_d` sites with
/// circular wrap-around.
#[derive(Debug, Clone)]
pub struct ConvGeometry {
    pub filter_half_width: usize,
    pub spatial_d: usize,
    pub v_beta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum ArchKind {
    Fc,
    /// Residual blocks `z^l = b + W phi(z^{l-1}) + gamma_l z^{l-1}`,
    /// one coefficient per hidden layer.
    Residual { gamma: Vec<f64> },
    Conv1d(ConvGeometry),
}

/// Hyperparameters of a random network: depth, input dimension, the
/// initialization variances, and the activation.
#[derive(Debug, Clone)]
pub struct ArchSpec {
    pub kind: ArchKind,
    pub depth_l: usize,
    pub input_dim: usize,
    pub sigma_b2: f64,
    pub sigma_w2: f64,
    pub phi: Nonlinearity,
}

impl ArchSpec {
    pub fn new(
        kind: ArchKind,
        depth_l: usize,
        input_dim: usize,
        sigma_b2: f64,
        sigma_w2: f64,
        phi: Nonlinearity,
    ) -> Result<Self> {
        if depth_l < 1 {
            return Err(CoreError::InvalidArch("depth_L must be >= 1".into()));
        }
        if input_dim < 1 {
            return Err(CoreError::InvalidArch("input_dim must be >= 1".into()));
        }
        if !(sigma_w2 > 0.0) {
            return Err(CoreError::InvalidArch(format!(
                "sigma_w2 must be > 0, got {sigma_w2}"
            )));
        }
        if sigma_b2 < 0.0 {
            return Err(CoreError::InvalidArch(format!(
                "sigma_b2 must be >= 0, got {sigma_b2}"
            )));
        }
        match &kind {
            ArchKind::Residual { gamma } => {
                if gamma.len() != depth_l {
                    return Err(CoreError::InvalidArch(format!(
                        "residual gamma has length {} but depth_L = {depth_l}",
                        gamma.len()
                    )));
                }
            }
            ArchKind::Conv1d(geo) => {
                if geo.v_beta.len() != 2 * geo.filter_half_width + 1 {
                    return Err(CoreError::InvalidArch(format!(
                        "v_beta must have length 2k+1 = {}, got {}",
                        2 * geo.filter_half_width + 1,
                        geo.v_beta.len()
                    )));
                }
                if geo.v_beta.iter().any(|&v| v < 0.0) {
                    return Err(CoreError::InvalidArch("v_beta entries must be >= 0".into()));
                }
                if geo.v_beta.iter().sum::<f64>() <= 0.0 {
                    return Err(CoreError::InvalidArch("v_beta must have positive sum".into()));
                }
                if geo.spatial_d < 1 {
                    return Err(CoreError::InvalidArch("spatial_D must be >= 1".into()));
                }
            }
            ArchKind::Fc => {}
        }
        Ok(ArchSpec {
            kind,
            depth_l,
            input_dim,
            sigma_b2,
            sigma_w2,
            phi,
        })
    }

    /// Convenience constructor for the common fully-connected case.
    pub fn fc(
        depth_l: usize,
        input_dim: usize,
        sigma_b2: f64,
        sigma_w2: f64,
        phi: Nonlinearity,
    ) -> Result<Self> {
        Self::new(ArchKind::Fc, depth_l, input_dim, sigma_b2, sigma_w2, phi)
    }
}

/// Hidden layer widths `n_1 .. n_L` plus the input dimension `n_0`.
#[derive(Debug, Clone)]
pub struct WidthProfile {
    pub widths: Vec<usize>,
    pub input_dim: usize,
}

impl WidthProfile {
    pub fn new(widths: Vec<usize>, input_dim: usize) -> Result<Self> {
        if widths.iter().any(|&n| n < 1) || input_dim < 1 {
            return Err(CoreError::InvalidArch("all widths must be >= 1".into()));
        }
        Ok(WidthProfile { widths, input_dim })
    }

    pub fn uniform(n: usize, depth_l: usize, input_dim: usize) -> Result<Self> {
        Self::new(vec![n; depth_l], input_dim)
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    /// Inverse-temperature `beta = 5 * sum_l 1/n_l` of the critical ReLU
    /// ensemble; the expansion parameter of all finite-width fluctuations.
    pub fn beta(&self) -> f64 {
        5.0 * self.widths.iter().map(|&n| 1.0 / n as f64).sum::<f64>()
    }
}
