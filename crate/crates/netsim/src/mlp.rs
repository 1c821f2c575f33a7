//! Concrete finite-width multilayer perceptrons with exact forward and
//! reverse passes in either parameterization.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use widthlab_core::arch::{ArchKind, ArchSpec, WidthProfile};
use widthlab_core::nonlin::Nonlinearity;

use crate::error::NetsimError;
use crate::Result;

/// How the initialization variances enter the network map.
///
/// `Standard` bakes `sigma_w^2 / n_in` into the weight draws; `Ntk` draws
/// unit-variance raw weights and applies `sigma_w / sqrt(n_in)` (and
/// `sigma_b`) explicitly in the forward map. Both induce the same function
/// distribution at initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parameterization {
    Standard,
    Ntk,
}

#[derive(Debug, Clone)]
pub struct LayerParams {
    /// Weight matrix, shape (n_out, n_in).
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// A concrete network: affine layers with the activation applied between
/// them; the final preactivation is the output.
#[derive(Debug, Clone)]
pub struct MlpParams {
    pub layers: Vec<LayerParams>,
    pub parameterization: Parameterization,
    pub sigma_b2: f64,
    pub sigma_w2: f64,
    pub phi: Nonlinearity,
}

/// Per-layer preactivations of one forward pass over a batch
/// (columns are samples).
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub preacts: Vec<Array2<f64>>,
}

impl ForwardPass {
    pub fn output(&self) -> &Array2<f64> {
        self.preacts.last().expect("at least one layer")
    }
}

/// Gradients of the scalar output with respect to every raw parameter.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub layers: Vec<LayerParams>,
}

impl MlpParams {
    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Scale applied to the raw weight matrix of layer `l` in the forward map.
    fn w_scale(&self, l: usize) -> f64 {
        match self.parameterization {
            Parameterization::Standard => 1.0,
            Parameterization::Ntk => {
                (self.sigma_w2 / self.layers[l].w.ncols() as f64).sqrt()
            }
        }
    }

    fn b_scale(&self) -> f64 {
        match self.parameterization {
            Parameterization::Standard => 1.0,
            Parameterization::Ntk => self.sigma_b2.sqrt(),
        }
    }

    /// Flattened copy of all raw parameters (weights then biases, layer by
    /// layer), for finite-difference perturbations.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    /// Add `eps * dir` to the raw parameters in the flat layout.
    pub fn add_scaled(&mut self, dir: &[f64], eps: f64) {
        let mut k = 0;
        for l in self.layers.iter_mut() {
            for w in l.w.iter_mut() {
                *w += eps * dir[k];
                k += 1;
            }
            for b in l.b.iter_mut() {
                *b += eps * dir[k];
                k += 1;
            }
        }
        debug_assert_eq!(k, dir.len());
    }
}

/// Draw a fresh network. Standard parameterization draws
/// `W ~ N(0, sigma_w^2 / n_in)`, `b ~ N(0, sigma_b^2)`; NTK parameterization
/// draws unit normals and defers the scales to the forward map.
pub fn init_network(
    arch: &ArchSpec,
    widths: &WidthProfile,
    parameterization: Parameterization,
    rng: &mut ChaCha8Rng,
) -> Result<MlpParams> {
    init_network_with_outputs(arch, widths, 1, parameterization, rng)
}

/// [`init_network`] with an explicit output dimension (estimators that need
/// several output neurons use 2).
pub fn init_network_with_outputs(
    arch: &ArchSpec,
    widths: &WidthProfile,
    n_out: usize,
    parameterization: Parameterization,
    rng: &mut ChaCha8Rng,
) -> Result<MlpParams> {
    if !matches!(arch.kind, ArchKind::Fc) {
        return Err(NetsimError::ShapeMismatch(
            "simulated networks are fully connected".into(),
        ));
    }
    if widths.depth() != arch.depth_l || widths.input_dim != arch.input_dim {
        return Err(NetsimError::ShapeMismatch(format!(
            "widths {:?}/{} inconsistent with arch depth {} input {}",
            widths.widths, widths.input_dim, arch.depth_l, arch.input_dim
        )));
    }
    let mut dims = Vec::with_capacity(widths.depth() + 2);
    dims.push(widths.input_dim);
    dims.extend(widths.widths.iter().copied());
    dims.push(n_out);

    let mut layers = Vec::with_capacity(dims.len() - 1);
    for win in dims.windows(2) {
        let (n_in, n_out) = (win[0], win[1]);
        let (w_sd, b_sd) = match parameterization {
            Parameterization::Standard => ((arch.sigma_w2 / n_in as f64).sqrt(), arch.sigma_b2.sqrt()),
            Parameterization::Ntk => (1.0, 1.0),
        };
        let w = Array2::from_shape_fn((n_out, n_in), |_| {
            w_sd * rng.sample::<f64, _>(StandardNormal)
        });
        let b = Array1::from_shape_fn(n_out, |_| b_sd * rng.sample::<f64, _>(StandardNormal));
        layers.push(LayerParams { w, b });
    }
    Ok(MlpParams {
        layers,
        parameterization,
        sigma_b2: arch.sigma_b2,
        sigma_w2: arch.sigma_w2,
        phi: arch.phi,
    })
}

/// Forward pass over a batch (inputs: one column per sample), retaining all
/// preactivations for gradient and estimator reuse.
pub fn forward_batch(params: &MlpParams, inputs: &Array2<f64>) -> Result<ForwardPass> {
    if inputs.nrows() != params.input_dim() {
        return Err(NetsimError::ShapeMismatch(format!(
            "input dim {} vs network {}",
            inputs.nrows(),
            params.input_dim()
        )));
    }
    let mut preacts = Vec::with_capacity(params.layers.len());
    let mut act = inputs.clone();
    for (l, layer) in params.layers.iter().enumerate() {
        let sw = params.w_scale(l);
        let sb = params.b_scale();
        let mut z = layer.w.dot(&act) * sw;
        for (mut col, _) in z.columns_mut().into_iter().zip(0..) {
            col += &(&layer.b * sb);
        }
        if l + 1 < params.layers.len() {
            act = z.mapv(|v| params.phi.value(v));
        }
        preacts.push(z);
    }
    Ok(ForwardPass { preacts })
}

/// Single-input forward pass.
pub fn forward(params: &MlpParams, x: &[f64]) -> Result<ForwardPass> {
    let input = Array2::from_shape_vec((x.len(), 1), x.to_vec())
        .map_err(|e| NetsimError::ShapeMismatch(e.to_string()))?;
    forward_batch(params, &input)
}

/// Scalar output of a single-input forward pass.
pub fn scalar_output(params: &MlpParams, x: &[f64]) -> Result<f64> {
    let fp = forward(params, x)?;
    Ok(fp.output()[(0, 0)])
}

fn require_scalar_output(params: &MlpParams) -> Result<()> {
    if params.output_dim() != 1 {
        return Err(NetsimError::ShapeMismatch(
            "scalar-output network required".into(),
        ));
    }
    Ok(())
}

/// Forward-map scales `(w_scale, b_scale)` of layer `l`.
pub(crate) fn layer_scales(params: &MlpParams, l: usize) -> (f64, f64) {
    (params.w_scale(l), params.b_scale())
}

/// Backward pass for the batch: per-layer delta matrices
/// `delta^l = d f(x_col) / d z^l` (each column one sample), starting from a
/// supplied seed row for the output layer.
pub(crate) fn backward_deltas(
    params: &MlpParams,
    fp: &ForwardPass,
    output_seed: &Array2<f64>,
) -> Vec<Array2<f64>> {
    let n_layers = params.layers.len();
    let mut deltas = vec![Array2::zeros((0, 0)); n_layers];
    deltas[n_layers - 1] = output_seed.clone();
    for l in (1..n_layers).rev() {
        let sw = params.w_scale(l);
        let upstream = params.layers[l].w.t().dot(&deltas[l]) * sw;
        let gated = &upstream * &fp.preacts[l - 1].mapv(|v| params.phi.d1(v));
        deltas[l - 1] = gated;
    }
    deltas
}

/// Exact reverse-mode gradients of the scalar output with respect to every
/// raw parameter, for one input.
pub fn backprop_grads(params: &MlpParams, x: &[f64]) -> Result<ParamGrads> {
    require_scalar_output(params)?;
    let fp = forward(params, x)?;
    let seed = Array2::from_elem((1, 1), 1.0);
    let deltas = backward_deltas(params, &fp, &seed);
    let mut layers = Vec::with_capacity(params.layers.len());
    for (l, layer) in params.layers.iter().enumerate() {
        let sw = params.w_scale(l);
        let sb = params.b_scale();
        let act_in: Array1<f64> = if l == 0 {
            Array1::from_vec(x.to_vec())
        } else {
            fp.preacts[l - 1].column(0).mapv(|v| params.phi.value(v))
        };
        let delta = deltas[l].column(0);
        let mut w = Array2::zeros(layer.w.dim());
        for i in 0..layer.w.nrows() {
            let di = delta[i] * sw;
            for j in 0..layer.w.ncols() {
                w[(i, j)] = di * act_in[j];
            }
        }
        let b = delta.to_owned() * sb;
        layers.push(LayerParams { w, b });
    }
    Ok(ParamGrads { layers })
}

impl ParamGrads {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }
}

/// Gradient of the scalar output with respect to the input vector.
pub fn input_jacobian(params: &MlpParams, x: &[f64]) -> Result<Array1<f64>> {
    require_scalar_output(params)?;
    let fp = forward(params, x)?;
    let seed = Array2::from_elem((1, 1), 1.0);
    let deltas = backward_deltas(params, &fp, &seed);
    let sw0 = params.w_scale(0);
    Ok(params.layers[0].w.t().dot(&deltas[0].column(0)) * sw0)
}

/// Empirical tangent kernel `Theta_{ab} = sum_mu d f(x_a)/d theta_mu
/// d f(x_b)/d theta_mu` over the rows of `inputs`, computed layer by layer
/// from the rank-one structure of the per-layer gradients (no per-parameter
/// materialization). In standard parameterization the Gram matrix is divided
/// by the hidden width.
pub fn empirical_ntk(params: &MlpParams, inputs: &Array2<f64>) -> Result<Array2<f64>> {
    require_scalar_output(params)?;
    let m = inputs.nrows();
    let x_t = inputs.t().to_owned(); // columns are samples
    let fp = forward_batch(params, &x_t)?;
    let seed = Array2::from_elem((1, m), 1.0);
    let deltas = backward_deltas(params, &fp, &seed);

    let mut theta = Array2::<f64>::zeros((m, m));
    for (l, layer) in params.layers.iter().enumerate() {
        let sw = params.w_scale(l);
        let sb = params.b_scale();
        let act_in: Array2<f64> = if l == 0 {
            x_t.clone()
        } else {
            fp.preacts[l - 1].mapv(|v| params.phi.value(v))
        };
        let dgram = deltas[l].t().dot(&deltas[l]); // m x m
        let agram = act_in.t().dot(&act_in); // m x m
        let _ = layer;
        for a in 0..m {
            for b in 0..m {
                theta[(a, b)] += sw * sw * dgram[(a, b)] * agram[(a, b)]
                    + sb * sb * dgram[(a, b)];
            }
        }
    }
    if params.parameterization == Parameterization::Standard {
        // Theta = (1/n) sum_mu ... with n the (uniform) hidden width.
        let n = params.layers[0].w.nrows() as f64;
        theta.mapv_inplace(|v| v / n);
    }
    Ok(theta)
}

/// Largest eigenvalue of a small symmetric matrix by power iteration.
pub fn top_eigenvalue(mat: &Array2<f64>) -> f64 {
    let n = mat.nrows();
    if n == 1 {
        return mat[(0, 0)];
    }
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut lam = 0.0;
    for _ in 0..200 {
        let w = mat.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = &w / norm;
        lam = next.dot(&mat.dot(&next));
        v = next;
    }
    lam
}
