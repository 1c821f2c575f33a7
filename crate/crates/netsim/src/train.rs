//! Full-batch gradient descent on the mean-squared error, for real networks
//! and for the function-space linearized model.
//!
//! Loss convention throughout: `L = (1/2m) sum_a (f(x_a) - y_a)^2`, so the
//! residual is `R_a = f(x_a) - y_a` and parameter updates carry `eta/m`.

use ndarray::{Array1, Array2};

use crate::error::NetsimError;
use crate::mlp::{empirical_ntk, forward_batch, top_eigenvalue, MlpParams};
use crate::Result;

/// Loss value above which a trajectory is declared diverged.
pub const DIVERGENCE_CAP: f64 = 1e12;

/// When to write trajectory records.
#[derive(Debug, Clone, Copy)]
pub enum RecordSchedule {
    /// Every `k`-th step (plus the final step).
    EveryN(usize),
    /// Every step below 100, then geometrically (t, 2t, 4t, ...).
    DenseThenGeometric,
}

impl RecordSchedule {
    fn record_at(&self, t: usize, next_geo: &mut usize) -> bool {
        match self {
            RecordSchedule::EveryN(k) => t % (*k).max(1) == 0,
            RecordSchedule::DenseThenGeometric => {
                if t < 100 {
                    true
                } else if t >= *next_geo {
                    *next_geo = (*next_geo).max(100) * 2;
                    true
                } else {
                    false
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub schedule: RecordSchedule,
    /// Extra inputs (rows) whose function values are tracked.
    pub probes: Option<Array2<f64>>,
    /// Record the empirical NTK at recorded steps.
    pub record_ntk: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            schedule: RecordSchedule::DenseThenGeometric,
            probes: None,
            record_ntk: false,
        }
    }
}

/// One recorded step of a training run.
#[derive(Debug, Clone)]
pub struct TrajectoryStep {
    pub t: usize,
    pub f_train: Vec<f64>,
    pub f_probe: Vec<f64>,
    pub loss: f64,
    pub lambda_top: Option<f64>,
    /// Flattened m x m NTK snapshot when requested.
    pub ntk: Option<Vec<f64>>,
    /// L2 distance of raw parameters from initialization.
    pub param_dist: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub steps: Vec<TrajectoryStep>,
    pub diverged: bool,
    pub train_size: usize,
}

impl TrajectoryRecord {
    pub fn final_step(&self) -> &TrajectoryStep {
        self.steps.last().expect("at least the initial record")
    }
}

fn mse_loss(f: &Array1<f64>, y: &Array1<f64>) -> f64 {
    let m = y.len() as f64;
    f.iter()
        .zip(y.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / (2.0 * m)
}

/// Full-batch gradient descent on the network parameters. Records function
/// values on train and probe points, the loss, and (optionally) empirical
/// NTK snapshots; aborts with a partial record if the loss exceeds
/// [`DIVERGENCE_CAP`].
pub fn train_gd(
    params: &MlpParams,
    inputs: &Array2<f64>,
    targets: &Array1<f64>,
    eta: f64,
    steps: usize,
    opts: &TrainOptions,
) -> Result<TrajectoryRecord> {
    if eta <= 0.0 {
        return Err(NetsimError::ShapeMismatch("eta must be > 0".into()));
    }
    let m = inputs.nrows();
    if targets.len() != m {
        return Err(NetsimError::ShapeMismatch(format!(
            "{m} inputs vs {} targets",
            targets.len()
        )));
    }
    let mut net = params.clone();
    let theta_init = net.to_flat();
    let x_t = inputs.t().to_owned();
    let probe_t = opts.probes.as_ref().map(|p| p.t().to_owned());

    let mut record = TrajectoryRecord {
        steps: Vec::new(),
        diverged: false,
        train_size: m,
    };
    let mut next_geo = 100usize;

    for t in 0..=steps {
        let fp = forward_batch(&net, &x_t)?;
        let f_train: Array1<f64> = fp.output().row(0).to_owned();
        let loss = mse_loss(&f_train, targets);

        let should_record = t == steps || opts.schedule.record_at(t, &mut next_geo);
        if should_record || !loss.is_finite() || loss > DIVERGENCE_CAP {
            let f_probe = match &probe_t {
                Some(p) => forward_batch(&net, p)?.output().row(0).to_vec(),
                None => Vec::new(),
            };
            let (ntk, lambda_top) = if opts.record_ntk {
                let theta = empirical_ntk(&net, inputs)?;
                let lam = top_eigenvalue(&theta);
                (Some(theta.iter().cloned().collect()), Some(lam))
            } else {
                (None, None)
            };
            let dist = net
                .to_flat()
                .iter()
                .zip(&theta_init)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            record.steps.push(TrajectoryStep {
                t,
                f_train: f_train.to_vec(),
                f_probe,
                loss,
                lambda_top,
                ntk,
                param_dist: Some(dist),
            });
        }
        if !loss.is_finite() || loss > DIVERGENCE_CAP {
            record.diverged = true;
            return Ok(record);
        }
        if t == steps {
            break;
        }

        // dL/dz^(last) = R / m, one column per sample.
        let resid = &f_train - targets;
        let seed = Array2::from_shape_fn((1, m), |(_, a)| resid[a] / m as f64);
        gd_step(&mut net, &x_t, &fp, &seed, eta);
    }
    Ok(record)
}

/// One parameter update from precomputed forward state and output seed.
fn gd_step(
    net: &mut MlpParams,
    x_t: &Array2<f64>,
    fp: &crate::mlp::ForwardPass,
    seed: &Array2<f64>,
    eta: f64,
) {
    let deltas = crate::mlp::backward_deltas(net, fp, seed);
    for l in 0..net.layers.len() {
        let (sw, sb) = crate::mlp::layer_scales(net, l);
        let act_in = if l == 0 {
            x_t.clone()
        } else {
            fp.preacts[l - 1].mapv(|v| net.phi.value(v))
        };
        // dL/dW = sw * delta . act_in^T ; dL/db = sb * row sums of delta
        let wgrad = deltas[l].dot(&act_in.t()) * sw;
        net.layers[l].w.scaled_add(-eta, &wgrad);
        let bgrad = deltas[l].sum_axis(ndarray::Axis(1)) * sb;
        net.layers[l].b.scaled_add(-eta, &bgrad);
    }
}

/// Gradient descent on the model linearized at `params0`, run in function
/// space through the empirical tangent kernel (no parameter vector is
/// materialized): `f_{t+1} = f_t - (eta/m) Theta[., train] R_t`.
pub fn linearized_train(
    params0: &MlpParams,
    inputs: &Array2<f64>,
    targets: &Array1<f64>,
    eta: f64,
    steps: usize,
    opts: &TrainOptions,
) -> Result<TrajectoryRecord> {
    let m = inputs.nrows();
    if targets.len() != m {
        return Err(NetsimError::ShapeMismatch(format!(
            "{m} inputs vs {} targets",
            targets.len()
        )));
    }
    // Stack train + probe points and evaluate the frozen kernel across all.
    let n_probe = opts.probes.as_ref().map_or(0, |p| p.nrows());
    let total = m + n_probe;
    let mut all = Array2::<f64>::zeros((total, inputs.ncols()));
    all.slice_mut(ndarray::s![0..m, ..]).assign(inputs);
    if let Some(p) = &opts.probes {
        all.slice_mut(ndarray::s![m.., ..]).assign(p);
    }
    let theta = empirical_ntk(params0, &all)?;
    let f0_all = forward_batch(params0, &all.t().to_owned())?
        .output()
        .row(0)
        .to_owned();

    let mut f = f0_all.clone();
    let mut record = TrajectoryRecord {
        steps: Vec::new(),
        diverged: false,
        train_size: m,
    };
    let mut next_geo = 100usize;
    for t in 0..=steps {
        let f_train = f.slice(ndarray::s![0..m]).to_owned();
        let loss = mse_loss(&f_train, targets);
        if t == steps || opts.schedule.record_at(t, &mut next_geo) || loss > DIVERGENCE_CAP {
            record.steps.push(TrajectoryStep {
                t,
                f_train: f_train.to_vec(),
                f_probe: f.slice(ndarray::s![m..]).to_vec(),
                loss,
                lambda_top: None,
                ntk: None,
                param_dist: None,
            });
        }
        if !loss.is_finite() || loss > DIVERGENCE_CAP {
            record.diverged = true;
            return Ok(record);
        }
        if t == steps {
            break;
        }
        let resid = &f_train - targets;
        let mut update = Array1::<f64>::zeros(total);
        for i in 0..total {
            let mut acc = 0.0;
            for a in 0..m {
                acc += theta[(i, a)] * resid[a];
            }
            update[i] = acc * eta / m as f64;
        }
        f -= &update;
    }
    Ok(record)
}
