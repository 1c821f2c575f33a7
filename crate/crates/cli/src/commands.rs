//! Command implementations: each consumes a validated [`RunConfig`], runs
//! the corresponding engine pieces, and writes its artifacts atomically.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};

use widthlab_core::criticality::{phase_diagram, FixedPoint};
use widthlab_core::finitewidth::kappa4_recursion;
use widthlab_core::gp::{gp_log_marginal, gp_posterior};
use widthlab_core::kernel::{nngp_fc, nngp_residual, ntk_fc, KernelMatrix};

use widthlab_netsim::catapult::{catapult_map, catapult_regime, t_epsilon_scan};
use widthlab_netsim::mlp::{empirical_ntk, init_network, top_eigenvalue, Parameterization};
use widthlab_netsim::rng::RngPlan;
use widthlab_netsim::train::{linearized_train, train_gd, RecordSchedule, TrainOptions};

use crate::config::{arch_spec_of, read_dataset, width_profile_of, RunConfig};
use crate::output::{fmt_f64, write_atomic, write_csv, write_resolved_config};

pub fn out_dir(config: &RunConfig) -> PathBuf {
    config
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("widthlab-out"))
}

fn inputs_matrix(config: &RunConfig) -> Result<DMatrix<f64>> {
    let path = config
        .dataset
        .as_ref()
        .ok_or_else(|| anyhow!("config invalid at $.dataset: dataset file required"))?;
    let ds = read_dataset(path)?;
    let m = ds.inputs.len();
    let n0 = ds.inputs[0].len();
    Ok(DMatrix::from_fn(m, n0, |i, j| ds.inputs[i][j]))
}

fn kernels_to_json(kernels: &[KernelMatrix]) -> serde_json::Value {
    serde_json::json!(kernels
        .iter()
        .map(|k| {
            serde_json::json!({
                "layer": k.layer,
                "dim": k.dim(),
                "values": (0..k.dim())
                    .map(|i| (0..k.dim()).map(|j| k.values[(i, j)]).collect::<Vec<_>>())
                    .collect::<Vec<_>>(),
            })
        })
        .collect::<Vec<_>>())
}

/// `kernel`: NNGP recursion over the dataset inputs; matrices to JSON,
/// layer diagonals to CSV.
pub fn run_kernel(config: &RunConfig) -> Result<()> {
    let arch_cfg = config
        .arch
        .as_ref()
        .ok_or_else(|| anyhow!("config invalid at $.arch: architecture required"))?;
    let arch = arch_spec_of(arch_cfg)?;
    let inputs = inputs_matrix(config)?;
    let kernels = match arch.kind {
        widthlab_core::arch::ArchKind::Residual { .. } => nngp_residual(&inputs, &arch)?,
        _ => nngp_fc(&inputs, &arch)?,
    };
    let dir = out_dir(config);
    let seed = config.master_seed();
    write_atomic(
        &dir.join("kernels.json"),
        &serde_json::to_string_pretty(&kernels_to_json(&kernels))?,
    )?;
    let mut rows = Vec::new();
    for k in &kernels {
        for i in 0..k.dim() {
            rows.push(format!("{},{},{}", k.layer, i, fmt_f64(k.values[(i, i)])));
        }
    }
    write_csv(&dir.join("kernel_diag.csv"), seed, "layer,sample,k_diag", &rows)?;
    write_resolved_config(&dir, config)?;
    Ok(())
}

/// `ntk`: tangent-kernel recursion alongside the NNGP list.
pub fn run_ntk(config: &RunConfig) -> Result<()> {
    let arch_cfg = config
        .arch
        .as_ref()
        .ok_or_else(|| anyhow!("config invalid at $.arch: architecture required"))?;
    let arch = arch_spec_of(arch_cfg)?;
    let inputs = inputs_matrix(config)?;
    let (thetas, nngp) = ntk_fc(&inputs, &arch)?;
    let dir = out_dir(config);
    let seed = config.master_seed();
    write_atomic(
        &dir.join("ntk.json"),
        &serde_json::to_string_pretty(&serde_json::json!({
            "theta": kernels_to_json(&thetas),
            "nngp": kernels_to_json(&nngp),
        }))?,
    )?;
    let mut rows = Vec::new();
    for k in &thetas {
        for i in 0..k.dim() {
            rows.push(format!("{},{},{}", k.layer, i, fmt_f64(k.values[(i, i)])));
        }
    }
    write_csv(&dir.join("ntk_diag.csv"), seed, "layer,sample,theta_diag", &rows)?;
    write_resolved_config(&dir, config)?;
    Ok(())
}

/// `phase-diagram`: sweep the (sigma_b^2, sigma_w^2) grid.
pub fn run_phase_diagram(config: &RunConfig) -> Result<()> {
    let arch_cfg = config
        .arch
        .as_ref()
        .ok_or_else(|| anyhow!("config invalid at $.arch: architecture required"))?;
    let phi = crate::config::phi_of(&arch_cfg.phi)?;
    let sweep = config
        .sweep
        .as_ref()
        .ok_or_else(|| anyhow!("config invalid at $.sweep: grids required"))?;
    let rows_data = phase_diagram(&phi, &sweep.sigma_b2_grid, &sweep.sigma_w2_grid);
    let mut rows = Vec::new();
    for p in &rows_data {
        let q = match p.q_star {
            FixedPoint::Converged(v) | FixedPoint::Marginal(v) => fmt_f64(v),
            FixedPoint::NotConverged(_) => "not-converged".to_string(),
        };
        rows.push(format!(
            "{},{},{},{},{},{},{},{}",
            fmt_f64(p.sigma_b2),
            fmt_f64(p.sigma_w2),
            q,
            fmt_f64(p.chi1),
            p.xi_q.map(fmt_f64).unwrap_or_else(|| "nan".into()),
            p.xi_c.map(fmt_f64).unwrap_or_else(|| "nan".into()),
            p.phase,
            p.status.replace(',', ";"),
        ));
    }
    let dir = out_dir(config);
    write_csv(
        &dir.join("phase_diagram.csv"),
        config.master_seed(),
        "sigma_b2,sigma_w2,q_star,chi1,xi_q,xi_c,phase,status",
        &rows,
    )?;
    write_resolved_config(&dir, config)?;
    Ok(())
}

/// `gp-predict`: exact GP posterior from the NNGP kernel of the configured
/// architecture; dataset rows are training points, query rows (or the train
/// set when no query file is given) are prediction points.
pub fn run_gp_predict(config: &RunConfig) -> Result<()> {
    let arch_cfg = config
        .arch
        .as_ref()
        .ok_or_else(|| anyhow!("config invalid at $.arch: architecture required"))?;
    let arch = arch_spec_of(arch_cfg)?;
    let path = config
        .dataset
        .as_ref()
        .ok_or_else(|| anyhow!("config invalid at $.dataset: dataset file required"))?;
    let ds = read_dataset(path)?;
    let targets = ds
        .targets
        .as_ref()
        .ok_or_else(|| anyhow!("config invalid at $.dataset: y column required"))?;
    let m = ds.inputs.len();
    let n0 = ds.inputs[0].len();
    let queries: Vec<Vec<f64>> = match &config.query {
        Some(qp) => read_dataset(qp)?.inputs,
        None => ds.inputs.clone(),
    };
    let q = queries.len();

    // Joint kernel over train + query points, then sliced.
    let total = m + q;
    let all = DMatrix::from_fn(total, n0, |i, j| {
        if i < m {
            ds.inputs[i][j]
        } else {
            queries[i - m][j]
        }
    });
    let kernels = nngp_fc(&all, &arch)?;
    let k_all = kernels.last().unwrap();
    let k_train = KernelMatrix::new(
        k_all.layer,
        k_all.values.view((0, 0), (m, m)).into_owned(),
    );
    let k_cross = k_all.values.view((0, m), (m, q)).into_owned();
    let k_query_diag = DVector::from_fn(q, |i, _| k_all.values[(m + i, m + i)]);
    let y = DVector::from_fn(m, |i, _| targets[i]);

    let noise = config.option_f64("noise", 0.0);
    let jitter = config.option_f64("jitter", 0.0);
    let post = gp_posterior(&k_train, &k_cross, &k_query_diag, &y, noise + jitter)?;
    let log_ml = gp_log_marginal(&k_train, &y, noise + jitter)?;

    let dir = out_dir(config);
    let rows: Vec<String> = (0..q)
        .map(|i| format!("{},{},{}", i, fmt_f64(post.mean[i]), fmt_f64(post.variance[i])))
        .collect();
    write_csv(
        &dir.join("predictions.csv"),
        config.master_seed(),
        "query_id,mean,variance",
        &rows,
    )?;
    write_atomic(
        &dir.join("gp_summary.json"),
        &serde_json::to_string_pretty(&serde_json::json!({
            "log_marginal_likelihood": log_ml,
            "noise": noise,
            "jitter": jitter,
            "train_points": m,
            "query_points": q,
        }))?,
    )?;
    write_resolved_config(&dir, config)?;
    Ok(())
}

/// `train-compare`: simulate full-batch GD against the linearized model.
pub fn run_train_compare(config: &RunConfig) -> Result<()> {
    let arch_cfg = config
        .arch
        .as_ref()
        .ok_or_else(|| anyhow!("config invalid at $.arch: architecture required"))?;
    let arch = arch_spec_of(arch_cfg)?;
    let widths = width_profile_of(config)?;
    let path = config
        .dataset
        .as_ref()
        .ok_or_else(|| anyhow!("config invalid at $.dataset: dataset file required"))?;
    let ds = read_dataset(path)?;
    let targets_v = ds
        .targets
        .as_ref()
        .ok_or_else(|| anyhow!("config invalid at $.dataset: y column required"))?;
    let m = ds.inputs.len();
    let n0 = ds.inputs[0].len();
    let inputs = Array2::from_shape_fn((m, n0), |(i, j)| ds.inputs[i][j]);
    let targets = Array1::from_vec(targets_v.clone());

    let plan = RngPlan::new(config.master_seed());
    let parameterization = match config
        .options
        .get("parameterization")
        .and_then(|v| v.as_str())
        .unwrap_or("ntk")
    {
        "standard" => Parameterization::Standard,
        _ => Parameterization::Ntk,
    };
    let net = init_network(&arch, &widths, parameterization, &mut plan.substream(0))
        .context("network init")?;
    let theta0 = empirical_ntk(&net, &inputs)?;
    let lam_top = top_eigenvalue(&theta0);
    let eta = config.option_f64("eta", 0.5 * 2.0 / lam_top);
    let steps = config.option_usize("steps", 1000);
    let record_every = config.option_usize("record_every", 0);
    let opts = TrainOptions {
        schedule: if record_every > 0 {
            RecordSchedule::EveryN(record_every)
        } else {
            RecordSchedule::DenseThenGeometric
        },
        probes: None,
        record_ntk: config.option_usize("record_ntk", 1) != 0,
    };
    let gd = train_gd(&net, &inputs, &targets, eta, steps, &opts)?;
    let lin = linearized_train(&net, &inputs, &targets, eta, steps, &opts)?;

    let dir = out_dir(config);
    let seed = config.master_seed();
    let header = {
        let mut h = String::from("t,loss");
        for i in 0..m {
            h.push_str(&format!(",f_{i}"));
        }
        h.push_str(",lambda_top");
        h
    };
    for (name, rec) in [("trajectory_gd.csv", &gd), ("trajectory_lin.csv", &lin)] {
        let rows: Vec<String> = rec
            .steps
            .iter()
            .map(|s| {
                let mut row = format!("{},{}", s.t, fmt_f64(s.loss));
                for f in &s.f_train {
                    row.push_str(&format!(",{}", fmt_f64(*f)));
                }
                row.push_str(&format!(
                    ",{}",
                    s.lambda_top.map(fmt_f64).unwrap_or_else(|| "nan".into())
                ));
                row
            })
            .collect();
        write_csv(&dir.join(name), seed, &header, &rows)?;
    }
    // full Theta snapshots to JSON
    let snaps: Vec<serde_json::Value> = gd
        .steps
        .iter()
        .filter_map(|s| {
            s.ntk.as_ref().map(|t| {
                serde_json::json!({"t": s.t, "theta": t})
            })
        })
        .collect();
    write_atomic(
        &dir.join("theta_snapshots.json"),
        &serde_json::to_string_pretty(&serde_json::json!({
            "m": m,
            "eta": eta,
            "snapshots": snaps,
        }))?,
    )?;
    write_resolved_config(&dir, config)?;
    if gd.diverged {
        return Err(anyhow!("training diverged; partial record written"));
    }
    Ok(())
}

/// `finite-width`: per-layer kappa_4 profile CSV.
pub fn run_finite_width(config: &RunConfig) -> Result<()> {
    let arch_cfg = config
        .arch
        .as_ref()
        .ok_or_else(|| anyhow!("config invalid at $.arch: architecture required"))?;
    let arch = arch_spec_of(arch_cfg)?;
    let widths = width_profile_of(config)?;
    let input = match &config.dataset {
        Some(path) => {
            let ds = read_dataset(path)?;
            DVector::from_vec(ds.inputs[0].clone())
        }
        None => DVector::from_element(arch.input_dim, 1.0),
    };
    let profile = kappa4_recursion(&arch, &widths, &input)?;
    let rows: Vec<String> = profile
        .layers
        .iter()
        .map(|l| {
            format!(
                "{},{},{},{}",
                l.layer,
                fmt_f64(l.k_diag),
                fmt_f64(l.kappa4),
                fmt_f64(l.kappa4 / (l.k_diag * l.k_diag))
            )
        })
        .collect();
    let dir = out_dir(config);
    write_csv(
        &dir.join("kappa4_profile.csv"),
        config.master_seed(),
        "layer,k_diag,kappa4,ratio",
        &rows,
    )?;
    write_resolved_config(&dir, config)?;
    Ok(())
}

/// `catapult`: the two-variable map across a learning-rate list plus the
/// time-to-epsilon scan.
pub fn run_catapult(config: &RunConfig) -> Result<()> {
    let lambda0 = config.option_f64("lambda0", 2.0);
    let n = config.option_f64("n", 1e6);
    let f0 = config.option_f64("f0", 1.0);
    let steps = config.option_usize("steps", 2000);
    let etas: Vec<f64> = config
        .options
        .get("etas")
        .and_then(|v| v.as_array())
        .map(|a| a.iter().filter_map(|x| x.as_f64()).collect())
        .unwrap_or_else(|| vec![0.5 / lambda0 * 2.0, 1.5 / lambda0 * 2.0, 2.1 / lambda0 * 2.0]);

    let dir = out_dir(config);
    let seed = config.master_seed();
    let mut regime_rows = Vec::new();
    for (i, &eta) in etas.iter().enumerate() {
        let traj = catapult_map(f0, lambda0, n, eta, steps);
        let rows: Vec<String> = traj
            .steps
            .iter()
            .map(|s| {
                format!(
                    "{},{},{},{}",
                    s.t,
                    fmt_f64(s.f),
                    fmt_f64(s.lambda),
                    fmt_f64(s.loss)
                )
            })
            .collect();
        write_csv(
            &dir.join(format!("catapult_eta{i}.csv")),
            seed,
            "t,f,lambda,loss",
            &rows,
        )?;
        regime_rows.push(format!(
            "{},{},{},{}",
            fmt_f64(eta),
            catapult_regime(eta, lambda0),
            traj.diverged,
            fmt_f64(traj.final_step().loss)
        ));
    }
    write_csv(
        &dir.join("catapult_regimes.csv"),
        seed,
        "eta,regime,diverged,final_loss",
        &regime_rows,
    )?;

    let epsilon = config.option_f64("epsilon", 1e-8);
    let eta_crit = 2.0 / lambda0;
    let scan_etas: Vec<f64> = [0.99, 0.995, 0.999].iter().map(|c| c * eta_crit).collect();
    let scan = t_epsilon_scan(lambda0, n, epsilon, &scan_etas, 1_000_000);
    let rows: Vec<String> = scan
        .iter()
        .map(|r| {
            format!(
                "{},{},{}",
                fmt_f64(r.eta),
                r.steps_to_epsilon
                    .map(|t| t.to_string())
                    .unwrap_or_else(|| "diverged".into()),
                r.capped
            )
        })
        .collect();
    write_csv(&dir.join("t_epsilon.csv"), seed, "eta,steps_to_epsilon,capped", &rows)?;
    write_resolved_config(&dir, config)?;
    Ok(())
}

/// `validate`: run a named suite; `Ok(true)` means every check passed.
pub fn run_validate(config: &RunConfig, suite_name: &str, dir: &Path) -> Result<bool> {
    let outcomes = crate::acceptance::suite(suite_name)
        .ok_or_else(|| anyhow!("unknown suite '{suite_name}' (one of {:?})", crate::acceptance::SUITES))?;
    let all_pass = outcomes.iter().all(|o| o.passed);
    let rows: Vec<String> = outcomes
        .iter()
        .map(|o| {
            format!(
                "{},{},{},\"{}\"",
                o.id,
                o.name.replace(',', ";"),
                if o.passed { "pass" } else { "fail" },
                o.details.replace('"', "'").replace(',', ";")
            )
        })
        .collect();
    write_csv(
        &dir.join("validate_report.csv"),
        config.master_seed(),
        "criterion,name,status,details",
        &rows,
    )?;
    write_resolved_config(dir, config)?;
    Ok(all_pass)
}
