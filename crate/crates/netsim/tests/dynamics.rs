//! Training-dynamics tests: monotonicity, linearization, scaling trends, and
//! the perturbative correction pipeline end to end.

use ndarray::array;

use widthlab_core::finitewidth::{perturbative_train_prediction, PerturbationInputs};
use widthlab_core::gp::{ntk_gd_train_evolution, spectral_decompose};
use widthlab_core::kernel::KernelMatrix;
use widthlab_core::nonlin::Nonlinearity;
use widthlab_core::{ArchSpec, WidthProfile};

use widthlab_netsim::mlp::{
    empirical_ntk, init_network, top_eigenvalue, Parameterization,
};
use widthlab_netsim::osmeasure::{measure_os, DEFAULT_FD_STEP};
use widthlab_netsim::rng::RngPlan;
use widthlab_netsim::train::{linearized_train, train_gd, RecordSchedule, TrainOptions};

fn ols_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

#[test]
fn loss_monotone_below_critical_rate() {
    let arch = ArchSpec::fc(2, 1, 0.05, 1.5, Nonlinearity::Tanh).unwrap();
    let widths = WidthProfile::uniform(128, 2, 1).unwrap();
    let plan = RngPlan::new(601);
    let net =
        init_network(&arch, &widths, Parameterization::Ntk, &mut plan.substream(0)).unwrap();
    let inputs = array![[-1.0], [-0.2], [0.5], [1.0]];
    let targets = array![0.3, -0.1, 0.4, -0.5];
    let theta = empirical_ntk(&net, &inputs).unwrap();
    let lam_max = top_eigenvalue(&theta);
    // eta below 2/(lam_min + lam_max) <= 2/lam_max guarantees monotonicity
    let eta = 0.8 * 2.0 / (2.0 * lam_max);
    let rec = train_gd(
        &net,
        &inputs,
        &targets,
        eta,
        2000,
        &TrainOptions {
            schedule: RecordSchedule::EveryN(1),
            probes: None,
            record_ntk: false,
        },
    )
    .unwrap();
    assert!(!rec.diverged);
    for w in rec.steps.windows(2).skip(3) {
        assert!(
            w[1].loss <= w[0].loss + 1e-14,
            "loss rose at t = {}",
            w[1].t
        );
    }
    assert!(rec.final_step().loss < rec.steps[0].loss * 1e-4);
}

#[test]
fn frozen_when_started_at_targets() {
    let arch = ArchSpec::fc(1, 1, 0.1, 1.0, Nonlinearity::Tanh).unwrap();
    let widths = WidthProfile::uniform(32, 1, 1).unwrap();
    let plan = RngPlan::new(602);
    let net =
        init_network(&arch, &widths, Parameterization::Ntk, &mut plan.substream(0)).unwrap();
    let inputs = array![[0.4], [-0.8]];
    let f0: Vec<f64> = vec![
        widthlab_netsim::mlp::scalar_output(&net, &[0.4]).unwrap(),
        widthlab_netsim::mlp::scalar_output(&net, &[-0.8]).unwrap(),
    ];
    let targets = ndarray::Array1::from_vec(f0.clone());
    let rec = train_gd(
        &net,
        &inputs,
        &targets,
        0.5,
        50,
        &TrainOptions::default(),
    )
    .unwrap();
    for s in &rec.steps {
        assert!(s.loss < 1e-28);
        assert_eq!(s.param_dist.unwrap(), 0.0);
    }
}

#[test]
fn linear_network_trajectory_tracks_linearization() {
    // For a linear-activation network the tangent kernel barely moves (its
    // drift is O(1/n), not O(1/sqrt n)), so the width-32 trajectory already
    // sits on top of the linearized one; both settle on the same
    // least-squares solution of this non-interpolable dataset.
    let plan = RngPlan::new(603);
    let inputs = array![[0.9, -0.3], [0.2, 0.7], [-0.5, 0.4]];
    let targets = array![0.2, -0.6, 0.9];

    let arch = ArchSpec::fc(2, 2, 0.0, 1.0, Nonlinearity::Linear).unwrap();
    let widths = WidthProfile::uniform(32, 2, 2).unwrap();
    let net =
        init_network(&arch, &widths, Parameterization::Ntk, &mut plan.substream(32)).unwrap();
    let theta = empirical_ntk(&net, &inputs).unwrap();
    let eta = 0.4 * 2.0 / (2.0 * top_eigenvalue(&theta));
    let opts = TrainOptions {
        schedule: RecordSchedule::EveryN(1),
        probes: None,
        record_ntk: false,
    };
    let gd = train_gd(&net, &inputs, &targets, eta, 300, &opts).unwrap();
    let lin = linearized_train(&net, &inputs, &targets, eta, 300, &opts).unwrap();
    let mut sup = 0.0f64;
    for (a, b) in gd.steps.iter().zip(&lin.steps) {
        for (fa, fb) in a.f_train.iter().zip(&b.f_train) {
            sup = sup.max((fa - fb).abs());
        }
    }
    assert!(sup < 0.01, "width-32 linear tracking gap {sup}");
    for (fa, fb) in gd
        .final_step()
        .f_train
        .iter()
        .zip(&lin.final_step().f_train)
    {
        assert!((fa - fb).abs() < 1e-3);
    }
}

#[test]
fn linearized_training_reaches_targets() {
    // Interpolable two-point problem with a nonsingular kernel: the
    // linearized model converges to the targets at long horizons.
    let plan = RngPlan::new(607);
    let arch = ArchSpec::fc(1, 1, 0.1, 1.5, Nonlinearity::Tanh).unwrap();
    let widths = WidthProfile::uniform(64, 1, 1).unwrap();
    let net =
        init_network(&arch, &widths, Parameterization::Ntk, &mut plan.substream(0)).unwrap();
    let inputs = array![[0.5], [-0.7]];
    let targets = array![0.3, -0.2];
    let theta = empirical_ntk(&net, &inputs).unwrap();
    let eta = 0.5 * 2.0 * 2.0 / top_eigenvalue(&theta);
    let rec = linearized_train(&net, &inputs, &targets, eta, 6000, &TrainOptions::default())
        .unwrap();
    for (f, y) in rec.final_step().f_train.iter().zip(targets.iter()) {
        assert!((f - y).abs() < 1e-8, "{f} vs {y}");
    }
}

#[test]
fn linearization_gap_and_kernel_drift_shrink_with_width() {
    // ReLU nets (where the 1/sqrt(n) rate is tight): sup_t |f - f_lin| and
    // sup_t |Theta_t - Theta_0|_F each shrink like n^{-1/2} within a factor
    // of two across a 16x width span.
    let plan = RngPlan::new(611);
    let inputs = array![[-1.0], [-0.55], [-0.11], [0.33], [0.77], [1.0]];
    let targets = array![0.5, -0.2, 0.3, -0.4, 0.1, 0.6];
    let mut gap_means = Vec::new();
    let mut drift_means = Vec::new();
    for &n in &[64usize, 1024] {
        let arch = ArchSpec::fc(2, 1, 0.1, 2.0, Nonlinearity::Relu).unwrap();
        let widths = WidthProfile::uniform(n, 2, 1).unwrap();
        let seeds = 4u64;
        let mut lg = 0.0f64;
        let mut ld = 0.0f64;
        for s in 0..seeds {
            let net = init_network(
                &arch,
                &widths,
                Parameterization::Ntk,
                &mut plan.substream(n as u64 * 100 + s),
            )
            .unwrap();
            let theta0 = empirical_ntk(&net, &inputs).unwrap();
            let eta = 0.5 * 2.0 / (2.0 * top_eigenvalue(&theta0));
            let opts = TrainOptions {
                schedule: RecordSchedule::EveryN(10),
                probes: None,
                record_ntk: true,
            };
            let gd = train_gd(&net, &inputs, &targets, eta, 800, &opts).unwrap();
            let lin = linearized_train(&net, &inputs, &targets, eta, 800, &opts).unwrap();
            let mut sup_gap = 0.0f64;
            for (a, b) in gd.steps.iter().zip(&lin.steps) {
                for (fa, fb) in a.f_train.iter().zip(&b.f_train) {
                    sup_gap = sup_gap.max((fa - fb).abs());
                }
            }
            let t0 = gd.steps[0].ntk.as_ref().unwrap().clone();
            let mut sup_drift = 0.0f64;
            for st in &gd.steps {
                let t = st.ntk.as_ref().unwrap();
                let d: f64 = t
                    .iter()
                    .zip(&t0)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                sup_drift = sup_drift.max(d);
            }
            lg += sup_gap.ln();
            ld += sup_drift.ln();
        }
        gap_means.push((lg / seeds as f64).exp());
        drift_means.push((ld / seeds as f64).exp());
    }
    // 16x width: 1/sqrt(n) predicts a factor 1/4, allowed within 2x.
    let gap_ratio = gap_means[1] / gap_means[0];
    let drift_ratio = drift_means[1] / drift_means[0];
    assert!(
        (0.125..=0.5).contains(&gap_ratio),
        "gap ratio {gap_ratio} (means {gap_means:?})"
    );
    assert!(
        (0.125..=0.5).contains(&drift_ratio),
        "drift ratio {drift_ratio} (means {drift_means:?})"
    );
}

#[test]
fn one_step_kernel_change_tracks_depth_to_width() {
    // Smooth activation: relative one-step NTK change grows like L/n over
    // the (L, n) grid; trend test via the log-log slope.
    let plan = RngPlan::new(605);
    let inputs = array![[1.0, 0.5, -0.5], [-0.4, 0.8, 0.3]];
    let targets = array![0.0, 0.0];
    let mut pts = Vec::new();
    for (ci, (l, n)) in [
        (2usize, 256usize),
        (4, 256),
        (8, 256),
        (2, 1024),
        (4, 1024),
        (8, 1024),
    ]
    .into_iter()
    .enumerate()
    {
        let arch = ArchSpec::fc(l, 3, 0.0, 1.0, Nonlinearity::Tanh).unwrap();
        let widths = WidthProfile::uniform(n, l, 3).unwrap();
        let seeds = 25u64;
        let mut acc = 0.0f64;
        for s in 0..seeds {
            let net = init_network(
                &arch,
                &widths,
                Parameterization::Ntk,
                &mut plan.substream(ci as u64 * 1000 + s),
            )
            .unwrap();
            let opts = TrainOptions {
                schedule: RecordSchedule::EveryN(1),
                probes: None,
                record_ntk: true,
            };
            let rec = train_gd(&net, &inputs, &targets, 0.3, 1, &opts).unwrap();
            let t0 = rec.steps[0].ntk.as_ref().unwrap();
            let t1 = rec.steps[1].ntk.as_ref().unwrap();
            let num: f64 = t0
                .iter()
                .zip(t1)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let den: f64 = t0.iter().map(|a| a * a).sum::<f64>().sqrt();
            acc += num / den;
        }
        pts.push(((l as f64 / n as f64).ln(), (acc / seeds as f64).ln()));
    }
    let slope = ols_slope(&pts);
    assert!((0.6..=1.4).contains(&slope), "one-step trend slope {slope}");
}

#[test]
fn perturbative_correction_beats_uncorrected_small_instance() {
    // Two-sample dataset, width 512 depth 1: the Theta^(1)-corrected
    // train-set prediction tracks true GD better than the uncorrected
    // linearized flow, averaged over seeds.
    let plan = RngPlan::new(606);
    let arch = ArchSpec::fc(1, 1, 0.0, 1.5, Nonlinearity::Tanh).unwrap();
    let widths = WidthProfile::uniform(512, 1, 1).unwrap();
    let inputs = array![[0.6], [-0.9]];
    let targets = array![0.4, -0.3];
    let seeds = 12u64;
    let (mut msd_unc, mut msd_corr) = (0.0f64, 0.0f64);
    for s in 0..seeds {
        let net = init_network(
            &arch,
            &widths,
            Parameterization::Ntk,
            &mut plan.substream(s),
        )
        .unwrap();
        let theta = empirical_ntk(&net, &inputs).unwrap();
        let lam_max = top_eigenvalue(&theta);
        let m = 2.0;
        let eta = 0.05 * 2.0 * m / lam_max; // small step: flow regime
        let steps = 4000usize;
        let opts = TrainOptions {
            schedule: RecordSchedule::EveryN(200),
            probes: None,
            record_ntk: false,
        };
        let gd = train_gd(&net, &inputs, &targets, eta, steps, &opts).unwrap();

        let f0 = ndarray::Array1::from_vec(gd.steps[0].f_train.clone());
        let theta_k = KernelMatrix::new(0, nalgebra::DMatrix::from_fn(2, 2, |a, b| theta[(a, b)]));
        let spec = spectral_decompose(&theta_k).unwrap();
        let tensors = measure_os(&net, &inputs, 4, DEFAULT_FD_STEP).unwrap();
        let p = PerturbationInputs {
            theta0: spec,
            r0: nalgebra::DVector::from_fn(2, |i, _| f0[i] - targets[i]),
            o3: tensors.o3,
            o4: tensors.o4.unwrap(),
        };
        let f0_na = nalgebra::DVector::from_fn(2, |i, _| f0[i]);
        let y_na = nalgebra::DVector::from_fn(2, |i, _| targets[i]);

        for st in gd.steps.iter().skip(1) {
            // flow time per GD step is eta/m
            let t = st.t as f64 * eta / m;
            let unc = &ntk_gd_train_evolution(&theta_k, &f0_na, &y_na, &[t]).unwrap()[0];
            let corr = perturbative_train_prediction(&p, &f0_na, &y_na, t).unwrap();
            for a in 0..2 {
                msd_unc += (st.f_train[a] - unc[a]).powi(2);
                msd_corr += (st.f_train[a] - corr[a]).powi(2);
            }
        }
    }
    assert!(
        msd_corr < msd_unc,
        "corrected {msd_corr:.3e} vs uncorrected {msd_unc:.3e}"
    );
}
