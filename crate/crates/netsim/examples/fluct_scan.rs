//! Scratch: replicate criterion 3 and print per-width sup gaps/drifts.
use ndarray::{Array1, Array2};
use widthlab_core::gp::spectral_decompose;
use widthlab_core::kernel::KernelMatrix;
use widthlab_core::nonlin::Nonlinearity;
use widthlab_core::{ArchSpec, WidthProfile};
use widthlab_netsim::mlp::{empirical_ntk, init_network, Parameterization};
use widthlab_netsim::rng::RngPlan;
use widthlab_netsim::train::{linearized_train, train_gd, RecordSchedule, TrainOptions};

fn main() {
    let arch = ArchSpec::fc(2, 1, 0.1, 2.0, Nonlinearity::Relu).unwrap();
    let inputs = Array2::from_shape_fn((10, 1), |(i, _)| -1.0 + 2.0 * i as f64 / 9.0);
    let targets = ndarray::array![0.5, -0.2, 0.3, -0.4, 0.1, 0.6, -0.5, 0.2, -0.1, 0.4];
    let plan = RngPlan::new(0xACC3);
    for (wi, &n) in [128usize, 512, 2048].iter().enumerate() {
        let widths = WidthProfile::uniform(n, 2, 1).unwrap();
        for s in 0..2u64 {
            let net = init_network(&arch, &widths, Parameterization::Ntk, &mut plan.substream(wi as u64 * 100 + s)).unwrap();
            let theta0 = empirical_ntk(&net, &inputs).unwrap();
            let spec = spectral_decompose(&KernelMatrix::new(0, nalgebra::DMatrix::from_fn(10, 10, |a, b| theta0[(a, b)]))).unwrap();
            let lam_max = spec.eigenvalues[0];
            let lam_min = spec.min_eigenvalue();
            let eta = 0.5 * 2.0 * 10.0 / (lam_min + lam_max); // m = 10 converts the sum-loss eta_crit to the mean-loss convention
            let opts = TrainOptions { schedule: RecordSchedule::EveryN(25), probes: None, record_ntk: true };
            let gd = train_gd(&net, &inputs, &targets, eta, 2000, &opts).unwrap();
            let lin = linearized_train(&net, &inputs, &targets, eta, 2000, &opts).unwrap();
            let mut sup_gap = 0.0f64;
            let mut argmax_t = 0usize;
            for (a, b) in gd.steps.iter().zip(&lin.steps) {
                for (fa, fb) in a.f_train.iter().zip(&b.f_train) {
                    if (fa - fb).abs() > sup_gap { sup_gap = (fa - fb).abs(); argmax_t = a.t; }
                }
            }
            let t0 = gd.steps[0].ntk.as_ref().unwrap().clone();
            let mut sup_drift = 0.0f64;
            for st in &gd.steps {
                let t = st.ntk.as_ref().unwrap();
                let d: f64 = t.iter().zip(&t0).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                sup_drift = sup_drift.max(d);
            }
            let a1 = Array1::from_vec(gd.final_step().f_train.clone());
            println!("n={n} s={s}: lam=({lam_min:.4},{lam_max:.3}) eta={eta:.4} gap={sup_gap:.5}@t={argmax_t} drift={sup_drift:.4} gd_loss={:.2e} lin_loss={:.2e} f_end0={:.3}",
                gd.final_step().loss, lin.final_step().loss, a1[0]);
        }
    }
}
