//! Property tests for the Gaussian engine and kernel recursions.

use proptest::prelude::*;

use nalgebra::DMatrix;
use widthlab_core::cov::Cov2;
use widthlab_core::gauss::{f_phi, gauss1d};
use widthlab_core::gp::spectral_decompose;
use widthlab_core::kernel::{nngp_fc, KernelMatrix};
use widthlab_core::nonlin::Nonlinearity;
use widthlab_core::ArchSpec;

fn phis() -> impl Strategy<Value = Nonlinearity> {
    prop_oneof![
        Just(Nonlinearity::Relu),
        Just(Nonlinearity::Tanh),
        Just(Nonlinearity::Linear),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn f_phi_symmetric_under_variance_swap(
        phi in phis(),
        k11 in 0.05f64..4.0,
        k22 in 0.05f64..4.0,
        rho in -0.999f64..0.999,
    ) {
        let k12 = rho * (k11 * k22).sqrt();
        let cov = Cov2::new(k11, k12, k22).unwrap();
        let a = f_phi(&cov, &phi).unwrap();
        let b = f_phi(&cov.swapped(), &phi).unwrap();
        prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn f_phi_cauchy_schwarz(
        phi in phis(),
        k11 in 0.05f64..4.0,
        k22 in 0.05f64..4.0,
        rho in -0.999f64..0.999,
    ) {
        let k12 = rho * (k11 * k22).sqrt();
        let cov = Cov2::new(k11, k12, k22).unwrap();
        let lhs = f_phi(&cov, &phi).unwrap().powi(2);
        let rhs = gauss1d(|z| phi.value(z).powi(2), k11).unwrap()
            * gauss1d(|z| phi.value(z).powi(2), k22).unwrap();
        prop_assert!(lhs <= rhs + 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn nngp_outputs_symmetric_psd(
        phi in phis(),
        seed_vals in prop::collection::vec(-2.0f64..2.0, 6),
        sigma_b2 in 0.0f64..0.5,
        sigma_w2 in 0.5f64..2.5,
    ) {
        let inputs = DMatrix::from_row_slice(3, 2, &seed_vals);
        let arch = ArchSpec::fc(3, 2, sigma_b2, sigma_w2, phi).unwrap();
        let kernels = nngp_fc(&inputs, &arch).unwrap();
        for k in &kernels {
            prop_assert!(k.asymmetry() < 1e-12);
            let spec = spectral_decompose(k).unwrap();
            prop_assert!(spec.min_eigenvalue() >= 0.0);
        }
    }

    #[test]
    fn spectral_reconstruction_roundtrip(
        seed_vals in prop::collection::vec(-1.5f64..1.5, 16),
    ) {
        let a = DMatrix::from_row_slice(4, 4, &seed_vals);
        let psd = &a * a.transpose();
        let k = KernelMatrix::new(0, psd.clone());
        let spec = spectral_decompose(&k).unwrap();
        let err = (spec.reconstruct() - &psd).norm();
        prop_assert!(err <= 1e-8 * psd.norm().max(1e-12), "err {err}");
        // orthonormality
        let gram = spec.eigenvectors.transpose() * &spec.eigenvectors;
        let id = DMatrix::<f64>::identity(4, 4);
        prop_assert!((gram - id).norm() < 1e-10);
    }
}
