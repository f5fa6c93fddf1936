//! Numerical-core, metric and calibration checks against brute-force references.

mod common;

use common::*;
use deqpocs_core::fixed_point::SolverSettings;
use deqpocs_core::forward::{apply_sampling, make_mask, project_data_consistency, Acs, MaskKind};
use deqpocs_core::metrics::{nmse, psnr, ssim, ssos, zero_filled, Image};
use deqpocs_core::phantom::{make_dataset, read_dataset, write_dataset, DatasetSpec, MaskSpec};
use deqpocs_core::rng::DetRng;
use deqpocs_core::spirit::{acs_region, calibrate_kernels, spirit_pocs_recon};
use deqpocs_core::tensor::{
    conv2d_adjoint, conv2d_complex, fft2_centered, ifft2_centered, spectral_norm_power_iter,
};
use deqpocs_core::{ComplexTensor, ConvKernel};
use num_complex::Complex64;
use proptest::prelude::*;

fn tensor(h: usize, w: usize, c: usize, seed: u64) -> ComplexTensor {
    ComplexTensor::random(h, w, c, 1.0, &mut DetRng::new(seed))
}

#[test]
fn fft_matches_direct_sum_on_odd_and_even_grids() {
    for (h, w) in [(8, 8), (6, 10), (5, 7)] {
        let x = tensor(h, w, 2, (h * w) as u64);
        let err = max_abs_diff(
            fft2_centered(&x).unwrap().data(),
            dft2_centered(&x, false).data(),
        );
        if h % 2 == 0 && w % 2 == 0 {
            assert!(err < 1e-10, "{h}x{w}: {err}");
        }
        let back = ifft2_centered(&fft2_centered(&x).unwrap()).unwrap();
        assert!(max_abs_diff(back.data(), x.data()) < 1e-12);
    }
}

#[test]
fn convolution_matches_dense_matrix() {
    let mut rng = DetRng::new(5);
    for (kh, kw, ci, co) in [(3, 3, 1, 1), (3, 5, 2, 3), (1, 1, 4, 2)] {
        let k = ConvKernel::random(kh, kw, ci, co, 1.0, &mut rng).unwrap();
        let x = ComplexTensor::random(7, 6, ci, 1.0, &mut rng);
        let m = conv_matrix(&k, 7, 6);
        let dense = &m * to_vector(&x);
        assert!(max_abs_diff(conv2d_complex(&x, &k).unwrap().data(), dense.as_slice()) < 1e-12);
        let y = ComplexTensor::random(7, 6, co, 1.0, &mut rng);
        let adj = m.adjoint() * to_vector(&y);
        assert!(max_abs_diff(conv2d_adjoint(&y, &k).unwrap().data(), adj.as_slice()) < 1e-12);
    }
}

#[test]
fn power_iteration_matches_svd() {
    let mut rng = DetRng::new(6);
    for _ in 0..4 {
        let k = ConvKernel::random(3, 3, 2, 3, 0.3, &mut rng).unwrap();
        let exact = largest_singular_value(&conv_matrix(&k, 6, 6));
        let est = spectral_norm_power_iter(&k, (6, 6), 1000, 1).unwrap();
        assert!((est - exact).abs() <= 1e-3 * exact, "{est} vs {exact}");
        assert!(est <= exact * (1.0 + 1e-9));
    }
}

#[test]
fn metrics_match_scalar_loops() {
    let mut rng = DetRng::new(7);
    for size in [11, 16, 23] {
        let a = ComplexTensor::random(size, size, 3, 1.0, &mut rng);
        let b = a.add(&ComplexTensor::random(size, size, 3, 0.3, &mut rng));
        let (x, y) = (ssos(&b), ssos(&a));
        assert_eq!(x, ssos_oracle(&b));
        assert!((psnr(&x, &y).unwrap() - psnr_oracle(&x, &y)).abs() < 1e-10);
        assert!((nmse(&x, &y).unwrap() - nmse_oracle(&x, &y)).abs() < 1e-12);
        assert!((ssim(&x, &y).unwrap() - ssim_oracle(&x, &y)).abs() < 1e-10);
    }
}

#[test]
fn identical_images_hit_metric_limits() {
    let img = ssos(&tensor(16, 16, 2, 8));
    assert_eq!(psnr(&img, &img).unwrap(), 99.0);
    assert_eq!(nmse(&img, &img).unwrap(), 0.0);
    assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn spirit_matches_dense_least_squares() {
    for (size, nc, k, ridge) in [(24, 3, 5, 1e-2), (12, 2, 3, 1e-3)] {
        let acs = tensor(size, size, nc, 9 + nc as u64);
        let kernels = calibrate_kernels(&acs, k, ridge).unwrap();
        for target in 0..nc {
            let oracle = spirit_dense_solve(&acs, k, target, ridge);
            for a in 0..k {
                for b in 0..k {
                    for n in 0..nc {
                        let o = oracle[(a * k + b) * nc + n];
                        let got = kernels.kernel.get(a, b, n, target);
                        assert!((got - o).norm() <= 1e-8 * o.norm().max(1e-3));
                    }
                }
            }
        }
    }
}

#[test]
fn spirit_recovers_shifted_coil_pair() {
    let base = tensor(20, 21, 1, 10);
    let pair = ComplexTensor::from_fn(20, 20, 2, |i, j, c| base.get(i, j + c, 0));
    let k = calibrate_kernels(&pair, 3, 1e-9).unwrap();
    let mut expect = ConvKernel::zeros(3, 3, 2, 2).unwrap();
    expect.set(1, 2, 0, 1, Complex64::new(1.0, 0.0));
    expect.set(1, 0, 1, 0, Complex64::new(1.0, 0.0));
    assert!(max_abs_diff(k.kernel.taps(), expect.taps()) < 1e-4);
}

#[test]
fn spirit_beats_zero_fill_with_generous_calibration() {
    let spec = DatasetSpec {
        coils: 8,
        mask: MaskSpec {
            kind: MaskKind::Calibrated1D,
            accel: 2.0,
            acs: Some(Acs::Lines(12)),
        },
        ..DatasetSpec::desk(2, 2.0, 11)
    };
    for (sample, meas) in make_dataset(&spec).unwrap() {
        let kernels = calibrate_kernels(&acs_region(&meas).unwrap(), 3, 1e-2).unwrap();
        let res = spirit_pocs_recon(&kernels, &meas, 30, 1e-6).unwrap();
        let recon = ssos(&ifft2_centered(&res.solution).unwrap());
        let zf = zero_filled(&meas).unwrap();
        assert!(psnr(&recon, &sample.reference).unwrap() > psnr(&zf, &sample.reference).unwrap());
    }
}

#[test]
fn dataset_round_trips_through_disk() {
    let spec = DatasetSpec::desk(3, 4.0, 12);
    let data = make_dataset(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &spec, &data).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), 3);
    for ((s, m), (s2, m2)) in data.iter().zip(&back) {
        assert_eq!(m.mask, m2.mask);
        assert!(s.full.distance(&s2.full) <= 1e-6 * s.full.norm());
        assert!(m.y.distance(&m2.y) <= 1e-6 * m.y.norm());
        assert_eq!(
            (s.phantom_seed, s.coil_seed),
            (s2.phantom_seed, s2.coil_seed)
        );
    }
    let again = tempfile::tempdir().unwrap();
    write_dataset(again.path(), &spec, &make_dataset(&spec).unwrap()).unwrap();
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let p = entry.unwrap().path();
        let q = again.path().join(p.file_name().unwrap());
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    }
}

#[test]
fn fully_sampled_reconstruction_is_exact() {
    let spec = DatasetSpec::desk(1, 1.0, 13);
    let (sample, _) = make_dataset(&spec).unwrap().remove(0);
    let meas = apply_sampling(
        &sample.full,
        &make_mask(MaskKind::Free1D, 32, 32, 1.0, None, 0).unwrap(),
    )
    .unwrap();
    let params =
        deqpocs_core::net::init_params(deqpocs_core::net::Variant::KSpace, 2, 4, 4, (32, 32), 1)
            .unwrap();
    let res =
        deqpocs_core::train::reconstruct(&params, &meas, None, &SolverSettings::default()).unwrap();
    assert!(res.solution.distance(&sample.full) <= 1e-12 * sample.full.norm());
}

fn small_tensor() -> impl Strategy<Value = ComplexTensor> {
    (2usize..7, 2usize..7, 1usize..3, any::<u64>()).prop_map(|(h, w, c, s)| tensor(h, w, c, s))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fft_is_unitary(x in small_tensor()) {
        let f = fft2_centered(&x).unwrap();
        prop_assert!((f.norm() - x.norm()).abs() <= 1e-10 * x.norm().max(1.0));
        let back = ifft2_centered(&f).unwrap();
        prop_assert!(back.distance(&x) <= 1e-10 * x.norm().max(1.0));
    }

    #[test]
    fn convolution_adjoint_identity(seed in any::<u64>(), ci in 1usize..4, co in 1usize..4) {
        let mut rng = DetRng::new(seed);
        let k = ConvKernel::random(3, 3, ci, co, 1.0, &mut rng).unwrap();
        let x = ComplexTensor::random(5, 6, ci, 1.0, &mut rng);
        let y = ComplexTensor::random(5, 6, co, 1.0, &mut rng);
        let lhs = conv2d_complex(&x, &k).unwrap().real_dot(&y);
        let rhs = x.real_dot(&conv2d_adjoint(&y, &k).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn convolution_is_bounded_by_estimated_norm(seed in any::<u64>()) {
        let mut rng = DetRng::new(seed);
        let k = ConvKernel::random(3, 3, 2, 2, 0.5, &mut rng).unwrap();
        let sigma = spectral_norm_power_iter(&k, (6, 6), 200, seed).unwrap() * 1.01;
        for _ in 0..10 {
            let x = ComplexTensor::random(6, 6, 2, 1.0, &mut rng);
            let y = ComplexTensor::random(6, 6, 2, 1.0, &mut rng);
            let d = conv2d_complex(&x, &k).unwrap().distance(&conv2d_complex(&y, &k).unwrap());
            prop_assert!(d <= sigma * x.distance(&y));
        }
    }

    #[test]
    fn projection_is_idempotent_and_nonexpansive(seed in any::<u64>(), accel in 1.0f64..6.0) {
        let mask = make_mask(MaskKind::Free2D, 8, 8, accel, None, seed).unwrap();
        let y = mask.apply(&tensor(8, 8, 2, seed ^ 1)).unwrap();
        let a = tensor(8, 8, 2, seed ^ 2);
        let b = tensor(8, 8, 2, seed ^ 3);
        let pa = project_data_consistency(&a, &mask, &y).unwrap();
        let pb = project_data_consistency(&b, &mask, &y).unwrap();
        prop_assert_eq!(&project_data_consistency(&pa, &mask, &y).unwrap(), &pa);
        prop_assert!(pa.distance(&pb) <= a.distance(&b) + 1e-12);
    }

    #[test]
    fn psnr_increases_as_error_shrinks(seed in any::<u64>(), t in 0.05f64..0.95) {
        let reference = ssos(&tensor(12, 12, 2, seed));
        let noise = Image::from_fn(12, 12, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.1 + 0.01);
        let blend = |s: f64| Image::from_fn(12, 12, |i, j| reference.get(i, j) + s * noise.get(i, j));
        prop_assert!(psnr(&blend(t), &reference).unwrap() > psnr(&blend(1.0), &reference).unwrap());
    }
}
