//! Implicit gradients against central finite differences through the solver.

use deqpocs_core::fixed_point::SolverSettings;
use deqpocs_core::forward::{apply_sampling, make_mask, MaskKind};
use deqpocs_core::net::{init_params, ConsistencyNetParams, Variant};
use deqpocs_core::rng::DetRng;
use deqpocs_core::train::{implicit_backward, reconstruct, TrainSample};
use deqpocs_core::KSpace;

fn sample(seed: u64) -> TrainSample {
    let full = KSpace::random(8, 8, 2, 1.0, &mut DetRng::new(seed));
    let mask = make_mask(MaskKind::Calibrated1D, 8, 8, 2.0, None, seed).unwrap();
    TrainSample {
        meas: apply_sampling(&full, &mask).unwrap(),
        full,
    }
}

fn solver() -> SolverSettings {
    SolverSettings::anderson(1e-13, 400)
}

fn loss(p: &ConsistencyNetParams, s: &TrainSample) -> f64 {
    let fp = reconstruct(p, &s.meas, None, &solver()).unwrap();
    assert!(fp.converged);
    fp.solution.sub(&s.full).norm_sqr()
}

fn check(variant: Variant, seed: u64, directions: usize) -> f64 {
    let p = init_params(variant, 1, 4, 2, (8, 8), seed).unwrap();
    let s = sample(seed + 100);
    let fp = reconstruct(&p, &s.meas, None, &solver()).unwrap();
    let g = fp.solution.sub(&s.full).scale(2.0);
    let ig = implicit_backward(&p, &fp.solution, &s.meas.mask, &g, 1e-13, 2000).unwrap();
    assert!(ig.converged);
    let grad = ig.grads.to_flat(variant);
    let base = p.to_flat();
    let mut rng = DetRng::new(seed + 200);
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let d: Vec<f64> = (0..base.len()).map(|_| rng.normal()).collect();
        let h = 1e-6;
        let at = |t: f64| {
            let mut q = p.clone();
            let v: Vec<f64> = base.iter().zip(&d).map(|(b, dd)| b + t * dd).collect();
            q.set_from_flat(&v).unwrap();
            loss(&q, &s)
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        let an: f64 = grad.iter().zip(&d).map(|(a, b)| a * b).sum();
        worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()));
    }
    worst
}

#[test]
fn kspace_variant_matches_finite_differences() {
    let err = check(Variant::KSpace, 1, 5);
    assert!(err < 1e-3, "relative error {err}");
}

#[test]
fn hybrid_variant_matches_finite_differences() {
    let err = check(Variant::Hybrid, 2, 5);
    assert!(err < 1e-3, "relative error {err}");
}
