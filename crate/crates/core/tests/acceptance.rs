//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! exits nonzero if any fails.

mod common;

use common::*;
use deqpocs_core::fixed_point::SolverSettings;
use deqpocs_core::forward::Measurement;
use deqpocs_core::harness::{
    verify_convergence, verify_init_independence, verify_robustness, DEFAULT_RATE_SLACK,
    NOISE_LEVELS, PERTURBATION_LEVELS,
};
use deqpocs_core::metrics::{
    evaluate, evaluate_kspace, nmse, psnr, ssim, ssos, zero_filled, Image, MetricsReport,
};
use deqpocs_core::net::{init_params, write_checkpoint, ConsistencyNetParams, Variant};
use deqpocs_core::phantom::{make_dataset, write_dataset, DatasetSpec, Sample};
use deqpocs_core::rng::DetRng;
use deqpocs_core::spirit::calibrate_kernels;
use deqpocs_core::tensor::{
    conv2d_complex, fft2_centered, ifft2_centered, spectral_norm_power_iter,
};
use deqpocs_core::train::{
    implicit_backward, reconstruct, train, TrainConfig, TrainReport, TrainSample,
};
use deqpocs_core::{ComplexTensor, ConvKernel};
use num_complex::Complex64;
use std::path::Path;
use std::time::{Duration, Instant};

const TOL: f64 = 1e-5;
const SEED: u64 = 2024;

struct Outcome {
    pass: bool,
    /// Deterministic part of the summary; timings are kept separately.
    detail: String,
    seconds: f64,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>, elapsed: Duration) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
            seconds: elapsed.as_secs_f64(),
        }
    }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed.as_secs() < limit_s
}

fn picard() -> SolverSettings {
    SolverSettings::picard(TOL, 3000)
}

// criteria 1-3 share a fresh certified net on desk-scale data

fn theory_net() -> ConsistencyNetParams {
    init_params(Variant::KSpace, 10, 16, 4, (32, 32), SEED).unwrap()
}

fn theory_data() -> Vec<Measurement> {
    make_dataset(&DatasetSpec::desk(4, 4.0, SEED))
        .unwrap()
        .into_iter()
        .map(|(_, m)| m)
        .collect()
}

fn csv<F: FnOnce(&mut Vec<u8>)>(f: F) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf);
    buf
}

fn criterion_1(artifacts: &mut Vec<Vec<u8>>) -> Outcome {
    let t = Instant::now();
    let p = theory_net();
    let rep =
        verify_convergence(&p, &theory_data(), 3, DEFAULT_RATE_SLACK, &picard(), SEED).unwrap();
    artifacts.push(csv(|b| rep.write_csv(b).unwrap()));
    let el = t.elapsed();
    let rate_ok = rep.rows.iter().all(|r| r.converged && r.rate_ok);
    Outcome::new(
        rate_ok
            && rep.rows.len() >= 12
            && p.certified_lipschitz().lipschitz <= 0.99
            && within(el, 120),
        format!(
            "L={:.4}, {} runs, rate check {}, max iterations {}",
            rep.lipschitz,
            rep.rows.len(),
            if rate_ok { "held" } else { "violated" },
            rep.rows.iter().map(|r| r.iterations).max().unwrap_or(0)
        ),
        el,
    )
}

fn criterion_2(artifacts: &mut Vec<Vec<u8>>) -> Outcome {
    let t = Instant::now();
    let p = theory_net();
    let mut worst: f64 = 0.0;
    let mut pass = true;
    for (k, meas) in theory_data().iter().enumerate() {
        let rep = verify_init_independence(
            &p,
            meas,
            &PERTURBATION_LEVELS,
            1,
            &picard(),
            SEED + k as u64,
        )
        .unwrap();
        artifacts.push(csv(|b| rep.write_csv(b).unwrap()));
        worst = worst.max(rep.max_pairwise / rep.bound);
        pass &= rep.passed();
    }
    let el = t.elapsed();
    Outcome::new(
        pass && within(el, 120),
        format!("worst pairwise distance / (10·tol·max(1,‖x‖)) = {worst:.3e}"),
        el,
    )
}

fn criterion_3(artifacts: &mut Vec<Vec<u8>>) -> Outcome {
    let t = Instant::now();
    let p = theory_net();
    let data = theory_data();
    let rep = verify_robustness(&p, &data[0], &NOISE_LEVELS, 20, &picard(), SEED).unwrap();
    artifacts.push(csv(|b| rep.write_csv(b).unwrap()));
    let el = t.elapsed();
    let worst = rep
        .trials
        .iter()
        .map(|t| t.observed / t.bound)
        .fold(0.0, f64::max);
    Outcome::new(
        rep.all_within_bound && rep.trial_count() == 80 && within(el, 600),
        format!(
            "{} trials, worst observed/bound {:.4}, recursion {}",
            rep.trial_count(),
            worst,
            if rep.trials.iter().all(|t| t.recursion_ok) {
                "held"
            } else {
                "violated"
            }
        ),
        el,
    )
}

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let solver = SolverSettings::anderson(1e-13, 400);
    let mut spec = DatasetSpec::desk(1, 2.0, SEED);
    spec.height = 8;
    spec.width = 8;
    spec.coils = 2;
    let (sample, meas) = make_dataset(&spec).unwrap().remove(0);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (vi, variant) in [Variant::KSpace, Variant::Hybrid].into_iter().enumerate() {
        let p = init_params(variant, 1, 4, 2, (8, 8), SEED + vi as u64).unwrap();
        let loss = |q: &ConsistencyNetParams| {
            let fp = reconstruct(q, &meas, None, &solver).unwrap();
            fp.solution.sub(&sample.full).norm_sqr()
        };
        let fp = reconstruct(&p, &meas, None, &solver).unwrap();
        let g = fp.solution.sub(&sample.full).scale(2.0);
        let ig = implicit_backward(&p, &fp.solution, &meas.mask, &g, 1e-13, 4000).unwrap();
        let grad = ig.grads.to_flat(variant);
        let base = p.to_flat();
        let mut rng = DetRng::new(SEED + 10 + vi as u64);
        for _ in 0..12 {
            let mut d: Vec<f64> = (0..base.len()).map(|_| rng.normal()).collect();
            let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            d.iter_mut().for_each(|v| *v /= n);
            let h = 1e-6;
            let at = |s: f64| {
                let mut q = p.clone();
                let v: Vec<f64> = base.iter().zip(&d).map(|(b, dd)| b + s * dd).collect();
                q.set_from_flat(&v).unwrap();
                loss(&q)
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            let an: f64 = grad.iter().zip(&d).map(|(a, b)| a * b).sum();
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()));
            count += 1;
        }
    }
    let el = t.elapsed();
    Outcome::new(
        worst < 1e-3 && count >= 20 && within(el, 300),
        format!("{count} directions, worst relative error {worst:.2e}"),
        el,
    )
}

struct TrainingRun {
    report: TrainReport,
    deq: MetricsReport,
    zero_fill: MetricsReport,
    checkpoint: Vec<u8>,
    dataset: Vec<Vec<u8>>,
    elapsed: Duration,
}

fn training_specs() -> (DatasetSpec, DatasetSpec) {
    let train_spec = DatasetSpec::desk(8, 4.0, SEED);
    let test_spec = DatasetSpec {
        count: 4,
        first_index: 8,
        ..train_spec
    };
    (train_spec, test_spec)
}

fn dir_bytes(dir: &Path) -> Vec<Vec<u8>> {
    let mut names: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    names.sort();
    names.iter().map(|p| std::fs::read(p).unwrap()).collect()
}

fn training_run() -> TrainingRun {
    let t = Instant::now();
    let (train_spec, test_spec) = training_specs();
    let train_data = make_dataset(&train_spec).unwrap();
    let test_data = make_dataset(&test_spec).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    write_dataset(tmp.path(), &train_spec, &train_data).unwrap();
    let dataset = dir_bytes(tmp.path());
    let samples: Vec<TrainSample> = train_data
        .into_iter()
        .map(|(s, m): (Sample, Measurement)| TrainSample {
            full: s.full,
            meas: m,
        })
        .collect();
    let p = init_params(Variant::Hybrid, 1, 8, 4, (32, 32), SEED).unwrap();
    let config = TrainConfig {
        shuffle_seed: SEED,
        ..TrainConfig::default()
    };
    let (trained, report) = train(p, &samples, &config).unwrap();
    let mut deq = MetricsReport::default();
    let mut zero_fill = MetricsReport::default();
    for (k, (s, m)) in test_data.iter().enumerate() {
        let fp = reconstruct(&trained, m, None, &SolverSettings::default()).unwrap();
        deq.push(evaluate_kspace(k, &fp.solution, &s.full).unwrap());
        zero_fill.push(evaluate(k, &zero_filled(m).unwrap(), &s.reference).unwrap());
    }
    let checkpoint = csv(|b| write_checkpoint(b, &trained).unwrap());
    TrainingRun {
        report,
        deq,
        zero_fill,
        checkpoint,
        dataset,
        elapsed: t.elapsed(),
    }
}

fn criterion_5(run: &TrainingRun) -> Outcome {
    let first = run.report.mean_loss[0];
    let last = *run.report.mean_loss.last().unwrap();
    let ratio = last / first;
    let beats = run
        .deq
        .samples
        .iter()
        .zip(&run.zero_fill.samples)
        .filter(|(d, z)| d.psnr > z.psnr)
        .count();
    let psnr_ok = beats == run.deq.samples.len() && beats == 4;
    Outcome::new(
        ratio < 0.5 && psnr_ok && run.report.epochs() == 50 && within(run.elapsed, 1800),
        format!(
            "loss ratio last/first {:.3} (need < 0.5), PSNR above zero-fill on {}/4 held-out samples \
             (mean {:.2} vs {:.2} dB)",
            ratio,
            beats,
            run.deq.psnr().0,
            run.zero_fill.psnr().0
        ),
        run.elapsed,
    )
}

fn criterion_6() -> Outcome {
    let t = Instant::now();
    let acs = ComplexTensor::random(24, 24, 3, 1.0, &mut DetRng::new(SEED));
    let ridge = 1e-2;
    let kernels = calibrate_kernels(&acs, 5, ridge).unwrap();
    let mut worst_rel: f64 = 0.0;
    for target in 0..3 {
        let oracle = spirit_dense_solve(&acs, 5, target, ridge);
        let ours: Vec<Complex64> = (0..5)
            .flat_map(|a| (0..5).flat_map(move |b| (0..3).map(move |n| (a, b, n))))
            .map(|(a, b, n)| kernels.kernel.get(a, b, n, target))
            .collect();
        let num = ours
            .iter()
            .zip(&oracle)
            .map(|(x, y)| (x - y).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let den = oracle.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        worst_rel = worst_rel.max(num / den);
    }

    // coil 1 is coil 0 moved one sample along the second axis
    let base = ComplexTensor::random(24, 25, 1, 1.0, &mut DetRng::new(SEED + 1));
    let pair = ComplexTensor::from_fn(24, 24, 2, |i, j, c| base.get(i, j + c, 0));
    let k = calibrate_kernels(&pair, 5, 1e-8).unwrap();
    let mut expect = ConvKernel::zeros(5, 5, 2, 2).unwrap();
    expect.set(2, 3, 0, 1, Complex64::new(1.0, 0.0));
    expect.set(2, 1, 1, 0, Complex64::new(1.0, 0.0));
    let tap_err = max_abs_diff(k.kernel.taps(), expect.taps());
    let el = t.elapsed();
    Outcome::new(
        worst_rel < 1e-6 && tap_err < 1e-4 && within(el, 60),
        format!(
            "dense LS relative difference {worst_rel:.2e}, shifted-pair tap error {tap_err:.2e}",
        ),
        el,
    )
}

fn criterion_7() -> Outcome {
    let t = Instant::now();
    let mut rng = DetRng::new(SEED);
    let x = ComplexTensor::random(8, 8, 2, 1.0, &mut rng);
    let fft_err = max_abs_diff(
        fft2_centered(&x).unwrap().data(),
        dft2_centered(&x, false).data(),
    )
    .max(max_abs_diff(
        ifft2_centered(&x).unwrap().data(),
        dft2_centered(&x, true).data(),
    ));

    let k = ConvKernel::random(3, 3, 2, 3, 0.5, &mut rng).unwrap();
    let m = conv_matrix(&k, 6, 6);
    let xin = ComplexTensor::random(6, 6, 2, 1.0, &mut rng);
    let conv_err = max_abs_diff(
        conv2d_complex(&xin, &k).unwrap().data(),
        (&m * to_vector(&xin)).as_slice(),
    );

    let mut spec_err: f64 = 0.0;
    for s in 0..3 {
        let k = ConvKernel::random(3, 3, 2, 2, 0.5, &mut rng).unwrap();
        let exact = largest_singular_value(&conv_matrix(&k, 6, 6));
        let est = spectral_norm_power_iter(&k, (6, 6), 500, s).unwrap();
        spec_err = spec_err.max((est - exact).abs() / exact);
    }

    let full = ComplexTensor::random(16, 16, 3, 1.0, &mut rng);
    let noisy = full.add(&ComplexTensor::random(16, 16, 3, 0.2, &mut rng));
    let ssos_err = ssos(&full)
        .data()
        .iter()
        .zip(ssos_oracle(&full).data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let (a, b): (Image, Image) = (ssos(&noisy), ssos(&full));
    let psnr_err = (psnr(&a, &b).unwrap() - psnr_oracle(&a, &b)).abs();
    let nmse_err = (nmse(&a, &b).unwrap() - nmse_oracle(&a, &b)).abs() / nmse_oracle(&a, &b);
    let ssim_err = (ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs();
    let el = t.elapsed();
    Outcome::new(
        fft_err < 1e-6
            && conv_err < 1e-6
            && spec_err < 1e-3
            && ssos_err < 1e-12
            && psnr_err < 1e-9
            && nmse_err < 1e-9
            && ssim_err < 1e-9
            && within(el, 60),
        format!(
            "fft {fft_err:.1e}, conv {conv_err:.1e}, spectral norm {spec_err:.1e}, ssos {ssos_err:.1e}, \
             psnr {psnr_err:.1e}, nmse {nmse_err:.1e}, ssim {ssim_err:.1e}",
        ),
        el,
    )
}

fn criterion_8(run: &TrainingRun) -> Outcome {
    let h = &run.report.certificate_history;
    let violations = h.iter().filter(|l| !(**l <= 0.99)).count();
    let max = h.iter().cloned().fold(0.0, f64::max);
    Outcome::new(
        violations == 0 && h.len() == 8 * 50,
        format!(
            "{} optimizer steps, max certified L {:.6}, {} violations",
            h.len(),
            max,
            violations
        ),
        Duration::ZERO,
    )
}

fn theory_artifacts() -> Vec<Vec<u8>> {
    let mut a = Vec::new();
    criterion_1(&mut a);
    criterion_2(&mut a);
    criterion_3(&mut a);
    a
}

fn run_artifacts(run: &TrainingRun) -> Vec<Vec<u8>> {
    let mut a = run.dataset.clone();
    a.push(run.checkpoint.clone());
    a.push(csv(|b| run.report.write_csv(b).unwrap()));
    a.push(csv(|b| run.deq.write_csv(b).unwrap()));
    a.push(csv(|b| run.zero_fill.write_csv(b).unwrap()));
    a
}

fn criterion_9(
    first_theory: &[Vec<u8>],
    first_run: &TrainingRun,
    first_small: [String; 3],
) -> Outcome {
    let t = Instant::now();
    let theory_same = theory_artifacts() == first_theory;
    let second = training_run();
    let run_same = run_artifacts(&second) == run_artifacts(first_run);
    let small_same = [
        criterion_4().detail,
        criterion_6().detail,
        criterion_7().detail,
    ] == first_small;
    let el = t.elapsed();
    Outcome::new(
        theory_same && run_same && small_same,
        format!(
            "theory CSVs {}, dataset/checkpoint/training CSVs {}, oracle summaries {}",
            same(theory_same),
            same(run_same),
            same(small_same)
        ),
        el,
    )
}

fn same(b: bool) -> &'static str {
    if b {
        "identical"
    } else {
        "differ"
    }
}

fn report(n: usize, o: &Outcome) -> bool {
    println!(
        "criterion {n}: {} ({}, {:.1}s)",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        o.seconds
    );
    o.pass
}

fn main() {
    let mut results = Vec::new();
    let mut theory = Vec::new();
    results.push(report(1, &criterion_1(&mut theory)));
    results.push(report(2, &criterion_2(&mut theory)));
    results.push(report(3, &criterion_3(&mut theory)));
    let c4 = criterion_4();
    results.push(report(4, &c4));
    let run = training_run();
    results.push(report(5, &criterion_5(&run)));
    let c6 = criterion_6();
    results.push(report(6, &c6));
    let c7 = criterion_7();
    results.push(report(7, &c7));
    results.push(report(8, &criterion_8(&run)));
    results.push(report(
        9,
        &criterion_9(&theory, &run, [c4.detail, c6.detail, c7.detail]),
    ));
    let failed = results.iter().filter(|ok| !**ok).count();
    println!(
        "acceptance: {} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
