//! Empirical checks of the contraction guarantees of a certified network:
//! geometric convergence from arbitrary starts, uniqueness of the fixed point,
//! and the `δ/(1−L)` noise-robustness bound.
//!
//! Fixed points are computed by Picard iteration to a relative tolerance
//! `tol`: the solver stops once `‖T(x_k) − x_k‖ ≤ tol·max(1, ‖T(x_k)‖)`. For a
//! map with contraction factor `ρ` the returned iterate is then within
//! `ρ/(1−ρ)·tol·max(1, ‖x̊‖)` of the exact fixed point. Agreement checks use
//! `10·tol` and robustness checks `20·tol`, both scaled by `max(1, ‖x̊‖)`.
//! These hold whenever the observed contraction factor stays below about 0.8;
//! a failing row reports the numbers rather than a verdict alone.

use crate::error::{Error, Result};
use crate::fixed_point::{picard_solve, FixedPointResult, SolverSettings};
use crate::forward::{add_noise, Measurement};
use crate::metrics::{evaluate, evaluate_kspace, zero_filled, MetricsReport};
use crate::net::ConsistencyNetParams;
use crate::parallel::par_map;
use crate::phantom::Sample;
use crate::rng::{derive_seed, DetRng};
use crate::tensor::KSpace;
use crate::train::{consistency_operator, reconstruct};
use std::fmt::Write as _;
use std::io::Write;

pub const DEFAULT_TOL: f64 = 1e-5;
pub const DEFAULT_MAX_ITER: usize = 3000;
pub const DEFAULT_RATE_SLACK: f64 = 1.05;
pub const AGREEMENT_FACTOR: f64 = 10.0;
pub const ROBUSTNESS_FACTOR: f64 = 20.0;
/// Norm of the large random start relative to `‖y‖`.
pub const LARGE_INIT_SCALE: f64 = 100.0;
pub const NOISE_LEVELS: [f64; 4] = [0.005, 0.01, 0.05, 0.1];
pub const PERTURBATION_LEVELS: [f64; 2] = [0.5, 2.0];

const TAG_INIT: u64 = 0x494E_4954;
const TAG_NOISE: u64 = 0x4E4F_4953;
const TAG_PERTURB: u64 = 0x5045_5254;

fn certified(params: &ConsistencyNetParams) -> Result<f64> {
    let cert = params.certified_lipschitz();
    if !cert.is_contractive() {
        return Err(Error::Certificate(format!(
            "Lipschitz bound {:.6} is not below 1",
            cert.lipschitz
        )));
    }
    Ok(cert.lipschitz)
}

fn scale(x: &KSpace) -> f64 {
    x.norm().max(1.0)
}

fn fixed_point(
    params: &ConsistencyNetParams,
    meas: &Measurement,
    x0: &KSpace,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPointResult> {
    picard_solve(consistency_operator(params, meas), x0, tol, max_iter)
}

/// Random complex tensor with Frobenius norm `level · ‖reference‖`.
fn scaled_noise(reference: &KSpace, level: f64, seed: u64) -> KSpace {
    let (h, w, c) = reference.shape();
    let noise = KSpace::random(h, w, c, 1.0, &mut DetRng::new(seed));
    let n = noise.norm();
    if n == 0.0 {
        return noise;
    }
    noise.scale(level * reference.norm() / n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub sample: usize,
    pub init: String,
    pub iterations: usize,
    pub converged: bool,
    pub final_residual: f64,
    pub rate_ok: bool,
    /// Largest distance from this solution to any other start's solution.
    pub max_disagreement: f64,
    pub agreement_bound: f64,
}

impl ConvergenceRow {
    pub fn passed(&self) -> bool {
        self.converged && self.rate_ok && self.max_disagreement <= self.agreement_bound
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub lipschitz: f64,
    pub slack: f64,
    pub tol: f64,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceReport {
    pub fn passed(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(ConvergenceRow::passed)
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "sample,init,iterations,converged,final_residual,rate_ok,max_disagreement,agreement_bound,pass")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{:.6e},{},{:.6e},{:.6e},{}",
                r.sample,
                r.init,
                r.iterations,
                r.converged,
                r.final_residual,
                r.rate_ok,
                r.max_disagreement,
                r.agreement_bound,
                r.passed()
            )?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let failed = self.rows.iter().filter(|r| !r.passed()).count();
        let worst_iters = self.rows.iter().map(|r| r.iterations).max().unwrap_or(0);
        format!(
            "convergence: {} ({} runs, {} failed, L={:.6}, slack={}, max iterations {})",
            verdict(self.passed()),
            self.rows.len(),
            failed,
            self.lipschitz,
            self.slack,
            worst_iters
        )
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Starts for sample `k`: `y`, zero, then `inits − 2` large random tensors.
fn starting_points(meas: &Measurement, inits: usize, seed: u64, k: usize) -> Vec<(String, KSpace)> {
    let (h, w, c) = meas.y.shape();
    let mut out = vec![
        ("y".to_string(), meas.y.clone()),
        ("zero".to_string(), KSpace::zeros(h, w, c)),
    ];
    for r in 0..inits.saturating_sub(2) {
        let s = derive_seed(seed, TAG_INIT, (k * 1000 + r) as u64);
        let mut x = scaled_noise(&meas.y, LARGE_INIT_SCALE, s);
        if meas.y.norm() == 0.0 {
            x = KSpace::random(h, w, c, LARGE_INIT_SCALE, &mut DetRng::new(s));
        }
        out.push((format!("random{r}"), x));
    }
    out.truncate(inits.max(1));
    out
}

/// Picard from several starts per sample; checks the geometric rate against
/// the certificate and pairwise agreement of the limits.
pub fn verify_convergence(
    params: &ConsistencyNetParams,
    data: &[Measurement],
    inits: usize,
    slack: f64,
    settings: &SolverSettings,
    seed: u64,
) -> Result<ConvergenceReport> {
    let lipschitz = certified(params)?;
    let tol = settings.tol;
    let per_sample = par_map(data, |k, meas| -> Result<Vec<ConvergenceRow>> {
        let starts = starting_points(meas, inits, seed, k);
        let mut runs = Vec::with_capacity(starts.len());
        for (label, x0) in starts {
            let res =
                fixed_point(params, meas, &x0, tol, settings.max_iter).map_err(|e| match e {
                    Error::Divergence { iteration, reason } => Error::Divergence {
                        iteration,
                        reason: format!("sample {k}, init {label}: {reason}"),
                    },
                    other => other,
                })?;
            runs.push((label, res));
        }
        let bound = AGREEMENT_FACTOR
            * tol
            * runs
                .iter()
                .map(|(_, r)| scale(&r.solution))
                .fold(1.0, f64::max);
        Ok(runs
            .iter()
            .map(|(label, res)| ConvergenceRow {
                sample: k,
                init: label.clone(),
                iterations: res.iterations,
                converged: res.converged,
                final_residual: res.final_residual(),
                rate_ok: res.satisfies_geometric_rate(lipschitz, slack),
                max_disagreement: runs
                    .iter()
                    .map(|(_, other)| res.solution.distance(&other.solution))
                    .fold(0.0, f64::max),
                agreement_bound: bound,
            })
            .collect())
    });
    let mut rows = Vec::new();
    for r in per_sample {
        rows.extend(r?);
    }
    Ok(ConvergenceReport {
        lipschitz,
        slack,
        tol,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessTrial {
    pub level: f64,
    pub trial: usize,
    /// Frobenius norm of the added measurement noise.
    pub delta: f64,
    pub observed: f64,
    pub bound: f64,
    pub margin: f64,
    /// The one-step recursion `d_k ≤ L·d_{k−1} + δ` held on every step.
    pub recursion_ok: bool,
}

impl RobustnessTrial {
    pub fn within_bound(&self) -> bool {
        self.margin >= -1e-6 * self.bound
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessReport {
    pub lipschitz: f64,
    pub tol: f64,
    pub trials: Vec<RobustnessTrial>,
    pub all_within_bound: bool,
}

impl RobustnessReport {
    pub fn trial_count(&self) -> usize {
        self.trials.len()
    }

    pub fn passed(&self) -> bool {
        self.all_within_bound && self.trials.iter().all(|t| t.recursion_ok)
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(
            out,
            "delta_rel,trial,delta,observed,bound,margin,recursion_ok"
        )?;
        for t in &self.trials {
            writeln!(
                out,
                "{},{},{:.6e},{:.6e},{:.6e},{:.6e},{}",
                t.level, t.trial, t.delta, t.observed, t.bound, t.margin, t.recursion_ok
            )?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let worst = self
            .trials
            .iter()
            .filter(|t| t.bound > 0.0)
            .map(|t| t.observed / t.bound)
            .fold(0.0, f64::max);
        let mut s = format!(
            "robustness: {} ({} trials, L={:.6}, worst observed/bound {:.4})",
            verdict(self.passed()),
            self.trials.len(),
            self.lipschitz,
            worst
        );
        for t in self
            .trials
            .iter()
            .filter(|t| !t.within_bound() || !t.recursion_ok)
        {
            let _ = write!(
                s,
                "\n  delta_rel={} trial={} observed={:.6e} bound={:.6e} recursion_ok={}",
                t.level, t.trial, t.observed, t.bound, t.recursion_ok
            );
        }
        s
    }
}

/// Largest violation of `d_k ≤ L·d_{k−1} + δ` over `steps` synchronized
/// Picard steps from `x0`, as `Ok(true)` when none exceeds round-off.
fn synchronized_recursion(
    params: &ConsistencyNetParams,
    clean: &Measurement,
    noisy: &Measurement,
    x0: &KSpace,
    lipschitz: f64,
    delta: f64,
    steps: usize,
) -> Result<bool> {
    let mut t = consistency_operator(params, clean);
    let mut t_delta = consistency_operator(params, noisy);
    let mut x = x0.clone();
    let mut xd = x0.clone();
    let mut d_prev = 0.0;
    for _ in 0..steps {
        x = t(&x)?;
        xd = t_delta(&xd)?;
        let d = x.distance(&xd);
        let roundoff = 1e-12 * scale(&x);
        if d > lipschitz * d_prev + delta + roundoff {
            return Ok(false);
        }
        d_prev = d;
    }
    Ok(true)
}

/// Perturbs `y` by noise of relative size `δ_rel` and compares the noisy fixed
/// point to the clean one against `δ/(1−L) + 20·tol·max(1, ‖x̊‖)`.
pub fn verify_robustness(
    params: &ConsistencyNetParams,
    meas: &Measurement,
    levels: &[f64],
    trials: usize,
    settings: &SolverSettings,
    seed: u64,
) -> Result<RobustnessReport> {
    let lipschitz = certified(params)?;
    let tol = settings.tol;
    let clean = fixed_point(params, meas, &meas.y, tol, settings.max_iter)?;
    let recursion_steps = clean.iterations.clamp(1, 50);
    let jobs: Vec<(usize, f64, usize)> = levels
        .iter()
        .enumerate()
        .flat_map(|(li, &level)| (0..trials).map(move |t| (li, level, t)))
        .collect();
    let rows = par_map(&jobs, |_, &(li, level, trial)| -> Result<RobustnessTrial> {
        let noisy = add_noise(
            meas,
            level,
            derive_seed(seed, TAG_NOISE, (li * 100_000 + trial) as u64),
        )?;
        let delta = noisy.y.distance(&meas.y);
        let res = fixed_point(params, &noisy, &meas.y, tol, settings.max_iter)?;
        let observed = res.solution.distance(&clean.solution);
        let bound = delta / (1.0 - lipschitz) + ROBUSTNESS_FACTOR * tol * scale(&clean.solution);
        let recursion_ok = synchronized_recursion(
            params,
            meas,
            &noisy,
            &meas.y,
            lipschitz,
            delta,
            recursion_steps,
        )?;
        Ok(RobustnessTrial {
            level,
            trial,
            delta,
            observed,
            bound,
            margin: bound - observed,
            recursion_ok,
        })
    });
    let trials = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let all_within_bound = trials.iter().all(RobustnessTrial::within_bound);
    Ok(RobustnessReport {
        lipschitz,
        tol,
        trials,
        all_within_bound,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitRow {
    pub level: f64,
    pub trial: usize,
    pub iterations: usize,
    /// Distance to the solution started from `y`.
    pub distance: f64,
    pub bound: f64,
}

impl InitRow {
    pub fn passed(&self) -> bool {
        self.distance <= self.bound
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitIndependenceReport {
    pub tol: f64,
    pub rows: Vec<InitRow>,
    /// Largest distance between any two solutions, including the one from `y`.
    pub max_pairwise: f64,
    pub bound: f64,
}

impl InitIndependenceReport {
    pub fn passed(&self) -> bool {
        self.max_pairwise <= self.bound && self.rows.iter().all(InitRow::passed)
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "level,trial,iterations,distance,bound")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{:.6e},{:.6e}",
                r.level, r.trial, r.iterations, r.distance, r.bound
            )?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        format!(
            "init-independence: {} ({} perturbed starts, max pairwise distance {:.3e}, bound {:.3e})",
            verdict(self.passed()),
            self.rows.len(),
            self.max_pairwise,
            self.bound
        )
    }
}

/// Solutions from `y` and from `y + e` with `‖e‖ = level·‖y‖` must agree
/// within `10·tol·max(1, ‖x̊‖)`.
pub fn verify_init_independence(
    params: &ConsistencyNetParams,
    meas: &Measurement,
    levels: &[f64],
    trials: usize,
    settings: &SolverSettings,
    seed: u64,
) -> Result<InitIndependenceReport> {
    certified(params)?;
    let tol = settings.tol;
    let base = fixed_point(params, meas, &meas.y, tol, settings.max_iter)?;
    let jobs: Vec<(usize, f64, usize)> = levels
        .iter()
        .enumerate()
        .flat_map(|(li, &level)| (0..trials).map(move |t| (li, level, t)))
        .collect();
    let runs = par_map(
        &jobs,
        |_, &(li, level, trial)| -> Result<FixedPointResult> {
            let e = scaled_noise(
                &meas.y,
                level,
                derive_seed(seed, TAG_PERTURB, (li * 100_000 + trial) as u64),
            );
            fixed_point(params, meas, &meas.y.add(&e), tol, settings.max_iter)
        },
    );
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let bound = AGREEMENT_FACTOR * tol * scale(&base.solution);
    let mut max_pairwise: f64 = 0.0;
    let mut rows = Vec::with_capacity(runs.len());
    for (a, (&(_, level, trial), res)) in jobs.iter().zip(&runs).enumerate() {
        let distance = res.solution.distance(&base.solution);
        max_pairwise = max_pairwise.max(distance);
        for other in &runs[a + 1..] {
            max_pairwise = max_pairwise.max(res.solution.distance(&other.solution));
        }
        rows.push(InitRow {
            level,
            trial,
            iterations: res.iterations,
            distance,
            bound,
        });
    }
    Ok(InitIndependenceReport {
        tol,
        rows,
        max_pairwise,
        bound,
    })
}

/// Metrics of the network and of zero-filling on a test set, typically drawn
/// with a mask family not seen in training. Report only.
pub fn verify_mask_transfer(
    params: &ConsistencyNetParams,
    data: &[(Sample, Measurement)],
    settings: &SolverSettings,
) -> Result<(MetricsReport, MetricsReport)> {
    certified(params)?;
    let rows = par_map(data, |k, (sample, meas)| -> Result<_> {
        let res = reconstruct(params, meas, None, settings)?;
        let deq = evaluate_kspace(k, &res.solution, &sample.full)?;
        let zf = evaluate(k, &zero_filled(meas)?, &sample.reference)?;
        Ok((deq, zf))
    });
    let mut deq = MetricsReport::default();
    let mut zf = MetricsReport::default();
    for r in rows {
        let (a, b) = r?;
        deq.push(a);
        zf.push(b);
    }
    Ok((deq, zf))
}
