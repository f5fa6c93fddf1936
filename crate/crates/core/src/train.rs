//! Training by implicit differentiation at the fixed point, and inference.
//!
//! With `T(x) = P_C(Φ(x))` and `x̊ = T(x̊)`, the loss gradient is
//! `(∂T/∂φ)ᵀ v` where `v` solves `v = g + Jᵀ v`, `J = (I − M) ∂Φ/∂x` at `x̊`.
//! The adjoint system is solved by Picard iteration, which converges under
//! the same certificate as the forward solve.

use crate::error::{Error, Result};
use crate::fixed_point::{solve, FixedPointResult, SolverSettings};
use crate::forward::{project_in_place, Measurement, SamplingMask};
use crate::net::{ConsistencyNetParams, LipschitzCertificate, NetGradients, Tape};
use crate::rng::{derive_seed, DetRng};
use crate::tensor::KSpace;
use std::io::Write;

/// One training example: the fully sampled reference and its measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub full: KSpace,
    pub meas: Measurement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub forward: SolverSettings,
    pub backward_tol: f64,
    pub backward_max_iter: usize,
    pub shuffle_seed: u64,
    /// Start each forward solve from the sample's previous fixed point
    /// instead of `y`.
    pub warm_start: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            forward: SolverSettings::anderson(1e-4, 60),
            backward_tol: 1e-4,
            backward_max_iter: 200,
            shuffle_seed: 0,
            warm_start: false,
        }
    }
}

impl TrainConfig {
    /// Full-scale schedule: 500 epochs.
    pub fn full_scale() -> Self {
        TrainConfig {
            epochs: 500,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("Adam epsilon must be positive".into()));
        }
        if !(self.backward_tol > 0.0) || self.backward_max_iter == 0 {
            return Err(Error::Config(
                "backward solver needs tol > 0 and max_iter >= 1".into(),
            ));
        }
        self.forward.validate()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub mean_loss: Vec<f64>,
    pub mean_forward_iters: Vec<f64>,
    pub mean_backward_iters: Vec<f64>,
    /// Certificate at the end of each epoch.
    pub lipschitz: Vec<f64>,
    /// Certificate after every optimizer step.
    pub certificate_history: Vec<f64>,
    /// `(1/M) Σ ‖x̊ᵐ − x̂ᵐ‖_F` with the final parameters.
    pub training_residual: f64,
}

impl TrainReport {
    pub fn epochs(&self) -> usize {
        self.mean_loss.len()
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "epoch,mean_loss,mean_fwd_iters,mean_bwd_iters,L")?;
        for e in 0..self.epochs() {
            writeln!(
                out,
                "{},{:.10e},{:.4},{:.4},{:.10}",
                e + 1,
                self.mean_loss[e],
                self.mean_forward_iters[e],
                self.mean_backward_iters[e],
                self.lipschitz[e]
            )?;
        }
        Ok(())
    }
}

/// `x ↦ P_C(Φ(x))` for one measurement.
pub fn consistency_operator<'a>(
    params: &'a ConsistencyNetParams,
    meas: &'a Measurement,
) -> impl FnMut(&KSpace) -> Result<KSpace> + 'a {
    move |x: &KSpace| {
        let mut out = params.forward(x)?;
        project_in_place(&mut out, &meas.mask, &meas.y)?;
        Ok(out)
    }
}

/// Fixed point of `P_C∘Φ` from `x0` (defaults to `y`). Refuses uncertified parameters.
pub fn reconstruct(
    params: &ConsistencyNetParams,
    meas: &Measurement,
    x0: Option<&KSpace>,
    settings: &SolverSettings,
) -> Result<FixedPointResult> {
    let cert = params.certified_lipschitz();
    if !cert.is_contractive() {
        return Err(Error::Certificate(format!(
            "Lipschitz bound {:.4} is not below 1",
            cert.lipschitz
        )));
    }
    let x0 = x0.unwrap_or(&meas.y);
    solve(consistency_operator(params, meas), x0, settings)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitGradient {
    pub grads: NetGradients,
    pub iterations: usize,
    pub converged: bool,
}

fn complement(mask: &SamplingMask, v: &KSpace) -> Result<KSpace> {
    mask.apply_complement(v)
}

/// Parameter gradient of a loss at the fixed point `x̊`, given `∂ℓ/∂x̊`.
pub fn implicit_backward(
    params: &ConsistencyNetParams,
    x_fixed: &KSpace,
    mask: &SamplingMask,
    grad_loss: &KSpace,
    tol: f64,
    max_iter: usize,
) -> Result<ImplicitGradient> {
    let tape = params.forward_with_tape(x_fixed)?;
    implicit_backward_with_tape(params, &tape, mask, grad_loss, tol, max_iter)
}

fn implicit_backward_with_tape(
    params: &ConsistencyNetParams,
    tape: &Tape,
    mask: &SamplingMask,
    g: &KSpace,
    tol: f64,
    max_iter: usize,
) -> Result<ImplicitGradient> {
    g.check_same_shape(tape.input(), "loss gradient vs fixed point")?;
    let mut v = g.clone();
    let mut best = (f64::INFINITY, v.clone());
    let mut iterations = 0;
    let mut converged = g.norm() == 0.0;
    while !converged && iterations < max_iter {
        let (_, jt) = params.backward(tape, &complement(mask, &v)?, false)?;
        let mut next = g.clone();
        next.axpy(1.0, &jt);
        if !next.is_finite() {
            return Err(Error::Divergence {
                iteration: iterations,
                reason: "non-finite adjoint iterate".into(),
            });
        }
        let r = next.distance(&v);
        iterations += 1;
        converged = r <= tol * next.norm();
        v = next;
        if r < best.0 {
            best = (r, v.clone());
        }
    }
    if !converged {
        log::warn!(
            "adjoint solve stopped after {iterations} iterations without reaching tolerance"
        );
        v = best.1;
    }
    let (grads, _) = params.backward(tape, &complement(mask, &v)?, true)?;
    Ok(ImplicitGradient {
        grads: grads.expect("requested"),
        iterations,
        converged,
    })
}

/// Adam moments over the flat real parameterization.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    /// One bias-corrected Adam update of `x` in place.
    pub fn update(&mut self, x: &mut [f64], grads: &[f64], config: &TrainConfig) -> Result<()> {
        if x.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "Adam state has {} entries, parameters {}, gradients {}",
                self.m.len(),
                x.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let (b1, b2) = (config.beta1, config.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for i in 0..x.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            x[i] -= config.learning_rate * mh / (vh.sqrt() + config.adam_eps);
        }
        Ok(())
    }
}

/// Adam update of every real parameter followed by projection onto the
/// certified-contractive set.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut ConsistencyNetParams,
    grads: &NetGradients,
    config: &TrainConfig,
) -> Result<LipschitzCertificate> {
    let g = grads.to_flat(params.variant());
    if let Some(i) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::Training {
            epoch: 0,
            sample: 0,
            step: state.step as usize + 1,
            reason: format!("non-finite gradient entry {i}"),
        });
    }
    let mut x = params.to_flat();
    state.update(&mut x, &g, config)?;
    params.set_from_flat(&x)?;
    params.normalize()
}

fn training_error(epoch: usize, sample: usize, step: usize, e: Error) -> Error {
    match e {
        Error::Training { reason, .. } => Error::Training {
            epoch,
            sample,
            step,
            reason,
        },
        other => Error::Training {
            epoch,
            sample,
            step,
            reason: other.to_string(),
        },
    }
}

/// Shape of every sample must match the network.
fn check_dataset(params: &ConsistencyNetParams, data: &[TrainSample]) -> Result<()> {
    let Some(first) = data.first() else {
        return Err(Error::InvalidInput("training set is empty".into()));
    };
    let shape = first.full.shape();
    if shape.2 != params.coils() {
        return Err(Error::Shape(format!(
            "dataset has {} coils, network expects {}",
            shape.2,
            params.coils()
        )));
    }
    for (i, s) in data.iter().enumerate() {
        if s.full.shape() != shape || s.meas.y.shape() != shape {
            return Err(Error::Shape(format!(
                "sample {i} does not share shape {shape:?}"
            )));
        }
    }
    Ok(())
}

/// Train `params` in place over `data`.
pub fn train(
    mut params: ConsistencyNetParams,
    data: &[TrainSample],
    config: &TrainConfig,
) -> Result<(ConsistencyNetParams, TrainReport)> {
    config.validate()?;
    check_dataset(&params, data)?;
    let mut report = TrainReport::default();
    let mut adam = AdamState::new(params.real_param_count());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut warm: Vec<Option<KSpace>> = vec![None; data.len()];
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let mut rng = DetRng::new(derive_seed(config.shuffle_seed, 0x5348_5546, epoch as u64));
        rng.shuffle(&mut order);
        let (mut loss_sum, mut fwd_sum, mut bwd_sum) = (0.0, 0.0, 0.0);
        for &idx in &order {
            step += 1;
            let sample = &data[idx];
            let x0 = if config.warm_start {
                warm[idx].as_ref()
            } else {
                None
            };
            let fp = reconstruct(&params, &sample.meas, x0, &config.forward)
                .map_err(|e| training_error(epoch, idx, step, e))?;
            let diff = fp.solution.sub(&sample.full);
            loss_sum += diff.norm_sqr();
            fwd_sum += fp.iterations as f64;
            let g = diff.scale(2.0);
            let ig = implicit_backward(
                &params,
                &fp.solution,
                &sample.meas.mask,
                &g,
                config.backward_tol,
                config.backward_max_iter,
            )
            .map_err(|e| training_error(epoch, idx, step, e))?;
            bwd_sum += ig.iterations as f64;
            let cert = adam_step(&mut adam, &mut params, &ig.grads, config)
                .map_err(|e| training_error(epoch, idx, step, e))?;
            report.certificate_history.push(cert.lipschitz);
            if config.warm_start {
                warm[idx] = Some(fp.solution);
            }
        }
        let m = data.len() as f64;
        report.mean_loss.push(loss_sum / m);
        report.mean_forward_iters.push(fwd_sum / m);
        report.mean_backward_iters.push(bwd_sum / m);
        let l = params.certified_lipschitz().lipschitz;
        report.lipschitz.push(l);
        log::info!(
            "epoch {}/{}: loss {:.6e}, fwd {:.1}, bwd {:.1}, L {:.4}",
            epoch + 1,
            config.epochs,
            loss_sum / m,
            fwd_sum / m,
            bwd_sum / m,
            l
        );
    }
    report.training_residual = training_residual(&params, data, &config.forward)?;
    Ok((params, report))
}

/// `(1/M) Σ ‖x̊ᵐ − x̂ᵐ‖_F` for the given parameters.
pub fn training_residual(
    params: &ConsistencyNetParams,
    data: &[TrainSample],
    settings: &SolverSettings,
) -> Result<f64> {
    let mut sum = 0.0;
    for s in data {
        sum += reconstruct(params, &s.meas, None, settings)?
            .solution
            .distance(&s.full);
    }
    Ok(sum / data.len().max(1) as f64)
}
