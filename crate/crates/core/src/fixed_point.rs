//! Fixed-point solvers for `x = T(x)`: Picard iteration and Anderson
//! acceleration, plus residual diagnostics.
//!
//! The residual recorded at step `k` is `‖T(x_k) − x_k‖_F`; for Picard this is
//! the step length `‖x_{k+1} − x_k‖_F`. A run converges once the residual is at
//! most `tol · max(1, ‖T(x_k)‖_F)` and the returned solution is `T(x_k)`.

use crate::error::{Error, Result};
use crate::tensor::KSpace;
use nalgebra::{DMatrix, DVector};
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

pub const DEFAULT_TOL: f64 = 1e-5;
pub const DEFAULT_PICARD_MAX_ITER: usize = 200;
pub const DEFAULT_ANDERSON_MAX_ITER: usize = 60;
pub const DEFAULT_MEMORY: usize = 5;
pub const DEFAULT_DAMPING: f64 = 1.0;
pub const DEFAULT_RIDGE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Picard,
    Anderson,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Picard => "picard",
            Method::Anderson => "anderson",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "picard" => Ok(Method::Picard),
            "anderson" => Ok(Method::Anderson),
            other => Err(Error::Config(format!("unknown solver '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointResult {
    pub solution: KSpace,
    pub residuals: Vec<f64>,
    /// Elapsed milliseconds at the end of each iteration.
    pub wall_times_ms: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub tol: f64,
    pub method: Method,
}

impl FixedPointResult {
    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(0.0)
    }

    /// [`geometric_rate_check`] with the round-off floor scaled by the solution norm.
    pub fn satisfies_geometric_rate(&self, lipschitz: f64, slack: f64) -> bool {
        geometric_rate_check_scaled(&self.residuals, lipschitz, slack, self.solution.norm())
    }

    /// CSV with header `iteration,residual,wall_time_ms`; iterations start at 0.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "iteration,residual,wall_time_ms")?;
        for (k, (r, t)) in self.residuals.iter().zip(&self.wall_times_ms).enumerate() {
            writeln!(out, "{k},{r:.10e},{t:.3}")?;
        }
        Ok(())
    }
}

/// Solver configuration shared by training, inference and the CLI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub method: Method,
    pub tol: f64,
    pub max_iter: usize,
    pub memory: usize,
    pub damping: f64,
    pub ridge: f64,
    /// Run exactly this many iterations regardless of the tolerance.
    pub fixed_iters: Option<usize>,
    /// Stop after this many consecutive residual increases and return the
    /// best iterate seen (Picard only).
    pub watchdog: Option<usize>,
}

impl SolverSettings {
    pub fn picard(tol: f64, max_iter: usize) -> Self {
        SolverSettings {
            method: Method::Picard,
            tol,
            max_iter,
            memory: DEFAULT_MEMORY,
            damping: DEFAULT_DAMPING,
            ridge: DEFAULT_RIDGE,
            fixed_iters: None,
            watchdog: None,
        }
    }

    pub fn anderson(tol: f64, max_iter: usize) -> Self {
        SolverSettings {
            method: Method::Anderson,
            ..Self::picard(tol, max_iter)
        }
    }

    pub fn with_fixed_iters(mut self, iters: usize) -> Self {
        self.fixed_iters = Some(iters);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!(
                "tolerance must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 || self.fixed_iters == Some(0) {
            return Err(Error::Config("iteration budget must be at least 1".into()));
        }
        if self.method == Method::Anderson {
            if self.memory == 0 {
                return Err(Error::Config("Anderson memory must be at least 1".into()));
            }
            if !(self.damping > 0.0 && self.damping <= 1.0) {
                return Err(Error::Config(format!(
                    "damping must lie in (0, 1], got {}",
                    self.damping
                )));
            }
            if !(self.ridge >= 0.0) {
                return Err(Error::Config(format!(
                    "ridge must be nonnegative, got {}",
                    self.ridge
                )));
            }
        }
        Ok(())
    }

    fn budget(&self) -> usize {
        self.fixed_iters.unwrap_or(self.max_iter)
    }
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self::anderson(DEFAULT_TOL, DEFAULT_ANDERSON_MAX_ITER)
    }
}

/// Dispatch on `settings.method`.
pub fn solve<F>(t: F, x0: &KSpace, settings: &SolverSettings) -> Result<FixedPointResult>
where
    F: FnMut(&KSpace) -> Result<KSpace>,
{
    settings.validate()?;
    match settings.method {
        Method::Picard => picard_impl(t, x0, settings),
        Method::Anderson => anderson_impl(t, x0, settings),
    }
}

pub fn picard_solve<F>(t: F, x0: &KSpace, tol: f64, max_iter: usize) -> Result<FixedPointResult>
where
    F: FnMut(&KSpace) -> Result<KSpace>,
{
    solve(t, x0, &SolverSettings::picard(tol, max_iter))
}

pub fn anderson_solve<F>(
    t: F,
    x0: &KSpace,
    memory: usize,
    tol: f64,
    max_iter: usize,
    damping: f64,
    ridge: f64,
) -> Result<FixedPointResult>
where
    F: FnMut(&KSpace) -> Result<KSpace>,
{
    let settings = SolverSettings {
        memory,
        damping,
        ridge,
        ..SolverSettings::anderson(tol, max_iter)
    };
    solve(t, x0, &settings)
}

fn apply<F>(t: &mut F, x: &KSpace, k: usize) -> Result<KSpace>
where
    F: FnMut(&KSpace) -> Result<KSpace>,
{
    let out = t(x)?;
    if !x.same_shape(&out) {
        return Err(Error::Shape(format!(
            "operator changed shape {:?} -> {:?}",
            x.shape(),
            out.shape()
        )));
    }
    if !out.is_finite() {
        return Err(Error::Divergence {
            iteration: k,
            reason: "non-finite iterate".into(),
        });
    }
    Ok(out)
}

fn threshold(tol: f64, x: &KSpace, k: usize) -> Result<f64> {
    let n = x.norm();
    if !n.is_finite() {
        return Err(Error::Divergence {
            iteration: k,
            reason: "iterate norm overflow".into(),
        });
    }
    Ok(tol * n.max(1.0))
}

fn picard_impl<F>(mut t: F, x0: &KSpace, s: &SolverSettings) -> Result<FixedPointResult>
where
    F: FnMut(&KSpace) -> Result<KSpace>,
{
    x0.check_finite("initial iterate")?;
    let start = Instant::now();
    let mut x = x0.clone();
    let mut residuals = Vec::new();
    let mut times = Vec::new();
    let mut converged = false;
    let mut best: Option<(f64, KSpace)> = None;
    let mut growth = 0usize;
    for k in 0..s.budget() {
        let next = apply(&mut t, &x, k)?;
        let r = next.distance(&x);
        if !r.is_finite() {
            return Err(Error::Divergence {
                iteration: k,
                reason: "residual overflow".into(),
            });
        }
        residuals.push(r);
        times.push(start.elapsed().as_secs_f64() * 1e3);
        converged = r <= threshold(s.tol, &next, k)?;
        x = next;
        if converged && s.fixed_iters.is_none() {
            break;
        }
        if let Some(limit) = s.watchdog {
            if residuals.len() >= 2 && r > residuals[residuals.len() - 2] {
                growth += 1;
            } else {
                growth = 0;
            }
            if best.as_ref().map_or(true, |(b, _)| r < *b) {
                best = Some((r, x.clone()));
            }
            if growth >= limit {
                log::warn!("residual grew for {growth} consecutive steps; returning best iterate");
                let (_, xb) = best.take().expect("best iterate recorded");
                let iterations = residuals.len();
                return Ok(FixedPointResult {
                    solution: xb,
                    residuals,
                    wall_times_ms: times,
                    iterations,
                    converged: false,
                    tol: s.tol,
                    method: Method::Picard,
                });
            }
        }
    }
    let iterations = residuals.len();
    Ok(FixedPointResult {
        solution: x,
        residuals,
        wall_times_ms: times,
        iterations,
        converged,
        tol: s.tol,
        method: Method::Picard,
    })
}

/// Mixing weights minimizing `‖Σ a_i f_i‖² + λ‖a‖²` subject to `Σ a_i = 1`,
/// or `None` when the system is numerically degenerate.
fn mixing_weights(res: &[KSpace], ridge: f64) -> Option<Vec<f64>> {
    let n = res.len();
    let mut h = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = res[i].real_dot(&res[j]);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    let scale = (0..n).map(|i| h[(i, i)]).fold(0.0f64, f64::max);
    if !(scale > 0.0) {
        return None;
    }
    for i in 0..n {
        h[(i, i)] += ridge * scale;
    }
    let sv = h.clone().singular_values();
    let (lo, hi) = sv.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if !(lo > 1e-13 * hi) {
        return None;
    }
    let z = h.lu().solve(&DVector::from_element(n, 1.0))?;
    let sum: f64 = z.iter().sum();
    if !sum.is_finite() || sum.abs() < 1e-300 {
        return None;
    }
    let a: Vec<f64> = z.iter().map(|v| v / sum).collect();
    a.iter().all(|v| v.is_finite()).then_some(a)
}

fn anderson_impl<F>(mut t: F, x0: &KSpace, s: &SolverSettings) -> Result<FixedPointResult>
where
    F: FnMut(&KSpace) -> Result<KSpace>,
{
    x0.check_finite("initial iterate")?;
    let start = Instant::now();
    let mut xs: Vec<KSpace> = Vec::with_capacity(s.memory);
    let mut gs: Vec<KSpace> = Vec::with_capacity(s.memory);
    let mut fs: Vec<KSpace> = Vec::with_capacity(s.memory);
    let mut x = x0.clone();
    let mut residuals = Vec::new();
    let mut times = Vec::new();
    let mut converged = false;
    let mut solution = x0.clone();
    for k in 0..s.budget() {
        let g = apply(&mut t, &x, k)?;
        let f = g.sub(&x);
        let r = f.norm();
        if !r.is_finite() {
            return Err(Error::Divergence {
                iteration: k,
                reason: "residual overflow".into(),
            });
        }
        residuals.push(r);
        times.push(start.elapsed().as_secs_f64() * 1e3);
        converged = r <= threshold(s.tol, &g, k)?;
        solution = g.clone();
        if converged && s.fixed_iters.is_none() {
            break;
        }
        if xs.len() == s.memory {
            xs.remove(0);
            gs.remove(0);
            fs.remove(0);
        }
        xs.push(x);
        gs.push(g);
        fs.push(f);
        let weights = if fs.len() == 1 {
            None
        } else {
            mixing_weights(&fs, s.ridge)
        };
        x = match weights {
            Some(a) => {
                let mut next = KSpace::zeros(x0.height(), x0.width(), x0.channels());
                for (ai, (gi, xi)) in a.iter().zip(gs.iter().zip(&xs)) {
                    next.axpy(ai * s.damping, gi);
                    if s.damping < 1.0 {
                        next.axpy(ai * (1.0 - s.damping), xi);
                    }
                }
                next
            }
            None => {
                if fs.len() > 1 {
                    log::debug!(
                        "Anderson system degenerate at iteration {k}; taking a Picard step"
                    );
                    let keep = fs.len() - 1;
                    xs.drain(..keep);
                    gs.drain(..keep);
                    fs.drain(..keep);
                }
                let (gi, xi) = (&gs[gs.len() - 1], &xs[xs.len() - 1]);
                let mut next = gi.scale(s.damping);
                if s.damping < 1.0 {
                    next.axpy(1.0 - s.damping, xi);
                }
                next
            }
        };
        if !x.is_finite() {
            return Err(Error::Divergence {
                iteration: k,
                reason: "non-finite Anderson mixture".into(),
            });
        }
    }
    let iterations = residuals.len();
    Ok(FixedPointResult {
        solution,
        residuals,
        wall_times_ms: times,
        iterations,
        converged,
        tol: s.tol,
        method: Method::Anderson,
    })
}

/// Checks `r_k ≤ slack · L^k · r_0` for every recorded `k`.
pub fn geometric_rate_check(residuals: &[f64], lipschitz: f64, slack: f64) -> bool {
    geometric_rate_check_scaled(residuals, lipschitz, slack, 0.0)
}

/// As [`geometric_rate_check`], ignoring residuals below
/// `100 · ε_machine · solution_norm` where round-off dominates.
pub fn geometric_rate_check_scaled(
    residuals: &[f64],
    lipschitz: f64,
    slack: f64,
    solution_norm: f64,
) -> bool {
    let Some(&r0) = residuals.first() else {
        return false;
    };
    let floor = 100.0 * f64::EPSILON * solution_norm;
    let mut bound = slack * r0;
    for &r in residuals {
        if r > floor && r > bound {
            return false;
        }
        bound *= lipschitz;
    }
    true
}
