use super::{
    ConsistencyNetParams, Layer, PowerIteration, COLD_POWER_ITERS, RESIDUAL_GAIN, WARM_POWER_ITERS,
};
use crate::error::{Error, Result};

/// Relative margin applied when a kernel is scaled back onto the unit ball.
pub const NORMALIZE_SLACK: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificateMethod {
    PowerIteration,
}

/// Composed Lipschitz bound of `Φ` from per-kernel spectral-norm estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzCertificate {
    pub lipschitz: f64,
    /// Per-kernel estimates in block/layer order.
    pub kernel_bounds: Vec<f64>,
    pub method: CertificateMethod,
    pub slack: f64,
}

impl LipschitzCertificate {
    pub fn is_contractive(&self) -> bool {
        self.lipschitz < 1.0
    }
}

fn stack_bound(layers: &[Layer]) -> f64 {
    // activation is 1-Lipschitz
    layers.iter().map(|l| l.sigma).product()
}

impl ConsistencyNetParams {
    /// Product over blocks of `c_k·((0.99-α) + α·∏σ_k) + c_i·((0.99-α) + α·∏σ_i)`.
    pub fn certified_lipschitz(&self) -> LipschitzCertificate {
        let mut l = 1.0;
        for b in &self.blocks {
            let keep = RESIDUAL_GAIN - b.alpha;
            let mut bound = b.mix.0 * (keep + b.alpha * stack_bound(&b.kspace));
            if let Some(img) = &b.image {
                bound += b.mix.1 * (keep + b.alpha * stack_bound(img));
            }
            l *= bound;
        }
        LipschitzCertificate {
            lipschitz: l,
            kernel_bounds: self.layers().map(|layer| layer.sigma).collect(),
            method: CertificateMethod::PowerIteration,
            slack: NORMALIZE_SLACK,
        }
    }

    /// Project onto the certified-contractive set: every kernel is divided by
    /// `max(1, σ̂·(1 + 10⁻³))` using a warm-started power-iteration estimate,
    /// `α` is clamped to `[0, 0.99]` and the hybrid weights are projected onto
    /// the simplex.
    pub fn normalize(&mut self) -> Result<LipschitzCertificate> {
        self.normalize_with(WARM_POWER_ITERS)
    }

    pub(crate) fn normalize_with(&mut self, iters: usize) -> Result<LipschitzCertificate> {
        for layer in self.layers_mut() {
            let sigma = layer.power.run(&layer.kernel, iters)?;
            if !sigma.is_finite() {
                return Err(Error::InvalidInput(
                    "kernel has non-finite spectral norm".into(),
                ));
            }
            let scale = (sigma * (1.0 + NORMALIZE_SLACK)).max(1.0);
            if scale > 1.0 {
                layer.kernel.scale_in_place(1.0 / scale);
            }
            layer.sigma = sigma / scale;
        }
        let hybrid = self.blocks.iter().any(|b| b.image.is_some());
        for b in &mut self.blocks {
            b.alpha = if b.alpha.is_nan() {
                0.0
            } else {
                b.alpha.clamp(0.0, RESIDUAL_GAIN)
            };
            if hybrid {
                b.mix = project_simplex(b.mix);
            }
        }
        let cert = self.certified_lipschitz();
        debug_assert!(
            cert.lipschitz <= RESIDUAL_GAIN + 1e-12,
            "{}",
            cert.lipschitz
        );
        Ok(cert)
    }

    /// Re-estimate every kernel norm from a fresh start vector without
    /// rescaling anything (used to audit loaded checkpoints).
    pub fn recertify(&mut self) -> Result<LipschitzCertificate> {
        let grid = self.grid();
        for layer in self.layers_mut() {
            layer.power = PowerIteration::new(layer.kernel.c_in(), grid, 0)?;
            layer.sigma = layer.power.run(&layer.kernel, COLD_POWER_ITERS)?;
        }
        Ok(self.certified_lipschitz())
    }
}

/// Euclidean projection of a pair onto `{c_k + c_i = 1, c ≥ 0}`.
fn project_simplex((a, b): (f64, f64)) -> (f64, f64) {
    let ck = ((a - b + 1.0) / 2.0).clamp(0.0, 1.0);
    let ck = if ck.is_nan() { 0.5 } else { ck };
    (ck, 1.0 - ck)
}
