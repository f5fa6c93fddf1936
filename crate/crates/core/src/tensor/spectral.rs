use super::{conv2d_adjoint, conv2d_complex, ComplexTensor, ConvKernel};
use crate::error::{Error, Result};
use crate::rng::DetRng;

/// Power iteration on `KᴴK` for the zero-padded convolution operator on a
/// fixed grid. Keeps its vector between calls so estimates can be warm-started.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerIteration {
    vector: ComplexTensor,
}

impl PowerIteration {
    pub fn new(c_in: usize, grid: (usize, usize), seed: u64) -> Result<Self> {
        if grid.0 == 0 || grid.1 == 0 || c_in == 0 {
            return Err(Error::Shape(format!(
                "power iteration needs a nonempty grid, got {grid:?} x {c_in}"
            )));
        }
        let mut rng = DetRng::new(seed);
        let v = ComplexTensor::random(grid.0, grid.1, c_in, 1.0, &mut rng);
        let n = v.norm();
        Ok(Self {
            vector: v.scale(1.0 / n),
        })
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.vector.height(), self.vector.width())
    }

    pub fn vector(&self) -> &ComplexTensor {
        &self.vector
    }

    /// Run `iters` iterations and return `‖K v‖` for the final unit vector `v`.
    ///
    /// The returned value is a Rayleigh-quotient estimate, so it never exceeds
    /// the true operator norm and does not decrease with more iterations.
    pub fn run(&mut self, k: &ConvKernel, iters: usize) -> Result<f64> {
        if k.c_in() != self.vector.channels() {
            return Err(Error::Shape(format!(
                "power iteration vector has {} channels, kernel expects {}",
                self.vector.channels(),
                k.c_in()
            )));
        }
        for _ in 0..iters {
            let u = conv2d_complex(&self.vector, k)?;
            let z = conv2d_adjoint(&u, k)?;
            let n = z.norm();
            if n == 0.0 || !n.is_finite() {
                return Ok(0.0);
            }
            self.vector = z.scale(1.0 / n);
        }
        Ok(conv2d_complex(&self.vector, k)?.norm())
    }
}

/// Estimate the operator 2-norm of `conv2d_complex(·, k)` on `H×W` inputs.
pub fn spectral_norm_power_iter(
    k: &ConvKernel,
    input_shape: (usize, usize),
    iters: usize,
    seed: u64,
) -> Result<f64> {
    if iters == 0 {
        return Err(Error::InvalidInput(
            "power iteration needs at least one iteration".into(),
        ));
    }
    PowerIteration::new(k.c_in(), input_shape, seed)?.run(k, iters)
}
