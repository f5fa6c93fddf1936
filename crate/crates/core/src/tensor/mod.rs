//! Complex tensor primitives: the `H×W×C` container, centered unitary 2-D
//! Fourier transforms, zero-padded complex convolution and spectral-norm
//! estimation.
//!
//! Storage is row-major with the channel index innermost, so pixel `(i, j)`
//! owns the contiguous slice `data[(i*W + j)*C .. (i*W + j + 1)*C]`.

mod conv;
pub(crate) mod fft;
pub(crate) mod io;
mod spectral;

pub use conv::{conv2d_adjoint, conv2d_complex, conv2d_kernel_grad, ConvKernel};
pub use fft::{fft2_centered, ifft2_centered};
pub use io::{read_ct01, write_ct01, CT01_MAGIC};
pub use spectral::{spectral_norm_power_iter, PowerIteration};

use crate::error::{Error, Result};
use crate::rng::DetRng;
use num_complex::Complex64;

/// Dense complex `H×W×C` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<Complex64>,
}

/// Full or partial multi-coil k-space data.
pub type KSpace = ComplexTensor;

impl ComplexTensor {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        assert!(
            height >= 1 && width >= 1 && channels >= 1,
            "tensor dimensions must be positive"
        );
        Self {
            height,
            width,
            channels,
            data: vec![Complex64::new(0.0, 0.0); height * width * channels],
        }
    }

    pub fn from_vec(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<Complex64>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} needs {} entries, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> Complex64,
    ) -> Self {
        let mut t = Self::zeros(height, width, channels);
        for i in 0..height {
            for j in 0..width {
                for c in 0..channels {
                    t.data[(i * width + j) * channels + c] = f(i, j, c);
                }
            }
        }
        t
    }

    /// I.i.d. complex Gaussian entries with per-component standard deviation `sigma`.
    pub fn random(
        height: usize,
        width: usize,
        channels: usize,
        sigma: f64,
        rng: &mut DetRng,
    ) -> Self {
        let mut t = Self::zeros(height, width, channels);
        for v in &mut t.data {
            *v = rng.complex_normal(sigma);
        }
        t
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, c: usize) -> usize {
        (i * self.width + j) * self.channels + c
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> Complex64 {
        self.data[self.index(i, j, c)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, c: usize, v: Complex64) {
        let k = self.index(i, j, c);
        self.data[k] = v;
    }

    pub fn pixel(&self, i: usize, j: usize) -> &[Complex64] {
        let start = (i * self.width + j) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub fn check_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "{what} contains non-finite entries"
            )))
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Real inner product `Re⟨self, other⟩`, treating complex entries as real pairs.
    pub fn real_dot(&self, other: &Self) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }

    pub fn distance(&self, other: &Self) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|z| z * s)
    }

    pub fn scale_complex(&self, s: Complex64) -> Self {
        self.map(|z| z * s)
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Self {
        debug_assert!(self.same_shape(other));
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * s;
        }
    }

    /// Extract the `rows × cols` window whose top-left corner is `(r0, c0)`.
    pub fn crop(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Result<Self> {
        if r0 + rows > self.height || c0 + cols > self.width || rows == 0 || cols == 0 {
            return Err(Error::Shape(format!(
                "crop {rows}x{cols} at ({r0},{c0}) outside {}x{}",
                self.height, self.width
            )));
        }
        Ok(Self::from_fn(rows, cols, self.channels, |i, j, c| {
            self.get(r0 + i, c0 + j, c)
        }))
    }

    /// Single channel as a contiguous `H×W` buffer.
    pub fn channel(&self, c: usize) -> Vec<Complex64> {
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }
}
