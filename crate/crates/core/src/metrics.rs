//! Image-domain quality metrics: SSoS coil combination, PSNR, NMSE, SSIM.

use crate::error::{Error, Result};
use crate::forward::Measurement;
use crate::tensor::{ifft2_centered, ComplexTensor, KSpace};
use std::io::Write;

/// PSNR reported for an exact match.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

/// Real-valued row-major image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize) -> Self {
        Image {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{} values for a {height}x{width} image",
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Image {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.width + j] = v;
    }

    pub fn max(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    fn check_pair(&self, other: &Image) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::Shape(format!(
                "image shapes differ: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

/// `z(p) = (Σ_c |x_c(p)|²)^{1/2}`.
pub fn ssos(coil_images: &ComplexTensor) -> Image {
    let (h, w, nc) = coil_images.shape();
    let mut out = Image::zeros(h, w);
    for (o, px) in out
        .data
        .iter_mut()
        .zip(coil_images.data().chunks_exact(nc.max(1)))
    {
        *o = px.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    }
    out
}

/// SSoS image of multi-coil k-space.
pub fn ssos_kspace(x: &KSpace) -> Result<Image> {
    Ok(ssos(&ifft2_centered(x)?))
}

/// SSoS of the inverse transform of `y` with unsampled entries at zero.
pub fn zero_filled(meas: &Measurement) -> Result<Image> {
    ssos_kspace(&meas.y)
}

fn check_ref(reference: &Image) -> Result<()> {
    if reference.data.iter().all(|v| *v == 0.0) {
        return Err(Error::InvalidInput(
            "reference image is identically zero".into(),
        ));
    }
    Ok(())
}

/// `10·log10(max(ref)² / MSE)`, [`PSNR_CAP`] when the images are equal.
pub fn psnr(test: &Image, reference: &Image) -> Result<f64> {
    test.check_pair(reference)?;
    check_ref(reference)?;
    let mse = test
        .data
        .iter()
        .zip(&reference.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / test.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    let peak = reference.max();
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

/// `‖test − ref‖² / ‖ref‖²`.
pub fn nmse(test: &Image, reference: &Image) -> Result<f64> {
    test.check_pair(reference)?;
    check_ref(reference)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in test.data.iter().zip(&reference.data) {
        num += (a - b) * (a - b);
        den += b * b;
    }
    Ok(num / den)
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering with the 1-D window `g`.
fn filter_valid(data: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..n).map(|t| g[t] * data[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..n).map(|t| g[t] * rows[(i + t) * ow + j]).sum();
        }
    }
    out
}

/// Mean SSIM over all fully contained 11×11 Gaussian windows (σ = 1.5) with
/// `C1 = (0.01·DR)²`, `C2 = (0.03·DR)²` and `DR` the reference range.
pub fn ssim(test: &Image, reference: &Image) -> Result<f64> {
    test.check_pair(reference)?;
    let (h, w) = (test.height, test.width);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let dr = reference.max() - reference.min();
    let c1 = (0.01 * dr).powi(2);
    let c2 = (0.03 * dr).powi(2);
    let g = gaussian_window();
    let x = &test.data;
    let y = &reference.data;
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mx = filter_valid(x, h, w, &g);
    let my = filter_valid(y, h, w, &g);
    let sxx = filter_valid(&xx, h, w, &g);
    let syy = filter_valid(&yy, h, w, &g);
    let sxy = filter_valid(&xy, h, w, &g);
    let mut total = 0.0;
    for k in 0..mx.len() {
        let (a, b) = (mx[k], my[k]);
        let vx = sxx[k] - a * a;
        let vy = syy[k] - b * b;
        let cxy = sxy[k] - a * b;
        let num = (2.0 * a * b + c1) * (2.0 * cxy + c2);
        let den = (a * a + b * b + c1) * (vx + vy + c2);
        total += if den == 0.0 { 1.0 } else { num / den };
    }
    Ok(total / mx.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleMetrics {
    pub sample_id: usize,
    pub nmse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// All three metrics of `test` against `reference`.
pub fn evaluate(sample_id: usize, test: &Image, reference: &Image) -> Result<SampleMetrics> {
    Ok(SampleMetrics {
        sample_id,
        nmse: nmse(test, reference)?,
        psnr: psnr(test, reference)?,
        ssim: ssim(test, reference)?,
    })
}

/// Metrics of a k-space reconstruction against the fully sampled k-space.
pub fn evaluate_kspace(sample_id: usize, recon: &KSpace, full: &KSpace) -> Result<SampleMetrics> {
    evaluate(sample_id, &ssos_kspace(recon)?, &ssos_kspace(full)?)
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub samples: Vec<SampleMetrics>,
}

impl MetricsReport {
    pub fn push(&mut self, m: SampleMetrics) {
        self.samples.push(m);
    }

    pub fn nmse(&self) -> (f64, f64) {
        mean_std(&self.samples.iter().map(|s| s.nmse).collect::<Vec<_>>())
    }

    pub fn psnr(&self) -> (f64, f64) {
        mean_std(&self.samples.iter().map(|s| s.psnr).collect::<Vec<_>>())
    }

    pub fn ssim(&self) -> (f64, f64) {
        mean_std(&self.samples.iter().map(|s| s.ssim).collect::<Vec<_>>())
    }

    /// Rows `sample_id,nmse,psnr,ssim` followed by `mean` and `std` rows.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "sample_id,nmse,psnr,ssim")?;
        for s in &self.samples {
            writeln!(
                out,
                "{},{:.8e},{:.6},{:.6}",
                s.sample_id, s.nmse, s.psnr, s.ssim
            )?;
        }
        let (n, p, q) = (self.nmse(), self.psnr(), self.ssim());
        writeln!(out, "mean,{:.8e},{:.6},{:.6}", n.0, p.0, q.0)?;
        writeln!(out, "std,{:.8e},{:.6},{:.6}", n.1, p.1, q.1)?;
        Ok(())
    }
}
