//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use deqpocs_core::metrics::Image;
use deqpocs_core::{ComplexTensor, ConvKernel};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Direct double-sum DFT, orthonormal, zero frequency at `(H/2, W/2)`.
pub fn dft2_centered(x: &ComplexTensor, inverse: bool) -> ComplexTensor {
    let (h, w, nc) = x.shape();
    let sign = if inverse { 1.0 } else { -1.0 };
    let shift = |k: usize, n: usize| k as f64 - (n / 2) as f64;
    let norm = 1.0 / ((h * w) as f64).sqrt();
    ComplexTensor::from_fn(h, w, nc, |u, v, c| {
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..h {
            for j in 0..w {
                let phase = sign
                    * 2.0
                    * PI
                    * (shift(u, h) * shift(i, h) / h as f64 + shift(v, w) * shift(j, w) / w as f64);
                acc += x.get(i, j, c) * Complex64::from_polar(1.0, phase);
            }
        }
        acc * norm
    })
}

/// Dense matrix of the zero-padded cross-correlation on an `H×W` grid,
/// acting on vectors in the tensor's storage order.
pub fn conv_matrix(k: &ConvKernel, h: usize, w: usize) -> DMatrix<Complex64> {
    let (ci, co) = (k.c_in(), k.c_out());
    let (rh, rw) = (k.kh() as isize / 2, k.kw() as isize / 2);
    let mut m = DMatrix::zeros(h * w * co, h * w * ci);
    for i in 0..h as isize {
        for j in 0..w as isize {
            for a in 0..k.kh() as isize {
                for b in 0..k.kw() as isize {
                    let (ii, jj) = (i + a - rh, j + b - rw);
                    if ii < 0 || jj < 0 || ii >= h as isize || jj >= w as isize {
                        continue;
                    }
                    for p in 0..ci {
                        for q in 0..co {
                            let row = ((i * w as isize + j) as usize) * co + q;
                            let col = ((ii * w as isize + jj) as usize) * ci + p;
                            m[(row, col)] += k.get(a as usize, b as usize, p, q);
                        }
                    }
                }
            }
        }
    }
    m
}

pub fn to_vector(x: &ComplexTensor) -> DVector<Complex64> {
    DVector::from_column_slice(x.data())
}

pub fn largest_singular_value(m: &DMatrix<Complex64>) -> f64 {
    m.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// SPIRiT calibration for one target coil assembled from scratch and solved
/// as the stacked least-squares problem `[D; √λ I] w ≈ [t; 0]` by QR.
/// Returns the full `k×k×Nc` tap vector with a zero self-center.
pub fn spirit_dense_solve(
    acs: &ComplexTensor,
    k: usize,
    target: usize,
    ridge: f64,
) -> Vec<Complex64> {
    let (ha, wa, nc) = acs.shape();
    let r = k / 2;
    let mut cols_of = Vec::new();
    for a in 0..k {
        for b in 0..k {
            for n in 0..nc {
                if !(a == r && b == r && n == target) {
                    cols_of.push((a, b, n));
                }
            }
        }
    }
    let mut rows: Vec<Vec<Complex64>> = Vec::new();
    let mut rhs = Vec::new();
    for i in r..ha - r {
        for j in r..wa - r {
            rows.push(
                cols_of
                    .iter()
                    .map(|&(a, b, n)| acs.get(i + a - r, j + b - r, n))
                    .collect(),
            );
            rhs.push(acs.get(i, j, target));
        }
    }
    let p = cols_of.len();
    let mean_diag = (0..p)
        .map(|c| rows.iter().map(|row| row[c].norm_sqr()).sum::<f64>())
        .sum::<f64>()
        / p as f64;
    let lam = (ridge * mean_diag).sqrt();
    let m = rows.len();
    let mut a = DMatrix::zeros(m + p, p);
    let mut t = DVector::zeros(m + p);
    for (ri, row) in rows.iter().enumerate() {
        for c in 0..p {
            a[(ri, c)] = row[c];
        }
        t[ri] = rhs[ri];
    }
    for c in 0..p {
        a[(m + c, c)] = Complex64::new(lam, 0.0);
    }
    let qr = a.qr();
    let qt = qr.q().adjoint() * t;
    let w = qr
        .r()
        .solve_upper_triangular(&qt)
        .expect("full-rank stacked system");
    let mut full = vec![Complex64::new(0.0, 0.0); k * k * nc];
    for (c, &(a, b, n)) in cols_of.iter().enumerate() {
        full[(a * k + b) * nc + n] = w[c];
    }
    full
}

pub fn ssos_oracle(x: &ComplexTensor) -> Image {
    let (h, w, nc) = x.shape();
    Image::from_fn(h, w, |i, j| {
        (0..nc)
            .map(|c| x.get(i, j, c).norm_sqr())
            .sum::<f64>()
            .sqrt()
    })
}

pub fn psnr_oracle(test: &Image, reference: &Image) -> f64 {
    let n = (test.height() * test.width()) as f64;
    let mut mse = 0.0;
    let mut peak = f64::NEG_INFINITY;
    for i in 0..test.height() {
        for j in 0..test.width() {
            mse += (test.get(i, j) - reference.get(i, j)).powi(2);
            peak = peak.max(reference.get(i, j));
        }
    }
    if mse == 0.0 {
        return 99.0;
    }
    (10.0 * (peak * peak / (mse / n)).log10()).min(99.0)
}

pub fn nmse_oracle(test: &Image, reference: &Image) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..test.height() {
        for j in 0..test.width() {
            num += (test.get(i, j) - reference.get(i, j)).powi(2);
            den += reference.get(i, j).powi(2);
        }
    }
    num / den
}

/// SSIM with an explicit 2-D Gaussian window evaluated at every valid position.
pub fn ssim_oracle(x: &Image, y: &Image) -> f64 {
    let n = 11usize;
    let sigma: f64 = 1.5;
    let c = (n / 2) as f64;
    let mut win = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            let d2 = (a as f64 - c).powi(2) + (b as f64 - c).powi(2);
            win[a * n + b] = (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }
    let s: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= s);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..y.height() {
        for j in 0..y.width() {
            lo = lo.min(y.get(i, j));
            hi = hi.max(y.get(i, j));
        }
    }
    let c1 = (0.01 * (hi - lo)).powi(2);
    let c2 = (0.03 * (hi - lo)).powi(2);
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..=x.height() - n {
        for j in 0..=x.width() - n {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for a in 0..n {
                for b in 0..n {
                    let g = win[a * n + b];
                    let (u, v) = (x.get(i + a, j + b), y.get(i + a, j + b));
                    mx += g * u;
                    my += g * v;
                    sxx += g * u * u;
                    syy += g * v * v;
                    sxy += g * u * v;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

pub fn max_abs_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}
