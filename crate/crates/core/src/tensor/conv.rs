use super::ComplexTensor;
use crate::error::{Error, Result};
use crate::rng::DetRng;
use num_complex::Complex64;

/// Complex convolution kernel with odd spatial extents.
///
/// Taps are stored `[kh][kw][c_in][c_out]`, output channel innermost. The
/// operator is a cross-correlation centred on the middle tap:
/// `out[i,j,o] = Σ k[a,b,c,o] · x[i + a - kh/2, j + b - kw/2, c]`, with zeros
/// outside the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    kh: usize,
    kw: usize,
    c_in: usize,
    c_out: usize,
    taps: Vec<Complex64>,
}

impl ConvKernel {
    pub fn zeros(kh: usize, kw: usize, c_in: usize, c_out: usize) -> Result<Self> {
        Self::from_taps(
            kh,
            kw,
            c_in,
            c_out,
            vec![Complex64::new(0.0, 0.0); kh * kw * c_in * c_out],
        )
    }

    pub fn from_taps(
        kh: usize,
        kw: usize,
        c_in: usize,
        c_out: usize,
        taps: Vec<Complex64>,
    ) -> Result<Self> {
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Shape(format!(
                "kernel extents must be odd, got {kh}x{kw}"
            )));
        }
        if c_in == 0 || c_out == 0 {
            return Err(Error::Shape(
                "kernel channel counts must be positive".into(),
            ));
        }
        if taps.len() != kh * kw * c_in * c_out {
            return Err(Error::Shape(format!(
                "kernel {kh}x{kw}x{c_in}x{c_out} needs {} taps, got {}",
                kh * kw * c_in * c_out,
                taps.len()
            )));
        }
        Ok(Self {
            kh,
            kw,
            c_in,
            c_out,
            taps,
        })
    }

    /// 1×1 kernel mapping every channel onto itself.
    pub fn identity(channels: usize) -> Self {
        let mut k = Self::zeros(1, 1, channels, channels).expect("valid shape");
        for c in 0..channels {
            k.set(0, 0, c, c, Complex64::new(1.0, 0.0));
        }
        k
    }

    pub fn random(
        kh: usize,
        kw: usize,
        c_in: usize,
        c_out: usize,
        std: f64,
        rng: &mut DetRng,
    ) -> Result<Self> {
        let mut k = Self::zeros(kh, kw, c_in, c_out)?;
        for t in &mut k.taps {
            *t = rng.complex_normal(std);
        }
        Ok(k)
    }

    pub fn kh(&self) -> usize {
        self.kh
    }

    pub fn kw(&self) -> usize {
        self.kw
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn taps(&self) -> &[Complex64] {
        &self.taps
    }

    pub fn taps_mut(&mut self) -> &mut [Complex64] {
        &mut self.taps
    }

    pub fn tap_count(&self) -> usize {
        self.taps.len()
    }

    #[inline]
    pub fn index(&self, a: usize, b: usize, ci: usize, co: usize) -> usize {
        ((a * self.kw + b) * self.c_in + ci) * self.c_out + co
    }

    pub fn get(&self, a: usize, b: usize, ci: usize, co: usize) -> Complex64 {
        self.taps[self.index(a, b, ci, co)]
    }

    pub fn set(&mut self, a: usize, b: usize, ci: usize, co: usize, v: Complex64) {
        let k = self.index(a, b, ci, co);
        self.taps[k] = v;
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for t in &mut self.taps {
            *t *= s;
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        (self.kh, self.kw, self.c_in, self.c_out) == (other.kh, other.kw, other.c_in, other.c_out)
    }

    pub fn is_finite(&self) -> bool {
        self.taps
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

#[inline(always)]
fn cmul_acc(acc: &mut [Complex64], x: Complex64, row: &[Complex64]) {
    for (o, k) in acc.iter_mut().zip(row) {
        o.re += x.re * k.re - x.im * k.im;
        o.im += x.re * k.im + x.im * k.re;
    }
}

/// Zero-padded "same" convolution; output has `k.c_out()` channels.
pub fn conv2d_complex(x: &ComplexTensor, k: &ConvKernel) -> Result<ComplexTensor> {
    if x.channels() != k.c_in {
        return Err(Error::Shape(format!(
            "conv input has {} channels, kernel expects {}",
            x.channels(),
            k.c_in
        )));
    }
    let (h, w, ci) = x.shape();
    let co = k.c_out;
    let (rh, rw) = (k.kh / 2, k.kw / 2);
    let mut out = ComplexTensor::zeros(h, w, co);
    let xd = x.data();
    let od = out.data_mut();
    for i in 0..h {
        for j in 0..w {
            let acc = &mut od[(i * w + j) * co..(i * w + j + 1) * co];
            for a in 0..k.kh {
                let Some(ii) = (i + a).checked_sub(rh).filter(|&v| v < h) else {
                    continue;
                };
                for b in 0..k.kw {
                    let Some(jj) = (j + b).checked_sub(rw).filter(|&v| v < w) else {
                        continue;
                    };
                    let xpix = &xd[(ii * w + jj) * ci..(ii * w + jj + 1) * ci];
                    let tap = &k.taps[(a * k.kw + b) * ci * co..(a * k.kw + b + 1) * ci * co];
                    for (c, &xv) in xpix.iter().enumerate() {
                        cmul_acc(acc, xv, &tap[c * co..(c + 1) * co]);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint (conjugate transpose) of [`conv2d_complex`] with respect to its input.
pub fn conv2d_adjoint(y: &ComplexTensor, k: &ConvKernel) -> Result<ComplexTensor> {
    if y.channels() != k.c_out {
        return Err(Error::Shape(format!(
            "adjoint input has {} channels, kernel produces {}",
            y.channels(),
            k.c_out
        )));
    }
    let (h, w, co) = y.shape();
    let ci = k.c_in;
    let (rh, rw) = (k.kh / 2, k.kw / 2);
    let mut out = ComplexTensor::zeros(h, w, ci);
    let yd = y.data();
    let od = out.data_mut();
    for i in 0..h {
        for j in 0..w {
            let ypix = &yd[(i * w + j) * co..(i * w + j + 1) * co];
            for a in 0..k.kh {
                let Some(ii) = (i + a).checked_sub(rh).filter(|&v| v < h) else {
                    continue;
                };
                for b in 0..k.kw {
                    let Some(jj) = (j + b).checked_sub(rw).filter(|&v| v < w) else {
                        continue;
                    };
                    let tap = &k.taps[(a * k.kw + b) * ci * co..(a * k.kw + b + 1) * ci * co];
                    let dst = &mut od[(ii * w + jj) * ci..(ii * w + jj + 1) * ci];
                    for (c, d) in dst.iter_mut().enumerate() {
                        let row = &tap[c * co..(c + 1) * co];
                        let mut re = 0.0;
                        let mut im = 0.0;
                        // conj(k) * y
                        for (kv, yv) in row.iter().zip(ypix) {
                            re += kv.re * yv.re + kv.im * yv.im;
                            im += kv.re * yv.im - kv.im * yv.re;
                        }
                        d.re += re;
                        d.im += im;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of `Re⟨y_bar, conv(x, k)⟩` with respect to the kernel taps, in the
/// real-pair convention (`∂/∂Re + i ∂/∂Im`).
pub fn conv2d_kernel_grad(
    x: &ComplexTensor,
    y_bar: &ComplexTensor,
    kh: usize,
    kw: usize,
) -> Result<ConvKernel> {
    let (h, w, ci) = x.shape();
    if y_bar.height() != h || y_bar.width() != w {
        return Err(Error::Shape(format!(
            "kernel gradient spatial mismatch: {:?} vs {:?}",
            x.shape(),
            y_bar.shape()
        )));
    }
    let co = y_bar.channels();
    let mut g = ConvKernel::zeros(kh, kw, ci, co)?;
    let (rh, rw) = (kh / 2, kw / 2);
    let xd = x.data();
    let yd = y_bar.data();
    for i in 0..h {
        for j in 0..w {
            let ypix = &yd[(i * w + j) * co..(i * w + j + 1) * co];
            for a in 0..kh {
                let Some(ii) = (i + a).checked_sub(rh).filter(|&v| v < h) else {
                    continue;
                };
                for b in 0..kw {
                    let Some(jj) = (j + b).checked_sub(rw).filter(|&v| v < w) else {
                        continue;
                    };
                    let xpix = &xd[(ii * w + jj) * ci..(ii * w + jj + 1) * ci];
                    let tap = &mut g.taps[(a * kw + b) * ci * co..(a * kw + b + 1) * ci * co];
                    for (c, xv) in xpix.iter().enumerate() {
                        cmul_acc(&mut tap[c * co..(c + 1) * co], xv.conj(), ypix);
                    }
                }
            }
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Materialize the linear operator column by column from unit impulses.
    fn materialize(k: &ConvKernel, h: usize, w: usize) -> Vec<Vec<Complex64>> {
        let n_in = h * w * k.c_in();
        let mut cols = Vec::with_capacity(n_in);
        for idx in 0..n_in {
            let mut e = ComplexTensor::zeros(h, w, k.c_in());
            e.data_mut()[idx] = Complex64::new(1.0, 0.0);
            cols.push(conv2d_complex(&e, k).unwrap().into_vec());
        }
        cols
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut rng = DetRng::new(1);
        let x = ComplexTensor::random(5, 4, 3, 1.0, &mut rng);
        let y = conv2d_complex(&x, &ConvKernel::identity(3)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let x = ComplexTensor::zeros(4, 4, 2);
        let k = ConvKernel::zeros(3, 3, 3, 1).unwrap();
        assert!(matches!(conv2d_complex(&x, &k), Err(Error::Shape(_))));
    }

    #[test]
    fn even_kernels_rejected() {
        assert!(ConvKernel::zeros(2, 3, 1, 1).is_err());
    }

    #[test]
    fn matches_materialized_matrix() {
        let mut rng = DetRng::new(2);
        let x = ComplexTensor::random(6, 6, 2, 1.0, &mut rng);
        let k = ConvKernel::random(3, 3, 2, 3, 1.0, &mut rng).unwrap();
        let cols = materialize(&k, 6, 6);
        assert_eq!(cols.len(), 72);
        assert_eq!(cols[0].len(), 108);
        let mut dense = vec![Complex64::new(0.0, 0.0); 108];
        for (col, xv) in cols.iter().zip(x.data()) {
            for (d, c) in dense.iter_mut().zip(col) {
                *d += c * xv;
            }
        }
        let fast = conv2d_complex(&x, &k).unwrap();
        let err: f64 = fast
            .data()
            .iter()
            .zip(&dense)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-12);
    }

    #[test]
    fn adjoint_identity_holds() {
        let mut rng = DetRng::new(3);
        let x = ComplexTensor::random(7, 5, 2, 1.0, &mut rng);
        let y = ComplexTensor::random(7, 5, 4, 1.0, &mut rng);
        let k = ConvKernel::random(3, 5, 2, 4, 1.0, &mut rng).unwrap();
        let lhs = conv2d_complex(&x, &k).unwrap();
        let rhs = conv2d_adjoint(&y, &k).unwrap();
        // <Kx, y> = <x, K^H y> as complex inner products
        let a: Complex64 = lhs
            .data()
            .iter()
            .zip(y.data())
            .map(|(p, q)| q.conj() * p)
            .sum();
        let b: Complex64 = x
            .data()
            .iter()
            .zip(rhs.data())
            .map(|(p, q)| q.conj() * p)
            .sum();
        assert!((a - b).norm() < 1e-10 * a.norm().max(1.0));
    }

    #[test]
    fn kernel_grad_matches_directional_derivative() {
        let mut rng = DetRng::new(4);
        let x = ComplexTensor::random(6, 6, 2, 1.0, &mut rng);
        let y_bar = ComplexTensor::random(6, 6, 3, 1.0, &mut rng);
        let d = ConvKernel::random(3, 3, 2, 3, 1.0, &mut rng).unwrap();
        let g = conv2d_kernel_grad(&x, &y_bar, 3, 3).unwrap();
        // the map is linear in k so the directional derivative is exact
        let dir = conv2d_complex(&x, &d).unwrap().real_dot(&y_bar);
        let pred: f64 = g
            .taps()
            .iter()
            .zip(d.taps())
            .map(|(gv, dv)| gv.re * dv.re + gv.im * dv.im)
            .sum();
        assert!((dir - pred).abs() < 1e-10 * dir.abs().max(1.0));
    }
}
