use super::ComplexTensor;
use crate::error::Result;
use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};
use std::cell::RefCell;
use std::sync::Arc;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(len, direction))
}

/// Orthonormal 2-D DFT per channel with the zero frequency at index `(H/2, W/2)`.
///
/// Equivalent to `fftshift(fft2(ifftshift(x))) / sqrt(H*W)`.
pub fn fft2_centered(x: &ComplexTensor) -> Result<ComplexTensor> {
    x.check_finite("fft2_centered input")?;
    Ok(transform(x, FftDirection::Forward))
}

/// Inverse of [`fft2_centered`].
pub fn ifft2_centered(x: &ComplexTensor) -> Result<ComplexTensor> {
    x.check_finite("ifft2_centered input")?;
    Ok(transform(x, FftDirection::Inverse))
}

pub(crate) fn transform(x: &ComplexTensor, direction: FftDirection) -> ComplexTensor {
    let (h, w, nc) = x.shape();
    let row_fft = plan(w, direction);
    let col_fft = plan(h, direction);
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let (h_half, w_half) = (h / 2, w / 2);

    let mut out = ComplexTensor::zeros(h, w, nc);
    let mut plane = vec![Complex64::new(0.0, 0.0); h * w];
    let mut column = vec![Complex64::new(0.0, 0.0); h];
    let mut scratch = vec![
        Complex64::new(0.0, 0.0);
        row_fft
            .get_inplace_scratch_len()
            .max(col_fft.get_inplace_scratch_len())
    ];

    for c in 0..nc {
        // ifftshift on the way in
        for i in 0..h {
            let si = (i + h_half) % h;
            for j in 0..w {
                let sj = (j + w_half) % w;
                plane[i * w + j] = x.get(si, sj, c);
            }
        }
        for row in plane.chunks_exact_mut(w) {
            row_fft.process_with_scratch(row, &mut scratch);
        }
        for j in 0..w {
            for i in 0..h {
                column[i] = plane[i * w + j];
            }
            col_fft.process_with_scratch(&mut column, &mut scratch);
            for i in 0..h {
                plane[i * w + j] = column[i];
            }
        }
        // fftshift on the way out
        for i in 0..h {
            let si = (i + h - h_half) % h;
            for j in 0..w {
                let sj = (j + w - w_half) % w;
                out.set(i, j, c, plane[si * w + sj] * scale);
            }
        }
    }
    out
}
