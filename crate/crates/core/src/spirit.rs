//! Classical SPIRiT: linear k-space self-consistency kernels calibrated on
//! the ACS block, and the POCS reconstruction `x ← P_C(G x)`.

use crate::error::{Error, Result};
use crate::fixed_point::{solve, FixedPointResult, SolverSettings};
use crate::forward::{project_in_place, Measurement};
use crate::tensor::io::read_u32;
use crate::tensor::{
    conv2d_complex, read_ct01, spectral_norm_power_iter, write_ct01, ComplexTensor, ConvKernel,
    KSpace,
};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::io::{Read, Write};

pub const SP01_MAGIC: &[u8; 4] = b"SP01";
pub const DEFAULT_KERNEL_SIZE: usize = 5;
/// Tikhonov weight relative to the mean diagonal of the normal matrix.
pub const DEFAULT_RIDGE: f64 = 1e-2;
/// Consecutive residual increases tolerated before the watchdog stops.
pub const WATCHDOG_STEPS: usize = 10;

/// Kernels `w_{i,n}` stored as one convolution from `Nc` source coils
/// (input channels) to `Nc` target coils (output channels).
#[derive(Debug, Clone, PartialEq)]
pub struct SpiritKernels {
    pub kernel: ConvKernel,
    pub ridge: f64,
}

impl SpiritKernels {
    pub fn size(&self) -> usize {
        self.kernel.kh()
    }

    pub fn coils(&self) -> usize {
        self.kernel.c_in()
    }

    /// Power-iteration estimate of `‖G‖` on an `H×W` grid.
    pub fn operator_norm(&self, grid: (usize, usize)) -> Result<f64> {
        spectral_norm_power_iter(&self.kernel, grid, 100, 0)
    }

    pub fn write_sp01<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(SP01_MAGIC)?;
        out.write_all(&(self.size() as u32).to_le_bytes())?;
        out.write_all(&(self.coils() as u32).to_le_bytes())?;
        let nc = self.coils();
        let t = ComplexTensor::from_vec(
            self.size(),
            self.size(),
            nc * nc,
            self.kernel.taps().to_vec(),
        )?;
        write_ct01(out, &t)
    }

    /// The ridge weight is not stored and reads back as zero.
    pub fn read_sp01<R: Read>(input: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != SP01_MAGIC {
            return Err(Error::format("SP01", format!("bad magic {magic:?}")));
        }
        let k = read_u32(input)? as usize;
        let nc = read_u32(input)? as usize;
        let t = read_ct01(input)?;
        if t.shape() != (k, k, nc * nc) {
            return Err(Error::format(
                "SP01",
                format!("payload {:?} does not match k={k}, Nc={nc}", t.shape()),
            ));
        }
        let kernel = ConvKernel::from_taps(k, k, nc, nc, t.into_vec())
            .map_err(|e| Error::format("SP01", e.to_string()))?;
        Ok(SpiritKernels { kernel, ridge: 0.0 })
    }
}

/// Design matrix and target for predicting coil `target` at every interior
/// ACS point from the `k×k×Nc` neighborhood, self-center excluded.
/// Column order is `(a, b, n)` with `n` fastest.
pub fn calibration_system(
    acs: &ComplexTensor,
    k: usize,
    target: usize,
) -> (DMatrix<Complex64>, DVector<Complex64>) {
    let (ha, wa, nc) = acs.shape();
    let r = k / 2;
    let center = (r * k + r) * nc + target;
    let rows = (ha + 1 - k) * (wa + 1 - k);
    let cols = k * k * nc - 1;
    let mut d = DMatrix::zeros(rows, cols);
    let mut t = DVector::zeros(rows);
    let mut row = 0;
    for i in r..ha - r {
        for j in r..wa - r {
            let mut col = 0;
            for a in 0..k {
                for b in 0..k {
                    for n in 0..nc {
                        if (a * k + b) * nc + n == center {
                            continue;
                        }
                        d[(row, col)] = acs.get(i + a - r, j + b - r, n);
                        col += 1;
                    }
                }
            }
            t[row] = acs.get(i, j, target);
            row += 1;
        }
    }
    (d, t)
}

/// Ridge least squares per target coil: `min ‖D w − t‖² + λ‖w‖²` with
/// `λ = ridge · mean diag(DᴴD)`.
pub fn calibrate_kernels(acs: &ComplexTensor, k: usize, ridge: f64) -> Result<SpiritKernels> {
    let (ha, wa, nc) = acs.shape();
    if k % 2 == 0 || k == 0 {
        return Err(Error::Config(format!("kernel size must be odd, got {k}")));
    }
    if ha < k || wa < k {
        return Err(Error::Config(format!(
            "calibration region {ha}x{wa} is smaller than the {k}x{k} kernel"
        )));
    }
    if !(ridge >= 0.0) {
        return Err(Error::Config(format!(
            "ridge must be nonnegative, got {ridge}"
        )));
    }
    acs.check_finite("calibration data")?;
    let r = k / 2;
    let center = (r * k + r) * nc;
    let mut kernel = ConvKernel::zeros(k, k, nc, nc)?;
    for target in 0..nc {
        let (d, t) = calibration_system(acs, k, target);
        let mut normal = d.adjoint() * &d;
        let rhs = d.adjoint() * &t;
        let cols = normal.nrows();
        let mean_diag = (0..cols).map(|c| normal[(c, c)].re).sum::<f64>() / cols as f64;
        if mean_diag == 0.0 {
            continue;
        }
        let lambda = ridge * mean_diag;
        for c in 0..cols {
            normal[(c, c)] += Complex64::new(lambda, 0.0);
        }
        let w = match normal.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => normal.lu().solve(&rhs).ok_or_else(|| {
                Error::Config("calibration system is singular; increase the ridge".into())
            })?,
        };
        let mut col = 0;
        for a in 0..k {
            for b in 0..k {
                for n in 0..nc {
                    if (a * k + b) * nc + n == center + target {
                        continue;
                    }
                    kernel.set(a, b, n, target, w[col]);
                    col += 1;
                }
            }
        }
    }
    if !kernel.is_finite() {
        return Err(Error::Config("calibration produced non-finite taps".into()));
    }
    Ok(SpiritKernels { kernel, ridge })
}

/// Fully sampled central block of a calibrated measurement.
pub fn acs_region(meas: &Measurement) -> Result<ComplexTensor> {
    let (rows, cols) = meas.mask.acs_window().ok_or_else(|| {
        Error::Config(format!(
            "mask kind {} has no calibration region",
            meas.mask.kind()
        ))
    })?;
    meas.y.crop(rows.start, cols.start, rows.len(), cols.len())
}

/// `(G x)_i = Σ_n x_n ⊛ w_{i,n}`.
pub fn spirit_apply(kernels: &SpiritKernels, x: &KSpace) -> Result<KSpace> {
    conv2d_complex(x, &kernels.kernel)
}

/// POCS `x ← P_C(G x)` from `x0 = y`. Stops at the tolerance, at `max_iter`,
/// or after [`WATCHDOG_STEPS`] consecutive residual increases, in which case
/// the best iterate is returned unconverged.
pub fn spirit_pocs_recon(
    kernels: &SpiritKernels,
    meas: &Measurement,
    max_iter: usize,
    tol: f64,
) -> Result<FixedPointResult> {
    if kernels.coils() != meas.y.channels() {
        return Err(Error::Shape(format!(
            "kernels for {} coils, measurement has {}",
            kernels.coils(),
            meas.y.channels()
        )));
    }
    let mut settings = SolverSettings::picard(tol, max_iter);
    settings.watchdog = Some(WATCHDOG_STEPS);
    let op = |x: &KSpace| {
        let mut out = spirit_apply(kernels, x)?;
        project_in_place(&mut out, &meas.mask, &meas.y)?;
        Ok(out)
    };
    solve(op, &meas.y, &settings)
}
