//! Acquisition model: Cartesian sampling masks shared across coils, the
//! sampling operator, measurement noise and the data-consistency projection
//! `P_C(x) = (I - M)x + y`.

use crate::error::{Error, Result};
use crate::rng::DetRng;
use crate::tensor::io::{read_f32, read_u32};
use crate::tensor::{ComplexTensor, KSpace};
use num_complex::Complex64;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

pub const MK01_MAGIC: &[u8; 4] = b"MK01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskKind {
    /// Whole columns, central ACS lines fully sampled.
    Calibrated1D,
    /// Individual points, central ACS region fully sampled.
    Calibrated2D,
    /// Whole columns, no forced centre.
    Free1D,
    /// Individual points, no forced centre.
    Free2D,
}

impl MaskKind {
    pub fn is_calibrated(self) -> bool {
        matches!(self, MaskKind::Calibrated1D | MaskKind::Calibrated2D)
    }

    pub fn is_1d(self) -> bool {
        matches!(self, MaskKind::Calibrated1D | MaskKind::Free1D)
    }

    pub fn to_byte(self) -> u8 {
        match self {
            MaskKind::Calibrated1D => 0,
            MaskKind::Calibrated2D => 1,
            MaskKind::Free1D => 2,
            MaskKind::Free2D => 3,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        Ok(match b {
            0 => MaskKind::Calibrated1D,
            1 => MaskKind::Calibrated2D,
            2 => MaskKind::Free1D,
            3 => MaskKind::Free2D,
            _ => return Err(Error::format("MK01", format!("unknown mask kind {b}"))),
        })
    }
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskKind::Calibrated1D => "1d-cal",
            MaskKind::Calibrated2D => "2d-cal",
            MaskKind::Free1D => "1d-free",
            MaskKind::Free2D => "2d-free",
        })
    }
}

impl FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1d-cal" | "1d-calibrated" => Ok(MaskKind::Calibrated1D),
            "2d-cal" | "2d-calibrated" => Ok(MaskKind::Calibrated2D),
            "1d-free" => Ok(MaskKind::Free1D),
            "2d-free" => Ok(MaskKind::Free2D),
            _ => Err(Error::Config(format!(
                "unknown mask kind '{s}' (expected 1d-cal, 2d-cal, 1d-free or 2d-free)"
            ))),
        }
    }
}

/// Auto-calibration region descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Acs {
    None,
    /// Number of fully sampled central columns.
    Lines(u16),
    /// Fully sampled central `rows × cols` block.
    Region(u16, u16),
}

impl Acs {
    /// ACS size used when none is given: the 16 lines / 64×64 region of a
    /// 384-wide acquisition, scaled to the grid and rounded up to even.
    pub fn scaled_default(kind: MaskKind, height: usize, width: usize) -> Acs {
        let round_even = |v: usize| v + (v % 2);
        match kind {
            MaskKind::Calibrated1D => {
                let lines = (16 * height).div_ceil(384);
                Acs::Lines(round_even(lines).min(width) as u16)
            }
            MaskKind::Calibrated2D => Acs::Region(
                round_even(height.div_ceil(6)).min(height) as u16,
                round_even(width.div_ceil(6)).min(width) as u16,
            ),
            MaskKind::Free1D | MaskKind::Free2D => Acs::None,
        }
    }

    fn to_pair(self) -> (u16, u16) {
        match self {
            Acs::None => (0, 0),
            Acs::Lines(n) => (n, 0),
            Acs::Region(r, c) => (r, c),
        }
    }

    fn from_pair(kind: MaskKind, a: u16, b: u16) -> Acs {
        match kind {
            _ if a == 0 && b == 0 => Acs::None,
            MaskKind::Calibrated1D | MaskKind::Free1D => Acs::Lines(a),
            MaskKind::Calibrated2D | MaskKind::Free2D => Acs::Region(a, b),
        }
    }
}

/// Boolean sampling set `Ω` on an `H×W` grid, shared by every coil.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    height: usize,
    width: usize,
    grid: Vec<bool>,
    kind: MaskKind,
    accel: f64,
    acs: Acs,
}

fn centered_range(len: usize, n: usize) -> std::ops::Range<usize> {
    let start = (len / 2).saturating_sub(n / 2);
    start..(start + n).min(len)
}

/// Draw a random sampling pattern. Deterministic given `seed`.
pub fn make_mask(
    kind: MaskKind,
    height: usize,
    width: usize,
    accel: f64,
    acs: Option<Acs>,
    seed: u64,
) -> Result<SamplingMask> {
    if !accel.is_finite() || accel < 1.0 {
        return Err(Error::Config(format!(
            "acceleration must be >= 1, got {accel}"
        )));
    }
    if height == 0 || width == 0 {
        return Err(Error::Config("mask grid must be nonempty".into()));
    }
    let acs = match (kind.is_calibrated(), acs) {
        (true, None) => Acs::scaled_default(kind, height, width),
        (true, Some(a)) => a,
        (false, None | Some(Acs::None)) => Acs::None,
        (false, Some(a)) => {
            return Err(Error::Config(format!(
                "calibration-free mask {kind} cannot carry ACS {a:?}"
            )))
        }
    };
    let mut rng = DetRng::new(seed);
    let mut grid = vec![false; height * width];

    if kind.is_1d() {
        let budget = ((width as f64 / accel).round() as usize).clamp(1, width);
        let lines = match acs {
            Acs::None => 0,
            Acs::Lines(n) => n as usize,
            Acs::Region(..) => {
                return Err(Error::Config("1-D masks take an ACS line count".into()))
            }
        };
        if lines > width {
            return Err(Error::Config(format!(
                "{lines} ACS lines exceed width {width}"
            )));
        }
        if lines > budget {
            return Err(Error::Config(format!(
                "{lines} ACS lines exceed the sampling budget of {budget} columns at R={accel}"
            )));
        }
        let acs_cols = centered_range(width, lines);
        let mut chosen: Vec<usize> = acs_cols.clone().collect();
        let mut pool: Vec<usize> = (0..width).filter(|j| !acs_cols.contains(j)).collect();
        rng.shuffle(&mut pool);
        chosen.extend(pool.into_iter().take(budget - lines));
        for j in chosen {
            for i in 0..height {
                grid[i * width + j] = true;
            }
        }
    } else {
        let total = height * width;
        let budget = ((total as f64 / accel).round() as usize).clamp(1, total);
        let (rows, cols) = match acs {
            Acs::None => (0, 0),
            Acs::Region(r, c) => (r as usize, c as usize),
            Acs::Lines(_) => return Err(Error::Config("2-D masks take an ACS region".into())),
        };
        if rows > height || cols > width {
            return Err(Error::Config(format!(
                "ACS region {rows}x{cols} does not fit {height}x{width}"
            )));
        }
        if rows * cols > budget {
            return Err(Error::Config(format!(
                "ACS region of {} points exceeds the sampling budget of {budget} at R={accel}",
                rows * cols
            )));
        }
        let (rr, cr) = (centered_range(height, rows), centered_range(width, cols));
        if rows > 0 && cols > 0 {
            for i in rr.clone() {
                for j in cr.clone() {
                    grid[i * width + j] = true;
                }
            }
        }
        let mut pool: Vec<usize> = (0..total).filter(|&p| !grid[p]).collect();
        rng.shuffle(&mut pool);
        for p in pool.into_iter().take(budget - rows * cols) {
            grid[p] = true;
        }
    }

    Ok(SamplingMask {
        height,
        width,
        grid,
        kind,
        accel,
        acs,
    })
}

impl SamplingMask {
    /// Mask from an explicit grid. At least one location must be sampled.
    pub fn from_grid(
        height: usize,
        width: usize,
        grid: Vec<bool>,
        kind: MaskKind,
        accel: f64,
        acs: Acs,
    ) -> Result<Self> {
        if grid.len() != height * width || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "mask grid of {} entries does not match {height}x{width}",
                grid.len()
            )));
        }
        if !grid.iter().any(|&b| b) {
            return Err(Error::InvalidInput("mask samples no location".into()));
        }
        Ok(Self {
            height,
            width,
            grid,
            kind,
            accel,
            acs,
        })
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            grid: vec![true; height * width],
            kind: MaskKind::Calibrated1D,
            accel: 1.0,
            acs: Acs::Lines(width.min(u16::MAX as usize) as u16),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn accel(&self) -> f64 {
        self.accel
    }

    pub fn acs(&self) -> Acs {
        self.acs
    }

    pub fn grid(&self) -> &[bool] {
        &self.grid
    }

    #[inline]
    pub fn is_sampled(&self, i: usize, j: usize) -> bool {
        self.grid[i * self.width + j]
    }

    pub fn sampled_count(&self) -> usize {
        self.grid.iter().filter(|&&b| b).count()
    }

    pub fn sampled_fraction(&self) -> f64 {
        self.sampled_count() as f64 / self.grid.len() as f64
    }

    /// Rows and columns of the fully sampled central ACS block, if any.
    pub fn acs_window(&self) -> Option<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        match self.acs {
            Acs::None => None,
            Acs::Lines(0) | Acs::Region(0, _) | Acs::Region(_, 0) => None,
            Acs::Lines(n) => Some((0..self.height, centered_range(self.width, n as usize))),
            Acs::Region(r, c) => Some((
                centered_range(self.height, r as usize),
                centered_range(self.width, c as usize),
            )),
        }
    }

    fn check_tensor(&self, x: &ComplexTensor, what: &str) -> Result<()> {
        if x.height() != self.height || x.width() != self.width {
            return Err(Error::Shape(format!(
                "{what} is {}x{}, mask is {}x{}",
                x.height(),
                x.width(),
                self.height,
                self.width
            )));
        }
        Ok(())
    }

    /// `M x`: keep entries on `Ω`, zero elsewhere.
    pub fn apply(&self, x: &ComplexTensor) -> Result<ComplexTensor> {
        self.check_tensor(x, "sampled tensor")?;
        let mut y = x.clone();
        self.zero_sampled_complement(&mut y, false);
        Ok(y)
    }

    /// `(I - M) x`: zero the sampled entries.
    pub fn apply_complement(&self, x: &ComplexTensor) -> Result<ComplexTensor> {
        self.check_tensor(x, "complement-sampled tensor")?;
        let mut y = x.clone();
        self.zero_sampled_complement(&mut y, true);
        Ok(y)
    }

    fn zero_sampled_complement(&self, x: &mut ComplexTensor, zero_sampled: bool) {
        let nc = x.channels();
        let zero = Complex64::new(0.0, 0.0);
        for (p, px) in x.data_mut().chunks_exact_mut(nc).enumerate() {
            if self.grid[p] == zero_sampled {
                px.fill(zero);
            }
        }
    }

    pub fn write_mk01<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(MK01_MAGIC)?;
        out.write_all(&(self.height as u32).to_le_bytes())?;
        out.write_all(&(self.width as u32).to_le_bytes())?;
        let bytes: Vec<u8> = self.grid.iter().map(|&b| b as u8).collect();
        out.write_all(&bytes)?;
        out.write_all(&[self.kind.to_byte()])?;
        out.write_all(&(self.accel as f32).to_le_bytes())?;
        let (a, b) = self.acs.to_pair();
        out.write_all(&a.to_le_bytes())?;
        out.write_all(&b.to_le_bytes())?;
        Ok(())
    }

    pub fn read_mk01<R: Read>(input: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != MK01_MAGIC {
            return Err(Error::format("MK01", format!("bad magic {magic:?}")));
        }
        let height = read_u32(input)? as usize;
        let width = read_u32(input)? as usize;
        let n = height
            .checked_mul(width)
            .ok_or_else(|| Error::format("MK01", "dimensions overflow"))?;
        let mut bytes = vec![0u8; n];
        input.read_exact(&mut bytes)?;
        let mut grid = Vec::with_capacity(n);
        for b in bytes {
            match b {
                0 => grid.push(false),
                1 => grid.push(true),
                _ => return Err(Error::format("MK01", format!("grid byte {b} is not 0/1"))),
            }
        }
        let mut kind = [0u8; 1];
        input.read_exact(&mut kind)?;
        let kind = MaskKind::from_byte(kind[0])?;
        let accel = read_f32(input)? as f64;
        let mut pair = [0u8; 4];
        input.read_exact(&mut pair)?;
        let acs = Acs::from_pair(
            kind,
            u16::from_le_bytes([pair[0], pair[1]]),
            u16::from_le_bytes([pair[2], pair[3]]),
        );
        Self::from_grid(height, width, grid, kind, accel, acs)
            .map_err(|e| Error::format("MK01", e.to_string()))
    }
}

/// Undersampled (possibly noisy) multi-coil k-space.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub y: KSpace,
    pub mask: SamplingMask,
    /// Frobenius norm of the added noise; zero for clean data.
    pub delta: f64,
}

/// `y = M x̂`, the same mask on every coil.
pub fn apply_sampling(x: &KSpace, mask: &SamplingMask) -> Result<Measurement> {
    Ok(Measurement {
        y: mask.apply(x)?,
        mask: mask.clone(),
        delta: 0.0,
    })
}

/// Add complex Gaussian noise on `Ω`, scaled so that its Frobenius norm is
/// exactly `delta_rel · ‖y‖_F`.
pub fn add_noise(meas: &Measurement, delta_rel: f64, seed: u64) -> Result<Measurement> {
    if !(delta_rel >= 0.0 && delta_rel.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "relative noise level must be finite and nonnegative, got {delta_rel}"
        )));
    }
    let target = delta_rel * meas.y.norm();
    if target == 0.0 {
        return Ok(Measurement {
            delta: meas.delta,
            ..meas.clone()
        });
    }
    let mut rng = DetRng::new(seed);
    let (h, w, nc) = meas.y.shape();
    let mut noise = ComplexTensor::zeros(h, w, nc);
    for i in 0..h {
        for j in 0..w {
            if meas.mask.is_sampled(i, j) {
                for c in 0..nc {
                    noise.set(i, j, c, rng.complex_normal(1.0));
                }
            }
        }
    }
    let scale = target / noise.norm();
    let mut y = meas.y.clone();
    y.axpy(scale, &noise);
    Ok(Measurement {
        y,
        mask: meas.mask.clone(),
        delta: meas.delta + target,
    })
}

/// `P_C(x) = (I - M)x + y`: measured values on `Ω`, `x` elsewhere.
pub fn project_data_consistency(x: &KSpace, mask: &SamplingMask, y: &KSpace) -> Result<KSpace> {
    let mut out = x.clone();
    project_in_place(&mut out, mask, y)?;
    Ok(out)
}

/// In-place form of [`project_data_consistency`]. Pure selection, no arithmetic.
pub fn project_in_place(x: &mut KSpace, mask: &SamplingMask, y: &KSpace) -> Result<()> {
    x.check_same_shape(y, "projection operand vs measurement")?;
    mask.check_tensor(x, "projection operand")?;
    let nc = x.channels();
    for (p, (dst, src)) in x
        .data_mut()
        .chunks_exact_mut(nc)
        .zip(y.data().chunks_exact(nc))
        .enumerate()
    {
        if mask.grid[p] {
            dst.copy_from_slice(src);
        }
    }
    Ok(())
}
