//! Synthetic multi-coil data: ellipse phantoms, smooth coil sensitivities,
//! fully sampled k-space and on-disk datasets.
//!
//! All randomness comes from [`DetRng`] seeded through [`derive_seed`], so a
//! dataset is a pure function of its [`DatasetSpec`].

use crate::error::{Error, Result};
use crate::forward::{
    add_noise, apply_sampling, make_mask, Acs, MaskKind, Measurement, SamplingMask,
};
use crate::metrics::{ssos, Image};
use crate::parallel::par_map;
use crate::rng::{derive_seed, DetRng};
use crate::tensor::{fft2_centered, read_ct01, write_ct01, ComplexTensor, KSpace};
use num_complex::Complex64;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

const TAG_PHANTOM: u64 = 0x5048_414E;
const TAG_COIL: u64 = 0x434F_494C;
const TAG_MASK: u64 = 0x4D41_534B;
const TAG_NOISE: u64 = 0x4E4F_4953;

pub const MANIFEST_NAME: &str = "manifest.txt";

/// Ellipse count and intensity range of the phantom generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomSpec {
    pub min_ellipses: usize,
    pub max_ellipses: usize,
    pub intensity: (f64, f64),
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            min_ellipses: 6,
            max_ellipses: 10,
            intensity: (0.0, 1.0),
        }
    }
}

/// Ellipse phantom with the default [`PhantomSpec`].
pub fn generate_phantom(height: usize, width: usize, seed: u64) -> Result<Image> {
    generate_phantom_with(height, width, seed, &PhantomSpec::default())
}

/// A large outer ellipse plus smaller interior ellipses, summed and clipped to `[0, 1]`.
pub fn generate_phantom_with(
    height: usize,
    width: usize,
    seed: u64,
    spec: &PhantomSpec,
) -> Result<Image> {
    if height < 8 || width < 8 {
        return Err(Error::InvalidInput(format!(
            "phantom needs at least 8x8, got {height}x{width}"
        )));
    }
    if spec.min_ellipses == 0 || spec.max_ellipses < spec.min_ellipses {
        return Err(Error::Config("invalid ellipse count range".into()));
    }
    let (lo, hi) = spec.intensity;
    if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
        return Err(Error::Config(format!(
            "intensity range ({lo}, {hi}) not inside [0, 1]"
        )));
    }
    let mut rng = DetRng::new(seed);
    let count = spec.min_ellipses + rng.below(spec.max_ellipses - spec.min_ellipses + 1);
    // (cx, cy, a, b, angle, value) in normalized [-1, 1] coordinates
    let mut ellipses = Vec::with_capacity(count);
    let lerp = |t: f64| lo + (hi - lo) * t;
    ellipses.push((
        rng.uniform_range(-0.05, 0.05),
        rng.uniform_range(-0.05, 0.05),
        rng.uniform_range(0.7, 0.9),
        rng.uniform_range(0.75, 0.95),
        rng.uniform_range(-0.2, 0.2),
        lerp(rng.uniform_range(0.3, 0.6)),
    ));
    for _ in 1..count {
        ellipses.push((
            rng.uniform_range(-0.45, 0.45),
            rng.uniform_range(-0.45, 0.45),
            rng.uniform_range(0.06, 0.35),
            rng.uniform_range(0.06, 0.35),
            rng.uniform_range(0.0, PI),
            lerp(rng.uniform_range(0.0, 0.5)),
        ));
    }
    Ok(Image::from_fn(height, width, |i, j| {
        let y = 2.0 * (i as f64 + 0.5) / height as f64 - 1.0;
        let x = 2.0 * (j as f64 + 0.5) / width as f64 - 1.0;
        let mut v = 0.0;
        for &(cx, cy, a, b, t, val) in &ellipses {
            let (s, c) = t.sin_cos();
            let u = (x - cx) * c + (y - cy) * s;
            let w = -(x - cx) * s + (y - cy) * c;
            if (u / a).powi(2) + (w / b).powi(2) <= 1.0 {
                v += val;
            }
        }
        v.clamp(0.0, 1.0)
    }))
}

/// Complex coil sensitivities normalized to unit SSoS at every pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilMaps {
    pub maps: ComplexTensor,
}

impl CoilMaps {
    pub fn coils(&self) -> usize {
        self.maps.channels()
    }

    /// Coil images `s_c · ρ`.
    pub fn modulate(&self, image: &Image) -> Result<ComplexTensor> {
        let (h, w, nc) = self.maps.shape();
        if (image.height(), image.width()) != (h, w) {
            return Err(Error::Shape(format!(
                "image {}x{} vs coil maps {h}x{w}",
                image.height(),
                image.width()
            )));
        }
        Ok(ComplexTensor::from_fn(h, w, nc, |i, j, c| {
            self.maps.get(i, j, c) * image.get(i, j)
        }))
    }
}

/// Gaussian bumps centered on equally spaced points just outside the field of
/// view, times a complex linear polynomial and a global phase, normalized to
/// unit SSoS. A single coil gets a constant unit-magnitude map.
pub fn generate_coil_maps(
    height: usize,
    width: usize,
    coils: usize,
    seed: u64,
) -> Result<CoilMaps> {
    if coils == 0 || height == 0 || width == 0 {
        return Err(Error::InvalidInput(
            "coil maps need at least one coil and a nonempty grid".into(),
        ));
    }
    let mut rng = DetRng::new(seed);
    let offset = rng.uniform_range(0.0, 2.0 * PI);
    let mut params = Vec::with_capacity(coils);
    for c in 0..coils {
        let angle = offset + 2.0 * PI * c as f64 / coils as f64;
        let phase = Complex64::from_polar(1.0, rng.uniform_range(-PI, PI));
        let u = rng.complex_normal(0.1);
        let v = rng.complex_normal(0.1);
        let clamp = |z: Complex64| {
            if z.norm() > 0.3 {
                z * (0.3 / z.norm())
            } else {
                z
            }
        };
        params.push((
            1.2 * angle.cos(),
            1.2 * angle.sin(),
            phase,
            clamp(u),
            clamp(v),
        ));
    }
    let width_sq = 2.0 * 0.5f64.powi(2);
    let mut maps = ComplexTensor::from_fn(height, width, coils, |i, j, c| {
        let (cx, cy, phase, u, v) = params[c];
        if coils == 1 {
            return phase;
        }
        let y = 2.0 * (i as f64 + 0.5) / height as f64 - 1.0;
        let x = 2.0 * (j as f64 + 0.5) / width as f64 - 1.0;
        let bump = (-((x - cx).powi(2) + (y - cy).powi(2)) / width_sq).exp();
        phase * (Complex64::new(1.0, 0.0) + u * x + v * y) * bump
    });
    for px in maps.data_mut().chunks_exact_mut(coils) {
        let n = px.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for z in px {
            *z /= n;
        }
    }
    Ok(CoilMaps { maps })
}

/// Ground truth for one synthetic acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub full: KSpace,
    pub reference: Image,
    pub phantom_seed: u64,
    pub coil_seed: u64,
}

/// Sampling pattern parameters shared by a dataset; each sample draws its own mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskSpec {
    pub kind: MaskKind,
    pub accel: f64,
    pub acs: Option<Acs>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetSpec {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub coils: usize,
    pub mask: MaskSpec,
    pub noise: f64,
    pub seed: u64,
    /// Index of the first sample, so train and test splits can share a seed.
    pub first_index: usize,
}

impl DatasetSpec {
    /// 32×32, 4 coils, 1-D calibrated mask.
    pub fn desk(count: usize, accel: f64, seed: u64) -> Self {
        DatasetSpec {
            count,
            height: 32,
            width: 32,
            coils: 4,
            mask: MaskSpec {
                kind: MaskKind::Calibrated1D,
                accel,
                acs: None,
            },
            noise: 0.0,
            seed,
            first_index: 0,
        }
    }
}

/// Seeds used to generate sample `index` of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleSeeds {
    pub phantom: u64,
    pub coil: u64,
    pub mask: u64,
    pub noise: u64,
}

impl SampleSeeds {
    pub fn derive(seed: u64, index: usize) -> Self {
        let i = index as u64;
        SampleSeeds {
            phantom: derive_seed(seed, TAG_PHANTOM, i),
            coil: derive_seed(seed, TAG_COIL, 0),
            mask: derive_seed(seed, TAG_MASK, i),
            noise: derive_seed(seed, TAG_NOISE, i),
        }
    }
}

/// Phantom → coil images → k-space for one sample.
pub fn make_sample(
    height: usize,
    width: usize,
    coils: usize,
    seeds: &SampleSeeds,
) -> Result<Sample> {
    let image = generate_phantom(height, width, seeds.phantom)?;
    let maps = generate_coil_maps(height, width, coils, seeds.coil)?;
    let coil_images = maps.modulate(&image)?;
    Ok(Sample {
        full: fft2_centered(&coil_images)?,
        reference: ssos(&coil_images),
        phantom_seed: seeds.phantom,
        coil_seed: seeds.coil,
    })
}

pub fn make_dataset(spec: &DatasetSpec) -> Result<Vec<(Sample, Measurement)>> {
    if spec.count == 0 {
        return Err(Error::InvalidInput(
            "dataset must contain at least one sample".into(),
        ));
    }
    let indices: Vec<usize> = (spec.first_index..spec.first_index + spec.count).collect();
    par_map(&indices, |_, &idx| {
        let seeds = SampleSeeds::derive(spec.seed, idx);
        let sample = make_sample(spec.height, spec.width, spec.coils, &seeds)?;
        let mask = make_mask(
            spec.mask.kind,
            spec.height,
            spec.width,
            spec.mask.accel,
            spec.mask.acs,
            seeds.mask,
        )?;
        let mut meas = apply_sampling(&sample.full, &mask)?;
        if spec.noise > 0.0 {
            meas = add_noise(&meas, spec.noise, seeds.noise)?;
        }
        Ok((sample, meas))
    })
    .into_iter()
    .collect()
}

fn manifest(spec: &DatasetSpec, data: &[(Sample, Measurement)]) -> String {
    let mut s = String::new();
    let acs = match data.first().map(|(_, m)| m.mask.acs()) {
        Some(Acs::Lines(n)) => format!("lines:{n}"),
        Some(Acs::Region(r, c)) => format!("region:{r}x{c}"),
        _ => "none".to_string(),
    };
    let _ = writeln!(s, "count={}", spec.count);
    let _ = writeln!(s, "height={}", spec.height);
    let _ = writeln!(s, "width={}", spec.width);
    let _ = writeln!(s, "coils={}", spec.coils);
    let _ = writeln!(s, "mask={}", spec.mask.kind);
    let _ = writeln!(s, "accel={}", spec.mask.accel);
    let _ = writeln!(s, "acs={acs}");
    let _ = writeln!(s, "noise={}", spec.noise);
    let _ = writeln!(s, "seed={}", spec.seed);
    let _ = writeln!(s, "first_index={}", spec.first_index);
    for (k, (sample, meas)) in data.iter().enumerate() {
        let _ = writeln!(
            s,
            "sample {:04} phantom_seed={} coil_seed={} delta={:e}",
            k, sample.phantom_seed, sample.coil_seed, meas.delta
        );
    }
    s
}

pub fn sample_paths(dir: &Path, k: usize) -> [std::path::PathBuf; 3] {
    [
        dir.join(format!("sample_{k:04}_full.ct01")),
        dir.join(format!("sample_{k:04}_meas.ct01")),
        dir.join(format!("sample_{k:04}_mask.mk01")),
    ]
}

/// Write `data` under `dir` (created if missing) together with a manifest.
pub fn write_dataset(dir: &Path, spec: &DatasetSpec, data: &[(Sample, Measurement)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (k, (sample, meas)) in data.iter().enumerate() {
        let [full, y, mask] = sample_paths(dir, k);
        write_ct01(&mut BufWriter::new(File::create(full)?), &sample.full)?;
        write_ct01(&mut BufWriter::new(File::create(y)?), &meas.y)?;
        meas.mask
            .write_mk01(&mut BufWriter::new(File::create(mask)?))?;
    }
    fs::write(dir.join(MANIFEST_NAME), manifest(spec, data))?;
    Ok(())
}

/// Read a dataset written by [`write_dataset`].
///
/// Values pass through 32-bit storage, so they match the generator to single precision.
pub fn read_dataset(dir: &Path) -> Result<Vec<(Sample, Measurement)>> {
    let text = fs::read_to_string(dir.join(MANIFEST_NAME))?;
    let mut count = None;
    let mut seeds = Vec::new();
    for line in text.lines() {
        if let Some(v) = line.strip_prefix("count=") {
            count = v.trim().parse::<usize>().ok();
        } else if let Some(rest) = line.strip_prefix("sample ") {
            let mut phantom = 0;
            let mut coil = 0;
            let mut delta = 0.0;
            for field in rest.split_whitespace().skip(1) {
                if let Some((k, v)) = field.split_once('=') {
                    let bad = || Error::format("manifest", format!("bad field '{field}'"));
                    match k {
                        "phantom_seed" => phantom = v.parse().map_err(|_| bad())?,
                        "coil_seed" => coil = v.parse().map_err(|_| bad())?,
                        "delta" => delta = v.parse().map_err(|_| bad())?,
                        _ => {}
                    }
                }
            }
            seeds.push((phantom, coil, delta));
        }
    }
    let count = count.ok_or_else(|| Error::format("manifest", "missing count"))?;
    if seeds.len() != count {
        return Err(Error::format(
            "manifest",
            format!("{} sample lines for count {count}", seeds.len()),
        ));
    }
    let mut out = Vec::with_capacity(count);
    for (k, (phantom_seed, coil_seed, delta)) in seeds.into_iter().enumerate() {
        let [full, y, mask] = sample_paths(dir, k);
        let full = read_ct01(&mut BufReader::new(File::open(full)?))?;
        let y = read_ct01(&mut BufReader::new(File::open(y)?))?;
        let mask = SamplingMask::read_mk01(&mut BufReader::new(File::open(mask)?))?;
        let reference = ssos(&crate::tensor::ifft2_centered(&full)?);
        out.push((
            Sample {
                full,
                reference,
                phantom_seed,
                coil_seed,
            },
            Measurement { y, mask, delta },
        ));
    }
    Ok(out)
}
