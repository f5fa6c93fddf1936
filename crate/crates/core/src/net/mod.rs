//! The learned self-consistency operator `Φ`.
//!
//! `Φ` is `B` residual blocks composed in sequence. Each block maps `a` to
//! `(0.99 - α)·a + α·CNN(a)`, where `CNN` is five 3×3 complex convolutions
//! (`Nc → F → F → F → F → Nc`) with leaky-ReLU between them and a linear last
//! layer. The hybrid variant runs a second such stack on the image
//! `ifft2_centered(a)`, maps the result back with `fft2_centered` and mixes the
//! two branches with convex weights `(c_k, c_i)`. There are no bias terms, so
//! `Φ(0) = 0`.
//!
//! Every kernel is kept at spectral norm at most one, which with a 1-Lipschitz
//! activation bounds each block by `(0.99 - α) + α·∏σ ≤ 0.99`.

mod checkpoint;
mod graph;
mod lipschitz;

pub use checkpoint::{read_checkpoint, write_checkpoint, CK01_MAGIC};
pub use graph::Tape;
pub use lipschitz::{CertificateMethod, LipschitzCertificate, NORMALIZE_SLACK};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, DetRng};
use crate::tensor::{ConvKernel, PowerIteration};
use std::fmt;
use std::str::FromStr;

/// Upper end of the residual mixing range; blocks emit `(RESIDUAL_GAIN - α)·a + α·b`.
pub const RESIDUAL_GAIN: f64 = 0.99;
pub const KERNEL_SIZE: usize = 3;
pub const LAYERS_PER_STACK: usize = 5;
pub const INIT_STD: f64 = 0.05;
pub const INIT_ALPHA: f64 = 0.5;
pub const LEAKY_SLOPE: f64 = 0.2;
/// Power iterations used when a kernel's spectral norm is estimated from scratch.
pub const COLD_POWER_ITERS: usize = 50;
/// Warm-started power iterations per normalization.
pub const WARM_POWER_ITERS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    KSpace,
    Hybrid,
}

impl Variant {
    pub fn to_byte(self) -> u8 {
        match self {
            Variant::KSpace => 0,
            Variant::Hybrid => 1,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Variant::KSpace),
            1 => Ok(Variant::Hybrid),
            _ => Err(Error::format("CK01", format!("unknown variant byte {b}"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::KSpace => "kspace",
            Variant::Hybrid => "hybrid",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kspace" => Ok(Variant::KSpace),
            "hybrid" => Ok(Variant::Hybrid),
            _ => Err(Error::Config(format!(
                "unknown variant '{s}' (kspace or hybrid)"
            ))),
        }
    }
}

/// One convolution with its spectral-normalization state.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub kernel: ConvKernel,
    /// Latest power-iteration estimate of the kernel's operator norm.
    pub sigma: f64,
    power: PowerIteration,
}

impl Layer {
    fn new(kernel: ConvKernel, grid: (usize, usize)) -> Result<Self> {
        let power = PowerIteration::new(kernel.c_in(), grid, 0)?;
        Ok(Self {
            kernel,
            sigma: f64::NAN,
            power,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub kspace: Vec<Layer>,
    /// Image-domain stack, present for the hybrid variant only.
    pub image: Option<Vec<Layer>>,
    pub alpha: f64,
    /// `(c_k, c_i)`; fixed at `(1, 0)` for the k-space variant.
    pub mix: (f64, f64),
}

/// Parameters of `Φ` plus the grid its Lipschitz certificate refers to.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyNetParams {
    variant: Variant,
    features: usize,
    coils: usize,
    grid: (usize, usize),
    pub blocks: Vec<Block>,
}

fn stack_widths(coils: usize, features: usize) -> [(usize, usize); LAYERS_PER_STACK] {
    [
        (coils, features),
        (features, features),
        (features, features),
        (features, features),
        (features, coils),
    ]
}

/// Fresh parameters: Gaussian kernels (std 0.05 per real component), spectrally
/// normalized, `α = 0.5`, hybrid mix `(0.5, 0.5)`. Deterministic given `seed`.
pub fn init_params(
    variant: Variant,
    blocks: usize,
    features: usize,
    coils: usize,
    grid: (usize, usize),
    seed: u64,
) -> Result<ConsistencyNetParams> {
    if blocks == 0 || features == 0 || coils == 0 {
        return Err(Error::Config(format!(
            "blocks, features and coils must be positive (got {blocks}, {features}, {coils})"
        )));
    }
    if grid.0 == 0 || grid.1 == 0 {
        return Err(Error::Config("certification grid must be nonempty".into()));
    }
    let mut rng = DetRng::new(derive_seed(seed, 0x4E45_5400, 0));
    let make_stack = |rng: &mut DetRng| -> Result<Vec<Layer>> {
        stack_widths(coils, features)
            .iter()
            .map(|&(ci, co)| {
                let k = ConvKernel::random(KERNEL_SIZE, KERNEL_SIZE, ci, co, INIT_STD, rng)?;
                Layer::new(k, grid)
            })
            .collect()
    };
    let mut out = Vec::with_capacity(blocks);
    for _ in 0..blocks {
        let kspace = make_stack(&mut rng)?;
        let image = match variant {
            Variant::KSpace => None,
            Variant::Hybrid => Some(make_stack(&mut rng)?),
        };
        out.push(Block {
            kspace,
            image,
            alpha: INIT_ALPHA,
            mix: match variant {
                Variant::KSpace => (1.0, 0.0),
                Variant::Hybrid => (0.5, 0.5),
            },
        });
    }
    let mut params = ConsistencyNetParams {
        variant,
        features,
        coils,
        grid,
        blocks: out,
    };
    params.normalize_with(COLD_POWER_ITERS)?;
    Ok(params)
}

impl ConsistencyNetParams {
    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn coils(&self) -> usize {
        self.coils
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.blocks
            .iter()
            .flat_map(|b| b.kspace.iter().chain(b.image.iter().flatten()))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.blocks
            .iter_mut()
            .flat_map(|b| b.kspace.iter_mut().chain(b.image.iter_mut().flatten()))
    }

    /// Number of complex kernel taps across all layers.
    pub fn kernel_tap_count(&self) -> usize {
        self.layers().map(|l| l.kernel.tap_count()).sum()
    }

    /// Length of the real parameter vector seen by the optimizer.
    pub fn real_param_count(&self) -> usize {
        let per_block_scalars = match self.variant {
            Variant::KSpace => 1,
            Variant::Hybrid => 3,
        };
        2 * self.kernel_tap_count() + per_block_scalars * self.blocks.len()
    }

    /// Real parameterization: kernel taps as `(re, im)` pairs in block/layer
    /// order, then per block `α` (and `c_k, c_i` for the hybrid variant).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.real_param_count());
        for b in &self.blocks {
            for l in b.kspace.iter().chain(b.image.iter().flatten()) {
                for t in l.kernel.taps() {
                    v.push(t.re);
                    v.push(t.im);
                }
            }
            v.push(b.alpha);
            if self.variant == Variant::Hybrid {
                v.push(b.mix.0);
                v.push(b.mix.1);
            }
        }
        v
    }

    /// Overwrite parameters from a vector laid out as in [`Self::to_flat`].
    /// No normalization is applied.
    pub fn set_from_flat(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.real_param_count() {
            return Err(Error::Shape(format!(
                "flat parameter vector has {} entries, expected {}",
                v.len(),
                self.real_param_count()
            )));
        }
        let hybrid = self.variant == Variant::Hybrid;
        let mut it = v.iter().copied();
        for b in &mut self.blocks {
            for l in b.kspace.iter_mut().chain(b.image.iter_mut().flatten()) {
                for t in l.kernel.taps_mut() {
                    t.re = it.next().unwrap();
                    t.im = it.next().unwrap();
                }
            }
            b.alpha = it.next().unwrap();
            if hybrid {
                b.mix = (it.next().unwrap(), it.next().unwrap());
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    /// Same architecture with every `α` set to `alpha` (used by tests and the
    /// harness to build the purely linear `0.99^B` operator).
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        for b in &mut self.blocks {
            b.alpha = alpha;
        }
        self
    }

    pub(crate) fn from_parts(
        variant: Variant,
        features: usize,
        coils: usize,
        grid: (usize, usize),
        blocks: Vec<(Vec<ConvKernel>, Option<Vec<ConvKernel>>, f64, (f64, f64))>,
    ) -> Result<Self> {
        let to_layers = |ks: Vec<ConvKernel>| -> Result<Vec<Layer>> {
            let widths = stack_widths(coils, features);
            if ks.len() != LAYERS_PER_STACK {
                return Err(Error::Shape(format!(
                    "stack has {} layers, expected 5",
                    ks.len()
                )));
            }
            ks.into_iter()
                .zip(widths)
                .map(|(k, (ci, co))| {
                    if (k.kh(), k.kw(), k.c_in(), k.c_out()) != (KERNEL_SIZE, KERNEL_SIZE, ci, co) {
                        return Err(Error::Shape(format!(
                            "kernel {}x{}x{}x{} does not match layer width {ci}->{co}",
                            k.kh(),
                            k.kw(),
                            k.c_in(),
                            k.c_out()
                        )));
                    }
                    Layer::new(k, grid)
                })
                .collect()
        };
        let blocks = blocks
            .into_iter()
            .map(|(k, img, alpha, mix)| {
                Ok(Block {
                    kspace: to_layers(k)?,
                    image: img.map(to_layers).transpose()?,
                    alpha,
                    mix,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            variant,
            features,
            coils,
            grid,
            blocks,
        })
    }
}

/// Gradient with respect to every parameter, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGradients {
    pub blocks: Vec<BlockGradient>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGradient {
    pub kspace: Vec<ConvKernel>,
    pub image: Option<Vec<ConvKernel>>,
    pub alpha: f64,
    pub mix: (f64, f64),
}

impl NetGradients {
    pub fn zeros_like(params: &ConsistencyNetParams) -> Self {
        let zero_stack = |layers: &Vec<Layer>| -> Vec<ConvKernel> {
            layers
                .iter()
                .map(|l| {
                    let k = &l.kernel;
                    ConvKernel::zeros(k.kh(), k.kw(), k.c_in(), k.c_out()).expect("valid shape")
                })
                .collect()
        };
        Self {
            blocks: params
                .blocks
                .iter()
                .map(|b| BlockGradient {
                    kspace: zero_stack(&b.kspace),
                    image: b.image.as_ref().map(zero_stack),
                    alpha: 0.0,
                    mix: (0.0, 0.0),
                })
                .collect(),
        }
    }

    /// Flatten in the layout of [`ConsistencyNetParams::to_flat`].
    pub fn to_flat(&self, variant: Variant) -> Vec<f64> {
        let mut v = Vec::new();
        for b in &self.blocks {
            for k in b.kspace.iter().chain(b.image.iter().flatten()) {
                for t in k.taps() {
                    v.push(t.re);
                    v.push(t.im);
                }
            }
            v.push(b.alpha);
            if variant == Variant::Hybrid {
                v.push(b.mix.0);
                v.push(b.mix.1);
            }
        }
        v
    }

    pub fn kernel_norm(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.kspace.iter().chain(b.image.iter().flatten()))
            .flat_map(|k| k.taps())
            .map(|t| t.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}
