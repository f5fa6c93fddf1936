//! Forward evaluation of `Φ` with a recorded tape, and exact reverse-mode
//! products against that tape.
//!
//! Gradients use the real-pair convention: for a real loss `ℓ` and complex
//! entry `z = a + ib` the gradient entry is `∂ℓ/∂a + i·∂ℓ/∂b`, so the
//! transpose of a complex-linear map is its conjugate transpose.

use super::{
    BlockGradient, ConsistencyNetParams, Layer, NetGradients, Variant, LEAKY_SLOPE, RESIDUAL_GAIN,
};
use crate::error::{Error, Result};
use crate::tensor::fft::transform;
use crate::tensor::{
    conv2d_adjoint, conv2d_complex, conv2d_kernel_grad, ComplexTensor, ConvKernel, KSpace,
};
use num_complex::Complex64;
use rustfft::FftDirection;

#[inline]
fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

#[inline]
fn leaky_slope(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

fn activate(u: &ComplexTensor) -> ComplexTensor {
    u.map(|z| Complex64::new(leaky(z.re), leaky(z.im)))
}

fn fft(x: &ComplexTensor) -> ComplexTensor {
    transform(x, FftDirection::Forward)
}

fn ifft(x: &ComplexTensor) -> ComplexTensor {
    transform(x, FftDirection::Inverse)
}

#[derive(Debug, Clone)]
struct StackTape {
    /// Input of every layer; `inputs[0]` is the stack input.
    inputs: Vec<ComplexTensor>,
    /// Pre-activations of the hidden layers.
    pre: Vec<ComplexTensor>,
    output: ComplexTensor,
}

#[derive(Debug, Clone)]
struct ImageBranch {
    input: ComplexTensor,
    stack: StackTape,
    /// Branch output mapped back to k-space.
    output: ComplexTensor,
}

#[derive(Debug, Clone)]
struct BlockTape {
    input: ComplexTensor,
    kspace: StackTape,
    kspace_out: ComplexTensor,
    image: Option<ImageBranch>,
}

/// Intermediate values of one forward pass, enough to run reverse-mode
/// products without re-evaluating the network.
#[derive(Debug, Clone)]
pub struct Tape {
    blocks: Vec<BlockTape>,
    output: KSpace,
}

impl Tape {
    pub fn output(&self) -> &KSpace {
        &self.output
    }

    pub fn input(&self) -> &KSpace {
        &self.blocks[0].input
    }
}

fn stack_forward(layers: &[Layer], x: &ComplexTensor) -> Result<StackTape> {
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len() - 1);
    let mut z = x.clone();
    for (l, layer) in layers.iter().enumerate() {
        let u = conv2d_complex(&z, &layer.kernel)?;
        inputs.push(z);
        if l + 1 < layers.len() {
            z = activate(&u);
            pre.push(u);
        } else {
            z = u;
        }
    }
    Ok(StackTape {
        inputs,
        pre,
        output: z,
    })
}

/// Returns the gradient with respect to the stack input and, if requested,
/// the kernel gradients.
fn stack_backward(
    layers: &[Layer],
    tape: &StackTape,
    g_out: ComplexTensor,
    want_kernels: bool,
) -> Result<(ComplexTensor, Option<Vec<ConvKernel>>)> {
    let mut grads: Vec<ConvKernel> = Vec::new();
    let mut g_u = g_out;
    for l in (0..layers.len()).rev() {
        let k = &layers[l].kernel;
        if want_kernels {
            grads.push(conv2d_kernel_grad(&tape.inputs[l], &g_u, k.kh(), k.kw())?);
        }
        let g_z = conv2d_adjoint(&g_u, k)?;
        if l == 0 {
            g_u = g_z;
        } else {
            g_u = g_z.zip_map(&tape.pre[l - 1], |g, u| {
                Complex64::new(g.re * leaky_slope(u.re), g.im * leaky_slope(u.im))
            });
        }
    }
    grads.reverse();
    Ok((g_u, want_kernels.then_some(grads)))
}

/// `(0.99 - α)·a + α·b`
fn residual_mix(a: &ComplexTensor, b: &ComplexTensor, alpha: f64) -> ComplexTensor {
    let keep = RESIDUAL_GAIN - alpha;
    a.zip_map(b, |x, y| x * keep + y * alpha)
}

impl ConsistencyNetParams {
    fn check_input(&self, x: &KSpace) -> Result<()> {
        if x.channels() != self.coils() {
            return Err(Error::Shape(format!(
                "network expects {} coils, input has {}",
                self.coils(),
                x.channels()
            )));
        }
        Ok(())
    }

    /// `Φ(x)`.
    pub fn forward(&self, x: &KSpace) -> Result<KSpace> {
        Ok(self.forward_with_tape(x)?.output)
    }

    /// `Φ(x)` together with the tape needed for reverse-mode products.
    pub fn forward_with_tape(&self, x: &KSpace) -> Result<Tape> {
        self.check_input(x)?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        let mut a = x.clone();
        for block in &self.blocks {
            let kspace = stack_forward(&block.kspace, &a)?;
            let kspace_out = residual_mix(&a, &kspace.output, block.alpha);
            let (next, image) = match (&block.image, self.variant()) {
                (Some(layers), Variant::Hybrid) => {
                    let a_img = ifft(&a);
                    let stack = stack_forward(layers, &a_img)?;
                    let output = fft(&residual_mix(&a_img, &stack.output, block.alpha));
                    let (ck, ci) = block.mix;
                    let next = kspace_out.zip_map(&output, |p, q| p * ck + q * ci);
                    (
                        next,
                        Some(ImageBranch {
                            input: a_img,
                            stack,
                            output,
                        }),
                    )
                }
                _ => (kspace_out.clone(), None),
            };
            blocks.push(BlockTape {
                input: a,
                kspace,
                kspace_out,
                image,
            });
            a = next;
        }
        Ok(Tape { blocks, output: a })
    }

    /// Reverse-mode product against a recorded tape: returns
    /// `((∂Φ/∂φ)ᵀ·cot, (∂Φ/∂x)ᵀ·cot)`; parameter gradients only when requested.
    pub fn backward(
        &self,
        tape: &Tape,
        cotangent: &KSpace,
        want_params: bool,
    ) -> Result<(Option<NetGradients>, KSpace)> {
        cotangent.check_same_shape(&tape.output, "cotangent vs network output")?;
        if tape.blocks.len() != self.blocks.len() {
            return Err(Error::Shape(
                "tape was recorded with a different network".into(),
            ));
        }
        let mut grads = Vec::with_capacity(self.blocks.len());
        let mut g = cotangent.clone();
        for (block, bt) in self.blocks.iter().zip(&tape.blocks).rev() {
            let alpha = block.alpha;
            let keep = RESIDUAL_GAIN - alpha;
            let (ck, ci) = block.mix;
            let mut g_alpha = 0.0;
            let mut g_mix = (0.0, 0.0);

            let g_kout = match &bt.image {
                Some(_) => g.scale(ck),
                None => g.clone(),
            };
            // k-space branch
            g_alpha += g_kout.real_dot(&bt.kspace.output) - g_kout.real_dot(&bt.input);
            let (g_from_stack, k_grads) =
                stack_backward(&block.kspace, &bt.kspace, g_kout.scale(alpha), want_params)?;
            let mut g_in = g_kout.scale(keep);
            g_in.axpy(1.0, &g_from_stack);

            // image branch
            let mut i_grads = None;
            if let (Some(branch), Some(layers)) = (&bt.image, &block.image) {
                g_mix = (g.real_dot(&bt.kspace_out), g.real_dot(&branch.output));
                let g_res = ifft(&g.scale(ci));
                g_alpha += g_res.real_dot(&branch.stack.output) - g_res.real_dot(&branch.input);
                let (g_img_stack, grads_img) =
                    stack_backward(layers, &branch.stack, g_res.scale(alpha), want_params)?;
                let mut g_img = g_res.scale(keep);
                g_img.axpy(1.0, &g_img_stack);
                g_in.axpy(1.0, &fft(&g_img));
                i_grads = grads_img;
            }

            if want_params {
                grads.push(BlockGradient {
                    kspace: k_grads.expect("requested"),
                    image: i_grads,
                    alpha: g_alpha,
                    mix: g_mix,
                });
            }
            g = g_in;
        }
        let params = want_params.then(|| {
            grads.reverse();
            NetGradients { blocks: grads }
        });
        Ok((params, g))
    }

    /// `((∂Φ/∂φ)ᵀ·cot, (∂Φ/∂x)ᵀ·cot)` at `x`.
    pub fn vjp(&self, x: &KSpace, cotangent: &KSpace) -> Result<(NetGradients, KSpace)> {
        let tape = self.forward_with_tape(x)?;
        let (g, gx) = self.backward(&tape, cotangent, true)?;
        Ok((g.expect("requested"), gx))
    }
}
