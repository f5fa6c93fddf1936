//! "CK01" checkpoint container.
//!
//! Layout: magic `CK01`, variant byte (0 = k-space, 1 = hybrid), then `B`, `F`,
//! `Nc` as little-endian `u32`; every kernel in block/layer order (k-space
//! stack first, then the image stack for hybrids) as a CT01 record with
//! `H = kh`, `W = kw`, `C = c_in·c_out`; then per block `α, c_k, c_i` as
//! little-endian `f32`; finally the certificate `L` as `f32`.
//!
//! The certification grid is not stored; readers supply the grid of the data
//! the network will run on and the kernel norms are re-estimated on it.

use super::{ConsistencyNetParams, Variant, KERNEL_SIZE, LAYERS_PER_STACK};
use crate::error::{Error, Result};
use crate::tensor::io::{read_f32, read_u32};
use crate::tensor::{read_ct01, write_ct01, ComplexTensor, ConvKernel};
use std::io::{Read, Write};

pub const CK01_MAGIC: &[u8; 4] = b"CK01";

pub fn write_checkpoint<W: Write>(out: &mut W, params: &ConsistencyNetParams) -> Result<()> {
    out.write_all(CK01_MAGIC)?;
    out.write_all(&[params.variant().to_byte()])?;
    for v in [params.block_count(), params.features(), params.coils()] {
        out.write_all(&(v as u32).to_le_bytes())?;
    }
    for layer in params.layers() {
        let k = &layer.kernel;
        let t = ComplexTensor::from_vec(k.kh(), k.kw(), k.c_in() * k.c_out(), k.taps().to_vec())?;
        write_ct01(out, &t)?;
    }
    for b in &params.blocks {
        for v in [b.alpha, b.mix.0, b.mix.1] {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    let l = params.certified_lipschitz().lipschitz;
    out.write_all(&(l as f32).to_le_bytes())?;
    Ok(())
}

/// Read a checkpoint and audit its certificate on `grid`.
///
/// Fails with [`Error::Certificate`] if either the stored bound or the bound
/// recomputed from the loaded kernels is not strictly below one. Returns the
/// parameters and the stored bound.
pub fn read_checkpoint<R: Read>(
    input: &mut R,
    grid: (usize, usize),
) -> Result<(ConsistencyNetParams, f64)> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != CK01_MAGIC {
        return Err(Error::format("CK01", format!("bad magic {magic:?}")));
    }
    let mut vb = [0u8; 1];
    input.read_exact(&mut vb)?;
    let variant = Variant::from_byte(vb[0])?;
    let blocks = read_u32(input)? as usize;
    let features = read_u32(input)? as usize;
    let coils = read_u32(input)? as usize;
    if blocks == 0 || features == 0 || coils == 0 {
        return Err(Error::format("CK01", "zero block, feature or coil count"));
    }
    let read_stack = |input: &mut R| -> Result<Vec<ConvKernel>> {
        let mut ks = Vec::with_capacity(LAYERS_PER_STACK);
        let widths = super::stack_widths(coils, features);
        for (ci, co) in widths {
            let t = read_ct01(input)?;
            if t.shape() != (KERNEL_SIZE, KERNEL_SIZE, ci * co) {
                return Err(Error::format(
                    "CK01",
                    format!(
                        "kernel record {:?} does not match layer {ci}->{co}",
                        t.shape()
                    ),
                ));
            }
            ks.push(ConvKernel::from_taps(
                KERNEL_SIZE,
                KERNEL_SIZE,
                ci,
                co,
                t.into_vec(),
            )?);
        }
        Ok(ks)
    };
    let mut stacks = Vec::with_capacity(blocks);
    for _ in 0..blocks {
        let k = read_stack(input)?;
        let img = match variant {
            Variant::KSpace => None,
            Variant::Hybrid => Some(read_stack(input)?),
        };
        stacks.push((k, img));
    }
    let mut parts = Vec::with_capacity(blocks);
    for (k, img) in stacks {
        let alpha = read_f32(input)? as f64;
        let ck = read_f32(input)? as f64;
        let ci = read_f32(input)? as f64;
        parts.push((k, img, alpha, (ck, ci)));
    }
    let stored = read_f32(input)? as f64;
    let mut params = ConsistencyNetParams::from_parts(variant, features, coils, grid, parts)?;
    if !params.is_finite() {
        return Err(Error::format("CK01", "non-finite parameters"));
    }
    for b in &params.blocks {
        if !(0.0..=super::RESIDUAL_GAIN).contains(&b.alpha) {
            return Err(Error::Certificate(format!(
                "mixing coefficient α = {} outside [0, 0.99]",
                b.alpha
            )));
        }
    }
    if !(stored < 1.0) {
        return Err(Error::Certificate(format!(
            "stored Lipschitz bound {stored} is not below 1"
        )));
    }
    let audit = params.recertify()?;
    if !audit.is_contractive() {
        let worst = audit.kernel_bounds.iter().cloned().fold(0.0f64, f64::max);
        return Err(Error::Certificate(format!(
            "kernels give Lipschitz bound {:.4} >= 1 (largest kernel norm {worst:.4}); stored value was {stored:.4}",
            audit.lipschitz
        )));
    }
    Ok((params, stored))
}

#[cfg(test)]
mod tests {
    use super::super::init_params;
    use super::*;

    #[test]
    fn round_trip_preserves_structure() {
        for v in [Variant::KSpace, Variant::Hybrid] {
            let p = init_params(v, 2, 3, 2, (8, 8), 1).unwrap();
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &p).unwrap();
            assert_eq!(&buf[..4], b"CK01");
            assert_eq!(buf[4], v.to_byte());
            let (q, stored) = read_checkpoint(&mut buf.as_slice(), (8, 8)).unwrap();
            assert!((stored - p.certified_lipschitz().lipschitz).abs() < 1e-6);
            let (a, b) = (p.to_flat(), q.to_flat());
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-7 * x.abs().max(1e-30));
            }
        }
    }

    #[test]
    fn expanded_kernel_is_refused() {
        let mut p = init_params(Variant::KSpace, 1, 3, 2, (8, 8), 1).unwrap();
        for l in p.layers_mut() {
            l.kernel.scale_in_place(10.0);
        }
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p).unwrap();
        // writer reports the stale certificate; the audit must catch the kernel
        let n = buf.len();
        buf[n - 4..].copy_from_slice(&0.5f32.to_le_bytes());
        let err = read_checkpoint(&mut buf.as_slice(), (8, 8)).unwrap_err();
        assert!(matches!(err, Error::Certificate(_)), "{err}");
    }

    #[test]
    fn truncated_file_is_an_error() {
        let p = init_params(Variant::KSpace, 1, 2, 1, (6, 6), 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_checkpoint(&mut buf.as_slice(), (6, 6)).is_err());
    }
}
