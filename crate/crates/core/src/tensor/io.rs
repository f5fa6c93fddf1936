//! "CT01" binary tensor container.
//!
//! Layout: magic `CT01`, then `H`, `W`, `C` as little-endian `u32`, then
//! `H·W·C` interleaved `(re, im)` little-endian `f32` pairs in row-major,
//! channel-innermost order.

use super::ComplexTensor;
use crate::error::{Error, Result};
use num_complex::Complex64;
use std::io::{Read, Write};

pub const CT01_MAGIC: &[u8; 4] = b"CT01";

pub fn write_ct01<W: Write>(out: &mut W, t: &ComplexTensor) -> Result<()> {
    out.write_all(CT01_MAGIC)?;
    for d in [t.height(), t.width(), t.channels()] {
        let d = u32::try_from(d).map_err(|_| Error::format("CT01", "dimension exceeds u32"))?;
        out.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.len() * 8);
    for z in t.data() {
        buf.extend_from_slice(&(z.re as f32).to_le_bytes());
        buf.extend_from_slice(&(z.im as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_ct01<R: Read>(input: &mut R) -> Result<ComplexTensor> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != CT01_MAGIC {
        return Err(Error::format("CT01", format!("bad magic {magic:?}")));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = read_u32(input)? as usize;
    }
    let [h, w, c] = dims;
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| Error::format("CT01", "dimensions overflow"))?;
    if n == 0 {
        return Err(Error::format("CT01", "zero dimension"));
    }
    let mut buf = vec![0u8; n * 8];
    input.read_exact(&mut buf)?;
    let data = buf
        .chunks_exact(8)
        .map(|b| {
            let re = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            let im = f32::from_le_bytes([b[4], b[5], b[6], b[7]]);
            Complex64::new(re as f64, im as f64)
        })
        .collect();
    let t = ComplexTensor::from_vec(h, w, c, data)?;
    if !t.is_finite() {
        return Err(Error::format("CT01", "non-finite entries"));
    }
    Ok(t)
}

pub(crate) fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f32<R: Read>(input: &mut R) -> Result<f32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}
