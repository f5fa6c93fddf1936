//! 16-bit binary PGM output.

use deqpocs_core::metrics::Image;
use std::io::{self, Write};

/// Writes `img` as a `P5` file with maxval 65535, scaled so the image maximum
/// maps to 65535. Negative values clamp to zero.
pub fn write_pgm16<W: Write>(out: &mut W, img: &Image) -> io::Result<()> {
    write!(out, "P5\n{} {}\n65535\n", img.width(), img.height())?;
    let peak = img.max();
    let scale = if peak > 0.0 { 65535.0 / peak } else { 0.0 };
    let mut buf = Vec::with_capacity(2 * img.data().len());
    for &v in img.data() {
        let q = (v * scale).round().clamp(0.0, 65535.0) as u16;
        buf.extend_from_slice(&q.to_be_bytes());
    }
    out.write_all(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_scaling() {
        let img = Image::from_vec(1, 3, vec![0.0, 0.5, 2.0]).unwrap();
        let mut buf = Vec::new();
        write_pgm16(&mut buf, &img).unwrap();
        let header = b"P5\n3 1\n65535\n";
        assert_eq!(&buf[..header.len()], header);
        let px: Vec<u16> = buf[header.len()..]
            .chunks(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        assert_eq!(px, vec![0, 16384, 65535]);
    }
}
