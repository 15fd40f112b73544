//! "AAPT v1" tensor encoding.
//!
//! Layout: magic `AAPT`, one `u8` version (1), one `u8` rank `r`, `r`
//! little-endian `u32` dimensions, then the row-major little-endian `f32`
//! payload. Nothing follows the payload.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"AAPT";
pub const VERSION: u8 = 1;

pub fn encode(t: &Tensor) -> Result<Vec<u8>> {
    let rank = u8::try_from(t.rank()).map_err(|_| Error::Format(format!("rank {} exceeds 255", t.rank())))?;
    let mut out = Vec::with_capacity(6 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(rank);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing AAPT magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!("unsupported AAPT version {}", bytes[4])));
    }
    let rank = bytes[5] as usize;
    let header = 6 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::Format("truncated AAPT header".into()));
    }
    let shape: Vec<usize> = bytes[6..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let expected = numel.and_then(|n| n.checked_mul(4)).and_then(|n| n.checked_add(header));
    if expected != Some(bytes.len()) {
        return Err(Error::Format(format!(
            "payload size mismatch for shape {shape:?}: file has {} bytes",
            bytes.len()
        )));
    }
    let data = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(alloc::vec![2, 1], alloc::vec![1.0, -0.5]).unwrap();
        let b = encode(&t).unwrap();
        assert_eq!(&b[..6], b"AAPT\x01\x02");
        assert_eq!(&b[6..14], &[2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&b[14..18], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 22);
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode(b"AAPX\x01\x00\0\0\0\0").is_err());
        assert!(decode(b"AAPT\x02\x00\0\0\0\0").is_err());
        // Rank 1, dim 2, but only one float.
        assert!(decode(b"AAPT\x01\x01\x02\0\0\0\0\0\0\0").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(shape in prop::collection::vec(1usize..5, 0..4), seed in any::<u32>()) {
            let numel: usize = shape.iter().product();
            let data: Vec<f32> = (0..numel).map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32 * 7919) & 0x7f7f_ffff)).collect();
            let t = Tensor::new(shape, data).unwrap();
            let back = decode(&encode(&t).unwrap()).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
