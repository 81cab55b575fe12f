//! Raw tensor container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes  | content                                   |
//! |--------|-------------------------------------------|
//! | 0..12  | magic `b"TDV-TENSOR\0\0"`                 |
//! | 12..16 | format version (`u32`, currently 1)       |
//! | 16..32 | dims `batch, channels, height, width` (`u32` each) |
//! | 32..   | row-major `f64` values                    |

use super::Tensor;
use crate::error::{Result, TdvError};
use std::fs;
use std::path::Path;

pub const MAGIC: &[u8; 12] = b"TDV-TENSOR\0\0";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 32;

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < HEADER_LEN || &bytes[..12] != MAGIC {
        return Err(TdvError::Format("missing tensor container magic".into()));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap());
    let version = word(12);
    if version != VERSION {
        return Err(TdvError::Format(format!(
            "unsupported tensor container version {version}"
        )));
    }
    let shape = [word(16) as usize, word(20) as usize, word(24) as usize, word(28) as usize];
    let n: usize = shape.iter().product();
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * n {
        return Err(TdvError::Format(format!(
            "payload of {} bytes does not match shape {shape:?}",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::from_vec(shape, data)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    fs::write(path, encode(t))?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::from_vec([1, 2, 1, 1], vec![1.5, -2.0]).unwrap();
        let b = encode(&t);
        assert_eq!(b.len(), 32 + 16);
        assert_eq!(&b[12..16], &[1, 0, 0, 0]);
        assert_eq!(&b[20..24], &[2, 0, 0, 0]);
        assert_eq!(&b[32..40], &1.5f64.to_le_bytes());
        assert_eq!(decode(&b).unwrap(), t);
    }

    #[test]
    fn rejects_truncated_payload() {
        let mut b = encode(&Tensor::zeros([1, 1, 2, 2]));
        b.pop();
        assert!(matches!(decode(&b), Err(TdvError::Format(_))));
        assert!(decode(b"not a tensor").is_err());
    }
}
