//! Binary tensor container shared by checkpoints and frozen-embedding files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"HGN1"  count:u32
//! repeated count times:
//!     name_len:u32  name:[u8; name_len] (UTF-8)
//!     rank:u32  dims:[u32; rank]
//!     values:[f64; product(dims)] row-major
//! ```

use std::fs;
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{HgnError, Result};

pub const MAGIC: &[u8; 4] = b"HGN1";

pub fn encode(tensors: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&to_u32(tensors.len(), "tensor count")?.to_le_bytes());
    for (name, t) in tensors {
        let bytes = name.as_bytes();
        out.extend_from_slice(&to_u32(bytes.len(), "name length")?.to_le_bytes());
        out.extend_from_slice(bytes);
        out.extend_from_slice(&to_u32(t.rank(), "rank")?.to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&to_u32(d, "dimension")?.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(HgnError::Checkpoint("bad magic, expected HGN1".into()));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| HgnError::Checkpoint(format!("tensor name is not UTF-8: {e}")))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| HgnError::Checkpoint("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| HgnError::Checkpoint(format!("tensor {name}: {e}")))?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(HgnError::Checkpoint(format!(
            "{} trailing bytes after last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok(out)
}

pub fn write_file(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    let bytes = encode(tensors)?;
    fs::write(path, bytes).map_err(|e| HgnError::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path).map_err(|e| HgnError::io(path, e))?;
    decode(&bytes)
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| HgnError::Checkpoint(format!("{what} {v} does not fit in u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            HgnError::Checkpoint(format!("truncated container at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_exact() {
        let t = Tensor::from_rows(&[[1.5, -2.0]]).unwrap();
        let bytes = encode(&[("ab".to_string(), t)]).unwrap();
        let mut expected = b"HGN1".to_vec();
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(b"ab");
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1.5f64.to_le_bytes());
        expected.extend_from_slice(&(-2.0f64).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn rejects_corruption() {
        assert!(decode(b"HGN2\0\0\0\0").is_err());
        let t = Tensor::vector(vec![1.0, 2.0]);
        let bytes = encode(&[("x".to_string(), t)]).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
    }
}
