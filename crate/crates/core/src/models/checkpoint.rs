//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! magic      4 bytes  "ADVT"
//! version    u32      1
//! count      u64      number of tensor records
//! record*    name_len u32, name bytes (UTF-8),
//!            rank u32, extents u64 x rank,
//!            data f32 x product(extents)
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 4] = b"ADVT";
pub const VERSION: u32 = 1;

pub fn encode<'a, T: Real>(entries: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>) -> Vec<u8> {
    let entries: Vec<_> = entries.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u64("count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Checkpoint("name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(r.u64("extent")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .ok_or_else(|| Error::Checkpoint(format!("{name}: extents overflow")))?;
        let bytes = r.take(numel.saturating_mul(4), &name)?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        out.push((name, Tensor::new(&shape, data)?));
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(out)
}

pub fn save<'a, T: Real>(path: &Path, entries: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>) -> Result<()> {
    std::fs::write(path, encode(entries)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::new(&[2], vec![1.0, -2.0]).unwrap();
        let bytes = encode([("ab", &t)]);
        assert_eq!(&bytes[..4], b"ADVT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 2);
        assert_eq!(&bytes[20..22], b"ab");
        assert_eq!(u32::from_le_bytes(bytes[22..26].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[26..34].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(bytes[34..38].try_into().unwrap()), 1.0);
        assert_eq!(bytes.len(), 42);
    }

    #[test]
    fn rejects_corruption() {
        let t = Tensor::<f32>::new(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let bytes = encode([("w", &t)]);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        assert_eq!(decode(&bytes).unwrap(), vec![("w".to_string(), t)]);
    }
}
