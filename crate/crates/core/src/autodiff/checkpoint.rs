//! Named-array container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SEMD" | version: u32 | count: u64 | count × entry
//! entry = name_len: u64 | name (UTF-8) | rank: u64 | rank × dim: u64 | data: f64 × prod(dims)
//! ```
//!
//! The entry encoding is shared with the dataset container.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SEMD";
pub const CHECKPOINT_VERSION: u32 = 1;

// Guards against absurd allocations when reading a damaged header.
const MAX_NAME_LEN: u64 = 1 << 16;
const MAX_RANK: u64 = 16;

/// One named dense array.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "array '{name}': dims {dims:?} hold {n} values, got {}",
                data.len()
            )));
        }
        Ok(NamedArray { name, dims, data })
    }

    /// Bit-level equality (distinguishes -0.0 and NaN payloads).
    pub fn bit_eq(&self, other: &NamedArray) -> bool {
        self.name == other.name
            && self.dims == other.dims
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Ordered collection of named arrays with lookup by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArrayBundle {
    pub arrays: Vec<NamedArray>,
}

impl ArrayBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) -> Result<()> {
        self.arrays.push(NamedArray::new(name, dims, data)?);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::MissingArray(name.to_string()))
    }

    pub fn bit_eq(&self, other: &ArrayBundle) -> bool {
        self.arrays.len() == other.arrays.len()
            && self.arrays.iter().zip(&other.arrays).all(|(a, b)| a.bit_eq(b))
    }

    pub fn encoded_len(&self) -> usize {
        8 + self
            .arrays
            .iter()
            .map(|a| 8 + a.name.len() + 8 + 8 * a.dims.len() + 8 * a.data.len())
            .sum::<usize>()
    }

    /// Count followed by entries; no magic.
    pub fn encode_body(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.arrays.len() as u64).to_le_bytes());
        for a in &self.arrays {
            out.extend_from_slice(&(a.name.len() as u64).to_le_bytes());
            out.extend_from_slice(a.name.as_bytes());
            out.extend_from_slice(&(a.dims.len() as u64).to_le_bytes());
            for &d in &a.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }

    pub fn decode_body(cur: &mut Cursor<'_>) -> Result<Self> {
        let count = cur.u64("array count")?;
        let mut arrays = Vec::new();
        for _ in 0..count {
            let name_len = cur.u64("name length")?;
            if name_len > MAX_NAME_LEN {
                return Err(Error::Corrupt(format!("name length {name_len} is implausible")));
            }
            let name = std::str::from_utf8(cur.take(name_len as usize, "array name")?)
                .map_err(|_| Error::Corrupt("array name is not UTF-8".into()))?
                .to_string();
            let rank = cur.u64("rank")?;
            if rank > MAX_RANK {
                return Err(Error::Corrupt(format!("array '{name}' has rank {rank}")));
            }
            let mut dims = Vec::with_capacity(rank as usize);
            let mut n: usize = 1;
            for _ in 0..rank {
                let d = cur.u64("dimension")? as usize;
                n = n
                    .checked_mul(d)
                    .ok_or_else(|| Error::Corrupt(format!("array '{name}' size overflows")))?;
                dims.push(d);
            }
            let bytes = n
                .checked_mul(8)
                .ok_or_else(|| Error::Corrupt(format!("array '{name}' size overflows")))?;
            let raw = cur.take(bytes, "array data")?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            arrays.push(NamedArray { name, dims, data });
        }
        Ok(ArrayBundle { arrays })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.encoded_len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        self.encode_body(&mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let magic = cur.take(4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Corrupt(format!("bad magic {magic:?}, expected \"SEMD\"")));
        }
        let version = cur.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let bundle = Self::decode_body(&mut cur)?;
        if !cur.is_empty() {
            return Err(Error::Corrupt(format!("{} trailing bytes", cur.remaining())));
        }
        Ok(bundle)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_file(path.as_ref())?)
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

/// Bounds-checked little-endian reader.
pub struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.remaining() == 0
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Corrupt(format!(
                "truncated while reading {what} at byte {} (need {n}, have {})",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ArrayBundle {
        let mut b = ArrayBundle::new();
        b.push("encoder.conv0.weight", vec![2, 1, 3, 3], (0..18).map(|i| i as f64 * 0.1).collect())
            .unwrap();
        b.push("odd", vec![3], vec![-0.0, f64::MIN_POSITIVE, 1e300]).unwrap();
        b
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let b = sample();
        let back = ArrayBundle::from_bytes(&b.to_bytes()).unwrap();
        assert!(b.bit_eq(&back));
    }

    #[test]
    fn every_truncation_is_a_typed_error() {
        let bytes = sample().to_bytes();
        for cut in 0..bytes.len() {
            assert!(
                matches!(ArrayBundle::from_bytes(&bytes[..cut]), Err(Error::Corrupt(_))),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn version_mismatch_names_both() {
        let mut bytes = sample().to_bytes();
        bytes[4] = 9;
        let err = ArrayBundle::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::Version { found: 9, expected: 1 }));
        assert!(err.to_string().contains('9') && err.to_string().contains('1'));
    }

    #[test]
    fn missing_array_lookup() {
        assert!(matches!(sample().get("nope"), Err(Error::MissingArray(_))));
    }
}
