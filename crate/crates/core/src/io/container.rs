//! The `UAIX` tensor container: a flat, bit-exact binary format for named
//! f32 tensors.
//!
//! Layout (all integers little-endian): magic `UAIX`, version `u16`, entry
//! count `u32`; then per entry a `u16` name length, the UTF-8 name, a dtype
//! tag byte (0 = f32), a rank byte, `rank` `u32` dims, and the raw f32
//! payload. Payload bytes are the IEEE bit patterns, so round-trips are
//! bit-exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"UAIX";
const VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;

/// An ordered collection of uniquely named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    entries: Vec<(String, Tensor)>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an entry; names must be unique.
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(Error::DuplicateEntry(name));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    /// Looks up an entry, erroring with its name when absent.
    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::BadEntry {
            entry: name.to_string(),
            msg: "missing".to_string(),
        })
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    /// Names starting with `prefix`, in insertion order.
    pub fn names_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> {
        self.entries
            .iter()
            .map(|(n, _)| n.as_str())
            .filter(move |n| n.starts_with(prefix))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, tensor) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.push(tensor.rank() as u8);
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in tensor.data() {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "header")?;
        if magic != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = u16::from_le_bytes(r.take(2, "header")?.try_into().expect("2 bytes"));
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let count = u32::from_le_bytes(r.take(4, "header")?.try_into().expect("4 bytes")) as usize;
        let mut container = Container::new();
        for i in 0..count {
            let fallback = format!("#{i}");
            let name_len =
                u16::from_le_bytes(r.take(2, &fallback)?.try_into().expect("2 bytes")) as usize;
            let name = std::str::from_utf8(r.take(name_len, &fallback)?)
                .map_err(|_| Error::BadEntry {
                    entry: fallback.clone(),
                    msg: "name is not valid UTF-8".to_string(),
                })?
                .to_string();
            let dtype = r.take(1, &name)?[0];
            if dtype != DTYPE_F32 {
                return Err(Error::BadEntry {
                    entry: name,
                    msg: format!("unknown dtype tag {dtype}"),
                });
            }
            let rank = r.take(1, &name)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(
                    u32::from_le_bytes(r.take(4, &name)?.try_into().expect("4 bytes")) as usize,
                );
            }
            let len: usize = shape.iter().product();
            let payload = r.take(len * 4, &name)?;
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_bits(u32::from_le_bytes(c.try_into().expect("4 bytes"))))
                .collect();
            container.push(name, Tensor::new(shape, data)?)?;
        }
        Ok(container)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, entry: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(|| Error::Truncated {
            entry: entry.to_string(),
        })?;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                entry: entry.to_string(),
            });
        }
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }
}

/// Packs a `u64` into two f32 bit patterns (`[hi, lo]`).
pub fn pack_u64(value: u64) -> [f32; 2] {
    [
        f32::from_bits((value >> 32) as u32),
        f32::from_bits(value as u32),
    ]
}

/// Inverse of [`pack_u64`].
pub fn unpack_u64(packed: [f32; 2]) -> u64 {
    (u64::from(packed[0].to_bits()) << 32) | u64::from(packed[1].to_bits())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_container() -> Container {
        let mut c = Container::new();
        c.push("a", Tensor::new(vec![2, 2], vec![1.0, -2.5, 0.0, 3.25]).unwrap())
            .unwrap();
        c.push("b.nested", Tensor::new(vec![3], vec![f32::MIN, f32::MAX, 1e-38]).unwrap())
            .unwrap();
        c.push("empty", Tensor::new(vec![0], vec![]).unwrap()).unwrap();
        c
    }

    #[test]
    fn byte_round_trip_is_bit_exact() {
        let c = sample_container();
        let bytes = c.to_bytes();
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        // Including non-finite bit patterns (packed integers).
        let mut c2 = Container::new();
        let packed = pack_u64(u64::MAX - 12345);
        c2.push("seeds", Tensor::new(vec![2], packed.to_vec()).unwrap())
            .unwrap();
        let back2 = Container::from_bytes(&c2.to_bytes()).unwrap();
        let t = back2.get("seeds").unwrap();
        assert_eq!(
            unpack_u64([t.data()[0], t.data()[1]]),
            u64::MAX - 12345
        );
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut c = Container::new();
        c.push("x", Tensor::zeros(&[1])).unwrap();
        match c.push("x", Tensor::zeros(&[1])) {
            Err(Error::DuplicateEntry(name)) => assert_eq!(name, "x"),
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let c = sample_container();
        let mut bytes = c.to_bytes();
        bytes[0] = b'X';
        assert!(matches!(Container::from_bytes(&bytes), Err(Error::BadMagic)));
        let mut bytes = c.to_bytes();
        bytes[4] = 9;
        assert!(matches!(
            Container::from_bytes(&bytes),
            Err(Error::Version { found: 9, .. })
        ));
    }

    #[test]
    fn truncation_names_the_incomplete_entry() {
        let c = sample_container();
        let bytes = c.to_bytes();
        // Cut into the payload of entry "b.nested".
        let cut = bytes.len() - 14;
        match Container::from_bytes(&bytes[..cut]) {
            Err(Error::Truncated { entry }) => assert_eq!(entry, "b.nested"),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn pack_unpack_round_trips() {
        for v in [0u64, 1, u64::MAX, 0xdead_beef_cafe_f00d, 1 << 63] {
            assert_eq!(unpack_u64(pack_u64(v)), v);
        }
    }
}
