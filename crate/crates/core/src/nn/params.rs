//! Named parameters and the `casefold-model v1` container.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! "casefold-model v1\n"
//! u64  metadata length, then that many bytes of UTF-8 metadata
//! u32  number of parameter entries
//! per entry:
//!   u32  name length, name bytes (UTF-8)
//!   u32  rank (always 2), then rank x u64 dimensions
//!   rows*cols x f64 values, row-major
//! ```
//!
//! The metadata block is free-form text owned by the model type (config,
//! vocabularies, label list).

use std::collections::HashSet;
use std::io::{self, Read, Write};

use super::tensor::Tensor;

pub const MODEL_MAGIC: &[u8] = b"casefold-model v1\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.insert(name.into(), value, true)
    }

    /// A parameter that is read by the model but never updated.
    pub fn add_frozen(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.insert(name.into(), value, false)
    }

    fn insert(&mut self, name: String, value: Tensor, trainable: bool) -> ParamId {
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        self.params.push(Parameter {
            name,
            value,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Copies all values from a store with the same layout.
    pub fn load_values(&mut self, other: &ParamStore) {
        assert_eq!(self.params.len(), other.params.len());
        for (p, q) in self.params.iter_mut().zip(&other.params) {
            p.value = q.value.clone();
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.all_finite())
    }
}

pub fn write_container<W: Write>(w: &mut W, metadata: &str, store: &ParamStore) -> io::Result<()> {
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&(metadata.len() as u64).to_le_bytes())?;
    w.write_all(metadata.as_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (_, p) in store.iter() {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&2u32.to_le_bytes())?;
        w.write_all(&(p.value.rows() as u64).to_le_bytes())?;
        w.write_all(&(p.value.cols() as u64).to_le_bytes())?;
        for x in p.value.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn container_bytes(metadata: &str, store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    write_container(&mut out, metadata, store).expect("writing to a Vec cannot fail");
    out
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads a container back as `(metadata, entries)`. Every entry is marked
/// trainable; model loaders restore frozen flags from their metadata.
pub fn read_container<R: Read>(r: &mut R) -> io::Result<(String, ParamStore)> {
    let mut magic = vec![0u8; MODEL_MAGIC.len()];
    r.read_exact(&mut magic)?;
    if magic != MODEL_MAGIC {
        return Err(invalid("not a casefold-model v1 file"));
    }
    let meta_len = read_u64(r)? as usize;
    let mut meta = vec![0u8; meta_len];
    r.read_exact(&mut meta)?;
    let metadata = String::from_utf8(meta).map_err(|_| invalid("metadata is not UTF-8"))?;
    let count = read_u32(r)?;
    let mut store = ParamStore::new();
    let mut seen = HashSet::new();
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| invalid("parameter name is not UTF-8"))?;
        if !seen.insert(name.clone()) {
            return Err(invalid(format!("duplicate parameter {name}")));
        }
        let rank = read_u32(r)?;
        if rank != 2 {
            return Err(invalid(format!("{name}: unsupported rank {rank}")));
        }
        let rows = read_u64(r)? as usize;
        let cols = read_u64(r)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        let mut b = [0u8; 8];
        for _ in 0..rows * cols {
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        store.add(name, Tensor::from_vec(rows, cols, data));
    }
    Ok((metadata, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_bytes() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::row(&[1.0]));
        let bytes = container_bytes("k=v\n", &s);
        assert!(bytes.starts_with(b"casefold-model v1\n"));
        // magic + meta len + meta + count + name len + name + rank + dims + data
        assert_eq!(bytes.len(), 18 + 8 + 4 + 4 + 4 + 1 + 4 + 16 + 8);
        assert_eq!(&bytes[bytes.len() - 8..], &1.0f64.to_le_bytes());
    }

    #[test]
    fn rejects_bad_magic() {
        let err = read_container(&mut &b"casefold-model v2\n"[..]).unwrap_err();
        assert_eq!(err.kind(), io::ErrorKind::InvalidData);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter")]
    fn names_are_unique() {
        let mut s = ParamStore::new();
        s.add("a", Tensor::scalar(0.0));
        s.add("a", Tensor::scalar(1.0));
    }

    proptest! {
        #[test]
        fn container_round_trip(
            meta in "[a-z=\n ]{0,40}",
            shapes in prop::collection::vec((1usize..4, 1usize..4), 1..4),
            seed in any::<u64>(),
        ) {
            let mut r = crate::rng::seeded(seed);
            let mut s = ParamStore::new();
            for (i, (rows, cols)) in shapes.iter().enumerate() {
                s.add(format!("p{i}"), Tensor::uniform(*rows, *cols, 3.0, &mut r));
            }
            let bytes = container_bytes(&meta, &s);
            let (m, back) = read_container(&mut bytes.as_slice()).unwrap();
            prop_assert_eq!(m, meta);
            prop_assert_eq!(back, s);
        }
    }
}
