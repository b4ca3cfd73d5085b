//! Named parameter storage and the binary checkpoint format.
//!
//! A checkpoint is: an 8-byte little-endian header length `N`, `N` bytes of
//! JSON header, then every tensor as little-endian IEEE-754 binary64 values
//! in header order. Header offsets are byte offsets into that data block.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::scalar::Real;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Param<S> {
    pub tensor: Tensor<S>,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<S> {
    params: BTreeMap<String, Param<S>>,
}

impl<S: Real> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { params: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<S>, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter '{name}'")));
        }
        self.params.insert(name, Param { tensor, trainable });
        Ok(())
    }

    /// Inserts or overwrites.
    pub fn set(&mut self, name: impl Into<String>, tensor: Tensor<S>, trainable: bool) {
        self.params.insert(name.into(), Param { tensor, trainable });
    }

    pub fn get(&self, name: &str) -> Option<&Param<S>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<S>> {
        self.params.get_mut(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<S>> {
        self.params
            .get(name)
            .map(|p| &p.tensor)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        self.params
            .get_mut(name)
            .map(|p| p.trainable = trainable)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<S>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<S>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Scalar count over trainable parameters.
    pub fn trainable_elements(&self) -> usize {
        self.params.values().filter(|p| p.trainable).map(|p| p.tensor.len()).sum()
    }

    pub fn total_elements(&self) -> usize {
        self.params.values().map(|p| p.tensor.len()).sum()
    }

    /// Keeps only parameters whose name satisfies `keep`.
    pub fn filtered(&self, keep: impl Fn(&str) -> bool) -> Self {
        ParamStore {
            params: self.params.iter().filter(|(k, _)| keep(k)).map(|(k, v)| (k.clone(), v.clone())).collect(),
        }
    }

    /// Order-sensitive 64-bit digest of the exact bit patterns of the
    /// selected tensors.
    pub fn checksum(&self, select: impl Fn(&str, &Param<S>) -> bool) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for (name, p) in &self.params {
            if !select(name, p) {
                continue;
            }
            name.bytes().for_each(&mut eat);
            for v in p.tensor.data() {
                v.to_f64_lossy().to_bits().to_le_bytes().into_iter().for_each(&mut eat);
            }
        }
        h
    }

    pub fn cast<T: Real>(&self) -> ParamStore<T> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, p)| (k.clone(), Param { tensor: p.tensor.cast(), trainable: p.trainable }))
                .collect(),
        }
    }

    pub fn to_checkpoint_bytes(&self, metadata: &serde_json::Value) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.params.len());
        let mut offset = 0usize;
        for (name, p) in &self.params {
            entries.push(HeaderEntry {
                name: name.clone(),
                shape: p.tensor.shape().to_vec(),
                offset,
                trainable: p.trainable,
            });
            offset += p.tensor.len() * 8;
        }
        let header = Header { format_version: CHECKPOINT_FORMAT_VERSION, tensors: entries, metadata: metadata.clone() };
        let json = serde_json::to_vec(&header).map_err(|e| Error::parse("checkpoint header", e))?;
        let mut out = Vec::with_capacity(8 + json.len() + offset);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.params.values() {
            for v in p.tensor.data() {
                out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<(Self, serde_json::Value)> {
        if bytes.len() < 8 {
            return Err(Error::parse("checkpoint", "truncated before header length"));
        }
        let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let body = bytes
            .get(8..8usize.saturating_add(hlen))
            .ok_or_else(|| Error::parse("checkpoint", "truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| Error::parse("checkpoint header", e))?;
        if header.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::parse(
                "checkpoint header",
                format!("unsupported format version {}", header.format_version),
            ));
        }
        let data = &bytes[8 + hlen..];
        let mut store = ParamStore::new();
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let raw = data
                .get(e.offset..e.offset + n * 8)
                .ok_or_else(|| Error::parse(format!("tensor '{}'", e.name), "data out of range"))?;
            let vals = raw
                .chunks_exact(8)
                .map(|c| S::from_f64_lossy(f64::from_le_bytes(c.try_into().unwrap())))
                .collect();
            let t = Tensor::new(e.shape, vals).map_err(|err| Error::parse(format!("tensor '{}'", e.name), err))?;
            store
                .insert(e.name.clone(), t, e.trainable)
                .map_err(|err| Error::parse(format!("tensor '{}'", e.name), err))?;
        }
        Ok((store, header.metadata))
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>, metadata: &serde_json::Value) -> Result<()> {
        let bytes = self.to_checkpoint_bytes(metadata)?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Self, serde_json::Value)> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_checkpoint_bytes(&bytes)
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    tensors: Vec<HeaderEntry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f64>::new();
        s.insert("a", Tensor::scalar(1.0), true).unwrap();
        assert!(s.insert("a", Tensor::scalar(2.0), true).is_err());
    }

    #[test]
    fn truncated_checkpoint_is_parse_error() {
        let mut s = ParamStore::<f64>::new();
        s.insert("a", Tensor::full(&[3], 1.5), true).unwrap();
        let bytes = s.to_checkpoint_bytes(&serde_json::Value::Null).unwrap();
        let err = ParamStore::<f64>::from_checkpoint_bytes(&bytes[..bytes.len() - 4]).unwrap_err();
        assert!(matches!(err, Error::ParseError { .. }));
    }

    proptest! {
        #[test]
        fn checkpoint_round_trip_is_bit_exact(
            vals in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 1..40),
            frozen in any::<bool>(),
        ) {
            let mut s = ParamStore::<f64>::new();
            s.insert("w", Tensor::new(vec![vals.len()], vals.clone()).unwrap(), !frozen).unwrap();
            s.insert("b", Tensor::new(vec![1, vals.len()], vals.iter().rev().copied().collect()).unwrap(), true).unwrap();
            let meta = serde_json::json!({"k": 1});
            let bytes = s.to_checkpoint_bytes(&meta).unwrap();
            let (back, m) = ParamStore::<f64>::from_checkpoint_bytes(&bytes).unwrap();
            prop_assert_eq!(m, meta);
            for (name, p) in s.iter() {
                let q = back.get(name).unwrap();
                prop_assert_eq!(p.trainable, q.trainable);
                prop_assert_eq!(p.tensor.shape(), q.tensor.shape());
                let a: Vec<u64> = p.tensor.data().iter().map(|v| v.to_bits()).collect();
                let b: Vec<u64> = q.tensor.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(a, b);
            }
        }
    }
}
