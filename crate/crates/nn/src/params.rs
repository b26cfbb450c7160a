use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BKPT";
pub const CHECKPOINT_VERSION: u16 = 1;

/// First/second moment buffers and step count of one parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    name: String,
    value: Tensor,
    state: AdamState,
}

/// Named parameters in insertion order, each with its optimizer state.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

impl PartialEq for ParamStore {
    /// Names and values only; optimizer state is ignored.
    fn eq(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape() && a.value.data() == b.value.data())
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NnError::DuplicateParam(name));
        }
        let n = value.numel();
        let value = value.with_requires_grad(false);
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Entry { name, value, state: AdamState { m: vec![0.0; n], v: vec![0.0; n], step: 0 } });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.entries[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(|i| &mut self.entries[i].value)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    pub fn state(&self, name: &str) -> Option<&AdamState> {
        self.index_of(name).map(|i| &self.entries[i].state)
    }

    /// Clears moment buffers and step counters.
    pub fn reset_state(&mut self) {
        for e in &mut self.entries {
            let n = e.value.numel();
            e.state = AdamState { m: vec![0.0; n], v: vec![0.0; n], step: 0 };
        }
    }

    /// Copies every parameter whose name starts with `prefix` into a new store.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        let mut out = ParamStore::new();
        for e in self.entries.iter().filter(|e| e.name.starts_with(prefix)) {
            out.insert(e.name.clone(), e.value.clone()).expect("names unique in source");
        }
        out
    }

    pub(crate) fn entries_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor, &mut AdamState)> {
        self.entries.iter_mut().map(|e| (e.name.as_str(), &mut e.value, &mut e.state))
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for e in &self.entries {
            let name = e.name.as_bytes();
            let len = u16::try_from(name.len()).map_err(|_| NnError::Shape(format!("name `{}` too long", e.name)))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(name)?;
            let rank = u8::try_from(e.value.rank()).map_err(|_| NnError::Shape("rank exceeds 255".into()))?;
            w.write_all(&[rank])?;
            for &d in e.value.shape() {
                let d = u32::try_from(d).map_err(|_| NnError::Shape("extent exceeds u32".into()))?;
                w.write_all(&d.to_le_bytes())?;
            }
            for v in e.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != CHECKPOINT_MAGIC {
            return Err(NnError::Checkpoint { msg: "bad magic".into(), offset: 0 });
        }
        let version = u16::from_le_bytes(cur.array()?);
        if version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint { msg: format!("unsupported version {version}"), offset: 4 });
        }
        let mut store = ParamStore::new();
        while cur.pos < bytes.len() {
            let at = cur.pos;
            let len = u16::from_le_bytes(cur.array()?) as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| NnError::Checkpoint { msg: "name is not UTF-8".into(), offset: at + 2 })?
                .to_string();
            let rank = cur.take(1)?[0] as usize;
            let shape = (0..rank)
                .map(|_| cur.array().map(|b| u32::from_le_bytes(b) as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let data = (0..numel).map(|_| cur.array().map(f64::from_le_bytes)).collect::<Result<Vec<_>>>()?;
            let value =
                Tensor::new(shape, data).map_err(|e| NnError::Checkpoint { msg: e.to_string(), offset: at })?;
            store.insert(name, value).map_err(|e| NnError::Checkpoint { msg: e.to_string(), offset: at })?;
        }
        Ok(store)
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(NnError::Checkpoint { msg: "truncated".into(), offset: self.bytes.len() });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::new(vec![2, 3], vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE, 0.0, -0.0]).unwrap()).unwrap();
        s.insert("b", Tensor::from_vec(vec![7.0])).unwrap();
        s
    }

    #[test]
    fn byte_layout() {
        let bytes = sample_store().to_bytes();
        assert_eq!(&bytes[..4], b"BKPT");
        assert_eq!(&bytes[4..6], &1u16.to_le_bytes());
        assert_eq!(&bytes[6..8], &1u16.to_le_bytes());
        assert_eq!(bytes[8], b'w');
        assert_eq!(bytes[9], 2);
        assert_eq!(&bytes[10..14], &2u32.to_le_bytes());
        assert_eq!(&bytes[14..18], &3u32.to_le_bytes());
        assert_eq!(&bytes[18..26], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 6 + (2 + 1 + 1 + 8 + 48) + (2 + 1 + 1 + 4 + 8));
    }

    #[test]
    fn rejects_duplicates_bad_magic_and_truncation() {
        let mut s = sample_store();
        assert!(matches!(s.insert("w", Tensor::scalar(0.0)), Err(NnError::DuplicateParam(_))));
        let mut bytes = s.to_bytes();
        assert!(ParamStore::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        bytes[0] = b'X';
        assert!(ParamStore::from_bytes(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in prop::collection::vec(any::<f64>(), 1..40), split in 1usize..4) {
            let mut s = ParamStore::new();
            for (i, chunk) in values.chunks(split).enumerate() {
                s.insert(format!("p{i}.weight"), Tensor::from_vec(chunk.to_vec())).unwrap();
            }
            let back = ParamStore::from_bytes(&s.to_bytes()).unwrap();
            prop_assert_eq!(back.len(), s.len());
            for ((n1, t1), (n2, t2)) in s.iter().zip(back.iter()) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(t1.shape(), t2.shape());
                let b1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
                let b2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(b1, b2);
            }
        }
    }
}
