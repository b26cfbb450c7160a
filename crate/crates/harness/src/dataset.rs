//! On-disk dataset formats.
//!
//! BKIM (images), little-endian:
//!
//! ```text
//! magic "BKIM" | version u16 | n u32 | C u16 | H u16 | W u16 | M u16
//! n * C*H*W f32 pixels, sample-major, each sample [C,H,W] row-major
//! n u16 labels, 1-based
//! ```
//!
//! Sequences are JSON lines `{"tokens": [..], "label": z}` with 1-based
//! labels. Token 0 is the classification token and is prepended when a
//! record does not start with it.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use boostkit_core::{LabeledDataset, Sample};
use boostkit_nn::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const BKIM_MAGIC: &[u8; 4] = b"BKIM";
pub const BKIM_VERSION: u16 = 1;
pub const CLS_TOKEN: u32 = 0;
const HEADER_LEN: usize = 18;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, offset: usize, reason: impl Into<String>) -> HarnessError {
        HarnessError::Binary { path: self.path.to_path_buf(), offset, reason: reason.into() }
    }

    fn take(&mut self, k: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(k).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.err(self.bytes.len(), format!("truncated while reading {what}"))),
        }
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("two bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("four bytes")))
    }
}

/// Parses a BKIM container. `path` is only used in error messages.
pub fn decode_bkim(bytes: &[u8], path: &Path) -> Result<LabeledDataset> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4, "magic")? != BKIM_MAGIC {
        return Err(r.err(0, "bad magic"));
    }
    let version = r.u16("version")?;
    if version != BKIM_VERSION {
        return Err(r.err(4, format!("unsupported version {version}")));
    }
    let n = r.u32("sample count")? as usize;
    let c = r.u16("channels")? as usize;
    let h = r.u16("height")? as usize;
    let w = r.u16("width")? as usize;
    let m = r.u16("class count")? as usize;
    if n == 0 || c == 0 || h == 0 || w == 0 {
        return Err(r.err(6, format!("empty extents n={n} C={c} H={h} W={w}")));
    }
    if m < 2 {
        return Err(r.err(16, format!("need at least two classes, got {m}")));
    }
    let numel = c * h * w;
    let pixels = r.take(n * numel * 4, "pixel data")?;
    let labels_at = r.pos;
    let label_bytes = r.take(n * 2, "labels")?;
    if r.pos != bytes.len() {
        return Err(r.err(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let mut labels = Vec::with_capacity(n);
    for (i, b) in label_bytes.chunks_exact(2).enumerate() {
        let z = u16::from_le_bytes([b[0], b[1]]) as usize;
        if z == 0 || z > m {
            return Err(HarnessError::Invalid {
                path: path.to_path_buf(),
                reason: format!("sample {i} (byte {}): label {z} outside 1..={m}", labels_at + 2 * i),
            });
        }
        labels.push(z - 1);
    }
    let samples = pixels
        .chunks_exact(numel * 4)
        .map(|s| {
            let data = s.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
            Tensor::new(vec![c, h, w], data).map(Sample::Image)
        })
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| HarnessError::Invalid { path: path.to_path_buf(), reason: e.to_string() })?;
    Ok(LabeledDataset::new(samples, labels, m)?)
}

fn u16_field(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| HarnessError::Invalid { path: PathBuf::new(), reason: format!("{what} {v} exceeds u16") })
}

/// Encodes an image dataset. Pixels are stored as `f32`.
pub fn encode_bkim(data: &LabeledDataset) -> Result<Vec<u8>> {
    let [c, h, w] = data
        .image_extents()
        .ok_or_else(|| HarnessError::Invalid { path: PathBuf::new(), reason: "not an image dataset".into() })?;
    let n = u32::try_from(data.len())
        .map_err(|_| HarnessError::Invalid { path: PathBuf::new(), reason: "too many samples".into() })?;
    let mut out = Vec::with_capacity(HEADER_LEN + data.len() * (c * h * w * 4 + 2));
    out.extend_from_slice(BKIM_MAGIC);
    out.extend_from_slice(&BKIM_VERSION.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    for (v, what) in [(c, "channels"), (h, "height"), (w, "width"), (data.classes(), "class count")] {
        out.extend_from_slice(&u16_field(v, what)?.to_le_bytes());
    }
    for s in data.samples() {
        for &v in s.as_image().expect("homogeneous dataset").data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    for &z in data.labels() {
        out.extend_from_slice(&u16_field(z + 1, "label")?.to_le_bytes());
    }
    Ok(out)
}

pub fn load_image_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    decode_bkim(&fs::read(path)?, path)
}

pub fn write_image_dataset(path: impl AsRef<Path>, data: &LabeledDataset) -> Result<()> {
    fs::write(path, encode_bkim(data)?)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    tokens: Vec<u32>,
    label: usize,
}

/// Token sequences with their 0-based labels, before a class count is fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceRecords {
    pub sequences: Vec<Vec<u32>>,
    pub labels: Vec<usize>,
}

impl SequenceRecords {
    /// Largest 1-based label seen.
    pub fn max_label(&self) -> usize {
        self.labels.iter().map(|z| z + 1).max().unwrap_or(0)
    }

    pub fn into_dataset(self, classes: usize) -> Result<LabeledDataset> {
        let samples = self.sequences.into_iter().map(Sample::Sequence).collect();
        Ok(LabeledDataset::new(samples, self.labels, classes)?)
    }
}

pub fn read_sequence_records(path: impl AsRef<Path>) -> Result<SequenceRecords> {
    let path = path.as_ref();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = SequenceRecords { sequences: Vec::new(), labels: Vec::new() };
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| HarnessError::Record { path: path.to_path_buf(), line: k + 1, reason };
        let rec: Record = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if rec.label == 0 {
            return Err(err("labels are 1-based".into()));
        }
        let mut tokens = rec.tokens;
        if tokens.first() != Some(&CLS_TOKEN) {
            tokens.insert(0, CLS_TOKEN);
        }
        if tokens[1..].contains(&CLS_TOKEN) {
            return Err(err("classification token 0 appears after the first position".into()));
        }
        out.sequences.push(tokens);
        out.labels.push(rec.label - 1);
    }
    Ok(out)
}

/// Loads a sequence file; the class count is the largest label present.
pub fn load_sequence_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let records = read_sequence_records(path)?;
    let m = records.max_label().max(2);
    records.into_dataset(m)
}

/// Writes one record per sample, without the leading classification token.
pub fn write_sequence_dataset(path: impl AsRef<Path>, data: &LabeledDataset) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (s, &z) in data.samples().iter().zip(data.labels()) {
        let tokens = s.as_tokens().ok_or_else(|| HarnessError::Invalid {
            path: PathBuf::new(),
            reason: "not a sequence dataset".into(),
        })?;
        let rec = Record { tokens: tokens.strip_prefix(&[CLS_TOKEN]).unwrap_or(tokens).to_vec(), label: z + 1 };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_eighteen_bytes() {
        let x = Tensor::new(vec![1, 1, 1], vec![0.5]).unwrap();
        let d = LabeledDataset::new(vec![Sample::Image(x)], vec![1], 2).unwrap();
        assert_eq!(encode_bkim(&d).unwrap().len(), HEADER_LEN + 4 + 2);
    }
}
