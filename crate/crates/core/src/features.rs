//! Feature vectors: the `FEAT1` binary file shared with the extractor, and the
//! labeled in-memory sets that flow between the head, the scorer and the
//! evaluator.
//!
//! `FEAT1` layout, all integers little-endian:
//!
//! ```text
//! b"FEAT1" | u32 n | u32 d | n x (u32 byte_len, UTF-8 id) | n*d f32 row-major
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 5] = b"FEAT1";

/// Normal vs. abnormal ground truth of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrueLabel {
    Normal,
    Abnormal,
}

impl TrueLabel {
    /// Class labels named `normal` or `normal_<suffix>` are normal, everything
    /// else is a disease.
    pub fn from_class_label(label: &str) -> Self {
        if label == "normal" || label.starts_with("normal_") {
            TrueLabel::Normal
        } else {
            TrueLabel::Abnormal
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrueLabel::Normal => "normal",
            TrueLabel::Abnormal => "abnormal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "normal" => Some(TrueLabel::Normal),
            "abnormal" => Some(TrueLabel::Abnormal),
            _ => None,
        }
    }
}

/// Raw contents of a `FEAT1` file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    ids: Vec<String>,
    dim: usize,
    values: Vec<f32>,
}

impl FeatureFile {
    pub fn new(ids: Vec<String>, dim: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != ids.len() * dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values ({} rows x {dim})", ids.len() * dim, ids.len()),
                found: format!("{} values", values.len()),
            });
        }
        if u32::try_from(ids.len()).is_err() || u32::try_from(dim).is_err() {
            return Err(Error::format(
                "feature file",
                "row count or dimension exceeds u32",
            ));
        }
        Ok(Self { ids, dim, values })
    }

    /// Builds a file from f64 rows, rounding every value to f32.
    pub fn from_rows<'a>(
        dim: usize,
        rows: impl IntoIterator<Item = (&'a str, &'a [f64])>,
    ) -> Result<Self> {
        let mut ids = Vec::new();
        let mut values = Vec::new();
        for (id, row) in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            ids.push(id.to_owned());
            values.extend(row.iter().map(|&v| v as f32));
        }
        Self::new(ids, dim, values)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| f64::from(v)).collect()
    }

    /// Map from id to row index. Later duplicates win.
    pub fn index(&self) -> HashMap<&str, usize> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(FEATURE_MAGIC)?;
        w.write_all(&(self.ids.len() as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for id in &self.ids {
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |m: &str| Error::format("feature file", m);
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)
            .map_err(|_| bad("truncated header"))?;
        if &magic != FEATURE_MAGIC {
            return Err(bad("missing FEAT1 magic"));
        }
        let n = read_u32(&mut r).map_err(|_| bad("truncated header"))? as usize;
        let dim = read_u32(&mut r).map_err(|_| bad("truncated header"))? as usize;
        let mut ids = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let len = read_u32(&mut r).map_err(|_| bad("truncated id table"))? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)
                .map_err(|_| bad("truncated id table"))?;
            ids.push(String::from_utf8(buf).map_err(|_| bad("id is not valid UTF-8"))?);
        }
        let count = n
            .checked_mul(dim)
            .ok_or_else(|| bad("row count times dimension overflows"))?;
        let mut values = Vec::with_capacity(count.min(1 << 26));
        let mut word = [0u8; 4];
        for _ in 0..count {
            r.read_exact(&mut word)
                .map_err(|_| bad("truncated value block"))?;
            values.push(f32::from_le_bytes(word));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|_| bad("read failure"))? != 0 {
            return Err(bad("trailing bytes after value block"));
        }
        Self::new(ids, dim, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
        crate::tsv::write_bytes(path, &buf)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// One labeled embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub id: String,
    pub class_label: String,
    pub vector: Vec<f64>,
}

impl FeatureRecord {
    pub fn true_label(&self) -> TrueLabel {
        TrueLabel::from_class_label(&self.class_label)
    }
}

/// Labeled vectors of a common dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSet {
    dim: usize,
    records: Vec<FeatureRecord>,
}

impl FeatureSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            records: Vec::new(),
        }
    }

    pub fn from_records(dim: usize, records: Vec<FeatureRecord>) -> Result<Self> {
        let mut set = Self::new(dim);
        for r in records {
            set.push(r)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, record: FeatureRecord) -> Result<()> {
        if record.vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: record.vector.len(),
            });
        }
        self.records.push(record);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[FeatureRecord] {
        &self.records
    }

    pub fn iter(&self) -> std::slice::Iter<'_, FeatureRecord> {
        self.records.iter()
    }

    /// Row-major copy of all vectors.
    pub fn flat(&self) -> Vec<f64> {
        self.records
            .iter()
            .flat_map(|r| r.vector.iter().copied())
            .collect()
    }
}
