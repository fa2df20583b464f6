//! Building mixed training corpora from JSON-lines datasets.
//!
//! Records are opaque lines and are never parsed or re-encoded. Selection and
//! shuffling use the Fisher-Yates permutation from [`crate::rng::shuffle`].

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::snapped_floor_mul;
use crate::rng::{permutation, shuffle};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordDataset {
    pub source_id: String,
    pub records: Vec<String>,
}

impl RecordDataset {
    pub fn new(source_id: impl Into<String>, records: Vec<String>) -> Self {
        Self {
            source_id: source_id.into(),
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Splits on LF. A trailing LF does not start an extra record; any CR
    /// before an LF stays part of the record.
    pub fn from_jsonl(source_id: impl Into<String>, text: &str) -> Self {
        let body = text.strip_suffix('\n').unwrap_or(text);
        let records = if text.is_empty() {
            Vec::new()
        } else {
            body.split('\n').map(str::to_owned).collect()
        };
        Self::new(source_id, records)
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_jsonl(path.display().to_string(), &text))
    }

    /// Every record followed by LF.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::with_capacity(self.records.iter().map(|r| r.len() + 1).sum());
        for r in &self.records {
            out.push_str(r);
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for r in &self.records {
            w.write_all(r.as_bytes())
                .and_then(|_| w.write_all(b"\n"))
                .map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Keeps `floor(ratio * n)` records: the first that many indices of the
/// seeded permutation, emitted in their original order.
pub fn subsample(ds: &RecordDataset, ratio: f64, seed: u64) -> Result<RecordDataset> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidRatio(ratio));
    }
    let keep = snapped_floor_mul(ratio, ds.len());
    let mut chosen = permutation(ds.len(), seed);
    chosen.truncate(keep);
    chosen.sort_unstable();
    Ok(RecordDataset::new(
        ds.source_id.clone(),
        chosen.into_iter().map(|i| ds.records[i].clone()).collect(),
    ))
}

/// Concatenates `parts` in order and shuffles the result.
pub fn mix_datasets(parts: &[RecordDataset], seed: u64) -> Result<RecordDataset> {
    if parts.is_empty() {
        return Err(Error::NoInputs);
    }
    let mut records: Vec<String> = parts
        .iter()
        .flat_map(|p| p.records.iter().cloned())
        .collect();
    shuffle(&mut records, seed);
    let id = parts
        .iter()
        .map(|p| p.source_id.as_str())
        .collect::<Vec<_>>()
        .join("+");
    Ok(RecordDataset::new(id, records))
}

/// Seed used to subsample part `index` when building a mixture from `seed`.
pub fn part_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64 + 1)
}

/// Subsamples each part at its ratio, then mixes. Part `i` is subsampled
/// with [`part_seed`]`(seed, i)` and the mixture is shuffled with `seed`.
pub fn build_mixture(parts: &[(RecordDataset, f64)], seed: u64) -> Result<RecordDataset> {
    let sampled = parts
        .iter()
        .enumerate()
        .map(|(i, (ds, ratio))| subsample(ds, *ratio, part_seed(seed, i)))
        .collect::<Result<Vec<_>>>()?;
    mix_datasets(&sampled, seed)
}
