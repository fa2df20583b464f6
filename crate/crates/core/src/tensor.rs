//! Dense F32 tensors and name-ordered tensor maps.

use std::collections::btree_map;
use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Reserved header key of the checkpoint container; never a tensor name.
pub const METADATA_KEY: &str = "__metadata__";

/// A dense row-major F32 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected = element_count(&shape);
        if expected != data.len() {
            return Err(Error::shape(
                "<unnamed>",
                format!(
                    "shape {shape:?} implies {expected} elements, got {}",
                    data.len()
                ),
            ));
        }
        Ok(Self { shape, data })
    }

    /// One-dimensional tensor over `data`.
    pub fn vector(data: Vec<f32>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = element_count(&shape);
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Length of the last axis; scalars count as a single row of one element.
    pub fn row_len(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Same shape, new payload. Panics if the length differs.
    pub(crate) fn with_data(&self, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), self.data.len());
        Self {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        self.with_data(self.data.iter().map(|&v| f(v)).collect())
    }
}

pub(crate) fn element_count(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Name-ordered collection of tensors: the in-memory form of a checkpoint.
///
/// Iteration is lexicographic by name, which is the canonical order used by
/// every downstream operation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorMap {
    entries: BTreeMap<String, Tensor>,
}

impl TensorMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a tensor, replacing any previous tensor with the same name.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<Option<Tensor>> {
        let name = name.into();
        if name.is_empty() || name == METADATA_KEY {
            return Err(Error::InvalidName(name));
        }
        Ok(self.entries.insert(name, tensor))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> btree_map::Iter<'_, String, Tensor> {
        self.entries.iter()
    }

    pub fn num_params(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Applies `f` to every element, keeping names and shapes.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(k, t)| (k.clone(), t.map(&f)))
                .collect(),
        }
    }

    pub(crate) fn from_entries(entries: BTreeMap<String, Tensor>) -> Self {
        Self { entries }
    }

    /// Checks that `other` has exactly the same names and per-name shapes.
    pub fn check_aligned(&self, other: &TensorMap) -> Result<()> {
        let missing: Vec<String> = self
            .names()
            .filter(|n| !other.contains(n))
            .map(str::to_owned)
            .collect();
        let extra: Vec<String> = other
            .names()
            .filter(|n| !self.contains(n))
            .map(str::to_owned)
            .collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(Error::NameSetMismatch { missing, extra });
        }
        for (name, t) in self.iter() {
            let o = &other.entries[name];
            if t.shape() != o.shape() {
                return Err(Error::shape(
                    name.clone(),
                    format!("{:?} vs {:?}", t.shape(), o.shape()),
                ));
            }
        }
        Ok(())
    }
}

impl<'a> IntoIterator for &'a TensorMap {
    type Item = (&'a String, &'a Tensor);
    type IntoIter = btree_map::Iter<'a, String, Tensor>;

    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}

impl FromIterator<(String, Tensor)> for TensorMap {
    /// Panics on an empty or reserved name; use [`TensorMap::insert`] for
    /// untrusted names.
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        let mut map = TensorMap::new();
        for (name, t) in iter {
            map.insert(name, t).expect("valid tensor name");
        }
        map
    }
}
