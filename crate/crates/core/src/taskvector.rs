//! Task vectors: per-tensor deltas between a fine-tuned checkpoint and its base.

use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::Metadata;
use crate::error::{Error, Result};
use crate::layers::{LayerGrouping, LayerKey};
use crate::numeric::l2_norm;
use crate::tensor::{Tensor, TensorMap};

/// Header metadata value marking a serialized task vector.
pub const TASK_VECTOR_KIND: &str = "task_vector";

#[derive(Debug, Clone, PartialEq)]
pub struct TaskVector {
    deltas: TensorMap,
    pub base_id: String,
    pub sft_id: String,
}

impl TaskVector {
    /// Wraps an existing delta map.
    pub fn from_deltas(
        deltas: TensorMap,
        base_id: impl Into<String>,
        sft_id: impl Into<String>,
    ) -> Self {
        Self {
            deltas,
            base_id: base_id.into(),
            sft_id: sft_id.into(),
        }
    }

    pub fn deltas(&self) -> &TensorMap {
        &self.deltas
    }

    pub fn into_deltas(self) -> TensorMap {
        self.deltas
    }

    /// Multiplies every delta by `c` (in f32).
    pub fn scaled(&self, c: f32) -> Self {
        Self {
            deltas: self.deltas.map(|v| v * c),
            base_id: self.base_id.clone(),
            sft_id: self.sft_id.clone(),
        }
    }

    /// Header metadata used when the vector is written as a checkpoint.
    pub fn metadata(&self) -> Metadata {
        let mut m = Metadata::new();
        m.insert("kind".into(), TASK_VECTOR_KIND.into());
        m.insert("base".into(), self.base_id.clone());
        m.insert("sft".into(), self.sft_id.clone());
        m
    }
}

/// `sft - base`, elementwise in F32.
pub fn compute_delta(base: &TensorMap, sft: &TensorMap) -> Result<TaskVector> {
    compute_delta_labeled(base, sft, "base", "sft")
}

pub fn compute_delta_labeled(
    base: &TensorMap,
    sft: &TensorMap,
    base_id: &str,
    sft_id: &str,
) -> Result<TaskVector> {
    base.check_aligned(sft)?;
    let deltas = base
        .iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(name, b)| {
            let s = sft.get(name).expect("aligned");
            let d = b
                .data()
                .iter()
                .zip(s.data())
                .map(|(&b, &s)| s - b)
                .collect();
            (name.clone(), b.with_data(d))
        })
        .collect::<Vec<_>>();
    Ok(TaskVector::from_deltas(
        deltas.into_iter().collect(),
        base_id,
        sft_id,
    ))
}

/// Task arithmetic: `base + Σ λ_t · Δ_t`.
///
/// The weighted sum is accumulated in f64 and rounded to F32 once per
/// element, so a single delta with λ = 1 is exactly the F32 sum `base + Δ`.
pub fn apply_delta(base: &TensorMap, deltas: &[(&TaskVector, f64)]) -> Result<TensorMap> {
    for (tv, _) in deltas {
        base.check_aligned(tv.deltas())?;
    }
    let out = base
        .iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(name, b)| {
            let parts: Vec<(&[f32], f64)> = deltas
                .iter()
                .map(|(tv, w)| (tv.deltas().get(name).expect("aligned").data(), *w))
                .collect();
            let data = (0..b.len())
                .map(|i| {
                    let mut acc = f64::from(b.data()[i]);
                    for (d, w) in &parts {
                        acc += w * f64::from(d[i]);
                    }
                    acc as f32
                })
                .collect();
            (name.clone(), b.with_data(data))
        })
        .collect::<Vec<_>>();
    Ok(out.into_iter().collect())
}

/// Per-layer L2 statistics of a delta map.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerL2 {
    pub layer: LayerKey,
    /// Mean over the layer's tensors of each tensor's Euclidean norm.
    pub mean: f64,
    /// Euclidean norm of the whole layer flattened.
    pub total: f64,
    pub n_tensors: usize,
    pub n_params: usize,
}

/// Looks up every name of `grouping` in `map`, rejecting empty layers and
/// names the map does not hold.
pub(crate) fn resolve_layers<'a>(
    map: &'a TensorMap,
    grouping: &'a LayerGrouping,
) -> Result<Vec<(&'a LayerKey, Vec<&'a Tensor>)>> {
    let mut missing = Vec::new();
    let mut out = Vec::with_capacity(grouping.len());
    for (key, names) in grouping.iter() {
        if names.is_empty() {
            return Err(Error::EmptyGroup(key.to_string()));
        }
        let tensors: Vec<&Tensor> = names
            .iter()
            .filter_map(|n| {
                let t = map.get(n);
                if t.is_none() {
                    missing.push(n.clone());
                }
                t
            })
            .collect();
        out.push((key, tensors));
    }
    if !missing.is_empty() {
        return Err(Error::NameSetMismatch {
            missing,
            extra: Vec::new(),
        });
    }
    Ok(out)
}

pub fn layer_l2(vector: &TaskVector, grouping: &LayerGrouping) -> Result<Vec<LayerL2>> {
    let layers = resolve_layers(vector.deltas(), grouping)?;
    Ok(layers
        .into_par_iter()
        .map(|(key, tensors)| {
            let norms: Vec<f64> = tensors.iter().map(|t| l2_norm(t.data())).collect();
            let sum_sq: f64 = norms.iter().map(|n| n * n).sum();
            LayerL2 {
                layer: key.clone(),
                mean: norms.iter().sum::<f64>() / norms.len() as f64,
                total: sum_sq.sqrt(),
                n_tensors: tensors.len(),
                n_params: tensors.iter().map(|t| t.len()).sum(),
            }
        })
        .collect())
}
