//! Merging a base checkpoint with one or more task specialists.
//!
//! Five methods share one pipeline: compute task vectors, optionally sparsify
//! them, then combine either by weighted sum or by sign election plus an
//! agreeing weighted mean.
//!
//! | method        | sparsify                       | combine               |
//! |---------------|--------------------------------|-----------------------|
//! | `LINEAR`      | -                              | weighted sum of models|
//! | `TIES`        | top-k by magnitude             | elect + disjoint mean |
//! | `DARE_LINEAR` | Bernoulli(d) drop, rescale 1/d | weighted sum          |
//! | `DARE_TIES`   | Bernoulli(d) drop, rescale 1/d | elect + disjoint mean |
//! | `DELLA`       | rank-adaptive drop, rescale    | elect + disjoint mean |
//!
//! All arithmetic on merged values is carried out in f64 and rounded to F32
//! once, first for the merged delta and then for `base + scale * delta`.

mod dare;
mod della;
mod linear;
mod ties;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dare::{dare_sparsify, merge_dare, DareVariant};
pub use della::{keep_probabilities, magprune, merge_della};
pub use linear::merge_linear;
pub use ties::{elect_sign, merge_ties, trim_topk, SignMap};

use crate::error::{Error, Result};
use crate::taskvector::{compute_delta_labeled, TaskVector};
use crate::tensor::TensorMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    Linear,
    Ties,
    DareLinear,
    /// Plain `"DARE"` in a recipe selects this variant.
    #[serde(alias = "DARE")]
    DareTies,
    Della,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Linear,
        Method::Ties,
        Method::DareLinear,
        Method::DareTies,
        Method::Della,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Linear => "LINEAR",
            Method::Ties => "TIES",
            Method::DareLinear => "DARE_LINEAR",
            Method::DareTies => "DARE_TIES",
            Method::Della => "DELLA",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskWeight {
    pub task_id: String,
    pub weight: f64,
}

fn default_density() -> f64 {
    1.0
}

fn default_scale() -> f64 {
    1.0
}

/// Declarative description of one merge. Deserializes from the recipe JSON
/// document; unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeRecipe {
    pub method: Method,
    pub tasks: Vec<TaskWeight>,
    #[serde(default = "default_density")]
    pub density: f64,
    #[serde(default)]
    pub spread: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub normalize_weights: bool,
    /// Multiplier on the merged delta (ignored by LINEAR).
    #[serde(default = "default_scale")]
    pub scale: f64,
}

impl MergeRecipe {
    pub fn new(method: Method, weights: &[f64]) -> Self {
        Self {
            method,
            tasks: weights
                .iter()
                .enumerate()
                .map(|(i, &weight)| TaskWeight {
                    task_id: format!("task{i}"),
                    weight,
                })
                .collect(),
            density: 1.0,
            spread: 0.0,
            seed: 0,
            normalize_weights: false,
            scale: 1.0,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(s).map_err(|e| Error::InvalidRecipe(e.to_string()))?;
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::NoInputs);
        }
        for t in &self.tasks {
            check_weight(t.weight)?;
        }
        if self.normalize_weights && self.tasks.iter().map(|t| t.weight).sum::<f64>() <= 0.0 {
            return Err(Error::ZeroWeightSum);
        }
        if !self.scale.is_finite() {
            return Err(Error::InvalidRecipe(format!(
                "scale {} is not finite",
                self.scale
            )));
        }
        match self.method {
            Method::Linear => {}
            Method::Ties | Method::DareLinear | Method::DareTies => check_density(self.density)?,
            Method::Della => check_spread(self.density, self.spread)?,
        }
        Ok(())
    }

    /// Task weights after optional normalization.
    pub fn effective_weights(&self) -> Vec<f64> {
        let w: Vec<f64> = self.tasks.iter().map(|t| t.weight).collect();
        if self.normalize_weights {
            normalized(&w)
        } else {
            w
        }
    }
}

pub(crate) fn normalized(w: &[f64]) -> Vec<f64> {
    let sum: f64 = w.iter().sum();
    w.iter().map(|x| x / sum).collect()
}

pub(crate) fn check_weight(w: f64) -> Result<()> {
    if w.is_finite() && w >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidWeight(w))
    }
}

pub(crate) fn check_density(d: f64) -> Result<()> {
    if d > 0.0 && d <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidDensity(d))
    }
}

pub(crate) fn check_spread(d: f64, eps: f64) -> Result<()> {
    check_density(d)?;
    if eps.is_finite() && eps >= 0.0 && d - eps / 2.0 > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidSpread {
            density: d,
            spread: eps,
        })
    }
}

/// Where a sparsified delta came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub method: Method,
    pub density: f64,
    pub spread: f64,
    pub seed: u64,
    pub task_ordinal: u64,
}

/// A task vector after trimming or random dropping. Every element is either
/// zero, its original value (TIES) or its original value divided by its keep
/// probability (DARE, DELLA).
#[derive(Debug, Clone, PartialEq)]
pub struct SparsifiedDelta {
    pub deltas: TensorMap,
    pub provenance: Provenance,
}

/// Runs `recipe` over `base` and the task checkpoints, positionally matched
/// to `recipe.tasks`.
pub fn merge(recipe: &MergeRecipe, base: &TensorMap, tasks: &[TensorMap]) -> Result<TensorMap> {
    recipe.validate()?;
    if tasks.len() != recipe.tasks.len() {
        return Err(Error::InvalidRecipe(format!(
            "recipe lists {} tasks but {} checkpoints were given",
            recipe.tasks.len(),
            tasks.len()
        )));
    }
    let weights = recipe.effective_weights();
    if recipe.method == Method::Linear {
        for t in tasks {
            base.check_aligned(t)?;
        }
        let models: Vec<(&TensorMap, f64)> = tasks.iter().zip(weights).collect();
        return merge_linear(&models, false);
    }

    let vectors = tasks
        .iter()
        .zip(&recipe.tasks)
        .map(|(t, tw)| compute_delta_labeled(base, t, "base", &tw.task_id))
        .collect::<Result<Vec<TaskVector>>>()?;
    let weighted: Vec<(&TaskVector, f64)> = vectors.iter().zip(weights).collect();
    match recipe.method {
        Method::Linear => unreachable!(),
        Method::Ties => merge_ties(base, &weighted, recipe.density, recipe.scale),
        Method::DareLinear => merge_dare(
            base,
            &weighted,
            recipe.density,
            recipe.seed,
            DareVariant::Linear,
            recipe.scale,
        ),
        Method::DareTies => merge_dare(
            base,
            &weighted,
            recipe.density,
            recipe.seed,
            DareVariant::Ties,
            recipe.scale,
        ),
        Method::Della => merge_della(
            base,
            &weighted,
            recipe.density,
            recipe.spread,
            recipe.seed,
            recipe.scale,
        ),
    }
}

/// Weighted sum of sparsified deltas, rounded to F32.
pub(crate) fn sum_deltas(parts: &[(&TensorMap, f64)]) -> TensorMap {
    let first = parts[0].0;
    let out: Vec<_> = first
        .iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(name, t)| {
            let slices: Vec<(&[f32], f64)> = parts
                .iter()
                .map(|(m, w)| (m.get(name).expect("aligned").data(), *w))
                .collect();
            let data = (0..t.len())
                .map(|i| {
                    let mut acc = 0.0f64;
                    for (d, w) in &slices {
                        acc += w * f64::from(d[i]);
                    }
                    acc as f32
                })
                .collect();
            (name.clone(), t.with_data(data))
        })
        .collect();
    out.into_iter().collect()
}

/// Sign election followed by the agreeing (disjoint) weighted mean.
pub(crate) fn disjoint_merge(parts: &[(&TensorMap, f64)], signs: &SignMap) -> TensorMap {
    let first = parts[0].0;
    let out: Vec<_> = first
        .iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(name, t)| {
            let slices: Vec<(&[f32], f64)> = parts
                .iter()
                .map(|(m, w)| (m.get(name).expect("aligned").data(), *w))
                .collect();
            let s = signs.get(name).expect("aligned");
            let data = (0..t.len())
                .map(|i| {
                    let elected = f32::from(s[i]);
                    let mut num = 0.0f64;
                    let mut den = 0.0f64;
                    for (d, w) in &slices {
                        let v = d[i];
                        if v != 0.0 && v.signum() == elected {
                            num += w * f64::from(v);
                            den += w;
                        }
                    }
                    if den > 0.0 {
                        (num / den) as f32
                    } else {
                        0.0
                    }
                })
                .collect();
            (name.clone(), t.with_data(data))
        })
        .collect();
    out.into_iter().collect()
}

/// `base + scale * delta`, rounded once per element.
pub(crate) fn add_scaled(base: &TensorMap, delta: &TensorMap, scale: f64) -> TensorMap {
    let out: BTreeMap<String, _> = base
        .iter()
        .map(|(name, b)| {
            let d = delta.get(name).expect("aligned").data();
            let data = b
                .data()
                .iter()
                .zip(d)
                .map(|(&b, &d)| (f64::from(b) + scale * f64::from(d)) as f32)
                .collect();
            (name.clone(), b.with_data(data))
        })
        .collect();
    TensorMap::from_entries(out)
}

/// Validates inputs shared by every delta-based merge.
pub(crate) fn check_deltas(base: &TensorMap, deltas: &[(&TaskVector, f64)]) -> Result<()> {
    if deltas.is_empty() {
        return Err(Error::NoInputs);
    }
    for (tv, w) in deltas {
        check_weight(*w)?;
        base.check_aligned(tv.deltas())?;
    }
    Ok(())
}
