//! Weight-space diagnostics: per-layer L2 shift profiles, per-layer Pearson
//! correlation between two task vectors, and the data-mix vs merge verdict
//! derived from that correlation.
//!
//! High correlation between two specialists' updates means they moved the
//! same weights the same way; merging them then tends to interfere, so a
//! single fine-tune on mixed data is preferred. Low correlation favors
//! merging.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::layers::{LayerGrouping, LayerKey};
use crate::numeric::{l2_norm, pairwise_sum};
use crate::taskvector::{layer_l2, resolve_layers, LayerL2, TaskVector};

/// Default correlation cutoff between the two verdicts.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Pearson correlation of two equal-length samples, computed in two passes
/// (exact means first, then centered products) with f64 pairwise sums.
///
/// Returns `Ok(None)` when either sample is constant.
pub fn pearson_layer(dg: &[f32], ds: &[f32]) -> Result<Option<f64>> {
    if dg.len() != ds.len() {
        return Err(Error::LengthMismatch {
            left: dg.len(),
            right: ds.len(),
        });
    }
    let n = dg.len();
    if n < 2 {
        return Err(Error::TooFewElements(n));
    }
    if is_constant(dg) || is_constant(ds) {
        return Ok(None);
    }
    let mean_g = pairwise_sum(n, &|i| f64::from(dg[i])) / n as f64;
    let mean_s = pairwise_sum(n, &|i| f64::from(ds[i])) / n as f64;
    let cg = |i: usize| f64::from(dg[i]) - mean_g;
    let cs = |i: usize| f64::from(ds[i]) - mean_s;
    let sgs = pairwise_sum(n, &|i| cg(i) * cs(i));
    let sgg = pairwise_sum(n, &|i| cg(i) * cg(i));
    let sss = pairwise_sum(n, &|i| cs(i) * cs(i));
    if sgg == 0.0 || sss == 0.0 {
        return Ok(None);
    }
    Ok(Some((sgs / (sgg * sss).sqrt()).clamp(-1.0, 1.0)))
}

fn is_constant(v: &[f32]) -> bool {
    v.iter().all(|&x| x == v[0])
}

/// L2 shift of one labeled variant within a layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantL2 {
    pub label: String,
    pub l2_mean: f64,
    pub l2_total: f64,
}

/// One diagnostic row per layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerReport {
    pub layer: LayerKey,
    pub l2: Vec<VariantL2>,
    /// `None` when either delta is constant over the layer.
    pub pearson_r: Option<f64>,
    pub n_params: usize,
    pub n_tensors: usize,
}

/// Per-layer Pearson correlation between two task vectors, with each
/// layer's tensors concatenated in (name, flat index) order.
pub fn correlation_profile(
    vg: &TaskVector,
    vs: &TaskVector,
    grouping: &LayerGrouping,
) -> Result<Vec<LayerReport>> {
    vg.deltas().check_aligned(vs.deltas())?;
    let lg = resolve_layers(vg.deltas(), grouping)?;
    let ls = resolve_layers(vs.deltas(), grouping)?;
    lg.into_par_iter()
        .zip(ls)
        .map(|((key, tg), (_, ts))| {
            let dg: Vec<f32> = tg.iter().flat_map(|t| t.data().iter().copied()).collect();
            let ds: Vec<f32> = ts.iter().flat_map(|t| t.data().iter().copied()).collect();
            let pearson_r = if dg.len() < 2 {
                None
            } else {
                pearson_layer(&dg, &ds)?
            };
            let variant = |label: &str, tensors: &[&crate::tensor::Tensor]| {
                let norms: Vec<f64> = tensors.iter().map(|t| l2_norm(t.data())).collect();
                VariantL2 {
                    label: label.to_owned(),
                    l2_mean: norms.iter().sum::<f64>() / norms.len() as f64,
                    l2_total: norms.iter().map(|n| n * n).sum::<f64>().sqrt(),
                }
            };
            Ok(LayerReport {
                layer: key.clone(),
                l2: vec![variant(&vg.sft_id, &tg), variant(&vs.sft_id, &ts)],
                pearson_r,
                n_params: dg.len(),
                n_tensors: tg.len(),
            })
        })
        .collect()
}

/// Five-number summary using inclusive linear interpolation between order
/// statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            min: v[0],
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantProfile {
    pub label: String,
    pub rows: Vec<LayerL2>,
    /// Spread of `l2_mean` across numbered layers (all buckets when the
    /// model has no numbered layers).
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct L2Profile {
    pub layers: Vec<LayerKey>,
    pub variants: Vec<VariantProfile>,
}

impl L2Profile {
    /// CSV with one row per layer and one `l2_mean_<label>` column per variant.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer");
        for v in &self.variants {
            write!(out, ",l2_mean_{}", v.label).unwrap();
        }
        out.push('\n');
        for (i, layer) in self.layers.iter().enumerate() {
            write!(out, "{layer}").unwrap();
            for v in &self.variants {
                write!(out, ",{}", v.rows[i].mean).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

pub fn l2_profile(variants: &[(&str, &TaskVector)], grouping: &LayerGrouping) -> Result<L2Profile> {
    let layers: Vec<LayerKey> = grouping.keys().cloned().collect();
    let numeric = layers.iter().any(LayerKey::is_numeric);
    let variants = variants
        .iter()
        .map(|(label, tv)| {
            let rows = layer_l2(tv, grouping)?;
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| !numeric || r.layer.is_numeric())
                .map(|r| r.mean)
                .collect();
            let summary = Summary::of(&values).unwrap_or(Summary {
                min: 0.0,
                q1: 0.0,
                median: 0.0,
                q3: 0.0,
                max: 0.0,
            });
            Ok(VariantProfile {
                label: (*label).to_owned(),
                rows,
                summary,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(L2Profile { layers, variants })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    DataMix,
    Merge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    #[default]
    Uniform,
    ParamWeighted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recommendation {
    pub verdict: Verdict,
    pub mean_r: f64,
    pub threshold: f64,
    pub weighting: Weighting,
    pub defined_layers: usize,
    pub undefined_layers: usize,
    pub per_layer_evidence: Vec<LayerReport>,
    pub notes: Vec<String>,
}

/// Averages the defined per-layer correlations and recommends data mixing
/// when the mean reaches `threshold`, merging otherwise.
pub fn recommend_strategy(
    profile: &[LayerReport],
    threshold: f64,
    weighting: Weighting,
) -> Result<Recommendation> {
    let defined: Vec<(f64, usize)> = profile
        .iter()
        .filter_map(|r| r.pearson_r.map(|x| (x, r.n_params)))
        .collect();
    if defined.is_empty() {
        return Err(Error::NoDefinedCorrelations);
    }
    let mean_r = match weighting {
        Weighting::Uniform => defined.iter().map(|(r, _)| r).sum::<f64>() / defined.len() as f64,
        Weighting::ParamWeighted => {
            let total: usize = defined.iter().map(|(_, n)| n).sum();
            defined.iter().map(|(r, n)| r * *n as f64).sum::<f64>() / total as f64
        }
    };
    let undefined = profile.len() - defined.len();
    let verdict = if mean_r >= threshold {
        Verdict::DataMix
    } else {
        Verdict::Merge
    };
    let mut notes = Vec::new();
    if undefined > 0 {
        notes.push(format!(
            "{undefined} layer(s) with zero-variance deltas excluded from the mean"
        ));
    }
    Ok(Recommendation {
        verdict,
        mean_r,
        threshold,
        weighting,
        defined_layers: defined.len(),
        undefined_layers: undefined,
        per_layer_evidence: profile.to_vec(),
        notes,
    })
}

/// CSV of a correlation profile: `layer,l2_mean_<label>...,pearson_r`.
/// Undefined correlations are left empty.
pub fn profile_csv(profile: &[LayerReport]) -> String {
    let mut out = String::from("layer");
    if let Some(first) = profile.first() {
        for v in &first.l2 {
            write!(out, ",l2_mean_{}", v.label).unwrap();
        }
    }
    out.push_str(",pearson_r\n");
    for row in profile {
        write!(out, "{}", row.layer).unwrap();
        for v in &row.l2 {
            write!(out, ",{}", v.l2_mean).unwrap();
        }
        match row.pearson_r {
            Some(r) => writeln!(out, ",{r}").unwrap(),
            None => out.push_str(",\n"),
        }
    }
    out
}
