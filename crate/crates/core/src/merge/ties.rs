use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{
    add_scaled, check_deltas, check_density, disjoint_merge, Method, Provenance, SparsifiedDelta,
};
use crate::error::{Error, Result};
use crate::numeric::snapped_ceil_mul;
use crate::taskvector::TaskVector;
use crate::tensor::TensorMap;

/// Elected sign per element (+1 or -1), keyed by tensor name.
pub type SignMap = BTreeMap<String, Vec<i8>>;

/// Keeps the `ceil(d * n)` largest-magnitude elements of every tensor and
/// zeroes the rest. Ties at the cutoff keep the smaller flat index.
pub fn trim_topk(delta: &TaskVector, density: f64) -> Result<SparsifiedDelta> {
    check_density(density)?;
    let out: Vec<_> = delta
        .deltas()
        .iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(name, t)| {
            let data = t.data();
            let k = snapped_ceil_mul(density, data.len());
            let mut kept = vec![0.0f32; data.len()];
            if k >= data.len() {
                kept.copy_from_slice(data);
            } else if k > 0 {
                let mut order: Vec<usize> = (0..data.len()).collect();
                let by_magnitude = |&a: &usize, &b: &usize| {
                    data[b].abs().total_cmp(&data[a].abs()).then(a.cmp(&b))
                };
                order.select_nth_unstable_by(k - 1, by_magnitude);
                for &i in &order[..k] {
                    kept[i] = data[i];
                }
            }
            (name.clone(), t.with_data(kept))
        })
        .collect();
    Ok(SparsifiedDelta {
        deltas: out.into_iter().collect(),
        provenance: Provenance {
            method: Method::Ties,
            density,
            spread: 0.0,
            seed: 0,
            task_ordinal: 0,
        },
    })
}

/// `s_j = sign(Σ_t λ_t Δ̂_{t,j})`, with an exact zero electing +1.
pub fn elect_sign(sparsified: &[(&SparsifiedDelta, f64)]) -> Result<SignMap> {
    let (first, _) = sparsified.first().ok_or(Error::NoInputs)?;
    for (s, _) in sparsified {
        first.deltas.check_aligned(&s.deltas)?;
    }
    let parts: Vec<(&TensorMap, f64)> = sparsified.iter().map(|(s, w)| (&s.deltas, *w)).collect();
    Ok(elect(&parts))
}

pub(crate) fn elect(parts: &[(&TensorMap, f64)]) -> SignMap {
    let first = parts[0].0;
    first
        .iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(name, t)| {
            let slices: Vec<(&[f32], f64)> = parts
                .iter()
                .map(|(m, w)| (m.get(name).expect("aligned").data(), *w))
                .collect();
            let signs = (0..t.len())
                .map(|i| {
                    let mass: f64 = slices.iter().map(|(d, w)| w * f64::from(d[i])).sum();
                    if mass < 0.0 {
                        -1
                    } else {
                        1
                    }
                })
                .collect();
            (name.clone(), signs)
        })
        .collect()
}

/// TIES: trim each delta to density `d`, elect signs, average the agreeing
/// entries weighted by λ, and add `scale` times the result to `base`.
pub fn merge_ties(
    base: &TensorMap,
    deltas: &[(&TaskVector, f64)],
    density: f64,
    scale: f64,
) -> Result<TensorMap> {
    check_density(density)?;
    check_deltas(base, deltas)?;
    let trimmed = deltas
        .iter()
        .map(|(tv, _)| trim_topk(tv, density))
        .collect::<Result<Vec<_>>>()?;
    let parts: Vec<(&TensorMap, f64)> = trimmed
        .iter()
        .zip(deltas)
        .map(|(s, (_, w))| (&s.deltas, *w))
        .collect();
    let signs = elect(&parts);
    Ok(add_scaled(base, &disjoint_merge(&parts, &signs), scale))
}
