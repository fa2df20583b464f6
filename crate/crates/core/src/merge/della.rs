use rayon::prelude::*;

use super::ties::elect;
use super::{
    add_scaled, check_deltas, check_spread, disjoint_merge, Method, Provenance, SparsifiedDelta,
};
use crate::error::Result;
use crate::rng::SplitMix64;
use crate::taskvector::TaskVector;
use crate::tensor::TensorMap;

/// Magnitude-ranked keep probabilities for one row.
///
/// Elements are ranked by ascending `|v|` (ties: smaller index ranks lower)
/// and rank `r` of `n` gets `clamp(d - ε/2 + ε·r/(n-1), 0, 1)`; a row of one
/// element gets `d`.
pub fn keep_probabilities(row: &[f32], density: f64, spread: f64) -> Vec<f64> {
    let n = row.len();
    if n == 1 {
        return vec![density];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| row[a].abs().total_cmp(&row[b].abs()).then(a.cmp(&b)));
    let mut probs = vec![0.0; n];
    let lowest = density - spread / 2.0;
    for (rank, &i) in order.iter().enumerate() {
        let k = lowest + spread * rank as f64 / (n - 1) as f64;
        probs[i] = k.clamp(0.0, 1.0);
    }
    probs
}

/// DELLA's magnitude-adaptive drop: each element is kept with its
/// row-ranked probability `k_i` and rescaled by `1 / k_i`, drawing from the
/// same keyed stream as [`super::dare_sparsify`]. With `spread == 0` the two
/// are bit-identical.
pub fn magprune(
    delta: &TaskVector,
    density: f64,
    spread: f64,
    seed: u64,
    task_ordinal: u64,
) -> Result<SparsifiedDelta> {
    check_spread(density, spread)?;
    let out: Vec<_> = delta
        .deltas()
        .iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(name, t)| {
            let data = t.data();
            let row_len = t.row_len();
            let probs: Vec<f64> = if row_len == 0 {
                Vec::new()
            } else {
                data.chunks(row_len)
                    .flat_map(|row| keep_probabilities(row, density, spread))
                    .collect()
            };
            let mut rng = SplitMix64::for_tensor(seed, name, task_ordinal);
            let kept = data
                .iter()
                .zip(&probs)
                .map(|(&v, &k)| {
                    if rng.next_unit() < k {
                        (f64::from(v) / k) as f32
                    } else {
                        0.0
                    }
                })
                .collect();
            (name.clone(), t.with_data(kept))
        })
        .collect();
    Ok(SparsifiedDelta {
        deltas: out.into_iter().collect(),
        provenance: Provenance {
            method: Method::Della,
            density,
            spread,
            seed,
            task_ordinal,
        },
    })
}

/// DELLA: magprune each delta, elect signs, take the agreeing weighted mean.
pub fn merge_della(
    base: &TensorMap,
    deltas: &[(&TaskVector, f64)],
    density: f64,
    spread: f64,
    seed: u64,
    scale: f64,
) -> Result<TensorMap> {
    check_spread(density, spread)?;
    check_deltas(base, deltas)?;
    let pruned = deltas
        .iter()
        .enumerate()
        .map(|(t, (tv, _))| magprune(tv, density, spread, seed, t as u64))
        .collect::<Result<Vec<_>>>()?;
    let parts: Vec<(&TensorMap, f64)> = pruned
        .iter()
        .zip(deltas)
        .map(|(s, (_, w))| (&s.deltas, *w))
        .collect();
    Ok(add_scaled(
        base,
        &disjoint_merge(&parts, &elect(&parts)),
        scale,
    ))
}
