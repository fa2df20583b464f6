use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ties::elect;
use super::{
    add_scaled, check_deltas, check_density, disjoint_merge, sum_deltas, Method, Provenance,
    SparsifiedDelta,
};
use crate::error::Result;
use crate::rng::SplitMix64;
use crate::taskvector::TaskVector;
use crate::tensor::TensorMap;

/// How DARE combines the sparsified deltas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DareVariant {
    /// Weighted sum (task arithmetic).
    Linear,
    /// Sign election and agreeing weighted mean, as in TIES.
    #[default]
    Ties,
}

/// Drops each element with probability `1 - d` and rescales survivors by
/// `1 / d`. Element `i` of tensor `name` is decided by the `i`-th draw of
/// `SplitMix64::for_tensor(seed, name, task_ordinal)`.
pub fn dare_sparsify(
    delta: &TaskVector,
    density: f64,
    seed: u64,
    task_ordinal: u64,
) -> Result<SparsifiedDelta> {
    check_density(density)?;
    let out: Vec<_> = delta
        .deltas()
        .iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(name, t)| {
            let mut rng = SplitMix64::for_tensor(seed, name, task_ordinal);
            let data = t
                .data()
                .iter()
                .map(|&v| {
                    if rng.next_unit() < density {
                        (f64::from(v) / density) as f32
                    } else {
                        0.0
                    }
                })
                .collect();
            (name.clone(), t.with_data(data))
        })
        .collect();
    Ok(SparsifiedDelta {
        deltas: out.into_iter().collect(),
        provenance: Provenance {
            method: Method::DareTies,
            density,
            spread: 0.0,
            seed,
            task_ordinal,
        },
    })
}

pub fn merge_dare(
    base: &TensorMap,
    deltas: &[(&TaskVector, f64)],
    density: f64,
    seed: u64,
    variant: DareVariant,
    scale: f64,
) -> Result<TensorMap> {
    check_density(density)?;
    check_deltas(base, deltas)?;
    let sparse = deltas
        .iter()
        .enumerate()
        .map(|(t, (tv, _))| dare_sparsify(tv, density, seed, t as u64))
        .collect::<Result<Vec<_>>>()?;
    let parts: Vec<(&TensorMap, f64)> = sparse
        .iter()
        .zip(deltas)
        .map(|(s, (_, w))| (&s.deltas, *w))
        .collect();
    let merged = match variant {
        DareVariant::Linear => sum_deltas(&parts),
        DareVariant::Ties => disjoint_merge(&parts, &elect(&parts)),
    };
    Ok(add_scaled(base, &merged, scale))
}
