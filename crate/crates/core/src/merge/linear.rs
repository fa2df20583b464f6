use rayon::prelude::*;

use super::{check_weight, normalized};
use crate::error::{Error, Result};
use crate::tensor::TensorMap;

/// Weighted parameter average `Σ λ̂_i · w_i`, with `λ̂ = λ / Σλ` when
/// `normalize` is set.
pub fn merge_linear(models: &[(&TensorMap, f64)], normalize: bool) -> Result<TensorMap> {
    let (first, _) = models.first().ok_or(Error::NoInputs)?;
    for (m, w) in models {
        check_weight(*w)?;
        first.check_aligned(m)?;
    }
    let raw: Vec<f64> = models.iter().map(|(_, w)| *w).collect();
    let weights = if normalize {
        if raw.iter().sum::<f64>() <= 0.0 {
            return Err(Error::ZeroWeightSum);
        }
        normalized(&raw)
    } else {
        raw
    };

    let out: Vec<_> = first
        .iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(name, t)| {
            let slices: Vec<&[f32]> = models
                .iter()
                .map(|(m, _)| m.get(name).expect("aligned").data())
                .collect();
            let data = (0..t.len())
                .map(|i| {
                    let mut acc = 0.0f64;
                    for (d, w) in slices.iter().zip(&weights) {
                        acc += w * f64::from(d[i]);
                    }
                    acc as f32
                })
                .collect();
            (name.clone(), t.with_data(data))
        })
        .collect();
    Ok(out.into_iter().collect())
}
