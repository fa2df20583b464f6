//! Sentence-level BLEU-4, chrF++ and ROUGE-L.
//!
//! Inputs are NFC-normalized and split on whitespace; case is preserved.
//! Corpus scores are the arithmetic mean of the per-pair scores.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Serialize, Serializer};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

const CHRF_CHAR_ORDER: usize = 6;
const CHRF_WORD_ORDER: usize = 2;
const CHRF_BETA: f64 = 2.0;

pub fn normalize(s: &str) -> String {
    s.nfc().collect()
}

fn ngram_counts<T: Eq + Hash>(seq: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 && seq.len() >= n {
        for w in seq.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches between hypothesis and reference n-gram counts.
fn overlap<K: Eq + Hash>(hyp: &HashMap<K, usize>, reference: &HashMap<K, usize>) -> usize {
    hyp.iter()
        .map(|(g, &c)| c.min(reference.get(g).copied().unwrap_or(0)))
        .sum()
}

/// BLEU-4 over pre-tokenized sequences.
///
/// Geometric mean of the modified 1..4-gram precisions times the brevity
/// penalty `exp(min(0, 1 - |ref|/|hyp|))`. An order n ≥ 2 with no matches
/// uses `(0 + 1) / (total + 1)`; no unigram match scores 0.
pub fn bleu4_tokens(hyp: &[&str], reference: &[&str]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    if hyp.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let matches = overlap(&ngram_counts(hyp, n), &ngram_counts(reference, n));
        let total = (hyp.len() + 1).saturating_sub(n);
        let p = if matches > 0 {
            matches as f64 / total as f64
        } else if n == 1 {
            return Ok(0.0);
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let bp = (1.0 - reference.len() as f64 / hyp.len() as f64)
        .min(0.0)
        .exp();
    Ok(bp * (log_sum / 4.0).exp())
}

pub fn bleu4(hyp: &str, reference: &str) -> Result<f64> {
    let (h, r) = (normalize(hyp), normalize(reference));
    let h: Vec<&str> = h.split_whitespace().collect();
    let r: Vec<&str> = r.split_whitespace().collect();
    bleu4_tokens(&h, &r)
}

fn f_beta(matches: usize, hyp_total: usize, ref_total: usize, beta: f64) -> f64 {
    let p = if hyp_total > 0 {
        matches as f64 / hyp_total as f64
    } else {
        0.0
    };
    let r = if ref_total > 0 {
        matches as f64 / ref_total as f64
    } else {
        0.0
    };
    if p + r == 0.0 {
        return 0.0;
    }
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (b2 * p + r)
}

/// Order statistics `(matches, hyp_total, ref_total)` for one n-gram order.
fn order_stats<T: Eq + Hash>(hyp: &[T], reference: &[T], n: usize) -> (usize, usize, usize) {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    (
        overlap(&h, &r),
        (hyp.len() + 1).saturating_sub(n),
        (reference.len() + 1).saturating_sub(n),
    )
}

/// chrF++ in `[0, 100]`: the mean F-beta (β = 2) over character 1..6-grams
/// (whitespace removed) and word 1..2-grams. Orders with no n-grams on
/// either side are skipped.
pub fn chrf_pp(hyp: &str, reference: &str) -> Result<f64> {
    let (hyp, reference) = (normalize(hyp), normalize(reference));
    if reference.trim().is_empty() {
        return Err(Error::EmptyReference);
    }
    let hc: Vec<char> = hyp.chars().filter(|c| !c.is_whitespace()).collect();
    let rc: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    let hw: Vec<&str> = hyp.split_whitespace().collect();
    let rw: Vec<&str> = reference.split_whitespace().collect();

    let stats = (1..=CHRF_CHAR_ORDER)
        .map(|n| order_stats(&hc, &rc, n))
        .chain((1..=CHRF_WORD_ORDER).map(|n| order_stats(&hw, &rw, n)));
    let mut sum = 0.0;
    let mut orders = 0usize;
    for (m, ht, rt) in stats {
        if ht == 0 && rt == 0 {
            continue;
        }
        sum += f_beta(m, ht, rt, CHRF_BETA);
        orders += 1;
    }
    Ok(100.0 * sum / orders as f64)
}

fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 over pre-tokenized sequences.
pub fn rouge_l_tokens(hyp: &[&str], reference: &[&str]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let l = lcs_len(hyp, reference);
    if l == 0 {
        return Ok(0.0);
    }
    let p = l as f64 / hyp.len() as f64;
    let r = l as f64 / reference.len() as f64;
    Ok(2.0 * p * r / (p + r))
}

pub fn rouge_l(hyp: &str, reference: &str) -> Result<f64> {
    let (h, r) = (normalize(hyp), normalize(reference));
    let h: Vec<&str> = h.split_whitespace().collect();
    let r: Vec<&str> = r.split_whitespace().collect();
    rouge_l_tokens(&h, &r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Bleu4,
    ChrfPP,
    RougeL,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Bleu4, Metric::ChrfPP, Metric::RougeL];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Bleu4 => "bleu4",
            Metric::ChrfPP => "chrfpp",
            Metric::RougeL => "rougel",
        }
    }

    pub fn score(self, hyp: &str, reference: &str) -> Result<f64> {
        match self {
            Metric::Bleu4 => bleu4(hyp, reference),
            Metric::ChrfPP => chrf_pp(hyp, reference),
            Metric::RougeL => rouge_l(hyp, reference),
        }
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown metric {s:?} (expected bleu4, chrfpp or rougel)"))
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredCorpus {
    pub count: usize,
    /// Mean of the per-pair scores for each metric.
    pub aggregate: BTreeMap<Metric, f64>,
    pub per_pair: Vec<BTreeMap<Metric, f64>>,
}

/// Scores line-aligned hypothesis/reference pairs.
pub fn score_corpus(pairs: &[(String, String)], metrics: &[Metric]) -> Result<ScoredCorpus> {
    let per_pair = pairs
        .par_iter()
        .enumerate()
        .map(|(i, (h, r))| {
            metrics
                .iter()
                .map(|&m| Ok((m, m.score(h, r)?)))
                .collect::<Result<BTreeMap<_, _>>>()
                .map_err(|e| Error::AtLine {
                    line: i + 1,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let aggregate = metrics
        .iter()
        .map(|&m| {
            let mean = if per_pair.is_empty() {
                0.0
            } else {
                per_pair.iter().map(|s| s[&m]).sum::<f64>() / per_pair.len() as f64
            };
            (m, mean)
        })
        .collect();
    Ok(ScoredCorpus {
        count: pairs.len(),
        aggregate,
        per_pair,
    })
}
