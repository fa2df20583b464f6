//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the crate's algorithms.

#![allow(dead_code)]

use mergeforge_core::{Tensor, TensorMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---- random streams -------------------------------------------------------

pub fn fnv(s: &str) -> u64 {
    let mut h: u64 = 14695981039346656037;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(1099511628211);
    }
    h
}

/// Draws `count` values from the SplitMix64 stream starting at `state`.
pub fn splitmix_draws(mut state: u64, count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        state = state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        out.push(z ^ (z >> 31));
    }
    out
}

pub fn to_unit(x: u64) -> f64 {
    (x >> 11) as f64 / 9007199254740992.0
}

pub fn stream_units(seed: u64, name: &str, ordinal: u64, count: usize) -> Vec<f64> {
    splitmix_draws(seed ^ fnv(name) ^ ordinal, count)
        .into_iter()
        .map(to_unit)
        .collect()
}

// ---- toys -----------------------------------------------------------------

/// A toy model: (name, shape, values).
pub type Toy = Vec<(String, Vec<usize>, Vec<f32>)>;

pub fn to_map(toy: &Toy) -> TensorMap {
    toy.iter()
        .map(|(n, s, v)| (n.clone(), Tensor::new(s.clone(), v.clone()).unwrap()))
        .collect()
}

/// Values that are small multiples of 1/8, with a few exact zeros and
/// repeated magnitudes to exercise tie rules.
pub fn grid_value(r: &mut ChaCha8Rng) -> f32 {
    if r.gen_bool(0.1) {
        0.0
    } else {
        r.gen_range(-16i32..=16) as f32 / 8.0
    }
}

/// Random shapes for a toy with at most `max_elems` elements per tensor.
pub fn toy_shapes(
    r: &mut ChaCha8Rng,
    n_tensors: usize,
    max_elems: usize,
) -> Vec<(String, Vec<usize>)> {
    (0..n_tensors)
        .map(|i| {
            let len = r.gen_range(1..=max_elems);
            let shape = if len % 2 == 0 && r.gen_bool(0.5) {
                vec![2, len / 2]
            } else {
                vec![len]
            };
            (format!("layers.{i}.w"), shape)
        })
        .collect()
}

pub fn fill(shapes: &[(String, Vec<usize>)], mut f: impl FnMut() -> f32) -> Toy {
    shapes
        .iter()
        .map(|(n, s)| {
            let len = s.iter().product();
            (n.clone(), s.clone(), (0..len).map(|_| f()).collect())
        })
        .collect()
}

// ---- merge oracles --------------------------------------------------------

/// `ceil(d * n)` for densities given as exact decimal fractions.
pub fn keep_count(d: f64, n: usize) -> usize {
    let p = d * n as f64;
    let r = p.round();
    if (p - r).abs() < 1e-9 {
        r as usize
    } else {
        p.ceil() as usize
    }
}

pub fn oracle_trim(v: &[f32], d: f64) -> Vec<f32> {
    let k = keep_count(d, v.len());
    let mut idx: Vec<usize> = (0..v.len()).collect();
    // stable sort keeps the smaller index first among equal magnitudes
    idx.sort_by(|&a, &b| v[b].abs().partial_cmp(&v[a].abs()).unwrap());
    let mut out = vec![0.0; v.len()];
    for &i in idx.iter().take(k) {
        out[i] = v[i];
    }
    out
}

pub fn oracle_della_probs(row: &[f32], d: f64, eps: f64) -> Vec<f64> {
    let n = row.len();
    if n == 1 {
        return vec![d];
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| row[a].abs().partial_cmp(&row[b].abs()).unwrap());
    let mut p = vec![0.0; n];
    for (rank, i) in idx.into_iter().enumerate() {
        let k = d - eps / 2.0 + eps * rank as f64 / (n - 1) as f64;
        p[i] = k.clamp(0.0, 1.0);
    }
    p
}

pub fn oracle_drop(v: &[f32], probs: &[f64], units: &[f64]) -> Vec<f32> {
    (0..v.len())
        .map(|i| {
            if units[i] < probs[i] {
                (v[i] as f64 / probs[i]) as f32
            } else {
                0.0
            }
        })
        .collect()
}

/// Elect + agreeing weighted mean at one element.
pub fn oracle_disjoint(values: &[f32], weights: &[f64]) -> f32 {
    let mut mass = 0.0f64;
    for t in 0..values.len() {
        mass += weights[t] * values[t] as f64;
    }
    let sign = if mass < 0.0 { -1.0f32 } else { 1.0 };
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for t in 0..values.len() {
        if values[t] != 0.0 && values[t].signum() == sign {
            num += weights[t] * values[t] as f64;
            den += weights[t];
        }
    }
    if den == 0.0 {
        0.0
    } else {
        (num / den) as f32
    }
}

pub enum OracleMethod {
    Ties,
    DareLinear,
    DareTies,
    Della { spread: f64 },
}

/// Literal replay of the delta-based merges on a toy.
pub fn oracle_merge(
    method: &OracleMethod,
    base: &Toy,
    tasks: &[Toy],
    weights: &[f64],
    d: f64,
    seed: u64,
    scale: f64,
) -> Toy {
    base.iter()
        .enumerate()
        .map(|(ti, (name, shape, b))| {
            let row_len = *shape.last().unwrap_or(&1);
            let sparse: Vec<Vec<f32>> = tasks
                .iter()
                .enumerate()
                .map(|(t, task)| {
                    let delta: Vec<f32> = task[ti].2.iter().zip(b).map(|(s, b)| s - b).collect();
                    let units = stream_units(seed, name, t as u64, delta.len());
                    match method {
                        OracleMethod::Ties => oracle_trim(&delta, d),
                        OracleMethod::DareLinear | OracleMethod::DareTies => {
                            oracle_drop(&delta, &vec![d; delta.len()], &units)
                        }
                        OracleMethod::Della { spread } => {
                            let probs: Vec<f64> = delta
                                .chunks(row_len)
                                .flat_map(|r| oracle_della_probs(r, d, *spread))
                                .collect();
                            oracle_drop(&delta, &probs, &units)
                        }
                    }
                })
                .collect();
            let out = (0..b.len())
                .map(|i| {
                    let vals: Vec<f32> = sparse.iter().map(|s| s[i]).collect();
                    let merged = match method {
                        OracleMethod::DareLinear => {
                            let mut acc = 0.0f64;
                            for t in 0..vals.len() {
                                acc += weights[t] * vals[t] as f64;
                            }
                            acc as f32
                        }
                        _ => oracle_disjoint(&vals, weights),
                    };
                    (b[i] as f64 + scale * merged as f64) as f32
                })
                .collect();
            (name.clone(), shape.clone(), out)
        })
        .collect()
}

// ---- statistics -----------------------------------------------------------

/// Textbook two-pass Pearson with sequential sums.
pub fn oracle_pearson(x: &[f32], y: &[f32]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let my = y.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        let a = x[i] as f64 - mx;
        let b = y[i] as f64 - my;
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

// ---- text metrics ---------------------------------------------------------

fn grams<T: Clone>(seq: &[T], n: usize) -> Vec<Vec<T>> {
    if seq.len() < n {
        return vec![];
    }
    (0..=seq.len() - n)
        .map(|i| seq[i..i + n].to_vec())
        .collect()
}

fn clipped<T: PartialEq + Clone>(h: &[Vec<T>], r: &[Vec<T>]) -> usize {
    let mut seen: Vec<&Vec<T>> = Vec::new();
    let mut total = 0;
    for g in h {
        if seen.contains(&g) {
            continue;
        }
        seen.push(g);
        let ch = h.iter().filter(|x| *x == g).count();
        let cr = r.iter().filter(|x| *x == g).count();
        total += ch.min(cr);
    }
    total
}

pub fn oracle_bleu(hyp: &str, reference: &str) -> f64 {
    let h: Vec<&str> = hyp.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    let mut logs = 0.0;
    for n in 1..=4 {
        let hg = grams(&h, n);
        let m = clipped(&hg, &grams(&r, n));
        let p = if m == 0 {
            if n == 1 {
                return 0.0;
            }
            1.0 / (hg.len() as f64 + 1.0)
        } else {
            m as f64 / hg.len() as f64
        };
        logs += p.ln() / 4.0;
    }
    let bp = if h.len() >= r.len() {
        1.0
    } else {
        (1.0 - r.len() as f64 / h.len() as f64).exp()
    };
    bp * logs.exp()
}

pub fn oracle_chrf(hyp: &str, reference: &str) -> f64 {
    let hc: Vec<char> = hyp.chars().filter(|c| !c.is_whitespace()).collect();
    let rc: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    let hw: Vec<&str> = hyp.split_whitespace().collect();
    let rw: Vec<&str> = reference.split_whitespace().collect();
    let mut fs = Vec::new();
    let mut push = |m: usize, ht: usize, rt: usize| {
        if ht == 0 && rt == 0 {
            return;
        }
        let p = if ht == 0 { 0.0 } else { m as f64 / ht as f64 };
        let r = if rt == 0 { 0.0 } else { m as f64 / rt as f64 };
        fs.push(if p + r == 0.0 {
            0.0
        } else {
            5.0 * p * r / (4.0 * p + r)
        });
    };
    for n in 1..=6 {
        let (h, r) = (grams(&hc, n), grams(&rc, n));
        push(clipped(&h, &r), h.len(), r.len());
    }
    for n in 1..=2 {
        let (h, r) = (grams(&hw, n), grams(&rw, n));
        push(clipped(&h, &r), h.len(), r.len());
    }
    100.0 * fs.iter().sum::<f64>() / fs.len() as f64
}

/// LCS length by enumerating every subsequence of the shorter input.
pub fn brute_lcs(a: &[&str], b: &[&str]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    assert!(short.len() <= 16);
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let sub: Vec<&str> = (0..short.len())
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| short[i])
            .collect();
        if sub.len() <= best {
            continue;
        }
        let mut it = long.iter();
        if sub.iter().all(|s| it.any(|x| x == s)) {
            best = sub.len();
        }
    }
    best
}

pub fn oracle_rouge(hyp: &str, reference: &str) -> f64 {
    let h: Vec<&str> = hyp.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    let l = brute_lcs(&h, &r) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let (p, rc) = (l / h.len() as f64, l / r.len() as f64);
    2.0 * p * rc / (p + rc)
}

// ---- fixed merge suite ----------------------------------------------------

pub struct MergeCase {
    pub base: Toy,
    pub tasks: Vec<Toy>,
    pub weights: Vec<f64>,
    pub density: f64,
    pub spread: f64,
    pub seed: u64,
}

/// `count` seeded toys with at most 16 elements per tensor and 1..=3 tasks.
pub fn merge_cases(count: usize, seed: u64) -> Vec<MergeCase> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| {
            let n_tensors = r.gen_range(1..=3);
            let shapes = toy_shapes(&mut r, n_tensors, 16);
            let base = fill(&shapes, || r.gen_range(-8i32..=8) as f32 / 4.0);
            let n_tasks = r.gen_range(1..=3);
            let tasks: Vec<Toy> = (0..n_tasks)
                .map(|_| {
                    let delta = fill(&shapes, || grid_value(&mut r));
                    base.iter()
                        .zip(delta)
                        .map(|((n, s, b), (_, _, d))| {
                            (
                                n.clone(),
                                s.clone(),
                                b.iter().zip(d).map(|(b, d)| b + d).collect(),
                            )
                        })
                        .collect()
                })
                .collect();
            let weights = (0..n_tasks)
                .map(|_| r.gen_range(1..=10) as f64 / 10.0)
                .collect();
            let density: f64 = [0.2, 0.25, 0.3, 0.5, 0.6, 0.75, 0.9, 1.0][r.gen_range(0..8)];
            let max_spread = ((density - 0.05) * 2.0).min(0.6);
            let spread = (r.gen_range(0.0..max_spread) * 20.0f64).floor() / 20.0;
            MergeCase {
                base,
                tasks,
                weights,
                density,
                spread,
                seed: r.gen(),
            }
        })
        .collect()
}

pub fn toy_eq(got: &TensorMap, want: &Toy) -> bool {
    got.len() == want.len()
        && want.iter().all(|(n, s, v)| {
            got.get(n).is_some_and(|t| {
                t.shape() == s.as_slice()
                    && t.data()
                        .iter()
                        .zip(v)
                        .all(|(a, b)| a.to_bits() == b.to_bits())
            })
        })
}
