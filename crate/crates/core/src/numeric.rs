//! Small numeric helpers shared by the merge and diagnostics code.

const PAIRWISE_BLOCK: usize = 16;

/// Pairwise sum of `term(i)` for `i in 0..n`.
///
/// The reduction tree depends only on `n`, so the result is independent of
/// how callers schedule work.
pub fn pairwise_sum(n: usize, term: &impl Fn(usize) -> f64) -> f64 {
    pairwise_range(0, n, term)
}

fn pairwise_range(lo: usize, hi: usize, term: &impl Fn(usize) -> f64) -> f64 {
    if hi - lo <= PAIRWISE_BLOCK {
        let mut acc = 0.0;
        for i in lo..hi {
            acc += term(i);
        }
        acc
    } else {
        let mid = lo + (hi - lo) / 2;
        pairwise_range(lo, mid, term) + pairwise_range(mid, hi, term)
    }
}

/// Euclidean norm of a flat F32 slice, accumulated in f64.
pub fn l2_norm(values: &[f32]) -> f64 {
    pairwise_sum(values.len(), &|i| {
        let v = f64::from(values[i]);
        v * v
    })
    .sqrt()
}

/// `x * n`, snapped to the nearest integer when it lies within a few ulps of
/// one, so decimal fractions such as `0.3` or `0.7` count as written.
fn snapped_product(x: f64, n: usize) -> f64 {
    debug_assert!(x.is_finite() && x >= 0.0);
    let p = x * n as f64;
    let r = p.round();
    if (p - r).abs() <= 4.0 * f64::EPSILON * r.max(1.0) {
        r
    } else {
        p
    }
}

/// `ceil(x * n)` with near-integer products snapped first.
///
/// `snapped_ceil_mul(0.07, 100)` is 7 where plain `(0.07 * 100.0).ceil()` is 8.
pub fn snapped_ceil_mul(x: f64, n: usize) -> usize {
    snapped_product(x, n).ceil() as usize
}

/// `floor(x * n)` with near-integer products snapped first.
pub fn snapped_floor_mul(x: f64, n: usize) -> usize {
    snapped_product(x, n).floor() as usize
}
