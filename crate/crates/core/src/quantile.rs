//! Empirical quantiles shared by every module.
//!
//! One convention is used throughout the crate: the *lower* order statistic
//! at position `floor(q * (n - 1))` of the ascending sample (0-based). It
//! never interpolates, so thresholds are always realised sample values and
//! repeated runs select identical exceedance sets.

use std::cmp::Ordering;

// Guards against `q * (n - 1)` landing a hair below an integer.
const INDEX_SLACK: f64 = 1e-9;

/// Ascending 0-based index of the lower empirical `q`-quantile of `n` values.
pub fn lower_rank_index(n: usize, q: f64) -> usize {
    assert!(n > 0, "quantile of an empty sample");
    let q = q.clamp(0.0, 1.0);
    let pos = (q * (n - 1) as f64 + INDEX_SLACK).floor() as usize;
    pos.min(n - 1)
}

/// Number of order statistics at or above the lower `q`-quantile, counting
/// positions rather than values (`n - lower_rank_index(n, q)`).
pub fn upper_count(n: usize, q: f64) -> usize {
    n - lower_rank_index(n, q)
}

/// Lower empirical `q`-quantile; reorders `buf`.
pub fn quantile_in_place(buf: &mut [f64], q: f64) -> f64 {
    let k = lower_rank_index(buf.len(), q);
    let (_, v, _) = buf.select_nth_unstable_by(k, total_cmp);
    *v
}

/// Lower empirical `q`-quantile of `values`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut buf = values.to_vec();
    quantile_in_place(&mut buf, q)
}

/// The `m`-th largest value (1-based), reordering `buf`.
pub(crate) fn kth_largest_in_place(buf: &mut [f64], m: usize) -> f64 {
    debug_assert!(m >= 1 && m <= buf.len());
    let k = buf.len() - m;
    let (_, v, _) = buf.select_nth_unstable_by(k, total_cmp);
    *v
}

pub(crate) fn total_cmp(a: &f64, b: &f64) -> Ordering {
    a.total_cmp(b)
}
