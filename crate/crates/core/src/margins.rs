//! Marginal standardisation to balanced regular variation with tail index 2.
//!
//! Two routes are offered. The tail-index route fits a Hill index and scale
//! coefficient to each tail and applies a signed power transform; the rank
//! route maps empirical ranks through the unit-scale symmetric Pareto(2)
//! quantile function. Both produce series whose upper and lower tails have
//! limit mass 1 beyond ±1.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};
use crate::quantile::{lower_rank_index, quantile, total_cmp};

/// Which tail of a series an estimate refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Upper,
    Lower,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransformMethod {
    #[serde(rename = "tail-index")]
    TailIndex,
    #[serde(rename = "rank")]
    Rank,
}

impl std::str::FromStr for TransformMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tail-index" | "tail_index" => Ok(TransformMethod::TailIndex),
            "rank" => Ok(TransformMethod::Rank),
            other => Err(Error::InvalidParameter(format!("unknown transform method {other:?}"))),
        }
    }
}

impl std::fmt::Display for TransformMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TransformMethod::TailIndex => "tail-index",
            TransformMethod::Rank => "rank",
        })
    }
}

/// Hill estimate for one tail.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TailIndexEstimate {
    pub alpha: f64,
    /// Number of order statistics `m` down to and including the threshold.
    pub exceedances: usize,
    /// The threshold order statistic `X_(m)` on the side-adjusted scale.
    pub threshold: f64,
}

/// Upper and lower tail fit of a single series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub alpha_plus: f64,
    pub alpha_minus: f64,
    pub c_plus: f64,
    pub c_minus: f64,
    pub q: f64,
    pub m_plus: usize,
    pub m_minus: usize,
}

impl TailFit {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.alpha_plus, self.alpha_minus, self.c_plus, self.c_minus];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidParameter(format!("tail fit has non-positive parameters: {self:?}")));
        }
        if self.m_plus < 2 || self.m_minus < 2 {
            return Err(Error::InsufficientTail { found: self.m_plus.min(self.m_minus) });
        }
        check_probability("q", self.q)
    }
}

/// A series standardised to the balanced Pareto(2) scale.
#[derive(Clone, Debug, PartialEq)]
pub struct BalancedSeries {
    pub values: Vec<f64>,
    pub method: TransformMethod,
    pub source_asset: String,
}

/// Per-asset record of how the standardisation was done.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub asset: String,
    pub alpha_plus: Option<f64>,
    pub alpha_minus: Option<f64>,
    pub c_plus: Option<f64>,
    pub c_minus: Option<f64>,
    pub q: f64,
    pub m_plus: Option<usize>,
    pub m_minus: Option<usize>,
    pub method: TransformMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

impl FitRecord {
    /// The fitted tails, when the tail-index route was used.
    pub fn tail_fit(&self) -> Option<TailFit> {
        Some(TailFit {
            alpha_plus: self.alpha_plus?,
            alpha_minus: self.alpha_minus?,
            c_plus: self.c_plus?,
            c_minus: self.c_minus?,
            q: self.q,
            m_plus: self.m_plus?,
            m_minus: self.m_minus?,
        })
    }

    /// Applies the recorded transform to other values of the same asset. The
    /// rank route has no parameters and ranks `values` among themselves.
    pub fn apply(&self, values: &[f64]) -> Result<Vec<f64>> {
        match self.tail_fit() {
            Some(fit) if self.method == TransformMethod::TailIndex => transform_tail_index(values, &fit),
            _ => transform_rank(values),
        }
    }
}

fn ensure_finite(sample: &[f64]) -> Result<()> {
    match sample.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

fn side_adjusted(sample: &[f64], side: Side) -> Vec<f64> {
    match side {
        Side::Upper => sample.to_vec(),
        Side::Lower => sample.iter().map(|v| -v).collect(),
    }
}

/// Hill estimator of the tail index.
///
/// `X_(m)` is the lower empirical `(1 - q)`-quantile of the side-adjusted
/// sample and `m` counts the order statistics from the maximum down to it.
pub fn hill_tail_index(sample: &[f64], q: f64, side: Side) -> Result<TailIndexEstimate> {
    check_probability("q", q)?;
    ensure_finite(sample)?;
    if sample.is_empty() {
        return Err(Error::InsufficientTail { found: 0 });
    }
    let mut v = side_adjusted(sample, side);
    let n = v.len();
    let idx = lower_rank_index(n, 1.0 - q);
    let m = n - idx;
    if m < 2 {
        return Err(Error::InsufficientTail { found: m });
    }
    let (_, pivot, above) = v.select_nth_unstable_by(idx, total_cmp);
    let threshold = *pivot;
    if threshold <= 0.0 {
        return Err(Error::NonPositiveTail { value: threshold });
    }
    let log_excess: f64 = above.iter().map(|x| (x / threshold).ln()).sum();
    if log_excess <= 0.0 {
        // every order statistic ties with the threshold
        return Err(Error::InsufficientTail { found: 1 });
    }
    Ok(TailIndexEstimate { alpha: (m - 1) as f64 / log_excess, exceedances: m, threshold })
}

/// Scale coefficient `q * t^alpha`, `t` the side-adjusted `(1 - q)`-quantile.
pub fn estimate_scale(sample: &[f64], q: f64, side: Side, alpha_hat: f64) -> Result<f64> {
    check_probability("q", q)?;
    ensure_finite(sample)?;
    if sample.is_empty() {
        return Err(Error::InsufficientTail { found: 0 });
    }
    if !(alpha_hat.is_finite() && alpha_hat > 0.0) {
        return Err(Error::InvalidParameter(format!("tail index must be positive, got {alpha_hat}")));
    }
    let t = quantile(&side_adjusted(sample, side), 1.0 - q);
    if t <= 0.0 {
        return Err(Error::NonPositiveTail { value: t });
    }
    let c = q * t.powf(alpha_hat);
    if c.is_finite() && c > 0.0 {
        Ok(c)
    } else {
        Err(Error::NonPositiveTail { value: c })
    }
}

/// Fits both tails of `sample` at exceedance probability `q`.
pub fn fit_tails(sample: &[f64], q: f64) -> Result<TailFit> {
    let upper = hill_tail_index(sample, q, Side::Upper)?;
    let lower = hill_tail_index(sample, q, Side::Lower)?;
    let fit = TailFit {
        alpha_plus: upper.alpha,
        alpha_minus: lower.alpha,
        c_plus: estimate_scale(sample, q, Side::Upper, upper.alpha)?,
        c_minus: estimate_scale(sample, q, Side::Lower, lower.alpha)?,
        q,
        m_plus: upper.exceedances,
        m_minus: lower.exceedances,
    };
    fit.validate()?;
    Ok(fit)
}

/// Signed power transform onto the balanced scale; zero maps to zero.
pub fn transform_tail_index(series: &[f64], fit: &TailFit) -> Result<Vec<f64>> {
    fit.validate()?;
    ensure_finite(series)?;
    let up_scale = fit.c_plus.powf(-0.5);
    let down_scale = fit.c_minus.powf(-0.5);
    let up_pow = fit.alpha_plus / 2.0;
    let down_pow = fit.alpha_minus / 2.0;
    Ok(series
        .iter()
        .map(|&r| {
            if r >= 0.0 {
                up_scale * r.powf(up_pow)
            } else {
                -down_scale * (-r).powf(down_pow)
            }
        })
        .collect())
}

/// Quantile function of the unit-scale symmetric Pareto(2) distribution.
pub fn symmetric_pareto_quantile(u: f64) -> f64 {
    if u <= 0.5 {
        SQRT_2 - (1.0 / u).sqrt()
    } else {
        (1.0 / (1.0 - u)).sqrt() - SQRT_2
    }
}

/// Distribution function of the unit-scale symmetric Pareto(2) distribution.
pub fn symmetric_pareto_cdf(x: f64) -> f64 {
    // (sqrt2 -+ x)^2 expanded so that F(0) is exactly 1/2
    if x <= 0.0 {
        1.0 / (x * x - 2.0 * SQRT_2 * x + 2.0)
    } else {
        1.0 - 1.0 / (x * x + 2.0 * SQRT_2 * x + 2.0)
    }
}

/// Survival function `P(X > r)` of the symmetric Pareto(2) distribution for `r >= 0`.
pub fn symmetric_pareto_tail(r: f64) -> f64 {
    1.0 / (r * r + 2.0 * SQRT_2 * r + 2.0)
}

/// Rank transform: stable-sort ranks, `u = rank / (n + 1)`, then the
/// symmetric Pareto(2) quantile function.
pub fn transform_rank(series: &[f64]) -> Result<Vec<f64>> {
    ensure_finite(series)?;
    let n = series.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, have: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| series[a].total_cmp(&series[b]));
    let mut out = vec![0.0; n];
    let denom = (n + 1) as f64;
    for (rank0, &i) in order.iter().enumerate() {
        out[i] = symmetric_pareto_quantile((rank0 + 1) as f64 / denom);
    }
    Ok(out)
}

/// Standardises one asset, falling back to the rank route when a tail
/// cannot be fitted.
pub fn standardize(series: &[f64], method: TransformMethod, q: f64, asset: &str) -> Result<(BalancedSeries, FitRecord)> {
    check_probability("q", q)?;
    ensure_finite(series)?;
    let rank_record = |fallback: Option<String>| FitRecord {
        asset: asset.to_string(),
        alpha_plus: None,
        alpha_minus: None,
        c_plus: None,
        c_minus: None,
        q,
        m_plus: None,
        m_minus: None,
        method: TransformMethod::Rank,
        fallback,
    };
    let ranked = |fallback| -> Result<(BalancedSeries, FitRecord)> {
        let values = transform_rank(series)?;
        Ok((
            BalancedSeries { values, method: TransformMethod::Rank, source_asset: asset.to_string() },
            rank_record(fallback),
        ))
    };
    match method {
        TransformMethod::Rank => ranked(None),
        TransformMethod::TailIndex => match fit_tails(series, q) {
            Ok(fit) => {
                let values = transform_tail_index(series, &fit)?;
                let record = FitRecord {
                    asset: asset.to_string(),
                    alpha_plus: Some(fit.alpha_plus),
                    alpha_minus: Some(fit.alpha_minus),
                    c_plus: Some(fit.c_plus),
                    c_minus: Some(fit.c_minus),
                    q,
                    m_plus: Some(fit.m_plus),
                    m_minus: Some(fit.m_minus),
                    method: TransformMethod::TailIndex,
                    fallback: None,
                };
                Ok((BalancedSeries { values, method: TransformMethod::TailIndex, source_asset: asset.to_string() }, record))
            }
            Err(e @ (Error::InsufficientTail { .. } | Error::NonPositiveTail { .. } | Error::InvalidParameter(_))) => {
                log::warn!("asset {asset}: tail-index fit failed ({e}); using rank transform");
                ranked(Some(e.to_string()))
            }
            Err(e) => Err(e),
        },
    }
}

/// One row of a balance diagnostic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    /// Tail probability defining the radius `r` as the `(1 - q)`-quantile of `|X|`.
    pub q: f64,
    pub r: f64,
    /// `P̂(X > r) / P(X > r)` against the symmetric Pareto(2) reference.
    pub upper: f64,
    pub lower: f64,
    /// Plain power-law statistic `P̂(X > r) r²`; tends to the same limit.
    pub upper_r2: f64,
    pub lower_r2: f64,
    /// Both statistics of one side lie outside `1 ± tolerance`.
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub tolerance: f64,
    pub rows: Vec<BalanceRow>,
    pub flagged: bool,
}

/// Compares the empirical upper and lower tail masses of a standardised
/// series with the unit-scale Pareto(2) target at radii taken from `q_grid`.
pub fn balance_check(series: &[f64], q_grid: &[f64], tolerance: f64) -> Result<BalanceReport> {
    if series.is_empty() {
        return Err(Error::EmptyResult);
    }
    ensure_finite(series)?;
    let n = series.len() as f64;
    let radii: Vec<f64> = series.iter().map(|v| v.abs()).collect();
    let mut rows = Vec::with_capacity(q_grid.len());
    for &q in q_grid {
        check_probability("q", q)?;
        let r = quantile(&radii, 1.0 - q);
        let up = series.iter().filter(|&&v| v > r).count() as f64 / n;
        let down = series.iter().filter(|&&v| v < -r).count() as f64 / n;
        let reference = symmetric_pareto_tail(r);
        let upper = up / reference;
        let lower = down / reference;
        let (upper_r2, lower_r2) = (up * r * r, down * r * r);
        // the two references differ at second order, so a side is off only when both disagree
        let off = |a: f64, b: f64| (a - 1.0).abs() > tolerance && (b - 1.0).abs() > tolerance;
        let flagged = off(upper, upper_r2) || off(lower, lower_r2);
        rows.push(BalanceRow { q, r, upper, lower, upper_r2, lower_r2, flagged });
    }
    let flagged = rows.iter().any(|r| r.flagged);
    Ok(BalanceReport { tolerance, rows, flagged })
}
