//! Tests of zero directional tail dependence and the market-level verdict.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::angular::{
    estimate_dtd, exceedance_terms_one, is_exceedance, positive_part, radius, Estimator,
};
use crate::error::{check_probability, check_same_len, Error, Result};
use crate::margins::BalancedSeries;
use crate::par;
use crate::quantile::{kth_largest_in_place, lower_rank_index};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationConfig {
    pub estimator: Estimator,
    pub q_plus: f64,
    /// Only used by the second estimator.
    pub q_minus: f64,
    pub permutations: usize,
    /// Report `(1 + #exceeding) / (1 + P)` instead of `#exceeding / P`.
    pub smoothed: bool,
}

impl Default for PermutationConfig {
    fn default() -> Self {
        Self { estimator: Estimator::Two, q_plus: 0.99, q_minus: 0.99, permutations: 10_000, smoothed: false }
    }
}

impl PermutationConfig {
    fn validate(&self) -> Result<()> {
        check_probability("q_plus", self.q_plus)?;
        check_probability("q_minus", self.q_minus)?;
        if self.permutations == 0 {
            return Err(Error::InvalidParameter("at least one permutation is required".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationTestResult {
    pub lambda_obs: f64,
    pub p_value: f64,
    pub permutations: usize,
    pub estimator: Estimator,
    pub seed: u64,
}

/// Sign-flip bits of permutation `l`: bit `i % 64` of word `i / 64` set means
/// observation `i` is negated.
pub fn sign_flips(seed: u64, l: usize, n: usize) -> Vec<u64> {
    let mut rng = seed::rng(seed, l as u64);
    (0..n.div_ceil(64)).map(|_| rng.next_u64()).collect()
}

#[inline]
fn flipped(words: &[u64], i: usize) -> bool {
    (words[i / 64] >> (i % 64)) & 1 == 1
}

/// `y` with the flips of `words` applied.
pub fn apply_flips(y: &[f64], words: &[u64]) -> Vec<f64> {
    y.iter().enumerate().map(|(i, &v)| if flipped(words, i) { -v } else { v }).collect()
}

/// Permutation statistics computed by re-running the estimator on each
/// flipped sample. Slow; kept as the reference for [`permutation_statistics`].
pub fn permutation_statistics_naive(x: &[f64], y: &[f64], cfg: &PermutationConfig, seed: u64) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_same_len(x, y)?;
    (0..cfg.permutations)
        .map(|l| {
            let yl = apply_flips(y, &sign_flips(seed, l, y.len()));
            Ok(estimate_dtd(x, &yl, cfg.estimator, cfg.q_plus, cfg.q_minus)?.lambda_hat)
        })
        .collect()
}

/// Permutation statistics `λ̂^(l)`, `l = 0..P`, bit-identical to
/// [`permutation_statistics_naive`].
///
/// Flipping `y` leaves `x⁺` and `|y|` unchanged. For the first estimator the
/// radii, and hence the exceedance set, are fixed, so only term signs move.
/// For the second, each radius is either `x⁺` or `‖(x⁺, |y|)‖`; the `m`-th
/// largest radius is at least the `m`-th largest `x⁺`, so only observations
/// whose full radius reaches that bound can ever exceed the threshold.
pub fn permutation_statistics(x: &[f64], y: &[f64], cfg: &PermutationConfig, seed: u64) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_same_len(x, y)?;
    let n = y.len();
    match cfg.estimator {
        Estimator::One => {
            let (_, r0) = exceedance_terms_one(x, y, cfg.q_plus)?;
            let mut idx = Vec::new();
            let mut terms = Vec::new();
            for (i, (&a, &b)) in x.iter().zip(y).enumerate() {
                let xp = positive_part(a);
                let r2 = xp * xp + b * b;
                if is_exceedance(r2.sqrt(), r0) {
                    idx.push(i);
                    terms.push(xp * b / r2);
                }
            }
            let count = terms.len() as f64;
            let stats = par::map(cfg.permutations, |l| {
                let words = sign_flips(seed, l, n);
                let sum: f64 = idx
                    .iter()
                    .zip(&terms)
                    .map(|(&i, &t)| if flipped(&words, i) { -t } else { t })
                    .sum();
                3.0 * (sum / count)
            });
            Ok(stats)
        }
        Estimator::Two => {
            if n == 0 {
                return Err(Error::NoExceedances { threshold: f64::NAN });
            }
            let xp: Vec<f64> = x.iter().map(|&v| positive_part(v)).collect();
            let m_plus = n - lower_rank_index(n, cfg.q_plus);
            let m_minus = n - lower_rank_index(n, cfg.q_minus);
            let mut buf = xp.clone();
            let bound = kth_largest_in_place(&mut buf, m_plus.max(m_minus));
            let cand: Vec<Candidate> = (0..n)
                .filter(|&i| radius(xp[i], y[i].abs()) >= bound)
                .map(|i| {
                    let (a, b) = (xp[i], y[i].abs());
                    let r2 = a * a + b * b;
                    Candidate { index: i, y: y[i], r_axis: radius(a, 0.0), r_full: r2.sqrt(), term: a * b / r2 }
                })
                .collect();
            let inner_bound = likely_bound(&cand, m_plus.max(m_minus));
            let inner: Vec<Candidate> = match inner_bound {
                Some(b) => cand.iter().filter(|c| c.r_full >= b).cloned().collect(),
                None => Vec::new(),
            };
            par::map(cfg.permutations, |l| {
                let words = sign_flips(seed, l, n);
                if let Some(b) = inner_bound {
                    if let Some(v) = candidate_lambda_two(&inner, &words, m_plus, m_minus, Some(b)) {
                        return v;
                    }
                }
                candidate_lambda_two(&cand, &words, m_plus, m_minus, None).expect("unchecked kernel always answers")
            })
            .into_iter()
            .collect()
        }
    }
}

// An observation that may enter either exceedance set. After a flip its
// target value lands on one side with radius `r_full` and term `term`; the
// other side sees radius `r_axis` and a zero term. These are the exact values
// the estimator computes from the flipped sample.
#[derive(Clone)]
struct Candidate {
    index: usize,
    y: f64,
    r_axis: f64,
    r_full: f64,
    term: f64,
}

// A radius B that both thresholds exceed under nearly every flip. Whatever
// the flip, a candidate reaches B on a side when `r_axis >= B`, and on one
// random side when only `r_full >= B`; B is chosen so that this count stays
// above `m` by four binomial standard deviations.
fn likely_bound(cand: &[Candidate], m: usize) -> Option<f64> {
    let mut full: Vec<f64> = cand.iter().map(|c| c.r_full).collect();
    let mut axis: Vec<f64> = cand.iter().map(|c| c.r_axis).collect();
    full.sort_by(|a, b| b.total_cmp(a));
    axis.sort_by(|a, b| b.total_cmp(a));
    let mut both = 0;
    for (j, &b) in full.iter().enumerate() {
        while both < axis.len() && axis[both] >= b {
            both += 1;
        }
        let either = (j + 1 - both.min(j + 1)) as f64;
        if both as f64 + either / 2.0 - 2.0 * either.sqrt() >= m as f64 {
            return Some(b);
        }
    }
    None
}

// With `check = Some(b)`, gives up (returns `None`) unless both sides have
// at least `m` radii reaching `b`; the thresholds then lie at or above `b`,
// so candidates with `r_full < b` cannot matter.
fn candidate_lambda_two(cand: &[Candidate], words: &[u64], m_plus: usize, m_minus: usize, check: Option<f64>) -> Option<Result<f64>> {
    let k = cand.len();
    // side of each candidate's target: 1 positive, -1 negative, 0 zero
    let mut side = Vec::with_capacity(k);
    let mut rp = Vec::with_capacity(k);
    let mut rm = Vec::with_capacity(k);
    let b = check.unwrap_or(0.0);
    let (mut reach_p, mut reach_m) = (0, 0);
    for c in cand {
        let v = if flipped(words, c.index) { -c.y } else { c.y };
        let s = (v > 0.0) as i8 - (v < 0.0) as i8;
        let (p, m) = (if s == 1 { c.r_full } else { c.r_axis }, if s == -1 { c.r_full } else { c.r_axis });
        reach_p += (p >= b) as usize;
        reach_m += (m >= b) as usize;
        side.push(s);
        rp.push(p);
        rm.push(m);
    }
    if check.is_some() && (reach_p < m_plus || reach_m < m_minus) {
        return None;
    }
    // radii are non-negative, so their bit patterns sort like the values
    let mut scratch: Vec<u64> = rp.iter().map(|v| v.to_bits()).collect();
    let r0p = f64::from_bits(*scratch.select_nth_unstable(k - m_plus).1);
    scratch.clear();
    scratch.extend(rm.iter().map(|v| v.to_bits()));
    let r0m = f64::from_bits(*scratch.select_nth_unstable(k - m_minus).1);
    let (mut sum_p, mut sum_m) = (0.0, 0.0);
    let (mut n_p, mut n_m) = (0usize, 0usize);
    for (((c, &p), &m), &s) in cand.iter().zip(&rp).zip(&rm).zip(&side) {
        if is_exceedance(p, r0p) {
            n_p += 1;
            if s == 1 {
                sum_p += c.term;
            }
        }
        if is_exceedance(m, r0m) {
            n_m += 1;
            if s == -1 {
                sum_m += c.term;
            }
        }
    }
    if n_p == 0 {
        return Some(Err(Error::NoExceedances { threshold: r0p }));
    }
    if n_m == 0 {
        return Some(Err(Error::NoExceedances { threshold: r0m }));
    }
    Some(Ok(2.0 * (sum_p / n_p as f64 - sum_m / n_m as f64)))
}

/// Sign-flip permutation test of zero directional tail dependence.
pub fn permutation_test(x: &[f64], y: &[f64], cfg: &PermutationConfig, seed: u64) -> Result<PermutationTestResult> {
    cfg.validate()?;
    let obs = estimate_dtd(x, y, cfg.estimator, cfg.q_plus, cfg.q_minus)?.lambda_hat;
    if !obs.is_finite() {
        return Err(Error::DegenerateObservation);
    }
    let stats = permutation_statistics(x, y, cfg, seed)?;
    let exceeding = stats.iter().filter(|s| s.abs() > obs.abs()).count();
    let p = if cfg.smoothed {
        (1 + exceeding) as f64 / (1 + cfg.permutations) as f64
    } else {
        exceeding as f64 / cfg.permutations as f64
    };
    Ok(PermutationTestResult {
        lambda_obs: obs,
        p_value: p,
        permutations: cfg.permutations,
        estimator: cfg.estimator,
        seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticTestResult {
    pub lambda_hat: f64,
    pub z_statistic: f64,
    pub p_value: f64,
    pub n_exceed: usize,
}

/// Normal approximation for the first estimator, `z = √N λ̂ / (3 s)` with
/// `s` the sample standard deviation of the exceedance terms.
pub fn asymptotic_test(x: &[f64], y: &[f64], q: f64) -> Result<AsymptoticTestResult> {
    let (terms, _) = exceedance_terms_one(x, y, q)?;
    let n = terms.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, have: n });
    }
    let sum: f64 = terms.iter().sum();
    let mean = sum / n as f64;
    let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let lambda_hat = 3.0 * mean;
    let z = (n as f64).sqrt() * lambda_hat / (3.0 * var.sqrt());
    let p = statrs::function::erf::erfc(z.abs() / std::f64::consts::SQRT_2);
    Ok(AsymptoticTestResult { lambda_hat, z_statistic: z, p_value: p.min(1.0), n_exceed: n })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BhOutcome {
    /// Harmonic constant `Σ_{i ≤ M} 1/i`.
    pub c_m: f64,
    /// Number of rejections.
    pub h: usize,
    /// Rejection flag per input position.
    pub rejected: Vec<bool>,
}

/// Step-up correction with thresholds `i α* / (C_M M)`; rejects the `H`
/// smallest p-values, ties broken by input order.
pub fn bh_correct(p_values: &[f64], alpha_star: f64) -> Result<BhOutcome> {
    check_probability("alpha_star", alpha_star)?;
    let m = p_values.len();
    let c_m: f64 = (1..=m).map(|i| 1.0 / i as f64).sum();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut h = 0;
    for (rank0, &i) in order.iter().enumerate() {
        let level = (rank0 + 1) as f64 * alpha_star / (c_m * m as f64);
        if p_values[i] < level {
            h = rank0 + 1;
        }
    }
    let mut rejected = vec![false; m];
    for &i in &order[..h] {
        rejected[i] = true;
    }
    Ok(BhOutcome { c_m, h, rejected })
}

/// Sign of an explanatory series: the asset itself or its negation.
pub fn sign_label(negated: bool) -> i8 {
    if negated {
        -1
    } else {
        1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub explanatory: String,
    pub sign: i8,
    pub target: String,
    pub lambda_hat: f64,
    pub p_value: f64,
    pub rejected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcludedPair {
    pub explanatory: String,
    pub sign: i8,
    pub target: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EthReport {
    pub alpha_star: f64,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "C_M")]
    pub c_m: f64,
    #[serde(rename = "H")]
    pub h: usize,
    pub market_rejected: bool,
    pub pairs: Vec<PairResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded: Vec<ExcludedPair>,
}

impl EthReport {
    pub fn rejected_pairs(&self) -> impl Iterator<Item = &PairResult> {
        self.pairs.iter().filter(|p| p.rejected)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EthConfig {
    pub lag: usize,
    pub alpha_star: f64,
    pub permutation: PermutationConfig,
}

impl Default for EthConfig {
    fn default() -> Self {
        Self { lag: 1, alpha_star: 0.01, permutation: PermutationConfig::default() }
    }
}

/// Identifies one explanatory/target pair of a lagged panel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairIndex {
    pub explanatory: usize,
    pub negated: bool,
    pub target: usize,
}

impl PairIndex {
    /// All `2p × p` pairs: every asset with both signs against every target,
    /// positive signs first.
    pub fn enumerate(p: usize) -> Vec<PairIndex> {
        let mut out = Vec::with_capacity(2 * p * p);
        for negated in [false, true] {
            for explanatory in 0..p {
                for target in 0..p {
                    out.push(PairIndex { explanatory, negated, target });
                }
            }
        }
        out
    }

    pub fn seed(&self, master: u64) -> u64 {
        seed::derive(master, &[self.explanatory as u64, self.negated as u64, self.target as u64])
    }
}

/// Rows of every explanatory asset aligned with the rows of every target:
/// `explanatory[i][t]` precedes `targets[j][t]` by the lag.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedPanel {
    pub assets: Vec<String>,
    pub explanatory: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl AlignedPanel {
    /// Pairs `Z_i` at `t` with `Z_j` at `t + lag`.
    pub fn from_lag(panel: &[BalancedSeries], lag: usize) -> Result<Self> {
        let t = panel.first().map_or(0, |s| s.values.len());
        if let Some(bad) = panel.iter().find(|s| s.values.len() != t) {
            return Err(Error::LengthMismatch { left: t, right: bad.values.len() });
        }
        if t <= lag {
            return Err(Error::InsufficientData { needed: lag + 1, have: t });
        }
        Ok(Self {
            assets: panel.iter().map(|s| s.source_asset.clone()).collect(),
            explanatory: panel.iter().map(|s| s.values[..t - lag].to_vec()).collect(),
            targets: panel.iter().map(|s| s.values[lag..].to_vec()).collect(),
        })
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }
}

/// Permutation test of one pair of an aligned panel.
pub fn pair_test(panel: &AlignedPanel, pair: PairIndex, cfg: &PermutationConfig, master_seed: u64) -> Result<PermutationTestResult> {
    let xs = &panel.explanatory[pair.explanatory];
    let x: Vec<f64> = if pair.negated { xs.iter().map(|v| -v).collect() } else { xs.clone() };
    permutation_test(&x, &panel.targets[pair.target], cfg, pair.seed(master_seed))
}

/// Tests every lagged pair of `panel`, applies the step-up correction and
/// reports the market verdict. Pairs whose statistic cannot be computed are
/// logged and left out of `M`.
pub fn eth_pipeline(panel: &[BalancedSeries], cfg: &EthConfig, master_seed: u64) -> Result<EthReport> {
    if panel.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, have: panel.len() });
    }
    if cfg.lag == 0 {
        return Err(Error::InvalidParameter("lag must be at least 1".into()));
    }
    let aligned = AlignedPanel::from_lag(panel, cfg.lag)?;
    eth_aligned(&aligned, &cfg.permutation, cfg.alpha_star, master_seed)
}

/// [`eth_pipeline`] on rows that are already aligned.
pub fn eth_aligned(panel: &AlignedPanel, cfg: &PermutationConfig, alpha_star: f64, master_seed: u64) -> Result<EthReport> {
    let p = panel.n_assets();
    if p < 2 {
        return Err(Error::InsufficientData { needed: 2, have: p });
    }
    let t = panel.explanatory[0].len();
    for col in panel.explanatory.iter().chain(&panel.targets) {
        if col.len() != t {
            return Err(Error::LengthMismatch { left: t, right: col.len() });
        }
    }
    if t < 2 {
        return Err(Error::InsufficientData { needed: 2, have: t });
    }
    check_probability("alpha_star", alpha_star)?;
    cfg.validate()?;
    let pairs = PairIndex::enumerate(p);
    let outcomes = par::map(pairs.len(), |k| pair_test(panel, pairs[k], cfg, master_seed));
    assemble_report(&panel.assets, &pairs, outcomes, alpha_star)
}

fn assemble_report(
    assets: &[String],
    pairs: &[PairIndex],
    outcomes: Vec<Result<PermutationTestResult>>,
    alpha_star: f64,
) -> Result<EthReport> {
    let name = |i: usize| assets[i].clone();
    let mut results = Vec::new();
    let mut excluded = Vec::new();
    for (pair, outcome) in pairs.iter().zip(outcomes) {
        match outcome {
            Ok(r) => results.push(PairResult {
                explanatory: name(pair.explanatory),
                sign: sign_label(pair.negated),
                target: name(pair.target),
                lambda_hat: r.lambda_obs,
                p_value: r.p_value,
                rejected: false,
            }),
            Err(e) => {
                log::warn!(
                    "excluding pair {}{} -> {}: {e}",
                    name(pair.explanatory),
                    if pair.negated { "-" } else { "+" },
                    name(pair.target)
                );
                excluded.push(ExcludedPair {
                    explanatory: name(pair.explanatory),
                    sign: sign_label(pair.negated),
                    target: name(pair.target),
                    reason: e.to_string(),
                });
            }
        }
    }
    let p_values: Vec<f64> = results.iter().map(|r| r.p_value).collect();
    let bh = bh_correct(&p_values, alpha_star)?;
    for (r, rej) in results.iter_mut().zip(&bh.rejected) {
        r.rejected = *rej;
    }
    Ok(EthReport {
        alpha_star,
        m: results.len(),
        c_m: bh.c_m,
        h: bh.h,
        market_rejected: bh.h >= 1,
        pairs: results,
        excluded,
    })
}
