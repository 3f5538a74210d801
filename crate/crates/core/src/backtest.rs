//! One-period trading on tail-inefficient pairs, the end-to-end pipeline and
//! its bootstrap.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};
use crate::inference::{eth_aligned, eth_pipeline, AlignedPanel, EthConfig, EthReport};
use crate::margins::{standardize, BalancedSeries, FitRecord, TransformMethod};
use crate::quantile::quantile;
use crate::timeseries::{ReturnPanel, Timestamp};
use crate::{par, seed};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub entry_upper_q: f64,
    pub entry_lower_q: f64,
    /// Steps between the signal and the traded return; positions last one step.
    pub lag: usize,
    /// Fractional cost charged per trade.
    pub cost: f64,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self { entry_upper_q: 0.995, entry_lower_q: 0.005, lag: 1, cost: 0.0 }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        check_probability("entry_upper_q", self.entry_upper_q)?;
        check_probability("entry_lower_q", self.entry_lower_q)?;
        if self.entry_lower_q >= self.entry_upper_q {
            return Err(Error::InvalidParameter("entry_lower_q must be below entry_upper_q".into()));
        }
        if self.lag == 0 {
            return Err(Error::InvalidParameter("lag must be at least 1".into()));
        }
        if !(self.cost.is_finite() && self.cost >= 0.0) {
            return Err(Error::InvalidParameter(format!("cost must be non-negative, got {}", self.cost)));
        }
        Ok(())
    }
}

/// Historical entry levels of one asset on the raw return scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryThresholds {
    pub upper: f64,
    pub lower: f64,
}

/// Entry levels from the training window (missing cells count as zero returns).
pub fn entry_thresholds(train: &ReturnPanel, cfg: &StrategyConfig) -> Result<Vec<EntryThresholds>> {
    cfg.validate()?;
    if train.n_rows() == 0 {
        return Err(Error::EmptyResult);
    }
    let train = train.impute_zero();
    Ok(train
        .columns()
        .iter()
        .map(|c| EntryThresholds { upper: quantile(c, cfg.entry_upper_q), lower: quantile(c, cfg.entry_lower_q) })
        .collect())
}

/// A rejected pair to trade: when `±asset[explanatory]` is extreme, trade
/// `asset[target]` one lag later in the direction of `lambda_hat`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub explanatory: usize,
    pub negated: bool,
    pub target: usize,
    pub lambda_hat: f64,
}

impl Signal {
    pub fn pair_id(&self, assets: &[String]) -> String {
        format!("{}{}->{}", assets[self.explanatory], if self.negated { "-" } else { "+" }, assets[self.target])
    }
}

/// Signals for the rejected pairs of `report`, with assets resolved against `assets`.
pub fn signals_from_report(report: &EthReport, assets: &[String]) -> Result<Vec<Signal>> {
    let find = |name: &str| {
        assets
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| Error::InvalidParameter(format!("asset {name:?} from the report is not in the panel")))
    };
    report
        .rejected_pairs()
        .map(|p| {
            Ok(Signal { explanatory: find(&p.explanatory)?, negated: p.sign < 0, target: find(&p.target)?, lambda_hat: p.lambda_hat })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    /// Time of the entry signal.
    pub timestamp: String,
    pub explanatory: String,
    pub sign: i8,
    pub target: String,
    /// `1` long, `-1` short.
    pub direction: i8,
    pub signal_value: f64,
    pub realized_return: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BacktestResult {
    pub timestamps: Vec<Timestamp>,
    pub pair_ids: Vec<String>,
    /// Cumulative PnL per pair, indexed like `timestamps`.
    pub pair_pnl: Vec<Vec<f64>>,
    pub aggregate: Vec<f64>,
    pub baseline: Vec<f64>,
    pub trades: Vec<Trade>,
}

impl BacktestResult {
    /// No signal fired, so every PnL series is flat.
    pub fn no_signals(&self) -> bool {
        self.trades.is_empty()
    }

    pub fn terminal_pnl(&self) -> f64 {
        self.aggregate.last().copied().unwrap_or(0.0)
    }
}

/// Cumulative equal-weight mean return, zero at the first row.
pub fn baseline_portfolio(test: &ReturnPanel) -> Result<Vec<f64>> {
    if test.n_rows() == 0 || test.n_assets() == 0 {
        return Err(Error::EmptyResult);
    }
    let test = test.impute_zero();
    let p = test.n_assets() as f64;
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(test.n_rows());
    out.push(0.0);
    for t in 1..test.n_rows() {
        acc += test.columns().iter().map(|c| c[t]).sum::<f64>() / p;
        out.push(acc);
    }
    Ok(out)
}

/// Trades every signal over the test window. A signal observed at row `t`
/// books `direction * R_target[t + lag] - cost` at row `t + lag`.
pub fn run_backtest(test: &ReturnPanel, signals: &[Signal], thresholds: &[EntryThresholds], cfg: &StrategyConfig) -> Result<BacktestResult> {
    cfg.validate()?;
    if thresholds.len() != test.n_assets() {
        return Err(Error::LengthMismatch { left: test.n_assets(), right: thresholds.len() });
    }
    let baseline = baseline_portfolio(test)?;
    let test = test.impute_zero();
    let assets = test.assets();
    let n = test.n_rows();
    let mut pair_pnl = Vec::with_capacity(signals.len());
    let mut trades = Vec::new();
    for s in signals {
        if s.explanatory >= assets.len() || s.target >= assets.len() {
            return Err(Error::InvalidParameter("signal refers to an unknown asset".into()));
        }
        let direction: i8 = if s.lambda_hat > 0.0 {
            1
        } else if s.lambda_hat < 0.0 {
            -1
        } else {
            0
        };
        let mut booked = vec![0.0; n];
        let x = test.column(s.explanatory);
        let y = test.column(s.target);
        let level = &thresholds[s.explanatory];
        for t in 0..n.saturating_sub(cfg.lag) {
            let fires = if s.negated { x[t] < level.lower } else { x[t] > level.upper };
            if !fires || direction == 0 {
                continue;
            }
            let realized = y[t + cfg.lag];
            booked[t + cfg.lag] += f64::from(direction) * realized - cfg.cost;
            trades.push(Trade {
                timestamp: test.timestamps()[t].to_string(),
                explanatory: assets[s.explanatory].clone(),
                sign: if s.negated { -1 } else { 1 },
                target: assets[s.target].clone(),
                direction,
                signal_value: x[t],
                realized_return: realized,
            });
        }
        let mut acc = 0.0;
        pair_pnl.push(
            booked
                .into_iter()
                .map(|b| {
                    acc += b;
                    acc
                })
                .collect::<Vec<f64>>(),
        );
    }
    let aggregate = (0..n).map(|t| pair_pnl.iter().map(|p| p[t]).sum()).collect();
    Ok(BacktestResult {
        timestamps: test.timestamps().to_vec(),
        pair_ids: signals.iter().map(|s| s.pair_id(assets)).collect(),
        pair_pnl,
        aggregate,
        baseline,
        trades,
    })
}

pub fn write_pnl_csv<W: Write>(result: &BacktestResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "pair_id", "cumulative_pnl"])?;
    for (id, pnl) in result.pair_ids.iter().zip(&result.pair_pnl) {
        for (ts, v) in result.timestamps.iter().zip(pnl) {
            w.write_record([ts.to_string(), id.clone(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregate_csv<W: Write>(result: &BacktestResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "aggregate_pnl", "baseline_pnl"])?;
    for ((ts, a), b) in result.timestamps.iter().zip(&result.aggregate).zip(&result.baseline) {
        w.write_record([ts.to_string(), a.to_string(), b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trades_csv<W: Write>(result: &BacktestResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for t in &result.trades {
        w.serialize(t)?;
    }
    if result.trades.is_empty() {
        w.write_record(["timestamp", "explanatory", "sign", "target", "direction", "signal_value", "realized_return"])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub method: TransformMethod,
    /// Tail fraction of the margin fit.
    pub tail_q: f64,
    pub eth: EthConfig,
    pub strategy: StrategyConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { method: TransformMethod::TailIndex, tail_q: 0.01, eth: EthConfig::default(), strategy: StrategyConfig::default() }
    }
}

/// Standardises every asset of an imputed panel.
pub fn transform_panel(panel: &ReturnPanel, method: TransformMethod, tail_q: f64) -> Result<(Vec<BalancedSeries>, Vec<FitRecord>)> {
    let panel = panel.impute_zero();
    let out = par::map(panel.n_assets(), |i| standardize(panel.column(i), method, tail_q, &panel.assets()[i]));
    out.into_iter().collect::<Result<Vec<_>>>().map(|v| v.into_iter().unzip())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    pub fits: Vec<FitRecord>,
    pub report: EthReport,
    pub backtest: Option<BacktestResult>,
}

/// Transform the training window, test every lagged pair, and trade the
/// rejected pairs over the test window when one is given.
pub fn run_pipeline(train: &ReturnPanel, test: Option<&ReturnPanel>, cfg: &PipelineConfig, seed: u64) -> Result<PipelineOutput> {
    let (balanced, fits) = transform_panel(train, cfg.method, cfg.tail_q)?;
    let report = eth_pipeline(&balanced, &cfg.eth, seed)?;
    let backtest = match test {
        Some(test) => Some(backtest_report(train, test, &report, &cfg.strategy)?),
        None => None,
    };
    Ok(PipelineOutput { fits, report, backtest })
}

/// Trades the rejected pairs of `report` over `test` with entry levels from `train`.
pub fn backtest_report(train: &ReturnPanel, test: &ReturnPanel, report: &EthReport, cfg: &StrategyConfig) -> Result<BacktestResult> {
    if train.assets() != test.assets() {
        return Err(Error::InvalidParameter("train and test panels list different assets".into()));
    }
    let thresholds = entry_thresholds(train, cfg)?;
    let signals = signals_from_report(report, test.assets())?;
    run_backtest(test, &signals, &thresholds, cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    /// When false every replicate runs the plain pipeline on the original rows.
    pub resample: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapReplicate {
    pub replicate: usize,
    pub outcome: std::result::Result<PipelineOutput, String>,
}

/// Bootstrap distribution of one pair's statistic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub explanatory: String,
    pub sign: i8,
    pub target: String,
    pub lambda_mean: f64,
    pub lambda_sd: f64,
    pub reject_rate: f64,
    pub replicates: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapResult {
    pub replicates: Vec<BootstrapReplicate>,
    pub summary: Vec<PairSummary>,
}

/// Re-runs the pipeline on bootstrap resamples of the training window.
///
/// A replicate draws lag pairs `(t, t + lag)` of the training rows with
/// replacement, refits each asset's margin on its resampled explanatory rows,
/// applies that fit to the explanatory and target rows, reruns the tests and
/// correction, and trades the result over the untouched test window.
pub fn bootstrap_harness(
    train: &ReturnPanel,
    test: Option<&ReturnPanel>,
    cfg: &PipelineConfig,
    boot: &BootstrapConfig,
    master_seed: u64,
) -> Result<BootstrapResult> {
    if boot.replicates == 0 {
        return Err(Error::InvalidParameter("at least one replicate is required".into()));
    }
    let lag = cfg.eth.lag;
    if train.n_rows() <= lag + 1 {
        return Err(Error::InsufficientData { needed: lag + 2, have: train.n_rows() });
    }
    let replicates: Vec<BootstrapReplicate> = par::map(boot.replicates, |b| {
        let s = seed::derive(master_seed, &[b as u64]);
        let outcome = if boot.resample { bootstrap_replicate(train, test, cfg, s) } else { run_pipeline(train, test, cfg, s) };
        if let Err(e) = &outcome {
            log::warn!("bootstrap replicate {b} failed: {e}");
        }
        BootstrapReplicate { replicate: b, outcome: outcome.map_err(|e| e.to_string()) }
    });
    let summary = summarise(&replicates);
    Ok(BootstrapResult { replicates, summary })
}

fn bootstrap_replicate(train: &ReturnPanel, test: Option<&ReturnPanel>, cfg: &PipelineConfig, seed: u64) -> Result<PipelineOutput> {
    let lag = cfg.eth.lag;
    let raw = train.impute_zero();
    let pairs = raw.n_rows() - lag;
    let mut rng = seed::rng(seed, 0);
    let rows: Vec<usize> = (0..pairs).map(|_| rng.random_range(0..pairs)).collect();
    let mut fits = Vec::with_capacity(raw.n_assets());
    let mut explanatory = Vec::with_capacity(raw.n_assets());
    let mut targets = Vec::with_capacity(raw.n_assets());
    for (i, asset) in raw.assets().iter().enumerate() {
        let col = raw.column(i);
        let x: Vec<f64> = rows.iter().map(|&t| col[t]).collect();
        let y: Vec<f64> = rows.iter().map(|&t| col[t + lag]).collect();
        let (balanced, fit) = standardize(&x, cfg.method, cfg.tail_q, asset)?;
        targets.push(fit.apply(&y)?);
        explanatory.push(balanced.values);
        fits.push(fit);
    }
    let aligned = AlignedPanel { assets: raw.assets().to_vec(), explanatory, targets };
    let report = eth_aligned(&aligned, &cfg.eth.permutation, cfg.eth.alpha_star, seed)?;
    let backtest = match test {
        Some(test) => Some(backtest_report(train, test, &report, &cfg.strategy)?),
        None => None,
    };
    Ok(PipelineOutput { fits, report, backtest })
}

fn summarise(replicates: &[BootstrapReplicate]) -> Vec<PairSummary> {
    let reports: Vec<&EthReport> = replicates.iter().filter_map(|r| r.outcome.as_ref().ok()).map(|o| &o.report).collect();
    let Some(first) = reports.first() else {
        return Vec::new();
    };
    let key = |e: &str, s: i8, t: &str| (e.to_string(), s, t.to_string());
    let mut order = Vec::new();
    let mut stats: std::collections::HashMap<(String, i8, String), (Vec<f64>, usize)> = Default::default();
    for pair in &first.pairs {
        order.push(key(&pair.explanatory, pair.sign, &pair.target));
    }
    for report in &reports {
        for pair in &report.pairs {
            let k = key(&pair.explanatory, pair.sign, &pair.target);
            if !stats.contains_key(&k) && !order.contains(&k) {
                order.push(k.clone());
            }
            let entry = stats.entry(k).or_default();
            entry.0.push(pair.lambda_hat);
            entry.1 += usize::from(pair.rejected);
        }
    }
    order
        .into_iter()
        .filter_map(|k| {
            let (values, rejections) = stats.remove(&k)?;
            let n = values.len();
            let mean = values.iter().sum::<f64>() / n as f64;
            let sd = if n > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
            Some(PairSummary {
                explanatory: k.0,
                sign: k.1,
                target: k.2,
                lambda_mean: mean,
                lambda_sd: sd,
                reject_rate: rejections as f64 / n as f64,
                replicates: n,
            })
        })
        .collect()
}
