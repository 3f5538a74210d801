use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _, Result};
use serde::{Deserialize, Serialize};
use taildep::angular::{ball_coordinates_default, edm_at_quantile, split_tails};
use taildep::backtest::{
    backtest_report, bootstrap_harness, transform_panel, write_aggregate_csv, write_pnl_csv, write_trades_csv, BootstrapConfig,
    PipelineConfig, StrategyConfig,
};
use taildep::inference::{eth_pipeline, sign_label, EthConfig, EthReport, PairIndex, PermutationConfig};
use taildep::margins::balance_check;
use taildep::simulate::{power_grid, run_study, size_grid, write_study_csv, StudyCell};
use taildep::synthetic::PlantedMarket;
use taildep::timeseries::{autocorrelation, extremogram, load_panel, split_panel, subsample, PanelFormat, ReturnPanel, SplitRule, Timestamp};
use taildep::{par, Error};

use crate::output::{sig, write_eth_csv, OutputDir, RunConfig};
use crate::settings::*;

/// Digits written to the ball-coordinate table.
const BALL_DIGITS: usize = 12;
const BALANCE_GRID: [f64; 4] = [0.05, 0.02, 0.01, 0.005];

pub struct RunContext {
    pub threads: usize,
    pub config_file: Option<PathBuf>,
}

impl RunContext {
    fn record<S: Serialize>(&self, out: &OutputDir, command: &str, settings: &S) -> Result<()> {
        let rc = RunConfig {
            command,
            version: env!("CARGO_PKG_VERSION"),
            threads: self.threads,
            config_file: self.config_file.as_deref(),
            settings,
        };
        out.json("run_config.json", &rc)
    }
}

/// Loads a panel, fills missing cells with 0 and keeps every `stride`-th row.
fn load(input: &Path, format: PanelFormat, stride: usize, offset: usize) -> Result<ReturnPanel> {
    let raw = load_panel(input, format).with_context(|| format!("loading {}", input.display()))?;
    if raw.missing_count() > 0 {
        log::info!("{} missing cells set to 0", raw.missing_count());
    }
    Ok(subsample(&raw.impute_zero(), stride, offset)?)
}

fn parse_split(spec: &str, panel: &ReturnPanel) -> Result<SplitRule> {
    let number = |s: &str| s.parse::<f64>().map_err(|_| anyhow!("bad split {spec:?}"));
    Ok(match spec {
        "auto" => SplitRule::default_for(panel),
        "none" => SplitRule::None,
        s if s.starts_with("fraction:") => SplitRule::TestFraction(number(&s[9..])?),
        s if s.starts_with("months:") => SplitRule::LastMonths(s[7..].parse().map_err(|_| anyhow!("bad split {spec:?}"))?),
        s => SplitRule::AtTimestamp(Timestamp::parse(s).ok_or_else(|| anyhow!("bad split {spec:?}"))?),
    })
}

#[derive(Serialize)]
struct Window {
    rows: usize,
    first: String,
    last: String,
}

impl Window {
    fn of(panel: &ReturnPanel) -> Self {
        let ts = panel.timestamps();
        let show = |t: Option<&Timestamp>| t.map(|t| t.to_string()).unwrap_or_default();
        Self { rows: panel.n_rows(), first: show(ts.first()), last: show(ts.last()) }
    }
}

#[derive(Serialize)]
struct Windows {
    train: Window,
    test: Option<Window>,
}

fn windows(train: &ReturnPanel, test: Option<&ReturnPanel>) -> Windows {
    Windows { train: Window::of(train), test: test.map(Window::of) }
}

pub fn transform(args: TransformArgs, ctx: &RunContext) -> Result<()> {
    let out = OutputDir::create(need(&args.output, "output")?)?;
    let panel = load(&need(&args.input, "input")?, need(&args.format, "format")?, need(&args.stride, "stride")?, need(&args.offset, "offset")?)?;
    let (balanced, fits) = transform_panel(&panel, need(&args.method, "method")?, need(&args.tail_q, "tail-q")?)?;
    let columns = balanced.into_iter().map(|s| s.values).collect();
    let standardized = ReturnPanel::from_columns(panel.assets().to_vec(), panel.timestamps().to_vec(), columns)?;
    out.write("balanced.csv", |w| Ok(standardized.write_wide(w)?))?;
    out.json("fit_report.json", &fits)?;
    ctx.record(&out, "transform", &args)
}

fn permutation_config(q: f64, q_minus: Option<f64>, estimator: taildep::angular::Estimator, permutations: usize, smoothed: bool) -> PermutationConfig {
    PermutationConfig { estimator, q_plus: q, q_minus: q_minus.unwrap_or(q), permutations, smoothed }
}

pub fn eth(args: EthArgs, ctx: &RunContext) -> Result<()> {
    let out = OutputDir::create(need(&args.output, "output")?)?;
    let panel = load(&need(&args.input, "input")?, need(&args.format, "format")?, need(&args.stride, "stride")?, need(&args.offset, "offset")?)?;
    let (train, test) = split_panel(&panel, parse_split(&need(&args.split, "split")?, &panel)?)?;
    let (balanced, fits) = transform_panel(&train, need(&args.method, "method")?, need(&args.tail_q, "tail-q")?)?;
    let cfg = EthConfig {
        lag: need(&args.lag, "lag")?,
        alpha_star: need(&args.alpha_star, "alpha-star")?,
        permutation: permutation_config(
            need(&args.q, "q")?,
            args.q_minus,
            need(&args.estimator, "estimator")?,
            need(&args.permutations, "permutations")?,
            need(&args.smoothed, "smoothed")?,
        ),
    };
    let report = eth_pipeline(&balanced, &cfg, need(&args.seed, "seed")?)?;
    out.json("eth_report.json", &report)?;
    out.write("eth_report.csv", |w| write_eth_csv(&report, w))?;
    out.json("fit_report.json", &fits)?;
    out.json("windows.json", &windows(&train, test.as_ref()))?;
    ctx.record(&out, "eth", &args)?;
    println!("M={} H={} market_rejected={}", report.m, report.h, report.market_rejected);
    Ok(())
}

fn strategy(lag: usize, upper: f64, lower: f64, cost: f64) -> Result<StrategyConfig> {
    let cfg = StrategyConfig { entry_upper_q: upper, entry_lower_q: lower, lag, cost };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct BacktestSummary {
    pairs: usize,
    trades: usize,
    terminal_pnl: f64,
    terminal_baseline: f64,
}

pub fn backtest(args: BacktestArgs, ctx: &RunContext) -> Result<()> {
    let out = OutputDir::create(need(&args.output, "output")?)?;
    let report_path = need(&args.report, "report")?;
    let text = std::fs::read_to_string(&report_path).with_context(|| format!("reading {}", report_path.display()))?;
    let report: EthReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", report_path.display()))?;
    let panel = load(&need(&args.input, "input")?, need(&args.format, "format")?, need(&args.stride, "stride")?, need(&args.offset, "offset")?)?;
    let (train, test) = split_panel(&panel, parse_split(&need(&args.split, "split")?, &panel)?)?;
    let test = test.ok_or_else(|| anyhow!("backtest needs a test window; --split none leaves none"))?;
    let cfg = strategy(
        need(&args.lag, "lag")?,
        need(&args.entry_upper_q, "entry-upper-q")?,
        need(&args.entry_lower_q, "entry-lower-q")?,
        need(&args.cost, "cost")?,
    )?;
    let result = backtest_report(&train, &test, &report, &cfg)?;
    if result.no_signals() {
        log::warn!("no rejected pairs in the report; PnL is flat");
    }
    out.write("pnl_pairs.csv", |w| Ok(write_pnl_csv(&result, w)?))?;
    out.write("pnl_aggregate.csv", |w| Ok(write_aggregate_csv(&result, w)?))?;
    out.write("trades.csv", |w| Ok(write_trades_csv(&result, w)?))?;
    let summary = BacktestSummary {
        pairs: result.pair_ids.len(),
        trades: result.trades.len(),
        terminal_pnl: result.terminal_pnl(),
        terminal_baseline: result.baseline.last().copied().unwrap_or(0.0),
    };
    out.json("summary.json", &summary)?;
    out.json("windows.json", &windows(&train, Some(&test)))?;
    ctx.record(&out, "backtest", &args)?;
    println!("pairs={} trades={} terminal_pnl={}", summary.pairs, summary.trades, summary.terminal_pnl);
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    cells: Vec<StudyCell>,
}

pub fn simulate(args: SimulateArgs, ctx: &RunContext) -> Result<()> {
    let out = OutputDir::create(need(&args.output, "output")?)?;
    let smoke = need(&args.smoke, "smoke")?;
    let mut grid = match &args.grid {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let file: GridFile = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            file.cells
        }
        None => {
            let k = if smoke { 50 } else { 200 };
            let permutations = need(&args.permutations, "permutations")?;
            match need(&args.preset, "preset")?.as_str() {
                "power" => power_grid(k, need(&args.phi, "phi")?, permutations),
                "size" => size_grid(k, permutations),
                other => bail!("unknown preset {other:?}; expected `power` or `size`"),
            }
        }
    };
    if let Some(k) = args.k {
        grid.iter_mut().for_each(|c| c.k = k);
    } else if smoke {
        grid.iter_mut().for_each(|c| c.k = 50);
    }
    if let Some(path) = &args.grid {
        log::info!("cell permutation counts from {} kept", path.display());
    }
    let rows = run_study(&grid, need(&args.seed, "seed")?, need(&args.timing, "timing")?)?;
    out.write("study.csv", |w| Ok(write_study_csv(&rows, w)?))?;
    out.json("study.json", &rows)?;
    out.json("grid.json", &grid)?;
    ctx.record(&out, "simulate", &args)
}

pub fn ball(args: BallArgs, ctx: &RunContext) -> Result<()> {
    let out = OutputDir::create(need(&args.output, "output")?)?;
    let panel = load(&need(&args.input, "input")?, need(&args.format, "format")?, need(&args.stride, "stride")?, need(&args.offset, "offset")?)?;
    let (balanced, _) = transform_panel(&panel, need(&args.method, "method")?, need(&args.tail_q, "tail-q")?)?;
    let lag = need(&args.lag, "lag")?;
    let q = need(&args.q, "q")?;
    let t = panel.n_rows();
    if t <= lag {
        return Err(Error::InsufficientData { needed: lag + 1, have: t }.into());
    }
    let pairs: Vec<PairIndex> =
        PairIndex::enumerate(panel.n_assets()).into_iter().filter(|p| lag > 0 || p.explanatory != p.target).collect();
    let rows = par::map(pairs.len(), |k| {
        let pair = pairs[k];
        let sign = if pair.negated { -1.0 } else { 1.0 };
        let x: Vec<f64> = balanced[pair.explanatory].values[..t - lag].iter().map(|v| sign * v).collect();
        let (xp, _) = split_tails(&x);
        let (yp, ym) = split_tails(&balanced[pair.target].values[lag..]);
        let pp = edm_at_quantile(&xp, &yp, q)?.sigma;
        let pm = edm_at_quantile(&xp, &ym, q)?.sigma;
        Ok::<_, Error>((pair, pp, pm, ball_coordinates_default(pp, pm)?))
    });
    let assets = panel.assets();
    let mut written = 0;
    out.write("ball.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record([
            "explanatory", "sign", "target", "sigma_pp", "sigma_pm", "lambda_hat", "theta_pp", "theta_pm", "x", "y", "z", "clamp_excess",
        ])?;
        for (k, row) in rows.into_iter().enumerate() {
            let pair = pairs[k];
            let (_, pp, pm, b) = match row {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("ball pair {}{} -> {} skipped: {e}", assets[pair.explanatory], if pair.negated { "-" } else { "+" }, assets[pair.target]);
                    continue;
                }
            };
            if b.clamp_violation() {
                log::warn!("ball pair {k}: arccos argument clamped by {}", b.clamp_excess);
            }
            let mut rec = vec![assets[pair.explanatory].clone(), sign_label(pair.negated).to_string(), assets[pair.target].clone()];
            rec.extend([pp, pm, 2.0 * (pp - pm), b.theta_pp, b.theta_pm, b.xyz[0], b.xyz[1], b.xyz[2], b.clamp_excess].map(|v| sig(v, BALL_DIGITS)));
            csv.write_record(&rec)?;
            written += 1;
        }
        csv.flush()?;
        Ok(())
    })?;
    if written == 0 {
        return Err(Error::EmptyResult.into());
    }
    ctx.record(&out, "ball", &args)
}

pub fn diagnostics(args: DiagnosticsArgs, ctx: &RunContext) -> Result<()> {
    let out = OutputDir::create(need(&args.output, "output")?)?;
    let panel = load(&need(&args.input, "input")?, need(&args.format, "format")?, need(&args.stride, "stride")?, need(&args.offset, "offset")?)?;
    let max_lag = need(&args.max_lag, "max-lag")?;
    let u = need(&args.u_quantile, "u-quantile")?;
    let (balanced, _) = transform_panel(&panel, need(&args.method, "method")?, need(&args.tail_q, "tail-q")?)?;
    let tolerance = need(&args.balance_tolerance, "balance-tolerance")?;

    let mut acf = csv::Writer::from_writer(Vec::new());
    acf.write_record(["asset", "lag", "acf", "acf_abs"])?;
    let mut ext = csv::Writer::from_writer(Vec::new());
    ext.write_record(["asset", "lag", "extremogram"])?;
    let mut bal = csv::Writer::from_writer(Vec::new());
    bal.write_record(["asset", "q", "r", "upper", "lower", "upper_r2", "lower_r2", "flagged"])?;
    for (i, asset) in panel.assets().iter().enumerate() {
        let col = panel.column(i);
        let abs: Vec<f64> = col.iter().map(|v| v.abs()).collect();
        match autocorrelation(col, max_lag).and_then(|a| Ok((a, autocorrelation(&abs, max_lag)?))) {
            Ok((a, b)) => {
                for (h, (a, b)) in a.iter().zip(&b).enumerate() {
                    acf.write_record([asset.clone(), (h + 1).to_string(), a.to_string(), b.to_string()])?;
                }
            }
            Err(e) => log::warn!("asset {asset}: autocorrelation skipped: {e}"),
        }
        match extremogram(col, max_lag, u) {
            Ok(v) => {
                for (h, v) in v.iter().enumerate() {
                    ext.write_record([asset.clone(), (h + 1).to_string(), v.to_string()])?;
                }
            }
            Err(e) => log::warn!("asset {asset}: extremogram skipped: {e}"),
        }
        let report = balance_check(&balanced[i].values, &BALANCE_GRID, tolerance)?;
        if report.flagged {
            log::warn!("asset {asset}: standardised tails outside the balance band");
        }
        for r in &report.rows {
            bal.write_record([
                asset.clone(),
                r.q.to_string(),
                r.r.to_string(),
                r.upper.to_string(),
                r.lower.to_string(),
                r.upper_r2.to_string(),
                r.lower_r2.to_string(),
                r.flagged.to_string(),
            ])?;
        }
    }
    for (name, w) in [("acf.csv", acf), ("extremogram.csv", ext), ("balance.csv", bal)] {
        let bytes = w.into_inner().map_err(|e| anyhow!("{e}"))?;
        out.write(name, |f| Ok(f.write_all(&bytes)?))?;
    }
    ctx.record(&out, "diagnostics", &args)
}

pub fn bootstrap(args: BootstrapArgs, ctx: &RunContext) -> Result<()> {
    let out = OutputDir::create(need(&args.output, "output")?)?;
    let panel = load(&need(&args.input, "input")?, need(&args.format, "format")?, need(&args.stride, "stride")?, need(&args.offset, "offset")?)?;
    let (train, test) = split_panel(&panel, parse_split(&need(&args.split, "split")?, &panel)?)?;
    let lag = need(&args.lag, "lag")?;
    let cfg = PipelineConfig {
        method: need(&args.method, "method")?,
        tail_q: need(&args.tail_q, "tail-q")?,
        eth: EthConfig {
            lag,
            alpha_star: need(&args.alpha_star, "alpha-star")?,
            permutation: permutation_config(
                need(&args.q, "q")?,
                args.q_minus,
                need(&args.estimator, "estimator")?,
                need(&args.permutations, "permutations")?,
                need(&args.smoothed, "smoothed")?,
            ),
        },
        strategy: strategy(lag, need(&args.entry_upper_q, "entry-upper-q")?, need(&args.entry_lower_q, "entry-lower-q")?, need(&args.cost, "cost")?)?,
    };
    let boot = BootstrapConfig { replicates: need(&args.replicates, "replicates")?, resample: need(&args.resample, "resample")? };
    let result = bootstrap_harness(&train, test.as_ref(), &cfg, &boot, need(&args.seed, "seed")?)?;

    out.write("bootstrap_replicates.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["replicate", "M", "H", "market_rejected", "terminal_pnl", "error"])?;
        for r in &result.replicates {
            let rec = match &r.outcome {
                Ok(o) => [
                    r.replicate.to_string(),
                    o.report.m.to_string(),
                    o.report.h.to_string(),
                    o.report.market_rejected.to_string(),
                    o.backtest.as_ref().map(|b| b.terminal_pnl().to_string()).unwrap_or_default(),
                    String::new(),
                ],
                Err(e) => [r.replicate.to_string(), String::new(), String::new(), String::new(), String::new(), e.clone()],
            };
            csv.write_record(&rec)?;
        }
        csv.flush()?;
        Ok(())
    })?;
    out.write("bootstrap_rejections.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["replicate", "explanatory", "sign", "target", "lambda_hat", "p_value"])?;
        for r in &result.replicates {
            let Ok(o) = &r.outcome else { continue };
            for p in o.report.rejected_pairs() {
                csv.write_record([
                    r.replicate.to_string(),
                    p.explanatory.clone(),
                    p.sign.to_string(),
                    p.target.clone(),
                    p.lambda_hat.to_string(),
                    p.p_value.to_string(),
                ])?;
            }
        }
        csv.flush()?;
        Ok(())
    })?;
    out.write("bootstrap_summary.csv", |w| {
        let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        csv.write_record(["explanatory", "sign", "target", "lambda_mean", "lambda_sd", "reject_rate", "replicates"])?;
        for s in &result.summary {
            csv.serialize(s)?;
        }
        csv.flush()?;
        Ok(())
    })?;
    out.json("windows.json", &windows(&train, test.as_ref()))?;
    ctx.record(&out, "bootstrap", &args)?;
    let failed = result.replicates.iter().filter(|r| r.outcome.is_err()).count();
    println!("replicates={} failed={failed}", result.replicates.len());
    Ok(())
}

pub fn gen_market(args: GenMarketArgs, ctx: &RunContext) -> Result<()> {
    let out = OutputDir::create(need(&args.output, "output")?)?;
    let market = PlantedMarket {
        assets: need(&args.assets, "assets")?,
        steps: need(&args.steps, "steps")?,
        driver: need(&args.driver, "driver")?,
        follower: need(&args.follower, "follower")?,
        lag: need(&args.lag, "lag")?,
        theta: need(&args.theta, "theta")?,
        phi: need(&args.phi, "phi")?,
        scale: need(&args.scale, "scale")?,
    };
    let panel = market.generate(need(&args.seed, "seed")?)?;
    out.write("market.csv", |w| Ok(panel.write_wide(w)?))?;
    ctx.record(&out, "gen-market", &args)?;
    println!("planted pair {}", market.planted_pair_id());
    Ok(())
}
