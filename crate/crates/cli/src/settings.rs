//! Per-command settings. Every field is optional on the command line and in
//! the config file; `layered` fills gaps from the file, then from defaults.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};
use taildep::angular::Estimator;
use taildep::margins::TransformMethod;
use taildep::timeseries::PanelFormat;

macro_rules! settings {
    ($(#[$m:meta])* $name:ident { $( $(#[$fm:meta])* $field:ident : $ty:ty = $default:expr ),* $(,)? }) => {
        $(#[$m])*
        #[derive(clap::Args, Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
        #[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
        pub struct $name {
            $( $(#[$fm])* #[arg(long)] pub $field: Option<$ty>, )*
        }

        impl $name {
            pub fn layered(self, file: Option<&Self>) -> Self {
                let file = file.cloned().unwrap_or_default();
                Self { $( $field: self.$field.or(file.$field).or($default), )* }
            }
        }
    };
}

settings! {
    TransformArgs {
        /// Return panel CSV (long or wide).
        input: PathBuf = None,
        format: PanelFormat = Some(PanelFormat::Auto),
        /// Output directory.
        output: PathBuf = None,
        /// `tail-index` or `rank`.
        method: TransformMethod = Some(TransformMethod::TailIndex),
        /// Tail fraction used by the Hill fit.
        tail_q: f64 = Some(0.01),
        stride: usize = Some(1),
        offset: usize = Some(0),
    }
}

settings! {
    EthArgs {
        input: PathBuf = None,
        format: PanelFormat = Some(PanelFormat::Auto),
        output: PathBuf = None,
        /// Keep every `stride`-th row.
        stride: usize = Some(10),
        offset: usize = Some(0),
        /// `auto`, `none`, `fraction:F`, `months:M`, or the first test timestamp.
        split: String = Some("auto".into()),
        method: TransformMethod = Some(TransformMethod::TailIndex),
        tail_q: f64 = Some(0.01),
        lag: usize = Some(1),
        /// Radius quantile of the estimators.
        q: f64 = Some(0.99),
        /// Radius quantile of the `Y-` side of the second estimator; defaults to `q`.
        q_minus: f64 = None,
        /// `one` or `two`.
        estimator: Estimator = Some(Estimator::Two),
        permutations: usize = Some(10_000),
        alpha_star: f64 = Some(0.01),
        /// Use (1 + count) / (1 + P) p-values.
        #[arg(num_args = 0..=1, default_missing_value = "true")]
        smoothed: bool = Some(false),
        seed: u64 = Some(0),
    }
}

settings! {
    BacktestArgs {
        input: PathBuf = None,
        format: PanelFormat = Some(PanelFormat::Auto),
        output: PathBuf = None,
        /// `eth_report.json` written by `taildep eth`.
        report: PathBuf = None,
        stride: usize = Some(10),
        offset: usize = Some(0),
        split: String = Some("auto".into()),
        lag: usize = Some(1),
        entry_upper_q: f64 = Some(0.995),
        entry_lower_q: f64 = Some(0.005),
        /// Proportional cost per trade.
        cost: f64 = Some(0.0),
    }
}

settings! {
    SimulateArgs {
        output: PathBuf = None,
        /// TOML file with `[[cells]]` tables; overrides `preset`.
        grid: PathBuf = None,
        /// `power` (alternative, 16 cells) or `size` (null, 2 cells).
        preset: String = Some("power".into()),
        /// Shorthand for K = 50.
        #[arg(num_args = 0..=1, default_missing_value = "true")]
        smoke: bool = Some(false),
        /// Replications per cell.
        #[arg(short = 'k')]
        k: usize = None,
        permutations: usize = Some(1000),
        /// Mixing probability of the `power` preset.
        phi: f64 = Some(0.7),
        seed: u64 = Some(0),
        /// Record per-test wall-clock seconds (breaks byte-identical reruns).
        #[arg(num_args = 0..=1, default_missing_value = "true")]
        timing: bool = Some(false),
    }
}

settings! {
    BallArgs {
        input: PathBuf = None,
        format: PanelFormat = Some(PanelFormat::Auto),
        output: PathBuf = None,
        stride: usize = Some(10),
        offset: usize = Some(0),
        /// Lag 0 compares distinct assets at the same time.
        lag: usize = Some(1),
        q: f64 = Some(0.99),
        method: TransformMethod = Some(TransformMethod::TailIndex),
        tail_q: f64 = Some(0.01),
    }
}

settings! {
    DiagnosticsArgs {
        input: PathBuf = None,
        format: PanelFormat = Some(PanelFormat::Auto),
        output: PathBuf = None,
        stride: usize = Some(10),
        offset: usize = Some(0),
        max_lag: usize = Some(20),
        /// Quantile of |x| defining an extreme for the extremogram.
        u_quantile: f64 = Some(0.99),
        method: TransformMethod = Some(TransformMethod::TailIndex),
        tail_q: f64 = Some(0.01),
        /// Allowed deviation of the balance statistics from 1.
        balance_tolerance: f64 = Some(0.2),
    }
}

settings! {
    BootstrapArgs {
        input: PathBuf = None,
        format: PanelFormat = Some(PanelFormat::Auto),
        output: PathBuf = None,
        stride: usize = Some(10),
        offset: usize = Some(0),
        split: String = Some("auto".into()),
        method: TransformMethod = Some(TransformMethod::TailIndex),
        tail_q: f64 = Some(0.01),
        lag: usize = Some(1),
        q: f64 = Some(0.99),
        q_minus: f64 = None,
        estimator: Estimator = Some(Estimator::Two),
        permutations: usize = Some(10_000),
        alpha_star: f64 = Some(0.01),
        #[arg(num_args = 0..=1, default_missing_value = "true")]
        smoothed: bool = Some(false),
        entry_upper_q: f64 = Some(0.995),
        entry_lower_q: f64 = Some(0.005),
        cost: f64 = Some(0.0),
        replicates: usize = Some(100),
        /// `false` reruns the plain pipeline in every replicate.
        #[arg(num_args = 0..=1, default_missing_value = "true")]
        resample: bool = Some(true),
        seed: u64 = Some(0),
    }
}

settings! {
    GenMarketArgs {
        output: PathBuf = None,
        assets: usize = Some(10),
        steps: usize = Some(20_000),
        driver: usize = Some(0),
        follower: usize = Some(1),
        lag: usize = Some(1),
        theta: f64 = Some(2.0),
        phi: f64 = Some(0.9),
        scale: f64 = Some(0.001),
        seed: u64 = Some(0),
    }
}

/// Optional TOML file with one table per subcommand.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConfigFile {
    pub transform: Option<TransformArgs>,
    pub eth: Option<EthArgs>,
    pub backtest: Option<BacktestArgs>,
    pub simulate: Option<SimulateArgs>,
    pub ball: Option<BallArgs>,
    pub diagnostics: Option<DiagnosticsArgs>,
    pub bootstrap: Option<BootstrapArgs>,
    pub gen_market: Option<GenMarketArgs>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Value of a setting after layering; only settings without a default can be absent.
pub fn need<T: Clone>(value: &Option<T>, flag: &str) -> Result<T> {
    value.clone().ok_or_else(|| anyhow!("missing required setting --{flag}"))
}
