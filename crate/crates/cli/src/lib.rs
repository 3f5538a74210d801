//! Command-line front end: argument layering, output directories and error
//! reporting around the `taildep` library.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

mod commands;
pub mod output;
pub mod settings;

use settings::*;

#[derive(Parser, Debug)]
#[command(name = "taildep", version, about = "Directional tail dependence and tail-efficiency tests for return panels")]
pub struct Cli {
    /// TOML file with one table per subcommand; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "TAILDEP_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Standardise every asset to unit-scale Pareto(2) tails.
    Transform(TransformArgs),
    /// Test every lagged pair and apply the multiple-testing correction.
    Eth(EthArgs),
    /// Run a copula power or size study.
    Simulate(SimulateArgs),
    /// Trade the rejected pairs of an ETH report over the test window.
    Backtest(BacktestArgs),
    /// Extremal-ball coordinates of every lagged pair.
    Ball(BallArgs),
    /// Autocorrelation, extremogram and tail-balance tables.
    Diagnostics(DiagnosticsArgs),
    /// Bootstrap the ETH pipeline and its backtest.
    Bootstrap(BootstrapArgs),
    /// Write a synthetic market with one planted lead-lag tail dependence.
    GenMarket(GenMarketArgs),
}

pub fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let threads = match cli.threads {
        Some(0) => bail!("--threads must be at least 1"),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let ctx = commands::RunContext { threads, config_file: cli.config.clone() };
    let command = cli.command;
    with_threads(threads, move || match command {
        Command::Transform(a) => commands::transform(a.layered(file.transform.as_ref()), &ctx),
        Command::Eth(a) => commands::eth(a.layered(file.eth.as_ref()), &ctx),
        Command::Simulate(a) => commands::simulate(a.layered(file.simulate.as_ref()), &ctx),
        Command::Backtest(a) => commands::backtest(a.layered(file.backtest.as_ref()), &ctx),
        Command::Ball(a) => commands::ball(a.layered(file.ball.as_ref()), &ctx),
        Command::Diagnostics(a) => commands::diagnostics(a.layered(file.diagnostics.as_ref()), &ctx),
        Command::Bootstrap(a) => commands::bootstrap(a.layered(file.bootstrap.as_ref()), &ctx),
        Command::GenMarket(a) => commands::gen_market(a.layered(file.gen_market.as_ref()), &ctx),
    })
}

#[cfg(feature = "parallel")]
fn with_threads<F: FnOnce() -> Result<()> + Send>(threads: usize, f: F) -> Result<()> {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build()?.install(f)
}

#[cfg(not(feature = "parallel"))]
fn with_threads<F: FnOnce() -> Result<()> + Send>(threads: usize, f: F) -> Result<()> {
    if threads > 1 {
        log::info!("built without the `parallel` feature; running on one thread");
    }
    f()
}

/// Machine-readable category of an error chain.
pub fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<taildep::Error>() {
            return e.kind();
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
        if cause.is::<toml::de::Error>() {
            return "config";
        }
        if cause.is::<serde_json::Error>() {
            return "json";
        }
    }
    "invalid_argument"
}

fn report_error(message: String, kind: &str) {
    let body = serde_json::json!({ "error": message, "kind": kind });
    eprintln!("{body}");
}

pub fn main_entry() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_error(e.to_string().trim_end().to_string(), "usage");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(format!("{e:#}"), error_kind(&e));
            ExitCode::FAILURE
        }
    }
}
