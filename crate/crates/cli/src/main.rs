// SPDX-License-Identifier: MIT OR Apache-2.0

//! `klcp`: sequential KL change-point fits, the power study, and spiking
//! network fits from the command line.
//!
//! Exit codes: 0 on success, 2 for input or configuration errors, 3 for
//! numeric failures.

mod config;
mod fit;
mod input;
mod power;
mod spikenet;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Settings;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<klcp_core::Error> for CliError {
    fn from(e: klcp_core::Error) -> Self {
        if e.is_input_error() {
            CliError::Input(e.to_string())
        } else {
            CliError::Numeric(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "klcp", version, about = "Sequential Bayesian change-point detection with a KL divergence test")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Type-1 error probability of each test.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Posterior draws and null replicates per test.
    #[arg(long = "mc-draws", global = true)]
    pub mc_draws: Option<usize>,
    /// Seed of every random stream (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Settings file of `key = value` lines; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a series of batches and report detected change-points.
    Fit(fit::FitArgs),
    /// Run the Beta-Bernoulli sample-size simulation study.
    PowerSim(power::PowerArgs),
    /// Fit spiking-network trials and summarise functional connections.
    Spikenet(spikenet::SpikeArgs),
}

/// Settings shared by every command, after merging flags and file.
#[derive(Debug, Clone)]
pub struct Common {
    pub settings: Settings,
    pub alpha: Option<f64>,
    pub mc_draws: Option<usize>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

impl Common {
    fn new(g: &GlobalArgs) -> Result<Self, CliError> {
        let settings = Settings::load(g.config.as_deref())?;
        Ok(Common {
            alpha: settings.get("alpha", g.alpha)?,
            mc_draws: settings.get("mc-draws", g.mc_draws)?,
            seed: settings.get("seed", g.seed)?,
            out: settings.get_or("out", g.out.clone(), PathBuf::from("klcp-out"))?,
            settings,
        })
    }

    pub fn prepare_out(&self) -> Result<&Path, CliError> {
        std::fs::create_dir_all(&self.out).map_err(|e| CliError::Input(format!("cannot create {}: {e}", self.out.display())))?;
        Ok(&self.out)
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Input(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Numeric(format!("cannot serialise {}: {e}", path.display())))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

pub fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = Common::new(&cli.global).and_then(|common| match &cli.command {
        Command::Fit(a) => fit::run(&common, a),
        Command::PowerSim(a) => power::run(&common, a),
        Command::Spikenet(a) => spikenet::run(&common, a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("klcp: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
