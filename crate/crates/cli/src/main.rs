//! `frontsync`: runs one experiment config and writes `<name>.csv`,
//! `<name>.meta.json` and a gnuplot script `<name>.gp`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error,
//! 3 optimizer convergence warning (results are still written).

mod config;
mod experiments;
mod plot;
mod table;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use frontsync::exec::Parallelism;
use serde::Serialize;
use sha2::{Digest, Sha256};

use config::ExperimentConfig;
use experiments::RunRecord;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] frontsync::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("plot error: {0}")]
    Plot(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "frontsync",
    version,
    about = "Fronthaul noise-shaping experiments"
)]
struct Args {
    /// Experiment config (TOML).
    #[arg(required_unless_present = "plot")]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory; overrides `output_path`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long)]
    threads: Option<usize>,
    /// Only write a gnuplot script for an existing result table.
    #[arg(long, value_name = "CSV", conflicts_with = "config")]
    plot: Option<PathBuf>,
}

#[derive(Serialize)]
struct Meta<'a> {
    name: &'a str,
    kind: config::Kind,
    provenance: String,
    config_sha256: String,
    seed: u64,
    trials: Option<usize>,
    config: &'a ExperimentConfig,
    columns: &'a [&'static str],
    /// One entry per row block, in row order.
    runs: &'a [RunRecord],
    warnings: &'a [String],
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("frontsync: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(args: &Args) -> Result<u8, CliError> {
    if let Some(csv) = &args.plot {
        let script = plot::emit_plot_script(csv)?;
        println!("{}", script.display());
        return Ok(0);
    }
    let path = args.config.as_deref().expect("required by clap");
    let (mut cfg, text) = ExperimentConfig::load(path)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(t) = args.trials {
        cfg.trials = Some(t);
    }
    if let Some(o) = &args.out {
        cfg.output_path = o.clone();
    }
    let parallelism = threads(args.threads)?;

    let output = experiments::run(&cfg, parallelism)?;
    std::fs::create_dir_all(&cfg.output_path)?;
    let csv_path = cfg.output_path.join(format!("{}.csv", cfg.name));
    output.table.write_csv(std::fs::File::create(&csv_path)?)?;

    let digest = hex(&Sha256::digest(text.as_bytes()));
    let meta = Meta {
        name: &cfg.name,
        kind: cfg.kind,
        provenance: format!(
            "frontsync {} config-sha256:{}",
            env!("CARGO_PKG_VERSION"),
            &digest[..12]
        ),
        config_sha256: digest.clone(),
        seed: cfg.seed,
        trials: cfg.trials,
        config: &cfg,
        columns: &output.table.columns,
        runs: &output.runs,
        warnings: &output.warnings,
    };
    let meta_path = cfg.output_path.join(format!("{}.meta.json", cfg.name));
    let json = serde_json::to_string_pretty(&meta).map_err(std::io::Error::other)?;
    std::fs::write(&meta_path, json + "\n")?;
    let script = plot::emit_plot_script(&csv_path)?;

    report(&csv_path, &meta_path, &script);
    for w in &output.warnings {
        eprintln!("warning: {w}");
    }
    Ok(if output.warnings.is_empty() { 0 } else { 3 })
}

fn report(csv: &Path, meta: &Path, script: &Path) {
    for p in [csv, meta, script] {
        println!("{}", p.display());
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(feature = "parallel")]
fn threads(n: Option<usize>) -> Result<Parallelism, CliError> {
    match n {
        Some(0) => Err(CliError::Config("--threads must be at least 1".into())),
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Config(e.to_string()))?;
            Ok(if n == 1 {
                Parallelism::Sequential
            } else {
                Parallelism::Auto
            })
        }
        None => Ok(Parallelism::Auto),
    }
}

#[cfg(not(feature = "parallel"))]
fn threads(n: Option<usize>) -> Result<Parallelism, CliError> {
    match n {
        Some(0) => Err(CliError::Config("--threads must be at least 1".into())),
        _ => Ok(Parallelism::Sequential),
    }
}
