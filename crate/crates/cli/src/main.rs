//! Experiment driver for token-based coordinate descent over
//! feature-partitioned data.

mod analyze;
mod config;
mod presets;
mod runner;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;
use runner::CliError;

#[derive(Parser)]
#[command(
    name = "mtcd",
    about = "Token-based Markov-chain coordinate descent simulator for vertical federated learning",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment over all seeds and write CSV + metadata.
    Run(RunArgs),
    /// Generate a synthetic ridge dataset as an SVMLight text file.
    GenData(GenDataArgs),
    /// Print walk analytics (connectivity, spectral gap, mixing bounds) for
    /// the configured graph.
    AnalyzeGraph(AnalyzeArgs),
    /// Run a parameter grid (step sizes, hops, tokens, cost ratios) and emit
    /// a long-format CSV with cost-to-reach-gap columns.
    Sweep(RunArgs),
}

#[derive(Args)]
struct ConfigSource {
    /// Path to a TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Name of a built-in preset (try `--preset help`).
    #[arg(long)]
    preset: Option<String>,
}

impl ConfigSource {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let text = match (&self.config, &self.preset) {
            (Some(path), None) => fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
            (None, Some(name)) => {
                if name == "help" {
                    return Err(CliError::Config(format!(
                        "available presets: {}",
                        presets::names().join(", ")
                    )));
                }
                presets::get(name)
                    .ok_or_else(|| {
                        CliError::Config(format!(
                            "unknown preset '{name}'; available: {}",
                            presets::names().join(", ")
                        ))
                    })?
                    .to_string()
            }
            _ => {
                return Err(CliError::Config(
                    "pass exactly one of --config or --preset".into(),
                ))
            }
        };
        ExperimentConfig::from_toml(&text).map_err(|e| CliError::Config(e.0))
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Output CSV path (overrides `[run].output`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seed list (overrides `[run].seeds`).
    #[arg(long)]
    seeds: Option<String>,
    /// Worker threads (overrides `[run].threads`; 0 = default pool).
    #[arg(long)]
    threads: Option<usize>,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = self.source.load()?;
        if let Some(seeds) = &self.seeds {
            let parsed: Result<Vec<u64>, _> = seeds
                .split(',')
                .map(|s| s.trim().parse::<u64>())
                .collect();
            cfg.run.seeds = parsed.map_err(|e| CliError::Config(format!("--seeds: {e}")))?;
            if cfg.run.seeds.is_empty() {
                return Err(CliError::Config("--seeds: empty list".into()));
            }
        }
        if let Some(threads) = self.threads {
            cfg.run.threads = threads;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of samples.
    #[arg(long)]
    n: usize,
    /// Number of features.
    #[arg(long)]
    d: usize,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output SVMLight path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Optional analytics CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional edge-list export path (one "i j" pair per line).
    #[arg(long)]
    edges_out: Option<PathBuf>,
    /// Accuracy for the exact mixing time (default: pi_min / 2).
    #[arg(long)]
    eps: Option<f64>,
}

fn gen_data(args: &GenDataArgs) -> Result<(), CliError> {
    let ds = mtcd_core::data::generate_synthetic_ridge(args.n, args.d, args.seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut file = fs::File::create(&args.out)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", args.out.display())))?;
    mtcd_core::data::write_svmlight(&ds, &mut file)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    println!(
        "wrote {} ({} samples x {} features, seed {})",
        args.out.display(),
        args.n,
        args.d,
        args.seed
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.load()?;
            runner::cmd_run(cfg, args.out)
        }
        Command::Sweep(args) => {
            let cfg = args.load()?;
            runner::cmd_sweep(cfg, args.out)
        }
        Command::GenData(args) => gen_data(&args),
        Command::AnalyzeGraph(args) => {
            let cfg = args.source.load()?;
            analyze::cmd_analyze_graph(cfg, args.out, args.edges_out, args.eps)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
