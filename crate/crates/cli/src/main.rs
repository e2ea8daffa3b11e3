use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use log::{info, warn};
use odcl_cli::config::ExperimentConfig;
use odcl_cli::points::{cluster_points, read_points, PointAlgo};
use odcl_cli::runner::{build_dataset, resummarize, run_experiment, REPORT_FILE, SUMMARY_FILE};
use odcl_cli::CliError;

#[derive(Parser)]
#[command(name = "odcl", version, about = "One-shot distributed clustered learning experiments")]
struct Cli {
    /// Replace the config's seed list with this single seed.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (n, seed, method) cell and write report.csv and summary.json.
    Run { config: PathBuf },
    /// Generate the dataset of the first sweep value and seed and export it.
    Gen {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Samples per user (default: first sweep value).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Cluster the rows of a CSV point file and print the result as JSON.
    Cluster {
        points: PathBuf,
        #[arg(long, value_enum)]
        algo: PointAlgo,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the JSON here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild summary.json from an existing report.csv.
    Report { dir: PathBuf },
}

fn load(path: &Path, seed_override: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = seed_override {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Run { config } => {
            let cfg = load(&config, cli.seed_override)?;
            info!("running {} methods x {} sample sizes x {} seeds", cfg.methods.len(), cfg.sweep.len(), cfg.seeds.len());
            let outcome = run_experiment(&cfg)?;
            info!("wrote {} and {} in {}", REPORT_FILE, SUMMARY_FILE, cfg.output_dir.display());
            if outcome.failures.is_empty() {
                Ok(0)
            } else {
                warn!("{} cells failed", outcome.failures.len());
                Ok(1)
            }
        }
        Command::Gen { config, out, n } => {
            let cfg = load(&config, cli.seed_override)?;
            let n = n.unwrap_or(cfg.sweep[0]);
            let data = build_dataset(&cfg.data, n, cfg.seeds[0]).map_err(CliError::from)?;
            odcl::data::export_dataset(&data, &out).map_err(CliError::from)?;
            info!("exported {} users to {}", data.num_users(), out.display());
            Ok(0)
        }
        Command::Cluster { points, algo, lambda, k, seed, out } => {
            let pts = read_points(&points)?;
            let seed = cli.seed_override.unwrap_or(seed);
            let result = cluster_points(&pts, algo, lambda, k, seed)?;
            let json = result.to_json().map_err(CliError::from)?;
            match out {
                Some(path) => std::fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?,
                None => println!("{json}"),
            }
            Ok(0)
        }
        Command::Report { dir } => {
            let report = resummarize(&dir)?;
            println!("{}", report.summary_json().map_err(CliError::from)?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<CliError>().map_or(1, CliError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
