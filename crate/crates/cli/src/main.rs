//! Command-line front end: one experiment mode per invocation, JSON configs
//! in, trace CSV plus summary JSON out.

mod config;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ExperimentConfig, Mode};
use run::{resolve_out_dir, run, RunError};

#[derive(Parser)]
#[command(name = "zvsim", version, about = "Adaptive importance sampling experiments for Markov reward models")]
struct Cli {
    /// Cap the worker thread count (results are identical for any value).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Override the seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (default: config `output_path`, then `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Path to the experiment config JSON.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Exact value function by linear algebra.
    Solve(ConfigArg),
    /// Simulate replications under a tilted kernel, dumping one row per
    /// replication.
    Simulate(ConfigArg),
    /// Run the adaptive tilt-refit iteration.
    Adapt(ConfigArg),
    /// Adaptive Perron-Frobenius eigenvalue estimation.
    Eigen(ConfigArg),
    /// Halving-chain recurrence experiments.
    Counterexample(ConfigArg),
    /// Structural constants of a model and tilting box.
    Constants(ConfigArg),
    /// Run every config listed in a sweep file (JSON array of paths).
    Sweep {
        #[arg(long)]
        file: PathBuf,
    },
}

fn load_config(path: &Path) -> Result<ExperimentConfig, RunError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RunError::Config(format!("cannot read `{}`: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| RunError::Config(format!("config `{}`: {e}", path.display())))
}

fn execute_one(
    path: &Path,
    expected_mode: Mode,
    seed_override: Option<u64>,
    out: Option<&Path>,
    default_out: &str,
) -> Result<(), RunError> {
    let mut config = load_config(path)?;
    if config.mode != expected_mode {
        return Err(RunError::Config(format!(
            "config `{}` has mode `{}`, expected `{}`",
            path.display(),
            config.mode.as_str(),
            expected_mode.as_str()
        )));
    }
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    let out_dir = resolve_out_dir(out, &config, default_out);
    let summary = run(&config, &out_dir)?;
    println!(
        "{} seed={} out={} wall_ms={}",
        config.mode.as_str(),
        config.seed,
        out_dir.display(),
        summary["wall_ms"]
    );
    Ok(())
}

fn execute(cli: &Cli) -> Result<(), RunError> {
    match &cli.command {
        Command::Solve(a) => execute_one(&a.config, Mode::Solve, cli.seed, cli.out.as_deref(), "out"),
        Command::Simulate(a) => {
            execute_one(&a.config, Mode::Simulate, cli.seed, cli.out.as_deref(), "out")
        }
        Command::Adapt(a) => execute_one(&a.config, Mode::Adapt, cli.seed, cli.out.as_deref(), "out"),
        Command::Eigen(a) => execute_one(&a.config, Mode::Eigen, cli.seed, cli.out.as_deref(), "out"),
        Command::Counterexample(a) => execute_one(
            &a.config,
            Mode::Counterexample,
            cli.seed,
            cli.out.as_deref(),
            "out",
        ),
        Command::Constants(a) => {
            execute_one(&a.config, Mode::Constants, cli.seed, cli.out.as_deref(), "out")
        }
        Command::Sweep { file } => {
            let text = std::fs::read_to_string(file)
                .map_err(|e| RunError::Config(format!("cannot read `{}`: {e}", file.display())))?;
            let paths: Vec<String> = serde_json::from_str(&text).map_err(|e| {
                RunError::Config(format!("sweep file `{}`: {e}", file.display()))
            })?;
            for (i, path) in paths.iter().enumerate() {
                let mut config = load_config(Path::new(path))?;
                if let Some(seed) = cli.seed {
                    config.seed = seed;
                }
                let base = cli
                    .out
                    .clone()
                    .unwrap_or_else(|| PathBuf::from("out"))
                    .join(format!("sweep_{i}"));
                let out_dir = match &config.output_path {
                    Some(p) => PathBuf::from(p),
                    None => base,
                };
                let summary = run(&config, &out_dir)?;
                println!(
                    "[{i}] {} seed={} out={} wall_ms={}",
                    config.mode.as_str(),
                    config.seed,
                    out_dir.display(),
                    summary["wall_ms"]
                );
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // Results do not depend on the pool size; this only caps parallelism.
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: cannot configure {threads} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
