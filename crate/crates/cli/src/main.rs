use std::path::PathBuf;
use std::process::ExitCode;

use capsize_tst::{run_experiment, ExperimentConfig, RunError};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "capsize-tst", version, about = "Capsize risk experiments for stochastic roll models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Worker threads; results do not depend on this.
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(config: PathBuf, workers: Option<usize>, out: Option<PathBuf>) -> Result<(), RunError> {
    let text = std::fs::read_to_string(&config).map_err(|source| RunError::Io { path: config.display().to_string(), source })?;
    let cfg = ExperimentConfig::from_json(&text)?;
    if let Some(n) = workers {
        if n == 0 {
            return Err(RunError::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| RunError::Config(format!("--workers: {e}")))?;
    }
    let dir = out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("capsize-out"));
    let manifest = run_experiment(&cfg, &dir)?;
    println!(
        "{}: {} artifacts in {} ({:.2}s)",
        cfg.pipeline.name(),
        manifest.artifacts.len(),
        dir.display(),
        manifest.wall_time_s
    );
    Ok(())
}

fn main() -> ExitCode {
    let Command::Run { config, workers, out } = Cli::parse().command;
    match run(config, workers, out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("capsize-tst: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
