//! Experiment runner: loads an experiment file (scenario plus study design),
//! executes the seeded Monte-Carlo protocol and writes CSV artifacts.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 on numerical or
//! I/O failures during the run.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use isac_core::experiments::{run_experiment, ExperimentDoc};
use isac_core::CoreError;

#[derive(Parser)]
#[command(
    name = "isac-crb",
    about = "Bistatic ISAC simulation runner: target-parameter CRB sweeps and uplink SE studies",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment file (TOML or JSON) and write its CSV outputs.
    Run {
        /// Experiment file: `[scenario]` or `scenario_path` plus `[experiment]`.
        experiment: PathBuf,
        /// Overrides the scenario's RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory or file stem; defaults to the experiment's
        /// `output` field, then the current directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            experiment,
            seed,
            out,
            threads,
        } => match run(experiment, seed, out, threads) {
            Ok(()) => ExitCode::SUCCESS,
            Err(RunError::Load(e)) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
            Err(RunError::Execute(e)) => {
                eprintln!("error: {e}");
                match e {
                    CoreError::Config(_) => ExitCode::from(2),
                    _ => ExitCode::from(3),
                }
            }
        },
    }
}

/// Distinguishes setup problems (exit 2) from run-time failures (exit 3).
enum RunError {
    Load(CoreError),
    Execute(CoreError),
}

fn run(
    experiment: PathBuf,
    seed: Option<u64>,
    out: Option<PathBuf>,
    threads: Option<usize>,
) -> Result<(), RunError> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| RunError::Load(CoreError::Config(format!("thread pool: {e}"))))?;
    }
    let mut doc = ExperimentDoc::load(&experiment).map_err(RunError::Load)?;
    if let Some(s) = seed {
        doc.scenario.rng_seed = s;
    }

    let artifacts = run_experiment(&doc).map_err(RunError::Execute)?;

    // resolve the output location: --out beats the experiment's own field;
    // a trailing separator or an existing directory keeps artifact names
    let target = out
        .or_else(|| doc.experiment.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let as_dir = target.is_dir() || target.as_os_str().to_string_lossy().ends_with('/');
    if as_dir {
        std::fs::create_dir_all(&target).map_err(|e| RunError::Execute(e.into()))?;
    } else if let Some(parent) = target.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| RunError::Execute(e.into()))?;
        }
    }
    for artifact in &artifacts {
        let path = if as_dir {
            target.join(&artifact.name)
        } else if artifacts.len() == 1 {
            target.with_extension("csv")
        } else {
            // multiple artifacts under one stem: append the artifact suffix
            let stem = target.to_string_lossy().to_string();
            let suffix = artifact.name.replace("se_cdf", "");
            PathBuf::from(format!("{stem}{suffix}"))
        };
        std::fs::write(&path, &artifact.contents).map_err(|e| RunError::Execute(e.into()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
