//! `beamsplit`: runs channel-estimation and federated-training experiments and
//! writes the results as CSV or JSON.

use std::path::PathBuf;
use std::process::ExitCode;

use beamsplit_core::experiment::{emit_results, run_experiment, ExperimentKind, ExperimentSpec, OutputFormat, Profile};
use clap::{Parser, ValueEnum};
use log::{error, info};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Nmse,
    Doa,
    Overhead,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    Paper,
}

/// Beam-split channel estimation and federated multi-task learning experiments.
///
/// Command-line flags override the corresponding fields of the config file.
/// Progress goes to stderr (set RUST_LOG to adjust); results go to --out or stdout.
#[derive(Debug, Parser)]
#[command(name = "beamsplit", version)]
struct Cli {
    /// TOML experiment description.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    experiment: Option<KindArg>,
    /// Root seed of every random stream.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte-Carlo trials per sweep point.
    #[arg(long)]
    trials: Option<usize>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Base scenario the config's overrides apply to.
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
}

fn resolve(cli: &Cli) -> beamsplit_core::Result<ExperimentSpec> {
    let mut spec = match &cli.config {
        Some(path) => ExperimentSpec::load(path)?,
        None => ExperimentSpec::default(),
    };
    if let Some(k) = cli.experiment {
        spec.experiment = match k {
            KindArg::Nmse => ExperimentKind::Nmse,
            KindArg::Doa => ExperimentKind::Doa,
            KindArg::Overhead => ExperimentKind::Overhead,
        };
    }
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    if let Some(t) = cli.trials {
        spec.trials = t;
    }
    if let Some(out) = &cli.out {
        spec.output_path = Some(out.clone());
    }
    if let Some(f) = cli.format {
        spec.format = match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Json => OutputFormat::Json,
        };
    }
    if let Some(p) = cli.profile {
        spec.profile = match p {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Paper => Profile::Paper,
        };
    }
    spec.validate()?;
    Ok(spec)
}

fn run(cli: &Cli) -> beamsplit_core::Result<()> {
    let spec = resolve(cli)?;
    info!("running {} experiment, {} trials, seed {}", spec.experiment, spec.trials, spec.seed);
    let table = run_experiment(&spec)?;
    let manifest = spec.manifest()?;
    match &spec.output_path {
        Some(path) => {
            emit_results(&table, &manifest, path, spec.format)?;
            info!("wrote {} rows to {}", table.rows.len(), path.display());
        }
        None => {
            use std::io::Write;
            let bytes = match spec.format {
                OutputFormat::Csv => table.to_csv()?,
                OutputFormat::Json => table.to_json(&manifest)?,
            };
            std::io::stdout().write_all(&bytes)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
