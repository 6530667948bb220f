//! Command-line pipeline over `accomp-core`: synthetic data preparation,
//! training of both models, generation, evaluation and the representation
//! study.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod workspace;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use accomp_core::flow::ConditioningMode;
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::workspace::Layout;

#[derive(Debug, Parser)]
#[command(name = "accomp", version, about = "Melody-conditioned accompaniment generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Shared {
    /// TOML run configuration; every key is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic paired corpus and write its manifest.
    PrepareData {
        #[command(flatten)]
        shared: Shared,
    },
    /// Train the VQ-VAE on the melody clips of the manifest.
    TrainVqvae {
        #[command(flatten)]
        shared: Shared,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Train the flow-matching generator on the manifest pairs.
    TrainFm {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        conditioning_mode: Option<ConditioningMode>,
    },
    /// Generate an accompaniment for a vocal WAV.
    Generate {
        #[command(flatten)]
        shared: Shared,
        input: PathBuf,
        output: PathBuf,
        /// Euler steps [default: 50]
        #[arg(long)]
        steps: Option<usize>,
        /// Classifier-free guidance scale [default: 3.0]
        #[arg(long)]
        cfg_scale: Option<f64>,
        #[arg(long)]
        conditioning_mode: Option<ConditioningMode>,
    },
    /// Fréchet distance between generated and reference clips.
    Evaluate {
        #[command(flatten)]
        shared: Shared,
        /// Defaults to `<output-dir>/generated`.
        #[arg(long)]
        generated: Option<PathBuf>,
        /// Defaults to the prepared accompaniment clips.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Defaults to `<output-dir>/reports/evaluation.json`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// PCA projections and silhouettes of four representations.
    Visualize {
        #[command(flatten)]
        shared: Shared,
    },
}

/// Process exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Success = 0,
    Usage = 1,
    Data = 2,
    Numerical = 3,
}

impl From<Status> for ExitCode {
    fn from(s: Status) -> Self {
        ExitCode::from(s as u8)
    }
}

/// Numerical failures anywhere in the cause chain exit with 3, everything
/// else with 2.
pub fn classify(err: &anyhow::Error) -> Status {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<accomp_core::Error>())
        .any(|e| e.is_numerical());
    if numerical {
        Status::Numerical
    } else {
        Status::Data
    }
}

fn resolve(shared: &Shared, mode: Option<ConditioningMode>) -> anyhow::Result<RunConfig> {
    let mut config = match &shared.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = shared.seed {
        config.seed = seed;
    }
    if let Some(dir) = &shared.output_dir {
        config.output_dir = dir.clone();
    }
    if let Some(mode) = mode {
        config.conditioning_mode = mode;
    }
    config.finalize()
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("summary serialises"));
}

pub fn execute(command: Command) -> anyhow::Result<()> {
    let shared = match &command {
        Command::PrepareData { shared }
        | Command::TrainVqvae { shared, .. }
        | Command::TrainFm { shared, .. }
        | Command::Generate { shared, .. }
        | Command::Evaluate { shared, .. }
        | Command::Visualize { shared } => shared,
    };
    let mode = match &command {
        Command::TrainFm { conditioning_mode, .. } | Command::Generate { conditioning_mode, .. } => *conditioning_mode,
        _ => None,
    };
    let mut config = resolve(shared, mode)?;
    let _lock = Layout::new(&config.output_dir).lock()?;
    match &command {
        Command::PrepareData { .. } => print_json(&commands::prepare_data(&config)?),
        Command::TrainVqvae { resume, .. } => print_json(&commands::train_vqvae(&config, *resume)?),
        Command::TrainFm { resume, .. } => print_json(&commands::train_fm(&config, *resume)?),
        Command::Generate {
            input,
            output,
            steps,
            cfg_scale,
            ..
        } => {
            if let Some(s) = steps {
                config.sampler.steps = *s;
            }
            if let Some(s) = cfg_scale {
                config.sampler.cfg_scale = *s;
            }
            config.sampler.validate()?;
            print_json(&commands::generate(&config, input, output)?)
        }
        Command::Evaluate {
            generated,
            reference,
            report,
            ..
        } => {
            let (r, path) = commands::evaluate(&config, generated.as_deref(), reference.as_deref(), report.as_deref())?;
            print_json(&serde_json::json!({ "report": path, "fad": r.fad, "embedder": r.embedder }));
        }
        Command::Visualize { .. } => {
            let (doc, files) = commands::visualize(&config)?;
            let summary: Vec<_> = doc
                .records
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "representation": r.representation.name(),
                        "silhouette_by_melody": r.silhouette_by_melody,
                        "silhouette_by_timbre": r.silhouette_by_timbre,
                    })
                })
                .collect();
            print_json(&serde_json::json!({ "files": files, "records": summary }));
        }
    }
    Ok(())
}

/// Parses `args` and runs the command, mapping every outcome to a status.
pub fn run<I, T>(args: I) -> Status
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Status::Usage } else { Status::Success };
        }
    };
    match execute(cli.command) {
        Ok(()) => Status::Success,
        Err(e) => {
            eprintln!("error: {e:#}");
            classify(&e)
        }
    }
}
