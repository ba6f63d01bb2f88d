//! `cgk`: batch commands for the grasp synthesis pipeline.

mod commands;
mod config;
mod files;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::PipelineConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing input {path}: {source}")]
    Missing { path: PathBuf, source: std::io::Error },
    #[error("bad input: {0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(cgk_core::Error),
}

impl CliError {
    pub fn missing(path: &Path, source: std::io::Error) -> Self {
        CliError::Missing {
            path: path.to_path_buf(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing { .. } | CliError::Input(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Io(_) | CliError::Core(_) => 1,
        }
    }
}

impl From<cgk_core::Error> for CliError {
    fn from(e: cgk_core::Error) -> Self {
        use cgk_core::Error as E;
        match e {
            E::DivergenceDetected { .. } => CliError::Numerical(e.to_string()),
            E::Format { .. } | E::Json(_) => CliError::Input(e.to_string()),
            other => CliError::Core(other),
        }
    }
}

#[derive(Parser)]
#[command(name = "cgk", version, about = "Contact-anchored 6-DoF grasp synthesis pipeline")]
struct Cli {
    /// JSON pipeline configuration; built-in desk-scale defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Builds and annotates scenes.
    Generate,
    /// Renders labeled views of generated scenes.
    Render {
        /// Directory written by `generate`; defaults to the output directory.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Trains a network on views of generated scenes.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Predicts grasps for a camera-frame point cloud.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Binary PLY cloud as written by `render`.
        #[arg(long)]
        cloud: PathBuf,
        /// JSON `{"target": id, "segments": [...]}`; restricts proposals to one object.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Scores proposals against a scene and its ground truth.
    Evaluate {
        #[arg(long)]
        proposals: PathBuf,
        /// View metadata written by `render`, locating the scene and camera.
        #[arg(long)]
        view: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Checks analytic gradients against finite differences.
    Gradcheck,
    /// Trains and scores ablation variants on the fixed benchmark.
    Ablate {
        /// Variant to run (repeatable); all variants when absent.
        #[arg(long)]
        variant: Vec<String>,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("CGK_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("CGK_THREADS={value:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let config = PipelineConfig::load(cli.config.as_deref(), cli.seed)?;
    let out = cli.out.as_path();
    let data_dir = |d: Option<PathBuf>| d.unwrap_or_else(|| out.to_path_buf());
    match cli.command {
        Command::Generate => commands::generate(&config, out),
        Command::Render { data } => commands::render(&config, &data_dir(data), out),
        Command::Train { data } => commands::train(&config, &data_dir(data), out),
        Command::Infer {
            checkpoint,
            cloud,
            mask,
        } => commands::infer(&config, &checkpoint, &cloud, mask.as_deref(), out),
        Command::Evaluate { proposals, view, data } => {
            commands::evaluate(&config, &proposals, &view, &data_dir(data), out)
        }
        Command::Gradcheck => commands::gradcheck(config.seed, out),
        Command::Ablate { variant } => commands::ablate(&config, &variant, out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cgk: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
