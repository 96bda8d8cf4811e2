//! Command-line front end: synthesize scenes, derive features, track,
//! evaluate, export correlation maps and run the benchmark.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use portiontrack::Method;

pub mod commands;
pub mod config;

pub use config::PipelineConfig;

/// Failure of a subcommand, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Inconsistent(String),
}

impl CliError {
    /// 1 I/O, 2 validation, 3 data inconsistency.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Inconsistent(_) => 3,
        }
    }
}

impl From<portiontrack::Error> for CliError {
    fn from(e: portiontrack::Error) -> Self {
        use portiontrack::Error as E;
        let msg = e.to_string();
        match e {
            E::Io(_) => CliError::Io(msg),
            E::Shape(_) | E::Channels { .. } | E::Inconsistent(_) => CliError::Inconsistent(msg),
            E::Header(_)
            | E::PayloadSize { .. }
            | E::Dtype { .. }
            | E::Dims(_)
            | E::Config(_)
            | E::NonFinite(_)
            | E::EmptyObject
            | E::Script(_)
            | E::GroundTruth(_)
            | E::Json(_) => CliError::Validation(msg),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "portiontrack", version, about = "Portion-matching multi-object tracker for 4D time-lapse volumes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct ConfigArgs {
    /// Pipeline configuration (JSON). Defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted override, e.g. `--set portion.gamma=0.6`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn load(&self) -> Result<PipelineConfig, CliError> {
        PipelineConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a scene script (or a named benchmark scene) to a dataset directory.
    Synth {
        #[arg(long, conflicts_with = "scene")]
        script: Option<PathBuf>,
        /// Benchmark scene name, e.g. `s3-split/medium`.
        #[arg(long)]
        scene: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Derive feature volumes for every frame of the configured dataset.
    Features {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Track the configured dataset with the configured method.
    Track {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Per-frame timing CSV (default: <out>/timing.csv).
        #[arg(long)]
        timing: Option<PathBuf>,
    },
    /// Score a track file against ground truth.
    Eval {
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Report JSON destination.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export correlation maps of one object's portions.
    Corrmap {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Segmentation label of the object at `--frame`.
        #[arg(long)]
        object: u32,
        #[arg(long)]
        frame: usize,
        /// Lags to map; 0 is the object's own frame. Default: 1..=max_lag.
        #[arg(long, value_delimiter = ',')]
        lags: Vec<usize>,
    },
    /// Run every method on the benchmark suite and print the report table.
    Bench {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Only scenes whose name contains this string.
        #[arg(long, default_value = "")]
        filter: String,
        /// Methods to run (default: all).
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
    },
}

/// Executes one parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth {
            script,
            scene,
            out,
            seed,
        } => {
            let m = commands::cmd_synth(script.as_deref(), scene.as_deref(), &out, seed)?;
            println!("wrote {} files to {}", m.files.len(), out.display());
        }
        Command::Features { cfg } => {
            let cfg = cfg.load()?;
            let n = commands::cmd_features(&cfg)?;
            println!("derived features for {n} frames in {}", cfg.dataset.display());
        }
        Command::Track { cfg, timing } => {
            let cfg = cfg.load()?;
            let out = commands::cmd_track(&cfg, timing.as_deref())?;
            println!(
                "{}: {} tracks, {} events -> {}",
                cfg.method,
                out.graph.track_ids().len(),
                out.graph.events.len(),
                cfg.out.display()
            );
        }
        Command::Eval { tracks, gt, out } => {
            let (_, table) = commands::cmd_eval(&tracks, &gt, out.as_deref())?;
            print!("{table}");
        }
        Command::Corrmap {
            cfg,
            object,
            frame,
            lags,
        } => {
            let cfg = cfg.load()?;
            let lags = if lags.is_empty() {
                (1..=cfg.portion.max_lag).collect()
            } else {
                lags
            };
            for l in commands::cmd_corrmap(&cfg, object, frame, &lags)? {
                println!("lag {}: {} candidates -> {}", l.lag, l.rows, l.csv.display());
            }
        }
        Command::Bench { cfg, filter, methods } => {
            let cfg = cfg.load()?;
            let methods = if methods.is_empty() {
                Method::ALL.to_vec()
            } else {
                methods
                    .iter()
                    .map(|m| m.parse())
                    .collect::<Result<Vec<Method>, _>>()?
            };
            let (_, table) = commands::cmd_bench(&cfg, &filter, &methods)?;
            print!("{table}");
        }
    }
    Ok(())
}
