use std::path::{Path, PathBuf};
use std::process::ExitCode;

use autoprep::backends::remote::serve;
use autoprep::config::{load_config, PipelineConfig, StageToggles};
use autoprep::pipeline::{export_embeddings, run_pipeline, stats_for_dir, PipelineError, RunOptions};
use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "autoprep", version, about = "Speech-corpus preprocessing pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline over an input manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated stages to enable; persist always runs.
        #[arg(long)]
        stages: Option<String>,
        /// Continue from the checkpoints in `--out`.
        #[arg(long)]
        resume: bool,
        /// Worker threads (0 = one per core).
        #[arg(long, default_value_t = 0)]
        workers: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Stop after this many checkpoint writes (for testing resume).
        #[arg(long, hide = true)]
        checkpoint_budget: Option<usize>,
    },
    /// Print corpus statistics for a finished run.
    Stats {
        dir: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Write per-batch chunk embeddings with cluster ids as TSV.
    ExportEmbeddings { dir: PathBuf },
    /// Serve the backends of a config over stdin/stdout using the adapter protocol.
    #[command(hide = true)]
    MockAdapter {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Failure reported on stderr as one JSON object.
struct Failure {
    kind: &'static str,
    message: String,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Self {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl From<autoprep::config::ConfigError> for Failure {
    fn from(e: autoprep::config::ConfigError) -> Self {
        Self {
            kind: "config",
            message: e.to_string(),
        }
    }
}

impl From<autoprep::backends::BackendError> for Failure {
    fn from(e: autoprep::backends::BackendError) -> Self {
        Self {
            kind: "backend",
            message: e.to_string(),
        }
    }
}

fn config_base(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load(path: &Path, stages: Option<&str>, seed: Option<u64>) -> Result<PipelineConfig, Failure> {
    let mut config = load_config(path)?;
    if let Some(list) = stages {
        config.stages = StageToggles::from_list(list)?;
    }
    if let Some(seed) = seed {
        config.rng_seed = seed;
    }
    config.check()?;
    Ok(config)
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run {
            config,
            input,
            out,
            stages,
            resume,
            workers,
            seed,
            checkpoint_budget,
        } => {
            let cfg = load(&config, stages.as_deref(), seed)?;
            let backends = cfg.backends.build(&config_base(&config))?;
            let options = RunOptions {
                resume,
                workers,
                checkpoint_budget,
            };
            let summary = run_pipeline(&cfg, &input, &out, &backends, &options)?;
            tracing::info!(
                segments = summary.segments,
                unlabeled = summary.unlabeled_segments,
                skipped = summary.skipped.len(),
                "run complete"
            );
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
        }
        Command::Stats { dir, json } => {
            let stats = stats_for_dir(&dir)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
            } else {
                print!("{stats}");
            }
        }
        Command::ExportEmbeddings { dir } => {
            let rows = export_embeddings(&dir)?;
            println!("{}", json!({ "rows": rows, "dir": dir.join("embeddings") }));
        }
        Command::MockAdapter { config } => {
            let cfg = load(&config, None, None)?;
            let backends = cfg.backends.build(&config_base(&config))?;
            serve(std::io::stdin().lock(), std::io::stdout().lock(), &backends).map_err(|e| Failure {
                kind: "protocol",
                message: e.to_string(),
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("AUTOPREP_LOG").unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", json!({ "error": f.kind, "message": f.message }));
            ExitCode::FAILURE
        }
    }
}
