mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::CliError;
use crate::config::CliConfig;

/// Backchannel prediction pipeline.
///
/// Settings resolve as defaults, then the --config file, then --set pairs,
/// then the dedicated flags; later sources win.
#[derive(Debug, Parser)]
#[command(name = "bcpredict", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Extra `key=value` setting, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Root seed; every component derives its own seed from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Model variant (AC, AC_S, AC_L, AC_S_L, AC_SLI_SUM, AC_SLI_BILINEAR, AC_SLI_NTN).
    #[arg(long, global = true)]
    variant: Option<String>,
    /// Speaker-listener interaction encoder; selects the matching SLI variant.
    #[arg(long, global = true, value_parser = ["sum", "bilinear", "ntn"])]
    sli: Option<String>,
    /// Frames per input window.
    #[arg(long, global = true, value_parser = ["48", "98", "148", "198"])]
    frames: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DataPaths {
    /// Instance manifest (JSON lines).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Directory of per-channel feature caches.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract MFCC caches from `<dialog>_<channel>.wav` files.
    Features {
        #[arg(long)]
        audio_dir: Option<PathBuf>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Build an instance manifest and corpus statistics from transcripts.
    Annotate {
        #[arg(long)]
        transcripts: Option<PathBuf>,
        #[arg(long)]
        audio_dir: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Generate a synthetic corpus with its feature caches.
    Synth,
    /// Train one model.
    Train {
        #[command(flatten)]
        data: DataPaths,
    },
    /// Train every configuration of a hyperparameter grid.
    Grid {
        #[command(flatten)]
        data: DataPaths,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        data: DataPaths,
        #[arg(long)]
        split: Option<String>,
    },
    /// Per-listener sweep, PCA of listener embeddings and plots.
    Embeddings {
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        data: DataPaths,
        #[arg(long)]
        split: Option<String>,
    },
}

fn flag_pairs(cli: &Cli) -> Vec<(&'static str, String)> {
    let c = &cli.common;
    let mut pairs = Vec::new();
    let mut push = |key: &'static str, v: Option<String>| {
        if let Some(v) = v {
            pairs.push((key, v));
        }
    };
    let p = |v: &Option<PathBuf>| v.as_ref().map(|p| p.display().to_string());
    push("seed", c.seed.map(|s| s.to_string()));
    push("variant", c.variant.clone());
    push("sli", c.sli.clone());
    push("frames", c.frames.clone());
    push("out", p(&c.out));
    match &cli.command {
        Command::Features { audio_dir, cache_dir } => {
            push("audio_dir", p(audio_dir));
            push("cache_dir", p(cache_dir));
        }
        Command::Annotate {
            transcripts,
            audio_dir,
            manifest,
        } => {
            push("transcripts", p(transcripts));
            push("audio_dir", p(audio_dir));
            push("manifest", p(manifest));
        }
        Command::Synth => {}
        Command::Train { data } | Command::Grid { data } => {
            push("manifest", p(&data.manifest));
            push("cache_dir", p(&data.cache_dir));
        }
        Command::Eval { model, data, split } | Command::Embeddings { model, data, split } => {
            push("model", p(model));
            push("manifest", p(&data.manifest));
            push("cache_dir", p(&data.cache_dir));
            push("eval_split", split.clone());
        }
    }
    pairs
}

fn resolve(cli: &Cli) -> Result<CliConfig, CliError> {
    let mut cfg = CliConfig::default();
    if let Some(path) = &cli.common.config {
        cfg.apply_file(path)?;
    }
    for kv in &cli.common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| config::ConfigError(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    for (k, v) in flag_pairs(cli) {
        cfg.set(k, &v)?;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve(cli)?;
    log::info!("resolved config: {}", serde_json::to_string(&cfg).expect("config serializes"));
    match &cli.command {
        Command::Features { .. } => commands::features(&cfg),
        Command::Annotate { .. } => commands::annotate(&cfg),
        Command::Synth => commands::synth(&cfg),
        Command::Train { .. } => commands::train(&cfg),
        Command::Grid { .. } => commands::grid(&cfg),
        Command::Eval { .. } => commands::eval(&cfg),
        Command::Embeddings { .. } => commands::embeddings(&cfg),
    }
}

fn error_line(kind: &str, message: &str) {
    eprintln!("{}", serde_json::json!({ "error": kind, "message": message }));
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            error_line("usage", e.to_string().trim());
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error_line(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}
