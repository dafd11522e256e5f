mod commands;
mod config;
mod runlog;

use clap::{Parser, Subcommand};
use config::{Overrides, QgenKind, RunConfig, TOKEN_ENV};
use std::path::PathBuf;
use std::process::ExitCode;
use tracing_subscriber::EnvFilter;

/// Invalid invocation or configuration, reported before any work starts.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_OK: u8 = 0;
pub const EXIT_FATAL: u8 = 1;
pub const EXIT_PARTIAL: u8 = 2;
pub const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "t2i-eval", version, about = "Score text-to-image generations for text-image alignment and image quality")]
struct Cli {
    /// Flat `key = value` config file; flags take precedence over it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output on stderr (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every (image, caption) pair of a dataset and write a report
    Eval(EvalArgs),
    /// Build a degradation corpus with a manifest and per-image sidecars
    Degrade(DegradeArgs),
    /// Print the questions generated for a caption or a dataset
    Qgen(QgenArgs),
    /// Rank agreement of ours and every baseline over the dataset's cases
    Compare(EvalArgs),
}

#[derive(clap::Args)]
pub struct EvalArgs {
    /// Caption dataset (.jsonl, or .tsv)
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(clap::Args)]
pub struct DegradeArgs {
    /// Directory of source images (png, jpg)
    #[arg(long)]
    pub src: PathBuf,
    /// Degradation plan: default, blur, noise or jpeg
    #[arg(long, default_value = "default")]
    pub plan: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(clap::Args)]
pub struct QgenArgs {
    #[arg(long, conflicts_with = "dataset")]
    pub caption: Option<String>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<QgenKind>,
    #[arg(long)]
    pub llm: Option<String>,
    #[arg(long)]
    pub llm_retries: Option<usize>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn load_config(path: Option<&PathBuf>) -> anyhow::Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| UsageError(format!("config file {}: {e}", p.display())))?;
            RunConfig::from_text(&text)?
        }
        None => RunConfig::default(),
    };
    if let Ok(token) = std::env::var(TOKEN_ENV) {
        if !token.is_empty() {
            cfg.token = Some(token);
        }
    }
    Ok(cfg)
}

async fn dispatch(cli: Cli) -> anyhow::Result<u8> {
    let mut cfg = load_config(cli.config.as_ref())?;
    match cli.command {
        Command::Eval(args) => {
            cfg.apply(&args.overrides)?;
            commands::eval(&cfg, &args.dataset).await
        }
        Command::Compare(args) => {
            cfg.apply(&args.overrides)?;
            commands::compare(&cfg, &args.dataset).await
        }
        Command::Degrade(args) => {
            if let Some(out) = args.out {
                cfg.out = out;
            }
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            commands::degrade(&cfg, &args.src, &args.plan)
        }
        Command::Qgen(args) => {
            cfg.apply(&Overrides {
                qgen: args.mode,
                llm: args.llm,
                llm_retries: args.llm_retries,
                cache_dir: args.cache_dir,
                timeout_secs: args.timeout_secs,
                ..Default::default()
            })?;
            commands::qgen(&cfg, args.caption.as_deref(), args.dataset.as_deref()).await
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(cli.verbose);
    match dispatch(cli).await {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            if let Some(usage) = e.downcast_ref::<UsageError>() {
                eprintln!("error: {usage}");
                ExitCode::from(EXIT_USAGE)
            } else {
                eprintln!("error: {e:#}");
                ExitCode::from(EXIT_FATAL)
            }
        }
    }
}
