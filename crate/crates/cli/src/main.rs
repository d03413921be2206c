mod commands;
mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use commands::{Partition, UsageError};

/// Synthetic sparse-annotation detection benchmark: generate data, train,
/// evaluate and compare baseline vs masked-loss runs.
///
/// Any config key can be overridden with `--dotted.key value`, e.g.
/// `--train.epochs 5 --split.cap 640`.
#[derive(Debug, Parser)]
#[command(name = "sparsedet", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for data generation and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a dataset, split it and cap the train labels.
    Generate,
    /// Train one detector; writes `<out>/<name>/`.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Run name (overrides `name` in the config).
        #[arg(long)]
        name: Option<String>,
    },
    /// Score a checkpoint against the full labels of a partition.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        partition: Partition,
        /// Evaluate even if the checkpoint was trained on other data.
        #[arg(long)]
        force: bool,
    },
    /// Paired baseline and masked runs over several seeds.
    Compare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        name: Option<String>,
    },
    /// Re-render tables and charts from a saved report or comparison.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

type Overrides = Vec<(String, String)>;

/// Splits `--a.b value` / `--a.b=value` config overrides from the arguments clap sees.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Overrides), String> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(key) = arg.strip_prefix("--").filter(|k| k.split('=').next().is_some_and(|k| k.contains('.'))) else {
            rest.push(arg);
            continue;
        };
        match key.split_once('=') {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => {
                let value = it.next().ok_or_else(|| format!("missing value for --{key}"))?;
                overrides.push((key.to_string(), value));
            }
        }
    }
    Ok((rest, overrides))
}

fn require_out(out: &Option<PathBuf>, default: &str) -> PathBuf {
    out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn run(cli: Cli, overrides: Vec<(String, String)>) -> Result<()> {
    let mut overrides = overrides;
    if let Some(seed) = cli.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    let name = match &cli.command {
        Command::Train { name, .. } | Command::Compare { name, .. } => name.clone(),
        _ => None,
    };
    if let Some(name) = name {
        overrides.push(("name".into(), format!("{name:?}")));
    }
    let cfg = config::load(cli.config.as_deref(), &overrides).map_err(|e| UsageError(format!("{e:#}")))?;
    let config_path = cli.config.as_deref();
    match &cli.command {
        Command::Generate => commands::generate(&cfg, config_path, &require_out(&cli.out, "data")),
        Command::Train { data, .. } => commands::train_cmd(&cfg, config_path, data, &require_out(&cli.out, "runs")).map(|_| ()),
        Command::Eval {
            checkpoint,
            data,
            partition,
            force,
        } => {
            let out = cli.out.as_deref().ok_or_else(|| UsageError("eval needs --out".into()))?;
            commands::eval_cmd(&cfg, config_path, checkpoint, data, out, *partition, *force)
        }
        Command::Compare { data, .. } => commands::compare_cmd(&cfg, config_path, data, &require_out(&cli.out, "runs")).map(|_| ()),
        Command::Report { input } => commands::report_cmd(input, cli.out.as_deref().map(Path::new)),
    }
}

fn is_usage_error(e: &anyhow::Error) -> bool {
    e.chain()
        .any(|c| c.downcast_ref::<UsageError>().is_some() || matches!(c.downcast_ref::<sparsedet::Error>(), Some(sparsedet::Error::Config(_))))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (args, overrides) = match split_overrides(std::env::args().collect()) {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli, overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage_error(&e) { 1 } else { 2 })
        }
    }
}
