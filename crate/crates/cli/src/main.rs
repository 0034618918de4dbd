use clap::error::ErrorKind;
use clap::Parser;
use polymerlab::{parse_config_as, run, Command};
use std::path::PathBuf;
use std::process::ExitCode;

const DEFAULT_OUTPUT_DIR: &str = "polymerlab-output";

/// Directed polymer experiments: simulation, moments, overshoot and condition checks.
#[derive(Parser)]
#[command(name = "polymerlab", version)]
struct Cli {
    /// simulate, moments, overshoot, check-conditions, decompose or oracle
    command: Command,
    /// Experiment config (sectioned TOML)
    #[arg(long)]
    config: PathBuf,
    /// Overrides `seed` in the config
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the config, then POLYMERLAB_WORKERS, then all cores
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides `output_dir` in the config
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn env_workers() -> Result<Option<usize>, String> {
    match std::env::var("POLYMERLAB_WORKERS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(format!("POLYMERLAB_WORKERS must be a positive integer, got `{v}`")),
        },
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: reading {}: {e}", cli.config.display());
            return ExitCode::from(1);
        }
    };
    let mut cfg = match parse_config_as(&text, Some(cli.command)) {
        Ok(c) => c,
        Err(errors) => {
            for e in &errors.0 {
                eprintln!("{}:{e}", cli.config.display());
            }
            return ExitCode::from(1);
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.workers == Some(0) {
        eprintln!("error: --workers must be at least 1");
        return ExitCode::from(1);
    }
    cfg.workers = match (cli.workers, cfg.workers, env_workers()) {
        (Some(w), _, _) | (None, Some(w), _) => Some(w),
        (None, None, Ok(w)) => w,
        (None, None, Err(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    let out_dir = cli
        .output_dir
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    cfg.output_dir = Some(out_dir.clone());

    match run(&cfg, &out_dir) {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            println!("config hash {}", cfg.hash());
            println!("wrote {} to {}", outcome.artifacts.join(", "), out_dir.display());
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
