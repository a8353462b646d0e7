use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use mas_safety::config::{parse_config, ExperimentConfig};
use mas_safety::experiment::{run_experiment, Command};
use mas_safety::{Error, Result};

/// Environment variable naming the default output directory.
const OUT_ENV: &str = "MAS_SAFETY_OUT";

/// Risk-sensitive distributed safety filters for multi-agent systems.
///
/// Exit codes: 0 ok, 1 configuration, 2 missing or unreadable model,
/// 3 guarantee-domain violation, 4 I/O, 5 internal contract violation.
#[derive(Debug, Parser)]
#[command(name = "mas-safety", version)]
struct Cli {
    /// train-value | run | sweep-beta | sweep-xi | certify
    command: String,

    /// TOML configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Base seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory [default: config `out_dir`, then $MAS_SAFETY_OUT, then ./out]
    #[arg(long)]
    out: Option<PathBuf>,
}

fn execute(cli: Cli) -> Result<()> {
    let command: Command = cli.command.parse()?;
    let mut cfg = match &cli.config {
        Some(path) => parse_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli
        .out
        .or_else(|| cfg.out_dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let outcome = run_experiment(&cfg, command, &out)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    for f in &outcome.files {
        println!("{}", out.join(f).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::AtStep { step, .. } = &e {
                eprintln!("failed at rollout step {step}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
