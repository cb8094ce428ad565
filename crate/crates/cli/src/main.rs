//! `dockver`: command-line front end.
//!
//! ```text
//! dockver <command> [--config FILE] [--out DIR] [--format json|csv|both] [--workers N] [--key=value ...]
//! ```
//!
//! Any `--key=value` that is not one of the options above overrides a
//! config leaf. Exit codes: 0 pass, 1 fail, 2 inconclusive, 3 usage or
//! configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use dockver_core::config::{parse_config, Override};
use dockver_core::report::{emit_report, Format};
use dockver_core::run::{run_command, COMMANDS};
use dockver_core::Error;

const USAGE_ERROR: u8 = 3;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Simulate,
    Kinduct,
    KinductEmpirical,
    Gridreach,
    Tube,
    CertTrain,
    CertVerify,
    CertRetrain,
    Gamma,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
    Both,
}

#[derive(Debug, Parser)]
#[command(name = "dockver", version, about = "Verification toolkit for NN-controlled spacecraft docking")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides DOCKVER_OUT and `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    format: FormatArg,
    /// Worker threads; overrides DOCKVER_WORKERS and `workers`.
    #[arg(long)]
    workers: Option<usize>,
}

const OWN_FLAGS: [&str; 4] = ["config", "out", "format", "workers"];

/// Separates `--key=value` config overrides from the CLI's own arguments.
fn split_args(args: Vec<String>) -> (Vec<String>, Vec<String>) {
    let mut own = Vec::new();
    let mut overrides = Vec::new();
    for (i, a) in args.into_iter().enumerate() {
        let key = a.strip_prefix("--").and_then(|r| r.split_once('=')).map(|(k, _)| k.to_string());
        match key {
            Some(k) if i > 0 && !OWN_FLAGS.contains(&k.as_str()) => overrides.push(a),
            _ => own.push(a),
        }
    }
    (own, overrides)
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Budget { .. } => 2,
        _ => USAGE_ERROR,
    }
}

fn main() -> ExitCode {
    let (own, raw_overrides) = split_args(std::env::args().collect());
    let cli = match Cli::try_parse_from(own) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli, &raw_overrides) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn run(cli: &Cli, raw_overrides: &[String]) -> dockver_core::Result<u8> {
    let mut overrides = raw_overrides.iter().map(|s| Override::parse(s)).collect::<Result<Vec<_>, _>>()?;
    let env = |name: &str| std::env::var(name).ok().filter(|v| !v.is_empty());
    if let Some(dir) = env("DOCKVER_OUT") {
        overrides.insert(0, override_of("output_dir", &serde_json::Value::from(dir).to_string()));
    }
    if let Some(w) = env("DOCKVER_WORKERS") {
        overrides.insert(0, override_of("workers", &w));
    }
    if let Some(dir) = &cli.out {
        let dir = dir.to_string_lossy().into_owned();
        overrides.push(override_of("output_dir", &serde_json::Value::from(dir).to_string()));
    }
    if let Some(w) = cli.workers {
        overrides.push(override_of("workers", &w.to_string()));
    }
    let cfg = parse_config(cli.config.as_deref(), &overrides)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build_global()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;

    let name = command_name(cli.command);
    let dir = cfg.output_dir.join(name);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.json"), cfg.to_json_pretty()? + "\n")?;
    let report = run_command(name, &cfg)?;
    let format = match cli.format {
        FormatArg::Json => Format::Json,
        FormatArg::Csv => Format::Csv,
        FormatArg::Both => Format::Both,
    };
    emit_report(&report, &dir, format)?;
    let verdict = serde_json::to_value(report.outcome)?;
    println!("{name}: {} ({})", verdict.as_str().unwrap_or_default(), dir.display());
    Ok(report.outcome.exit_code() as u8)
}

fn override_of(key: &str, value: &str) -> Override {
    Override {
        key: key.into(),
        value: value.into(),
    }
}

fn command_name(c: Command) -> &'static str {
    let name = match c {
        Command::Simulate => "simulate",
        Command::Kinduct => "kinduct",
        Command::KinductEmpirical => "kinduct-empirical",
        Command::Gridreach => "gridreach",
        Command::Tube => "tube",
        Command::CertTrain => "cert-train",
        Command::CertVerify => "cert-verify",
        Command::CertRetrain => "cert-retrain",
        Command::Gamma => "gamma",
    };
    debug_assert!(COMMANDS.contains(&name));
    name
}
