//! Batch front end for the solform pipeline.
//!
//! Every subcommand reads a TOML run configuration, writes its artifacts to
//! `<output>/<command>/` together with `status.json` and `manifest.json`, and
//! exits with 0 on success, 1 on a numerical failure and 2 on a usage error.
//! Failures are also written as `error.json`.

mod commands;
mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use config::RunConfig;

/// Problem with the invocation or the configuration (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A computed check failed; artifacts were written (exit code 1).
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

#[derive(Parser, Debug)]
#[command(name = "solform", version, about = "Solitons, spectral frames and Birkhoff normal forms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone)]
enum Command {
    /// Solve the center soliton, continue a branch and check non-degeneracy.
    Soliton(Common),
    /// Linearize at the soliton and compute the discrete spectral frame.
    Spectrum(Common),
    /// Modulation coordinates of a perturbed soliton and their round trip.
    Modulate(Common),
    /// Symplecticity audit of the Darboux map and structural model checks.
    DarbouxAudit(Common),
    /// Expansion of the Hamiltonian, Birkhoff steps, tables and bundle.
    Normalform(Common),
    /// Collect the status of all commands run into the output directory.
    Report(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Path of the TOML configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides `output`.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides `normalform.max_degree`.
    #[arg(long)]
    max_degree: Option<u32>,
    /// Overrides `chart.samples`.
    #[arg(long)]
    samples: Option<usize>,
    /// Replace existing artifacts of this command.
    #[arg(long)]
    force: bool,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Soliton(_) => "soliton",
            Command::Spectrum(_) => "spectrum",
            Command::Modulate(_) => "modulate",
            Command::DarbouxAudit(_) => "darboux-audit",
            Command::Normalform(_) => "normalform",
            Command::Report(_) => "report",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Soliton(c)
            | Command::Spectrum(c)
            | Command::Modulate(c)
            | Command::DarbouxAudit(c)
            | Command::Normalform(c)
            | Command::Report(c) => c,
        }
    }
}

/// Loads the configuration and applies flag overrides.
fn load(common: &Common) -> Result<(RunConfig, String), UsageError> {
    let path = common.config.as_ref().ok_or_else(|| UsageError("--config is required".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(o) = &common.output {
        cfg.output = o.clone();
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(d) = common.max_degree {
        cfg.normalform.max_degree = Some(d);
    }
    if let Some(n) = common.samples {
        cfg.chart.samples = n;
    }
    cfg.validate()?;
    Ok((cfg, text))
}

fn run(command: &Command) -> anyhow::Result<()> {
    let common = command.common();
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(UsageError("--threads must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("thread pool")?;
    }
    let (cfg, text) = load(common)?;
    let dir = cfg.output.join(command.name());
    // the report only summarizes, so it always replaces its own artifacts
    prepare_dir(&dir, common.force || matches!(command, Command::Report(_)))?;
    let mut run = manifest::Run::new(command.name(), &text, &cfg, common.threads);
    let result = match command {
        Command::Soliton(_) => commands::soliton(&cfg, &dir, &mut run),
        Command::Spectrum(_) => commands::spectrum(&cfg, &dir, &mut run),
        Command::Modulate(_) => commands::modulate(&cfg, &dir, &mut run),
        Command::DarbouxAudit(_) => commands::darboux_audit(&cfg, &dir, &mut run),
        Command::Normalform(_) => commands::normalform(&cfg, &dir, &mut run),
        Command::Report(_) => commands::report(&cfg, &dir, &mut run),
    };
    run.finish(&dir, result.is_ok())?;
    result
}

fn prepare_dir(dir: &Path, force: bool) -> anyhow::Result<()> {
    if dir.exists() && std::fs::read_dir(dir)?.next().is_some() {
        if !force {
            return Err(UsageError(format!("{} already has artifacts; pass --force to replace them", dir.display())).into());
        }
        std::fs::remove_dir_all(dir)?;
    }
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

/// Exit code and machine-readable description of a failure.
fn describe(err: &anyhow::Error) -> (u8, serde_json::Value) {
    if let Some(u) = err.downcast_ref::<UsageError>() {
        return (2, json!({ "kind": "usage", "message": u.0 }));
    }
    if let Some(c) = err.downcast_ref::<CheckFailed>() {
        return (1, json!({ "kind": "check", "message": c.0 }));
    }
    for cause in err.chain() {
        if let Some(solform::normalform::NormalFormError::Resonance { mu, nu, frequency }) = cause.downcast_ref() {
            return (1, json!({ "kind": "resonance", "mu": mu, "nu": nu, "frequency": frequency, "message": format!("{err:#}") }));
        }
    }
    (1, json!({ "kind": "numerical", "message": format!("{err:#}") }))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, body) = describe(&err);
            let text = serde_json::to_string_pretty(&json!({ "command": cli.command.name(), "error": body }))
                .unwrap_or_else(|_| format!("{err:#}"));
            eprintln!("{text}");
            // usage errors leave existing artifacts untouched
            if let (1, Ok((cfg, _))) = (code, load(cli.command.common())) {
                let dir = cfg.output.join(cli.command.name());
                if dir.is_dir() {
                    let _ = std::fs::write(dir.join("error.json"), &text);
                }
            }
            ExitCode::from(code)
        }
    }
}
