//! Per-command manifest: configuration hash, versions, stage timings.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_sha256: String,
    /// Hash of the configuration after flag overrides.
    effective_sha256: String,
    solform_version: &'a str,
    cli_version: &'a str,
    seed: u64,
    threads: Option<usize>,
    timings: &'a [(String, f64)],
    total_seconds: f64,
    succeeded: bool,
}

/// Timing log of one command.
pub struct Run {
    command: &'static str,
    config_sha256: String,
    effective_sha256: String,
    seed: u64,
    threads: Option<usize>,
    start: Instant,
    stage: Instant,
    timings: Vec<(String, f64)>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Run {
    pub fn new(command: &'static str, text: &str, cfg: &RunConfig, threads: Option<usize>) -> Self {
        let effective = toml::to_string(cfg).unwrap_or_default();
        let now = Instant::now();
        Self {
            command,
            config_sha256: sha256_hex(text.as_bytes()),
            effective_sha256: sha256_hex(effective.as_bytes()),
            seed: cfg.seed,
            threads,
            start: now,
            stage: now,
            timings: Vec::new(),
        }
    }

    /// Closes the current stage under `name`.
    pub fn lap(&mut self, name: &str) {
        let now = Instant::now();
        self.timings.push((name.to_string(), (now - self.stage).as_secs_f64()));
        self.stage = now;
    }

    pub fn finish(&self, dir: &Path, succeeded: bool) -> anyhow::Result<()> {
        let m = Manifest {
            command: self.command,
            config_sha256: self.config_sha256.clone(),
            effective_sha256: self.effective_sha256.clone(),
            solform_version: solform::VERSION,
            cli_version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            threads: self.threads,
            timings: &self.timings,
            total_seconds: self.start.elapsed().as_secs_f64(),
            succeeded,
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&m)?)?;
        Ok(())
    }
}
