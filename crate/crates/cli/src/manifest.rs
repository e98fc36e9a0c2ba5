use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct Input {
    pub path: String,
    pub role: &'static str,
    pub bytes: usize,
    pub sha256: String,
}

impl Input {
    pub fn new(path: &Path, bytes: &[u8]) -> Self {
        let digest = Sha256::digest(bytes);
        let sha256 = digest.iter().map(|b| format!("{b:02x}")).collect();
        Self { path: path.display().to_string(), role: "input", bytes: bytes.len(), sha256 }
    }

    pub fn output(mut self) -> Self {
        self.role = "output";
        self
    }
}

/// Provenance block embedded in every report.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: Value,
    pub files: Vec<Input>,
    pub seed: Option<u64>,
    pub threads: usize,
    pub wall_clock_seconds: f64,
    pub diagnostics: Vec<String>,
}

impl Manifest {
    pub fn new(
        command: &'static str,
        config: Value,
        files: Vec<Input>,
        seed: Option<u64>,
        threads: usize,
        start: Instant,
        diagnostics: Vec<String>,
    ) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            files,
            seed,
            threads,
            wall_clock_seconds: start.elapsed().as_secs_f64(),
            diagnostics,
        }
    }
}
