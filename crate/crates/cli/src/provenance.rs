//! The block written into every output: tool version, the full run
//! configuration and a content hash of the inputs.

use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::args::Command;
use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub threads: Option<usize>,
    pub config: serde_json::Value,
    /// SHA-256 over `blob <len>\0<bytes>` of each input file in order, or
    /// over the configuration when the run reads no files.
    pub input_sha256: String,
}

impl Provenance {
    pub fn new(
        command: &Command,
        threads: Option<usize>,
        inputs: &[&Path],
    ) -> Result<Self, CliError> {
        let config = serde_json::to_value(command).expect("run config serializes");
        let mut hasher = Sha256::new();
        if inputs.is_empty() {
            hasher.update(config.to_string().as_bytes());
        }
        for path in inputs {
            let bytes = fs::read(path).map_err(CliError::io(*path))?;
            hasher.update(format!("blob {}\0", bytes.len()).as_bytes());
            hasher.update(&bytes);
        }
        Ok(Self {
            tool: "hawkesnet",
            version: env!("CARGO_PKG_VERSION"),
            threads,
            config,
            input_sha256: hex::encode(hasher.finalize()),
        })
    }

    /// Comment lines (without the leading `#`) for CSV and JSONL outputs.
    pub fn comments(&self) -> Vec<String> {
        vec![
            format!("{} {}", self.tool, self.version),
            format!(
                "config={}",
                serde_json::to_string(&self.config).expect("config serializes")
            ),
            format!(
                "threads={}",
                self.threads
                    .map_or("default".to_string(), |t| t.to_string())
            ),
            format!("input_sha256={}", self.input_sha256),
        ]
    }

    pub fn csv_header(&self) -> String {
        self.comments().iter().map(|c| format!("# {c}\n")).collect()
    }
}
