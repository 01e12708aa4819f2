//! Provenance record written next to every command output.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to re-run a command and get byte-identical outputs.
///
/// Deliberately free of timestamps, hostnames and absolute working directories.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub tool_version: &'static str,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &'static str, argv: &[String], config: impl Serialize, seed: Option<u64>) -> CliResult<Self> {
        Ok(Self {
            command,
            argv: argv.to_vec(),
            config: serde_json::to_value(config).map_err(|e| CliError::InvalidArgument(e.to_string()))?,
            seed,
            tool_version: env!("CARGO_PKG_VERSION"),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    /// Writes `contents` to `path` and records it as an output.
    pub fn output(&mut self, path: PathBuf, contents: &[u8]) -> CliResult<()> {
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.outputs.push(path.display().to_string());
        Ok(())
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::io(path, e))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| CliError::io(path, e))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
