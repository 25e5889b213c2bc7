//! Library side of the `marginlab` command: config handling, experiment
//! execution, analysis and the canned reproductions.

pub mod config;
pub mod repro;
pub mod run;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use marginlab::io::atomic_write;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] marginlab::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid configuration: {0}")]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for solver non-convergence and exponent overflow, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(marginlab::Error::Convergence { .. })
            | CliError::Core(marginlab::Error::Tainted(_)) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Output files by role, printed to stdout as JSON when a command finishes.
#[derive(Debug, Default)]
pub struct Manifest {
    pub outputs: BTreeMap<String, PathBuf>,
}

impl Manifest {
    /// Writes `bytes` atomically to `dir/name` and records it under `role`.
    pub fn write(&mut self, role: &str, dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
        let path = dir.join(name);
        atomic_write(&path, bytes)?;
        self.outputs.insert(role.to_string(), path);
        Ok(())
    }

    pub fn merge(&mut self, prefix: &str, other: Manifest) {
        for (k, v) in other.outputs {
            self.outputs.insert(format!("{prefix}.{k}"), v);
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "outputs": self.outputs }).to_string()
    }
}

/// Progress notes on stderr, silenced by `--quiet`.
#[derive(Clone, Copy, Debug)]
pub struct Log {
    pub quiet: bool,
}

impl Log {
    pub fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}
