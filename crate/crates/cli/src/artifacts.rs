//! Run configuration stamped into every output, and small file helpers.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    /// The parsed options of the subcommand, defaults included.
    pub args: Value,
}

impl RunConfig {
    pub fn new<A: Serialize>(command: &str, seed: u64, args: &A) -> Result<Self> {
        Ok(Self {
            tool: "vtla",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seed,
            args: serde_json::to_value(args)?,
        })
    }

    pub fn value(&self) -> Value {
        serde_json::to_value(self).expect("run config serializes")
    }
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json(path: &Path) -> Result<Value> {
    let s = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&s).with_context(|| format!("parsing {}", path.display()))
}

/// `prefs.jsonl` -> `prefs.jsonl.run.json`: the run config of a JSONL output.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".run.json");
    path.with_file_name(name)
}
