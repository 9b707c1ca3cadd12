//! Run bookkeeping: every file the CLI reads is hashed, every file it
//! writes is hashed, and both lists land in a JSON sidecar.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Failure;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// RFC 3339, UTC. Taken from `SOURCE_DATE_EPOCH` when set.
    pub timestamp: String,
    pub subcommand: String,
    pub parameters: serde_json::Value,
    /// path -> sha256
    pub inputs: BTreeMap<String, String>,
    /// path -> sha256
    pub outputs: BTreeMap<String, String>,
}

pub struct Run {
    subcommand: &'static str,
    parameters: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn timestamp() -> Result<String, Failure> {
    let at = match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(v) => {
            let secs: i64 = v
                .trim()
                .parse()
                .map_err(|_| Failure::Usage(format!("SOURCE_DATE_EPOCH={v:?} is not an integer")))?;
            DateTime::from_timestamp(secs, 0)
                .ok_or_else(|| Failure::Usage(format!("SOURCE_DATE_EPOCH={v} out of range")))?
        }
        Err(_) => Utc::now(),
    };
    Ok(at.to_rfc3339_opts(SecondsFormat::Secs, true))
}

impl Run {
    pub fn new(subcommand: &'static str, parameters: &impl Serialize) -> Self {
        Run {
            subcommand,
            parameters: serde_json::to_value(parameters).expect("parameters serialize"),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>, Failure> {
        let bytes = fs::read(path).map_err(|e| Failure::io(path, e))?;
        self.inputs
            .insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn read_text(&mut self, path: &Path) -> Result<String, Failure> {
        let bytes = self.read(path)?;
        String::from_utf8(bytes)
            .map_err(|_| Failure::Input(format!("{}: not valid UTF-8", path.display())))
    }

    pub fn write(&mut self, path: &Path, contents: &[u8]) -> Result<(), Failure> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
        }
        fs::write(path, contents).map_err(|e| Failure::io(path, e))?;
        self.outputs
            .insert(path.display().to_string(), sha256_hex(contents));
        Ok(())
    }

    /// Write the manifest to `path` if anything was written to disk.
    pub fn finish(self, path: &Path) -> Result<Option<PathBuf>, Failure> {
        if self.outputs.is_empty() {
            return Ok(None);
        }
        let manifest = RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: timestamp()?,
            subcommand: self.subcommand.to_string(),
            parameters: self.parameters,
            inputs: self.inputs,
            outputs: self.outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| Failure::io(path, e))?;
        Ok(Some(path.to_path_buf()))
    }
}

/// `<out>.manifest.json` next to a single output file.
pub fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}
