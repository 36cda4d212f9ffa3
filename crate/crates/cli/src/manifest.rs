//! Provenance record written beside every artifact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Config snapshot in `key = value` form, when the command has one.
    pub config: Option<String>,
    pub seed: Option<u64>,
    /// Hash over the contents of every input, see [`content_hash`].
    pub input_hash: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of a git-style blob: `"blob <len>\0"` followed by the bytes.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

/// SHA-256 over the blob hashes of `files`, one per line, in order. Paths
/// do not enter the hash, so moving inputs keeps it stable.
pub fn content_hash(files: &[PathBuf]) -> Result<String, CliError> {
    let mut h = Sha256::new();
    for f in files {
        let bytes = fs::read(f).map_err(|e| CliError::Data(format!("{}: {e}", f.display())))?;
        h.update(blob_hash(&bytes).as_bytes());
        h.update(b"\n");
    }
    Ok(hex(&h.finalize()))
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: Option<String>,
        seed: Option<u64>,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
    ) -> Result<Self, CliError> {
        let show = |p: &PathBuf| p.display().to_string();
        Ok(Self {
            command: command.into(),
            config,
            seed,
            input_hash: content_hash(inputs)?,
            inputs: inputs.iter().map(show).collect(),
            outputs: outputs.iter().map(show).collect(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serialises");
        text.push('\n');
        fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}
