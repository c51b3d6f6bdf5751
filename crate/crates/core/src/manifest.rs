//! Run manifests written next to every output file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::write_string;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Version of the JSON-lines and report schemas.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }

    /// Digest of bundled data that has no file on disk.
    pub fn of_bytes(label: &str, bytes: &[u8]) -> Self {
        Self {
            path: label.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<FileDigest>,
    pub configs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub tool_version: String,
    pub schema_version: u32,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            inputs: Vec::new(),
            configs: Vec::new(),
            outputs: Vec::new(),
            tool_version: TOOL_VERSION.to_string(),
            schema_version: SCHEMA_VERSION,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    pub fn input(mut self, path: &Path) -> Result<Self> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(self)
    }

    pub fn config(mut self, path: &Path) -> Result<Self> {
        self.configs.push(FileDigest::of(path)?);
        Ok(self)
    }

    pub fn bundled_config(mut self, label: &str, content: &str) -> Self {
        self.configs.push(FileDigest::of_bytes(label, content.as_bytes()));
        self
    }

    pub fn output(mut self, path: &Path) -> Result<Self> {
        self.outputs.push(FileDigest::of(path)?);
        Ok(self)
    }

    /// `<output>.manifest.json`
    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        output.with_file_name(name)
    }

    pub fn write_for(&self, output: &Path) -> Result<PathBuf> {
        let path = Self::path_for(output);
        let mut json = serde_json::to_string_pretty(self).expect("manifest serializes");
        json.push('\n');
        write_string(&path, &json)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::io::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.line(), e.to_string()))
    }

    /// Files whose current digest differs from the recorded one. Entries
    /// for bundled data (no file on disk) are skipped.
    pub fn mismatches(&self) -> Vec<String> {
        self.inputs
            .iter()
            .chain(&self.configs)
            .chain(&self.outputs)
            .filter(|d| Path::new(&d.path).is_file())
            .filter(|d| FileDigest::of(Path::new(&d.path)).map_or(true, |now| now.sha256 != d.sha256))
            .map(|d| d.path.clone())
            .collect()
    }
}
