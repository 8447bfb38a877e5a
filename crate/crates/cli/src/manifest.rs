use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Provenance record written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: &'static str,
    /// Resolved configuration after flags, config files and defaults are merged.
    pub config: serde_json::Value,
    /// SHA-256 of each input file, keyed by the path as given.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            config: serde_json::Value::Null,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            seed: None,
            timestamp: timestamp(),
        }
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs
            .insert(path.display().to_string(), format!("{:x}", Sha256::digest(&bytes)));
        Ok(())
    }

    pub fn config(&mut self, value: &impl Serialize) {
        self.config = serde_json::to_value(value).expect("config serializes");
    }
}

/// Honours `SOURCE_DATE_EPOCH` so manifests can be reproduced byte for byte.
fn timestamp() -> String {
    let pinned = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0));
    pinned
        .unwrap_or_else(chrono::Utc::now)
        .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Collects outputs under one directory and writes each one atomically.
pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, body: &str) -> anyhow::Result<()> {
        let path = self.path(name);
        polyemo::write_atomic(&path, body.as_bytes()).with_context(|| format!("writing {}", path.display()))?;
        self.note(name);
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> anyhow::Result<()> {
        let mut body = serde_json::to_string_pretty(value).expect("output serializes");
        body.push('\n');
        self.write(name, &body)
    }

    /// Records a file written by other means.
    pub fn note(&mut self, name: &str) {
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
    }

    pub fn finish(mut self, mut manifest: RunManifest) -> anyhow::Result<()> {
        manifest.outputs = std::mem::take(&mut self.written);
        self.write_json("manifest.json", &manifest)
    }
}
