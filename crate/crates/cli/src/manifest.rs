//! Output directory bookkeeping: atomic writes and the run manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

pub const MANIFEST_NAME: &str = "manifest.json";

/// Collects the files a command writes into the output directory.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)
            .with_context(|| format!("cannot create output directory {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    /// Writes `name` through a temporary file in the same directory, then renames it into place.
    pub fn write<F>(&mut self, name: &str, fill: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut dyn Write) -> Result<()>,
    {
        let target = self.root.join(name);
        let mut tmp = NamedTempFile::new_in(&self.root)
            .with_context(|| format!("cannot create a temporary file in {}", self.root.display()))?;
        {
            let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
            fill(&mut buf)?;
            buf.flush()?;
        }
        tmp.persist(&target)
            .with_context(|| format!("cannot move output into {}", target.display()))?;
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        Ok(target)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub started_unix: u64,
    pub finished_unix: u64,
    pub exit_code: i32,
    pub outputs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub spec_sha256: String,
    pub version: String,
    pub commands: BTreeMap<String, CommandRecord>,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn spec_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl RunManifest {
    /// The manifest already in `dir` if it was produced from the same spec, else a fresh one.
    pub fn open(dir: &Path, spec_sha256: &str) -> Self {
        let fresh = Self {
            spec_sha256: spec_sha256.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            commands: BTreeMap::new(),
        };
        let Ok(text) = std::fs::read_to_string(dir.join(MANIFEST_NAME)) else {
            return fresh;
        };
        match serde_json::from_str::<RunManifest>(&text) {
            Ok(m) if m.spec_sha256 == spec_sha256 && m.version == fresh.version => m,
            _ => fresh,
        }
    }

    pub fn record(&mut self, command: &str, record: CommandRecord) {
        self.commands.insert(command.to_string(), record);
    }

    /// Writes the manifest after checking that every listed output exists.
    pub fn save(&self, out: &mut OutputDir) -> Result<()> {
        for (cmd, rec) in &self.commands {
            for file in &rec.outputs {
                if !out.root().join(file).is_file() {
                    bail!("output {file} of `{cmd}` is missing");
                }
            }
        }
        out.write_json(MANIFEST_NAME, self)?;
        Ok(())
    }
}
