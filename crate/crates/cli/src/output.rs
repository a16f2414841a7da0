//! Run directories and their manifest.

use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;

/// Contents of `manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct OutputRecord {
    pub id: String,
    pub command: String,
    pub config_hash: String,
    pub version: String,
    /// Seconds spent in the command.
    pub wall_clock: f64,
    pub files: Vec<String>,
    pub summary: serde_json::Value,
}

/// A run directory being filled.
pub struct RunDir {
    path: PathBuf,
    files: Vec<String>,
}

impl RunDir {
    pub fn create(root: &Path, id: &str, cfg: &ExperimentConfig) -> io::Result<Self> {
        let path = root.join(id);
        fs::create_dir_all(&path)?;
        fs::write(path.join("config.json"), cfg.canonical_json())?;
        Ok(Self {
            path,
            files: vec!["config.json".into()],
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Creates `name` and hands a buffered writer to `write`.
    pub fn write<F>(&mut self, name: &str, write: F) -> io::Result<()>
    where
        F: FnOnce(BufWriter<File>) -> io::Result<()>,
    {
        let file = File::create(self.path.join(name))?;
        write(BufWriter::new(file))?;
        self.files.push(name.to_owned());
        Ok(())
    }

    pub fn finish(mut self, mut record: OutputRecord) -> io::Result<OutputRecord> {
        self.files.push("manifest.json".into());
        record.files = self.files;
        let text = serde_json::to_string_pretty(&record).map_err(io::Error::other)?;
        fs::write(self.path.join("manifest.json"), text)?;
        Ok(record)
    }
}
