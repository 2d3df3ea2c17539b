//! Output directory with provenance stamped into every file.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rma_core::{ExperimentConfig, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    /// Hashes the config with its output directory cleared.
    pub fn new(command: &'static str, config: &ExperimentConfig, seed: u64) -> Self {
        let mut hashed = config.clone();
        hashed.output = PathBuf::new();
        let digest = Sha256::digest(hashed.to_json().as_bytes());
        let config_sha256 = digest.iter().map(|b| format!("{b:02x}")).collect();
        Self { tool: "rma", version: VERSION, command, config_sha256, seed }
    }

    fn comment(&self) -> String {
        format!(
            "# {} {} {} config_sha256={} seed={}\n",
            self.tool, self.version, self.command, self.config_sha256, self.seed
        )
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    provenance: &'a Provenance,
    config: &'a ExperimentConfig,
    #[serde(flatten)]
    body: &'a T,
}

pub struct Artifacts {
    dir: PathBuf,
    provenance: Provenance,
    config: ExperimentConfig,
    written: Vec<PathBuf>,
}

impl Artifacts {
    pub fn create(dir: &Path, provenance: Provenance, config: ExperimentConfig) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), provenance, config, written: Vec::new() })
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// JSON object holding provenance, the resolved config and the fields of `body`.
    pub fn json<T: Serialize>(&mut self, name: &str, body: &T) -> Result<()> {
        let envelope = Envelope { provenance: &self.provenance, config: &self.config, body };
        let mut text = serde_json::to_string_pretty(&envelope)?;
        text.push('\n');
        let path = self.dir.join(name);
        std::fs::write(&path, text)?;
        self.written.push(path);
        Ok(())
    }

    /// CSV of serializable rows after a `#` provenance line.
    pub fn csv_rows<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        self.csv_with(name, |out| {
            let mut w = csv::Writer::from_writer(out);
            for row in rows {
                w.serialize(row)?;
            }
            w.flush()?;
            Ok(())
        })
    }

    /// CSV produced by `write` after a `#` provenance line.
    pub fn csv_with(&mut self, name: &str, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        let mut out = BufWriter::new(File::create(&path)?);
        out.write_all(self.provenance.comment().as_bytes())?;
        write(&mut out)?;
        out.flush()?;
        self.written.push(path);
        Ok(())
    }
}
