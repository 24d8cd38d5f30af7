use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use zipln::model::ZiConfig;
use zipln::optim::FitConfig;

use crate::args::Command;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one command run, sufficient to reproduce its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// The command with every path made absolute.
    pub invocation: Command,
    pub inputs: BTreeMap<String, PathBuf>,
    pub zi_config: Option<ZiConfig>,
    pub fit_config: Option<FitConfig>,
    pub output_dir: PathBuf,
    pub seed: Option<u64>,
    /// SHA-256 of the count matrix, for fit and simulate.
    pub fingerprint: Option<String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(invocation: Command, output_dir: &Path) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            invocation,
            inputs: BTreeMap::new(),
            zi_config: None,
            fit_config: None,
            output_dir: output_dir.to_path_buf(),
            seed: None,
            fingerprint: None,
            outputs: Vec::new(),
        }
    }

    pub fn write(&mut self) -> CliResult<()> {
        self.outputs.sort();
        self.outputs.dedup();
        let path = self.output_dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::Other(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(CliError::io(format!("cannot write {}", path.display())))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(format!("cannot read {}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Malformed {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })
    }
}

/// SHA-256 over the dimensions and the integer counts in row-major order.
pub fn fingerprint(counts: &DMatrix<f64>) -> String {
    let mut h = Sha256::new();
    h.update((counts.nrows() as u64).to_le_bytes());
    h.update((counts.ncols() as u64).to_le_bytes());
    for i in 0..counts.nrows() {
        for j in 0..counts.ncols() {
            h.update((counts[(i, j)] as u64).to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Absolute form of an existing input path.
pub fn absolute_input(path: &Path) -> CliResult<PathBuf> {
    path.canonicalize().map_err(CliError::io(format!("cannot open {}", path.display())))
}

/// Create the output directory and return its absolute path.
pub fn prepare_output(path: &Path) -> CliResult<PathBuf> {
    std::fs::create_dir_all(path).map_err(CliError::io(format!("cannot create {}", path.display())))?;
    absolute_input(path)
}
