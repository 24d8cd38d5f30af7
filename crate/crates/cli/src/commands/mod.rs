pub mod bench;
pub mod compare;
pub mod fit;
pub mod project;
pub mod simulate;

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::args::Command;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::table::{write_counts, write_matrix};

pub fn run(command: Command) -> CliResult<i32> {
    match command {
        Command::Fit(a) => fit::run(a),
        Command::Simulate(a) => simulate::run(a),
        Command::Bench(a) => bench::run(a),
        Command::Compare(a) => compare::run(a),
        Command::Project(a) => project::run(a),
        Command::Replay(a) => {
            let manifest = RunManifest::read(&a.manifest)?;
            let mut command = manifest.invocation;
            if let Some(out) = a.out {
                set_output(&mut command, out)?;
            }
            log::info!("replaying {} from {}", command.name(), a.manifest.display());
            run(command)
        }
    }
}

fn set_output(command: &mut Command, out: PathBuf) -> CliResult<()> {
    match command {
        Command::Fit(a) => a.out = out,
        Command::Simulate(a) => a.out = out,
        Command::Bench(a) => a.out = out,
        Command::Compare(a) => a.out = Some(out),
        Command::Project(a) => a.out = out,
        Command::Replay(_) => return Err(CliError::Other("a manifest cannot record a replay".into())),
    }
    Ok(())
}

/// Files written into one output directory.
pub struct Outputs {
    dir: PathBuf,
    pub files: Vec<String>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    /// Path of a new output file, recorded for the manifest.
    pub fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    pub fn matrix(&mut self, name: &str, label: &str, rows: &[String], cols: &[String], m: &DMatrix<f64>) -> CliResult<()> {
        let path = self.path(name);
        write_matrix(&path, label, rows, cols, m)
    }

    pub fn counts(&mut self, name: &str, label: &str, rows: &[String], cols: &[String], m: &DMatrix<f64>) -> CliResult<()> {
        let path = self.path(name);
        write_counts(&path, label, rows, cols, m)
    }
}

pub fn write_json<T: Serialize>(outputs: &mut Outputs, name: &str, value: &T) -> CliResult<()> {
    let path = outputs.path(name);
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(CliError::io(format!("cannot write {}", path.display())))
}
