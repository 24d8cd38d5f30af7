use std::fs::File;
use std::io::BufWriter;

use zipln::selection::{compare_models, CriteriaRow};

use super::{write_json, Outputs};
use crate::args::{Command, CompareArgs};
use crate::error::{exit, CliError, CliResult};
use crate::manifest::{absolute_input, prepare_output, RunManifest, MANIFEST_FILE};

pub fn run(mut args: CompareArgs) -> CliResult<i32> {
    for dir in args.fits.iter_mut() {
        *dir = absolute_input(dir)?;
    }
    let mut rows = Vec::with_capacity(args.fits.len());
    let mut fingerprint: Option<(String, &std::path::Path)> = None;
    for dir in &args.fits {
        let manifest = RunManifest::read(&dir.join(MANIFEST_FILE))?;
        let fp = manifest
            .fingerprint
            .ok_or_else(|| CliError::Other(format!("{}: manifest has no dataset fingerprint", dir.display())))?;
        match &fingerprint {
            None => fingerprint = Some((fp, dir)),
            Some((first, first_dir)) if *first != fp => {
                return Err(CliError::Other(format!(
                    "fingerprint mismatch: {} and {} were fitted on different count tables",
                    first_dir.display(),
                    dir.display()
                )));
            }
            Some(_) => {}
        }
        let path = dir.join("criteria.json");
        let text = std::fs::read_to_string(&path).map_err(CliError::io(format!("cannot read {}", path.display())))?;
        let row: CriteriaRow = serde_json::from_str(&text).map_err(|e| CliError::Malformed {
            path: path.clone(),
            line: e.line() as u64,
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    let report = compare_models(rows)?;
    print!("{}", report.pretty());

    if let Some(out) = &args.out {
        let out = prepare_output(out)?;
        args.out = Some(out.clone());
        let mut outputs = Outputs::new(&out);
        let path = outputs.path("criteria.csv");
        let file = File::create(&path).map_err(CliError::io(format!("cannot create {}", path.display())))?;
        report.write_csv(BufWriter::new(file))?;
        write_json(&mut outputs, "report.json", &report)?;
        let mut manifest = RunManifest::new(Command::Compare(args.clone()), &out);
        for (i, dir) in args.fits.iter().enumerate() {
            manifest.inputs.insert(format!("fit{:03}", i + 1), dir.clone());
        }
        manifest.fingerprint = fingerprint.map(|(fp, _)| fp);
        manifest.outputs = outputs.files;
        manifest.write()?;
    }
    Ok(exit::OK)
}
