//! CSV tables with a header row and a leading id column, and matrix output
//! with 17 significant digits.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{CliError, CliResult};

/// A parsed CSV: id column, column names and raw cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub id_label: String,
    pub columns: Vec<String>,
    pub ids: Vec<String>,
    pub cells: Vec<Vec<String>>,
    /// Source line of each data row, for error messages.
    pub lines: Vec<u64>,
}

impl Table {
    pub fn read(path: &Path) -> CliResult<Self> {
        let malformed = |line: u64, message: String| CliError::Malformed {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .from_path(path)
            .map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(io) => CliError::Io {
                    context: format!("cannot read {}", path.display()),
                    source: io,
                },
                other => CliError::Other(format!("{}: {other:?}", path.display())),
            })?;
        let headers = rdr.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
        if headers.len() < 2 {
            return Err(malformed(1, "expected an id column and at least one data column".into()));
        }
        let mut table = Table {
            id_label: headers[0].to_string(),
            columns: headers.iter().skip(1).map(str::to_string).collect(),
            ids: Vec::new(),
            cells: Vec::new(),
            lines: Vec::new(),
        };
        for record in rdr.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                malformed(line, e.to_string())
            })?;
            let line = record.position().map_or(0, |p| p.line());
            table.ids.push(record[0].to_string());
            table.cells.push(record.iter().skip(1).map(|s| s.trim().to_string()).collect());
            table.lines.push(line);
        }
        if table.ids.is_empty() {
            return Err(malformed(2, "no data rows".into()));
        }
        Ok(table)
    }

    pub fn n_rows(&self) -> usize {
        self.ids.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// All cells as reals.
    pub fn to_matrix(&self, path: &Path) -> CliResult<DMatrix<f64>> {
        let mut m = DMatrix::zeros(self.n_rows(), self.columns.len());
        for (i, row) in self.cells.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                m[(i, j)] = cell.parse::<f64>().map_err(|_| CliError::Malformed {
                    path: path.to_path_buf(),
                    line: self.lines[i],
                    message: format!("column '{}': '{cell}' is not a number", self.columns[j]),
                })?;
            }
        }
        Ok(m)
    }

    /// All cells as nonnegative integer counts.
    pub fn to_counts(&self, path: &Path) -> CliResult<DMatrix<f64>> {
        let mut m = DMatrix::zeros(self.n_rows(), self.columns.len());
        for (i, row) in self.cells.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                let v = cell.parse::<u64>().map_err(|_| CliError::Malformed {
                    path: path.to_path_buf(),
                    line: self.lines[i],
                    message: format!("column '{}': '{cell}' is not a nonnegative integer count", self.columns[j]),
                })?;
                m[(i, j)] = v as f64;
            }
        }
        Ok(m)
    }
}

pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write a matrix with a header row and a leading label column.
pub fn write_matrix(path: &Path, id_label: &str, row_names: &[String], col_names: &[String], m: &DMatrix<f64>) -> CliResult<()> {
    debug_assert_eq!(row_names.len(), m.nrows());
    debug_assert_eq!(col_names.len(), m.ncols());
    let file = File::create(path).map_err(CliError::io(format!("cannot create {}", path.display())))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let csv_err = |e: csv::Error| CliError::Other(format!("{}: {e}", path.display()));
    let mut header = vec![id_label.to_string()];
    header.extend(col_names.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (i, name) in row_names.iter().enumerate() {
        let mut row = vec![name.clone()];
        row.extend(m.row(i).iter().map(|v| fmt_real(*v)));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(CliError::io(format!("cannot write {}", path.display())))?;
    Ok(())
}

/// Write counts as integers.
pub fn write_counts(path: &Path, id_label: &str, row_names: &[String], col_names: &[String], m: &DMatrix<f64>) -> CliResult<()> {
    let file = File::create(path).map_err(CliError::io(format!("cannot create {}", path.display())))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let csv_err = |e: csv::Error| CliError::Other(format!("{}: {e}", path.display()));
    let mut header = vec![id_label.to_string()];
    header.extend(col_names.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (i, name) in row_names.iter().enumerate() {
        let mut row = vec![name.clone()];
        row.extend(m.row(i).iter().map(|v| format!("{}", *v as u64)));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(CliError::io(format!("cannot write {}", path.display())))?;
    Ok(())
}

pub fn names(prefix: &str, k: usize) -> Vec<String> {
    (1..=k).map(|i| format!("{prefix}{i}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = DMatrix::from_row_slice(2, 2, &[0.1, -1.0 / 3.0, 1e-300, std::f64::consts::PI]);
        write_matrix(&path, "id", &names("r", 2), &names("c", 2), &m).unwrap();
        let back = Table::read(&path).unwrap().to_matrix(&path).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn malformed_counts_report_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("y.csv");
        std::fs::write(&path, "id,a,b\ns1,1,2\ns2,3,x\n").unwrap();
        let t = Table::read(&path).unwrap();
        match t.to_counts(&path) {
            Err(CliError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        std::fs::write(&path, "id,a,b\ns1,1,2\ns2,3\n").unwrap();
        match Table::read(&path) {
            Err(CliError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        std::fs::write(&path, "id,a\ns1,-1\n").unwrap();
        assert!(Table::read(&path).unwrap().to_counts(&path).is_err());
    }
}
