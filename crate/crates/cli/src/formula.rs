//! Right-hand sides of model formulas over a covariate table.
//!
//! Terms are joined by `+`: `1` keeps the intercept, `0` or `-1` removes it,
//! `.` selects every column, a name selects one column and `a:b` is the
//! interaction of two columns. The intercept is on unless removed. Columns
//! whose cells all parse as numbers are numeric; any other column is
//! categorical and is one-hot encoded with levels in lexical order, the first
//! level being dropped when the intercept is on.

use std::collections::BTreeSet;

use nalgebra::DMatrix;

use crate::error::{CliError, CliResult};
use crate::table::Table;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Term {
    All,
    Column(String),
    Interaction(String, String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Formula {
    pub intercept: bool,
    terms: Vec<Term>,
}

impl Formula {
    pub fn parse(text: &str) -> CliResult<Self> {
        let body = text.trim().trim_start_matches('~').trim();
        let mut intercept = true;
        let mut terms = Vec::new();
        let mut pieces = Vec::new();
        for piece in body.split('+') {
            // "- 1" is the only subtraction supported.
            match piece.rsplit_once('-') {
                Some((left, "1")) | Some((left, " 1")) => {
                    pieces.push(left.trim());
                    pieces.push("-1");
                }
                _ => pieces.push(piece.trim()),
            }
        }
        for raw in pieces.into_iter().filter(|t| !t.is_empty()) {
            match raw {
                "1" => intercept = true,
                "0" | "-1" => intercept = false,
                "." => terms.push(Term::All),
                t if t.contains(':') => {
                    let parts: Vec<&str> = t.split(':').map(str::trim).collect();
                    if parts.len() != 2 || parts.iter().any(|p| p.is_empty()) {
                        return Err(CliError::Usage(format!("only pairwise interactions are supported, got '{t}'")));
                    }
                    terms.push(Term::Interaction(parts[0].into(), parts[1].into()));
                }
                t => terms.push(Term::Column(t.into())),
            }
        }
        Ok(Self { intercept, terms })
    }

    pub fn names_columns(&self) -> bool {
        !self.terms.is_empty()
    }

    /// Design matrix and column names. `table` rows must already be aligned
    /// with the model rows; without a table only intercept-only formulas are valid.
    pub fn design(&self, table: Option<&Table>, n: usize) -> CliResult<(DMatrix<f64>, Vec<String>)> {
        let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
        if self.intercept {
            columns.push(("(Intercept)".into(), vec![1.0; n]));
        }
        if self.names_columns() {
            let table = table.ok_or_else(|| CliError::Usage("the formula names columns but no covariate file was given".into()))?;
            for term in &self.terms {
                let encoded = match term {
                    Term::All => {
                        let mut all = Vec::new();
                        for name in &table.columns {
                            all.extend(self.encode(table, name)?);
                        }
                        all
                    }
                    Term::Column(name) => self.encode(table, name)?,
                    Term::Interaction(a, b) => self.interact(table, a, b)?,
                };
                for (name, values) in encoded {
                    if !columns.iter().any(|(existing, _)| *existing == name) {
                        columns.push((name, values));
                    }
                }
            }
        }
        if columns.is_empty() {
            return Err(CliError::Usage("the design has no columns".into()));
        }
        let names = columns.iter().map(|(n, _)| n.clone()).collect();
        let m = DMatrix::from_fn(n, columns.len(), |i, k| columns[k].1[i]);
        Ok((m, names))
    }

    fn encode(&self, table: &Table, name: &str) -> CliResult<Vec<(String, Vec<f64>)>> {
        match column(table, name)? {
            Column::Numeric(v) => Ok(vec![(name.to_string(), v)]),
            Column::Categorical(cells) => {
                let levels: BTreeSet<&String> = cells.iter().collect();
                let skip = usize::from(self.intercept);
                Ok(levels
                    .into_iter()
                    .skip(skip)
                    .map(|level| {
                        let v = cells.iter().map(|c| f64::from(u8::from(c == level))).collect();
                        (format!("{name}{level}"), v)
                    })
                    .collect())
            }
        }
    }

    fn interact(&self, table: &Table, a: &str, b: &str) -> CliResult<Vec<(String, Vec<f64>)>> {
        match (column(table, a)?, column(table, b)?) {
            (Column::Categorical(ca), Column::Categorical(cb)) => {
                // One column per observed level pair.
                let pairs: BTreeSet<(&String, &String)> = ca.iter().zip(&cb).collect();
                let skip = usize::from(self.intercept);
                Ok(pairs
                    .into_iter()
                    .skip(skip)
                    .map(|(la, lb)| {
                        let v = ca.iter().zip(&cb).map(|(x, y)| f64::from(u8::from(x == la && y == lb))).collect();
                        (format!("{a}{la}:{b}{lb}"), v)
                    })
                    .collect())
            }
            (Column::Numeric(va), Column::Numeric(vb)) => {
                Ok(vec![(format!("{a}:{b}"), va.iter().zip(&vb).map(|(x, y)| x * y).collect())])
            }
            (Column::Numeric(v), Column::Categorical(_)) => self.scale(table, b, a, &v, false),
            (Column::Categorical(_), Column::Numeric(v)) => self.scale(table, a, b, &v, true),
        }
    }

    /// Categorical dummies multiplied by a numeric column.
    fn scale(&self, table: &Table, cat: &str, num: &str, v: &[f64], cat_first: bool) -> CliResult<Vec<(String, Vec<f64>)>> {
        Ok(self
            .encode(table, cat)?
            .into_iter()
            .map(|(name, d)| {
                let label = if cat_first { format!("{name}:{num}") } else { format!("{num}:{name}") };
                (label, d.iter().zip(v).map(|(x, y)| x * y).collect())
            })
            .collect())
    }
}

enum Column {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

fn column(table: &Table, name: &str) -> CliResult<Column> {
    let k = table
        .column_index(name)
        .ok_or_else(|| CliError::Usage(format!("unknown covariate column '{name}'")))?;
    let cells: Vec<String> = table.cells.iter().map(|row| row[k].clone()).collect();
    let numeric: Option<Vec<f64>> = cells.iter().map(|c| c.parse::<f64>().ok().filter(|v| v.is_finite())).collect();
    Ok(match numeric {
        Some(v) => Column::Numeric(v),
        None => Column::Categorical(cells),
    })
}

/// Reorder table rows to follow `ids`; every id must be present exactly once.
pub fn align(table: &Table, ids: &[String], what: &str) -> CliResult<Table> {
    let mut order = Vec::with_capacity(ids.len());
    for id in ids {
        let hits: Vec<usize> = table.ids.iter().enumerate().filter(|(_, t)| *t == id).map(|(i, _)| i).collect();
        match hits.as_slice() {
            [i] => order.push(*i),
            [] => return Err(CliError::Other(format!("{what}: no row for '{id}'"))),
            _ => return Err(CliError::Other(format!("{what}: duplicate rows for '{id}'"))),
        }
    }
    Ok(Table {
        id_label: table.id_label.clone(),
        columns: table.columns.clone(),
        ids: order.iter().map(|&i| table.ids[i].clone()).collect(),
        cells: order.iter().map(|&i| table.cells[i].clone()).collect(),
        lines: order.iter().map(|&i| table.lines[i]).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> Table {
        let rows = [("s1", "a", "x", "1.5"), ("s2", "b", "x", "2"), ("s3", "a", "y", "-1"), ("s4", "c", "y", "0")];
        Table {
            id_label: "id".into(),
            columns: vec!["site".into(), "time".into(), "depth".into()],
            ids: rows.iter().map(|r| r.0.to_string()).collect(),
            cells: rows.iter().map(|r| vec![r.1.to_string(), r.2.to_string(), r.3.to_string()]).collect(),
            lines: vec![2, 3, 4, 5],
        }
    }

    #[test]
    fn parsing() {
        assert!(Formula::parse("~ 1").unwrap().intercept);
        assert!(!Formula::parse("0 + site").unwrap().intercept);
        assert!(!Formula::parse("site - 1").unwrap().intercept);
        assert!(Formula::parse("a:b:c").is_err());
        assert!(!Formula::parse("1").unwrap().names_columns());
    }

    #[test]
    fn categorical_and_numeric_encoding() {
        let t = table();
        let (x, names) = Formula::parse("site + depth").unwrap().design(Some(&t), 4).unwrap();
        assert_eq!(names, ["(Intercept)", "siteb", "sitec", "depth"]);
        assert_eq!(x.column(1).as_slice(), &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(x.column(3).as_slice(), &[1.5, 2.0, -1.0, 0.0]);

        let (x, names) = Formula::parse("0 + site").unwrap().design(Some(&t), 4).unwrap();
        assert_eq!(names, ["sitea", "siteb", "sitec"]);
        assert_eq!(x.row_sum().as_slice(), &[2.0, 1.0, 1.0]);
        assert_eq!(x.column_sum().as_slice(), &[1.0; 4]);
    }

    #[test]
    fn interactions() {
        let t = table();
        let (x, names) = Formula::parse("~ site:time").unwrap().design(Some(&t), 4).unwrap();
        // Observed pairs (a,x) (a,y) (b,x) (c,y); the first is dropped.
        assert_eq!(names, ["(Intercept)", "sitea:timey", "siteb:timex", "sitec:timey"]);
        assert_eq!(x.column(1).as_slice(), &[0.0, 0.0, 1.0, 0.0]);
        let (x, names) = Formula::parse("0 + time:depth").unwrap().design(Some(&t), 4).unwrap();
        assert_eq!(names, ["timex:depth", "timey:depth"]);
        assert_eq!(x.column(1).as_slice(), &[0.0, 0.0, -1.0, 0.0]);
    }

    #[test]
    fn errors_and_alignment() {
        let t = table();
        assert!(Formula::parse("nope").unwrap().design(Some(&t), 4).is_err());
        assert!(Formula::parse("site").unwrap().design(None, 4).is_err());
        assert!(Formula::parse("0").unwrap().design(None, 4).is_err());
        let ids: Vec<String> = ["s3", "s1", "s4", "s2"].iter().map(|s| s.to_string()).collect();
        let aligned = align(&t, &ids, "covariates").unwrap();
        assert_eq!(aligned.cells[0][2], "-1");
        assert!(align(&t, &["s9".to_string()], "covariates").is_err());
    }
}
