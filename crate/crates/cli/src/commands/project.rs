use nalgebra::DMatrix;

use super::fit::read_fit_matrix;
use super::Outputs;
use crate::args::{Command, ProjectArgs};
use crate::error::{exit, CliError, CliResult};
use crate::manifest::{absolute_input, prepare_output, RunManifest};
use crate::table::names;

/// Principal components of a column-centered matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// n x k
    pub scores: DMatrix<f64>,
    /// p x k, orthonormal columns.
    pub loadings: DMatrix<f64>,
    /// Fraction of the total variance carried by each component.
    pub explained: Vec<f64>,
    pub rank: usize,
}

/// Top-`k` components by SVD, truncated to the numerical rank. Each
/// loading is signed so that its largest entry in absolute value is positive.
pub fn pca(m: &DMatrix<f64>, k: usize) -> Pca {
    let (n, p) = m.shape();
    let means = m.row_mean();
    let centered = DMatrix::from_fn(n, p, |i, j| m[(i, j)] - means[j]);
    let svd = centered.svd(true, true);
    let (u, vt) = (svd.u.expect("requested U"), svd.v_t.expect("requested V^T"));
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let top = sv.first().copied().unwrap_or(0.0);
    let tol = top * n.max(p) as f64 * f64::EPSILON;
    let rank = sv.iter().filter(|&&s| s > tol).count();
    let total: f64 = sv.iter().map(|s| s * s).sum();
    let k = k.min(rank);

    let mut scores = DMatrix::zeros(n, k);
    let mut loadings = DMatrix::zeros(p, k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        let v = vt.row(idx).transpose();
        let pivot = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        loadings.set_column(c, &(v * sign));
        scores.set_column(c, &(u.column(idx) * (sv[c] * sign)));
    }
    Pca {
        scores,
        loadings,
        explained: sv.iter().take(k).map(|s| s * s / total).collect(),
        rank,
    }
}

pub fn run(mut args: ProjectArgs) -> CliResult<i32> {
    args.fit = absolute_input(&args.fit)?;
    let (table, m) = read_fit_matrix(&args.fit, "m.csv")?;
    if args.k == 0 || args.k > m.ncols() {
        return Err(CliError::Usage(format!("--k must lie in [1, {}], got {}", m.ncols(), args.k)));
    }
    let result = pca(&m, args.k);
    if result.rank < args.k {
        log::warn!("centered M has rank {}; keeping {} components instead of {}", result.rank, result.rank, args.k);
    }
    let out = prepare_output(&args.out)?;
    args.out = out.clone();
    let k = result.explained.len();
    let pcs = names("PC", k);
    let mut outputs = Outputs::new(&out);
    outputs.matrix("scores.csv", "sample", &table.ids, &pcs, &result.scores)?;
    outputs.matrix("loadings.csv", "variable", &table.columns, &pcs, &result.loadings)?;
    let ev = DMatrix::from_column_slice(k, 1, &result.explained);
    outputs.matrix("explained_variance.csv", "component", &pcs, &["fraction".to_string()], &ev)?;

    let mut manifest = RunManifest::new(Command::Project(args.clone()), &out);
    manifest.inputs.insert("fit".into(), args.fit.join("m.csv"));
    manifest.outputs = outputs.files;
    manifest.write()?;
    for (pc, f) in pcs.iter().zip(&result.explained) {
        println!("{pc}\t{f:.6}");
    }
    Ok(exit::OK)
}
