use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;
use zipln::model::{CountDataset, Design, ZiCovariates, ZiConfig, ZiParams, ZiVariant};
use zipln::optim::{fit, FitConfig, FitResult};
use zipln::selection::{compare_models, criteria};
use zipln::ZiplnError;

use super::{write_json, Outputs};
use crate::args::{Command, FitArgs};
use crate::error::{exit, CliError, CliResult};
use crate::formula::{align, Formula};
use crate::manifest::{absolute_input, fingerprint, prepare_output, RunManifest};
use crate::table::{fmt_real, Table};

/// Counts and design assembled from the input files.
pub struct Prepared {
    pub data: CountDataset,
    pub sample_ids: Vec<String>,
    pub variables: Vec<String>,
    pub x_names: Vec<String>,
    pub zi_names: Vec<String>,
    pub dropped: Vec<String>,
}

pub fn run(mut args: FitArgs) -> CliResult<i32> {
    args.counts = absolute_input(&args.counts)?;
    for path in [&mut args.covariates, &mut args.zi_covariates, &mut args.offsets].into_iter().flatten() {
        *path = absolute_input(path)?;
    }
    let out = prepare_output(&args.out)?;
    args.out = out.clone();
    // Recorded so that a replay into another directory keeps the label.
    if args.name.is_none() {
        args.name = Some(out.file_name().map_or("fit".into(), |n| n.to_string_lossy().into_owned()));
    }

    let config = fit_config(&args)?;
    let prepared = prepare(&args)?;
    let data = &prepared.data;
    config.validate(data.n()).map_err(|e| CliError::Usage(e.to_string()))?;

    log::info!("fitting n = {}, p = {}, d = {} with {:?}", data.n(), data.p(), data.d(), config.method);
    let result = fit(data, &config)?;
    let row = criteria(&result, data, args.name.as_deref().unwrap_or("fit"))?;

    let mut outputs = Outputs::new(&out);
    write_fit(&mut outputs, &prepared, &result)?;
    write_json(&mut outputs, "criteria.json", &row)?;
    write_json(
        &mut outputs,
        "summary.json",
        &Summary {
            converged: result.converged,
            n_iters: result.n_iters,
            elbo: result.final_elbo(),
            zero_fraction: data.zero_fraction(),
            dropped_variables: prepared.dropped.clone(),
        },
    )?;

    let mut manifest = RunManifest::new(Command::Fit(args.clone()), &out);
    manifest.inputs.insert("counts".into(), args.counts.clone());
    for (key, path) in [("covariates", &args.covariates), ("zi_covariates", &args.zi_covariates), ("offsets", &args.offsets)] {
        if let Some(p) = path {
            manifest.inputs.insert(key.into(), p.clone());
        }
    }
    manifest.zi_config = Some(ZiConfig::new(args.fit.zi));
    manifest.fit_config = Some(config);
    manifest.seed = Some(args.seed);
    manifest.fingerprint = Some(fingerprint(data.counts()));
    manifest.outputs = outputs.files;
    manifest.write()?;

    print!("{}", compare_models(vec![row])?.pretty());
    if result.converged {
        Ok(exit::OK)
    } else {
        log::warn!("no convergence after {} iterations; outputs hold the last iterate", result.n_iters);
        Ok(exit::NOT_CONVERGED)
    }
}

#[derive(Serialize)]
struct Summary {
    converged: bool,
    n_iters: usize,
    elbo: f64,
    zero_fraction: f64,
    dropped_variables: Vec<String>,
}

fn fit_config(args: &FitArgs) -> CliResult<FitConfig> {
    let f = &args.fit;
    let mut config = FitConfig::new(f.method(), f.elbo_variant(), f.zi);
    config.max_iters = f.max_iters;
    config.rel_tol = f.tol;
    config.learning_rate = f.learning_rate;
    config.minibatch_size = f.minibatch;
    config.seed = args.seed;
    // Size-dependent checks run once the data are loaded.
    config.validate(usize::MAX).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

/// Load the counts and build the design described by the arguments.
pub fn prepare(args: &FitArgs) -> CliResult<Prepared> {
    let table = Table::read(&args.counts)?;
    let raw = table.to_counts(&args.counts)?;
    let ids = table.ids.clone();
    let n = ids.len();

    let mut keep: Vec<usize> = (0..raw.ncols()).collect();
    if let Some(threshold) = args.min_prevalence {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(CliError::Usage(format!("--min-prevalence must lie in [0, 1], got {threshold}")));
        }
        keep.retain(|&j| raw.column(j).iter().filter(|&&v| v > 0.0).count() as f64 >= threshold * n as f64);
        if keep.is_empty() {
            return Err(CliError::Other("--min-prevalence removed every variable".into()));
        }
    }
    let dropped: Vec<String> = (0..raw.ncols())
        .filter(|j| !keep.contains(j))
        .map(|j| table.columns[j].clone())
        .collect();
    if !dropped.is_empty() {
        log::warn!("--min-prevalence dropped {} of {} variables", dropped.len(), raw.ncols());
    }
    let counts = raw.select_columns(&keep);
    let variables: Vec<String> = keep.iter().map(|&j| table.columns[j].clone()).collect();

    let cov_table = args
        .covariates
        .as_deref()
        .map(|p| Table::read(p).and_then(|t| align(&t, &ids, &p.display().to_string())))
        .transpose()?;
    let default = |file: bool| if file { "." } else { "1" };
    let formula = Formula::parse(args.formula.as_deref().unwrap_or(default(cov_table.is_some())))?;
    let (x, x_names) = formula.design(cov_table.as_ref(), n)?;

    let zi = args.fit.zi;
    let (zi_cov, zi_names) = match zi {
        ZiVariant::None | ZiVariant::Nd => {
            if args.zi_covariates.is_some() || args.zi_formula.is_some() {
                return Err(CliError::Usage(format!("--zi {zi} takes no zero-inflation covariates")));
            }
            (ZiCovariates::None, Vec::new())
        }
        ZiVariant::Cd | ZiVariant::Rd => {
            let keys = if zi == ZiVariant::Cd { &ids } else { &variables };
            let zi_table = args
                .zi_covariates
                .as_deref()
                .map(|p| Table::read(p).and_then(|t| align(&t, keys, &p.display().to_string())))
                .transpose()?;
            let formula = Formula::parse(args.zi_formula.as_deref().unwrap_or(default(zi_table.is_some())))?;
            let (m, names) = formula.design(zi_table.as_ref(), keys.len())?;
            let cov = if zi == ZiVariant::Cd {
                ZiCovariates::Rows(m)
            } else {
                ZiCovariates::Columns(m.transpose())
            };
            (cov, names)
        }
    };

    let offsets = if let Some(path) = &args.offsets {
        let t = align(&Table::read(path)?, &ids, &path.display().to_string())?;
        let all = t.to_matrix(path)?;
        let mut cols = Vec::with_capacity(variables.len());
        for v in &variables {
            cols.push(t.column_index(v).ok_or_else(|| CliError::Other(format!("{}: no column '{v}'", path.display())))?);
        }
        all.select_columns(&cols)
    } else if args.offset_total_counts {
        let mut o = DMatrix::zeros(n, variables.len());
        for (i, id) in ids.iter().enumerate() {
            let total = raw.row(i).sum();
            if total <= 0.0 {
                return Err(CliError::Core(ZiplnError::InvalidData(format!(
                    "sample '{id}' has no counts, so its log total count is undefined"
                ))));
            }
            o.row_mut(i).fill(total.ln());
        }
        o
    } else {
        DMatrix::zeros(n, variables.len())
    };

    let design = Design::new(offsets, x, zi_cov)?;
    let data = CountDataset::new(counts, design)?;
    ZiConfig::new(zi).validate(data.design())?;
    Ok(Prepared {
        data,
        sample_ids: ids,
        variables,
        x_names,
        zi_names,
        dropped,
    })
}

fn write_fit(outputs: &mut Outputs, prep: &Prepared, result: &FitResult) -> CliResult<()> {
    let theta = &result.theta;
    let vars = &prep.variables;
    let ids = &prep.sample_ids;
    outputs.matrix("omega.csv", "variable", vars, vars, theta.omega())?;
    outputs.matrix("sigma.csv", "variable", vars, vars, theta.sigma())?;
    outputs.matrix("b.csv", "covariate", &prep.x_names, vars, theta.b())?;
    match theta.zi() {
        ZiParams::None => {}
        ZiParams::Nd { pi } => {
            let path = outputs.path("zi.csv");
            std::fs::write(&path, format!("parameter,value\npi,{}\n", fmt_real(*pi)))
                .map_err(CliError::io(format!("cannot write {}", path.display())))?;
        }
        ZiParams::Cd { b0 } => outputs.matrix("zi.csv", "covariate", &prep.zi_names, vars, b0)?,
        ZiParams::Rd { b0bar } => outputs.matrix("zi.csv", "sample", ids, &prep.zi_names, b0bar)?,
    }
    outputs.matrix("m.csv", "sample", ids, vars, &result.psi.m)?;
    outputs.matrix("s.csv", "sample", ids, vars, &result.psi.s)?;
    outputs.matrix("p.csv", "sample", ids, vars, &result.psi.p)?;
    let trace = DMatrix::from_column_slice(result.elbo_trace.len(), 1, &result.elbo_trace);
    let iters: Vec<String> = (0..result.elbo_trace.len()).map(|i| i.to_string()).collect();
    outputs.matrix("elbo_trace.csv", "iteration", &iters, &["elbo".to_string()], &trace)?;
    Ok(())
}

/// Read a matrix written by [`write_fit`].
pub fn read_fit_matrix(dir: &Path, file: &str) -> CliResult<(Table, DMatrix<f64>)> {
    let path = dir.join(file);
    let table = Table::read(&path)?;
    let m = table.to_matrix(&path)?;
    Ok((table, m))
}
