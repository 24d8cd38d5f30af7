//! Simulation study harness: scenario grids, the estimator roster, error
//! metrics and CSV/JSON reports.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::elbo::ElboVariant;
use crate::error::{Result, ZiplnError};
use crate::model::{sample_dataset, scenario_params, CountDataset, ScenarioSpec, ZiParams, ZiVariant};
use crate::optim::{fit, FitConfig, FitResult};

/// The swept parameter of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Pi,
    Gamma,
    N,
    P,
}

impl Axis {
    pub fn as_str(&self) -> &'static str {
        match self {
            Axis::Pi => "pi",
            Axis::Gamma => "gamma",
            Axis::N => "n",
            Axis::P => "p",
        }
    }

    /// Paper-scale axis values.
    pub fn paper_values(&self) -> Vec<f64> {
        let steps = |start: f64, step: f64, count: usize| (0..count).map(|k| start + step * k as f64).collect();
        match self {
            Axis::Pi => (2..=9).map(|k| k as f64 / 10.0).collect(),
            Axis::Gamma => steps(0.0, 0.5, 7),
            Axis::N => steps(100.0, 100.0, 6),
            Axis::P => steps(100.0, 100.0, 5),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Axis {
    type Err = ZiplnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().trim_end_matches("_sweep") {
            "pi" => Ok(Axis::Pi),
            "gamma" => Ok(Axis::Gamma),
            "n" => Ok(Axis::N),
            "p" => Ok(Axis::P),
            other => Err(ZiplnError::InvalidParameter(format!("unknown axis '{other}'"))),
        }
    }
}

/// Estimators compared in the study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BenchMethod {
    Standard,
    Enhanced,
    StandardAnalytic,
    EnhancedAnalytic,
    #[serde(rename = "PLN")]
    Pln,
    #[serde(rename = "OraclePLN")]
    OraclePln,
}

impl BenchMethod {
    pub const ALL: [Self; 6] = [
        Self::Standard,
        Self::Enhanced,
        Self::StandardAnalytic,
        Self::EnhancedAnalytic,
        Self::Pln,
        Self::OraclePln,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Standard => "Standard",
            Self::Enhanced => "Enhanced",
            Self::StandardAnalytic => "StandardAnalytic",
            Self::EnhancedAnalytic => "EnhancedAnalytic",
            Self::Pln => "PLN",
            Self::OraclePln => "OraclePLN",
        }
    }

    pub fn is_zero_inflated(&self) -> bool {
        !matches!(self, Self::Pln | Self::OraclePln)
    }

    /// Fit configuration: VEM for the standard bound and both plain models,
    /// gradient ascent for the others.
    pub fn config(&self, zi: ZiVariant, settings: &FitSettings) -> FitConfig {
        let mut cfg = match self {
            Self::Standard => FitConfig::vem(zi),
            Self::Enhanced => FitConfig::gradient(ElboVariant::ENHANCED, zi),
            Self::StandardAnalytic => FitConfig::gradient(ElboVariant::STANDARD_ANALYTIC, zi),
            Self::EnhancedAnalytic => FitConfig::gradient(ElboVariant::ENHANCED_ANALYTIC, zi),
            Self::Pln | Self::OraclePln => FitConfig::vem(ZiVariant::None),
        };
        cfg.max_iters = settings.max_iters;
        cfg.rel_tol = settings.rel_tol;
        cfg
    }
}

impl fmt::Display for BenchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchMethod {
    type Err = ZiplnError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| ZiplnError::InvalidParameter(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            rel_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGrid {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub replicates: usize,
    /// Fixed parameters; the swept one is overridden per cell.
    pub base: ScenarioSpec,
    pub seed: u64,
    pub fit: FitSettings,
}

impl ScenarioGrid {
    /// Paper scale: `n = 1000`, `p = 250`, `d = 3`, `d0 = 4`, 30 replicates.
    pub fn paper(axis: Axis, variant: ZiVariant) -> Self {
        Self {
            axis,
            values: axis.paper_values(),
            replicates: 30,
            base: ScenarioSpec {
                variant,
                n: 1000,
                p: 250,
                d: 3,
                d0: 4,
                gamma: 2.0,
                rho: 0.3,
            },
            seed: 0,
            fit: FitSettings::default(),
        }
    }

    /// Desk scale: `n = 300`, `p = 30`, 10 replicates; the `p` axis is
    /// divided by 10 to match.
    pub fn desk(axis: Axis, variant: ZiVariant) -> Self {
        let mut grid = Self::paper(axis, variant);
        grid.base.n = 300;
        grid.base.p = 30;
        grid.replicates = 10;
        if axis == Axis::P {
            grid.values = grid.values.iter().map(|v| v / 10.0).collect();
        }
        grid
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() || self.replicates == 0 {
            return Err(ZiplnError::InvalidParameter("grid needs values and replicates".into()));
        }
        for &v in &self.values {
            self.cell_spec(v)?;
        }
        Ok(())
    }

    /// Scenario of one axis value.
    pub fn cell_spec(&self, value: f64) -> Result<ScenarioSpec> {
        let mut spec = self.base;
        let count = |v: f64| {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(ZiplnError::InvalidParameter(format!("{} must be a positive integer, got {v}", self.axis)))
            }
        };
        match self.axis {
            Axis::Pi => {
                if !(value > 0.0 && value < 1.0) {
                    return Err(ZiplnError::InvalidParameter(format!("pi must lie in (0, 1), got {value}")));
                }
                spec.rho = value;
            }
            Axis::Gamma => spec.gamma = value,
            Axis::N => spec.n = count(value)?,
            Axis::P => spec.p = count(value)?,
        }
        Ok(spec)
    }

    /// Seed of a (cell, replicate) job, independent of scheduling.
    pub fn job_seed(&self, cell: usize, replicate: usize) -> u64 {
        splitmix64(self.seed ^ splitmix64(((cell as u64) << 32) | replicate as u64))
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub scenario: Axis,
    pub axis_value: f64,
    pub replicate: usize,
    pub method: BenchMethod,
    pub rmse_sigma: Option<f64>,
    pub rmse_b: Option<f64>,
    pub rmse_pi: Option<f64>,
    pub recon_error: Option<f64>,
    pub elbo: Option<f64>,
    pub wall_time_s: Option<f64>,
    /// `converged`, `max_iters` or `error: ...`.
    pub status: String,
}

/// Records plus per-job diagnostics of the simulated data.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRun {
    pub records: Vec<BenchRecord>,
    /// `(axis value, replicate, fraction of zeros in T)`.
    pub poisson_zero_rates: Vec<(f64, usize, f64)>,
}

/// Frobenius (l2) distance between two arrays of the same shape.
pub fn rmse(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    if estimate.shape() != truth.shape() {
        return Err(ZiplnError::ShapeMismatch(format!(
            "estimate is {:?}, truth is {:?}",
            estimate.shape(),
            truth.shape()
        )));
    }
    Ok((estimate - truth).norm())
}

/// `Y_hat = (1 - P) exp(O + M + S^2 / 2)`.
pub fn reconstruct(fit: &FitResult, data: &CountDataset) -> DMatrix<f64> {
    let a = fit.psi.a(data.offsets());
    a.zip_map(&fit.psi.p, |a, p| (1.0 - p) * a)
}

/// Error of the fitted inflation probabilities: scalar for ND, matrices otherwise.
fn pi_error(estimate: &ZiParams, truth: &ZiParams, data: &CountDataset) -> Option<f64> {
    match (estimate, truth) {
        (ZiParams::None, _) | (_, ZiParams::None) => None,
        (ZiParams::Nd { pi: a }, ZiParams::Nd { pi: b }) => Some((a - b).abs()),
        _ => {
            let d = data.design();
            rmse(&estimate.probabilities(d), &truth.probabilities(d)).ok()
        }
    }
}

/// Fit every method on every (cell, replicate) job with a pool of
/// `parallelism` workers. Output order is deterministic.
pub fn run_scenario_grid(grid: &ScenarioGrid, methods: &[BenchMethod], parallelism: usize) -> Result<GridRun> {
    grid.validate()?;
    if methods.is_empty() {
        return Err(ZiplnError::InvalidParameter("no methods to run".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..grid.values.len())
        .flat_map(|c| (0..grid.replicates).map(move |r| (c, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| ZiplnError::InvalidParameter(format!("thread pool: {e}")))?;
    let results: Vec<Result<(Vec<BenchRecord>, f64)>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(cell, rep)| run_job(grid, methods, cell, rep))
            .collect()
    });
    let mut run = GridRun {
        records: Vec::new(),
        poisson_zero_rates: Vec::new(),
    };
    for (&(cell, rep), res) in jobs.iter().zip(results) {
        let (records, rate) = res?;
        run.records.extend(records);
        run.poisson_zero_rates.push((grid.values[cell], rep, rate));
    }
    Ok(run)
}

fn run_job(grid: &ScenarioGrid, methods: &[BenchMethod], cell: usize, rep: usize) -> Result<(Vec<BenchRecord>, f64)> {
    let value = grid.values[cell];
    let spec = grid.cell_spec(value)?;
    let seed = grid.job_seed(cell, rep);
    let scenario = scenario_params(&spec, seed)?;
    let (data, truth) = sample_dataset(&scenario.params, &scenario.design, seed.wrapping_add(1))?;
    let oracle = data.with_counts(truth.t.clone())?;
    let zero_rate = truth.t.iter().filter(|v| **v == 0.0).count() as f64 / truth.t.len() as f64;

    let records = methods
        .iter()
        .map(|&method| {
            let target = if method == BenchMethod::OraclePln { &oracle } else { &data };
            let mut record = BenchRecord {
                scenario: grid.axis,
                axis_value: value,
                replicate: rep,
                method,
                rmse_sigma: None,
                rmse_b: None,
                rmse_pi: None,
                recon_error: None,
                elbo: None,
                wall_time_s: None,
                status: String::new(),
            };
            match fit(target, &method.config(spec.variant, &grid.fit)) {
                Ok(f) => {
                    record.rmse_sigma = rmse(f.theta.sigma(), scenario.params.sigma()).ok();
                    record.rmse_b = rmse(f.theta.b(), scenario.params.b()).ok();
                    record.rmse_pi = pi_error(f.theta.zi(), scenario.params.zi(), &data);
                    if method != BenchMethod::OraclePln {
                        record.recon_error = rmse(&reconstruct(&f, target), target.counts()).ok();
                    }
                    record.elbo = Some(f.final_elbo());
                    record.wall_time_s = Some(f.wall_time_s);
                    record.status = if f.converged { "converged" } else { "max_iters" }.to_string();
                }
                Err(e) => record.status = format!("error: {e}"),
            }
            record
        })
        .collect();
    Ok((records, zero_rate))
}

pub const RECORD_COLUMNS: [&str; 11] = [
    "scenario",
    "axis_value",
    "replicate",
    "method",
    "rmse_sigma",
    "rmse_b",
    "rmse_pi",
    "recon_error",
    "elbo",
    "wall_time_s",
    "status",
];

const METRICS: [&str; 5] = ["rmse_sigma", "rmse_b", "rmse_pi", "recon_error", "elbo"];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

fn metric(r: &BenchRecord, name: &str) -> Option<f64> {
    match name {
        "rmse_sigma" => r.rmse_sigma,
        "rmse_b" => r.rmse_b,
        "rmse_pi" => r.rmse_pi,
        "recon_error" => r.recon_error,
        "elbo" => r.elbo,
        _ => None,
    }
}

/// Mean and 95% Student-t half-width of the finite values.
pub fn mean_ci(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let k = values.len();
    if k == 0 {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if k == 1 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (k - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    (Some(mean), Some(t * (var / k as f64).sqrt()))
}

/// Write `records.csv`, `aggregate_<axis>.csv` per axis and `metadata.json`
/// into `dir`. Wall times are left empty unless `record_timing` is set, so
/// that reports are reproducible byte for byte.
pub fn emit_report(run: &GridRun, grid: &ScenarioGrid, dir: &Path, record_timing: bool) -> Result<()> {
    if run.records.is_empty() {
        return Err(ZiplnError::Report("no records to write".into()));
    }
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("records.csv"))?));
    w.write_record(RECORD_COLUMNS)?;
    for r in &run.records {
        w.write_record([
            r.scenario.to_string(),
            format!("{}", r.axis_value),
            r.replicate.to_string(),
            r.method.to_string(),
            fmt_opt(r.rmse_sigma),
            fmt_opt(r.rmse_b),
            fmt_opt(r.rmse_pi),
            fmt_opt(r.recon_error),
            fmt_opt(r.elbo),
            if record_timing { fmt_opt(r.wall_time_s) } else { String::new() },
            r.status.clone(),
        ])?;
    }
    w.flush()?;

    // Group by axis, then (axis value, method) in first-seen order of values.
    let mut axes: BTreeMap<Axis, Vec<&BenchRecord>> = BTreeMap::new();
    for r in &run.records {
        axes.entry(r.scenario).or_default().push(r);
    }
    for (axis, records) in &axes {
        let path = dir.join(format!("aggregate_{axis}.csv"));
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        let mut header = vec!["scenario".to_string(), "axis_value".into(), "method".into(), "replicates".into(), "failures".into()];
        for m in METRICS {
            header.push(format!("{m}_mean"));
            header.push(format!("{m}_ci95"));
        }
        w.write_record(&header)?;
        let mut keys: Vec<(f64, BenchMethod)> = Vec::new();
        for r in records {
            if !keys.iter().any(|(v, m)| *v == r.axis_value && *m == r.method) {
                keys.push((r.axis_value, r.method));
            }
        }
        for (value, method) in keys {
            let group: Vec<&&BenchRecord> = records
                .iter()
                .filter(|r| r.axis_value == value && r.method == method)
                .collect();
            let failures = group.iter().filter(|r| r.status.starts_with("error")).count();
            let mut row = vec![
                axis.to_string(),
                format!("{value}"),
                method.to_string(),
                group.len().to_string(),
                failures.to_string(),
            ];
            for m in METRICS {
                let vals: Vec<f64> = group.iter().filter_map(|r| metric(r, m)).filter(|v| v.is_finite()).collect();
                let (mean, ci) = mean_ci(&vals);
                row.push(fmt_opt(mean));
                row.push(fmt_opt(ci));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
    }

    let rate = run.poisson_zero_rates.iter().map(|r| r.2).sum::<f64>() / run.poisson_zero_rates.len().max(1) as f64;
    let metadata = serde_json::json!({
        "grid": grid,
        "record_columns": RECORD_COLUMNS,
        "rmse_definition": "per-replicate Frobenius (l2) distance between estimate and truth; aggregates average over replicates",
        "rmse_pi_definition": "ND: |pi_hat - pi|; CD/RD: distance between the implied n x p probability matrices; empty for PLN and OraclePLN",
        "recon_error_definition": "distance between (1 - P) exp(O + M + S^2/2) and Y; empty for OraclePLN",
        "ci": "95% Student-t interval half-width over finite replicate values",
        "empirical_poisson_zero_rate": rate,
        "poisson_zero_rates": run.poisson_zero_rates,
        "wall_time_recorded": record_timing,
    });
    let file = File::create(dir.join("metadata.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &metadata)
        .map_err(|e| ZiplnError::Report(format!("metadata: {e}")))?;
    Ok(())
}
