use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use zipln::elbo::{ElboFamily, ElboVariant};
use zipln::model::ZiVariant;
use zipln::optim::Method;
use zipln::simbench::{Axis, BenchMethod};

/// Variational inference for zero-inflated Poisson log-normal models.
///
/// Exit codes: 0 success, 1 failure, 2 fit stopped at --max-iters without
/// converging, 3 non-identifiable design, 4 malformed input file, 64 usage error.
#[derive(Debug, Parser)]
#[command(name = "zipln", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Fit a model to a count table.
    Fit(FitArgs),
    /// Draw a dataset from a simulation scenario.
    Simulate(SimulateArgs),
    /// Run a benchmark grid.
    Bench(BenchArgs),
    /// Tabulate AIC, BIC and ICL of fits on the same dataset.
    Compare(CompareArgs),
    /// Principal components of the fitted latent means.
    Project(ProjectArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fit(_) => "fit",
            Command::Simulate(_) => "simulate",
            Command::Bench(_) => "bench",
            Command::Compare(_) => "compare",
            Command::Project(_) => "project",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Vem,
    Grad,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Vem => Method::Vem,
            MethodArg::Grad => Method::GradientJoint,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElboArg {
    Standard,
    Enhanced,
}

/// Options shared by commands that fit models.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FitFlags {
    /// Zero-inflation variant: nd, cd, rd or none.
    #[arg(long, default_value = "nd")]
    pub zi: ZiVariant,
    /// Optimizer; defaults to vem for the standard bound and grad otherwise.
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long, value_enum, default_value = "standard")]
    pub elbo: ElboArg,
    /// Replace the variational probabilities by their analytic form.
    #[arg(long)]
    pub analytic_p: bool,
    #[arg(long, default_value_t = 1000)]
    pub max_iters: usize,
    /// Relative tolerance of the convergence test.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Base rate of the adaptive gradient schedule.
    #[arg(long, default_value_t = 0.01)]
    pub learning_rate: f64,
    /// Rows per stochastic gradient step.
    #[arg(long)]
    pub minibatch: Option<usize>,
}

impl FitFlags {
    pub fn elbo_variant(&self) -> ElboVariant {
        let family = match self.elbo {
            ElboArg::Standard => ElboFamily::Standard,
            ElboArg::Enhanced => ElboFamily::Enhanced,
        };
        ElboVariant {
            family,
            analytic_p: self.analytic_p,
        }
    }

    pub fn method(&self) -> Method {
        match self.method {
            Some(m) => m.into(),
            None if self.elbo_variant() == ElboVariant::STANDARD => Method::Vem,
            None => Method::GradientJoint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FitArgs {
    /// Count CSV: sample ids in the first column, one column per variable.
    pub counts: PathBuf,
    /// Sample covariates CSV, keyed by sample id.
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    /// Formula of the Poisson log-normal component, such as "~ site:time".
    /// Defaults to "." with a covariate file and "1" without.
    #[arg(long)]
    pub formula: Option<String>,
    /// Zero-inflation covariates: keyed by sample id for cd, by variable
    /// name for rd.
    #[arg(long)]
    pub zi_covariates: Option<PathBuf>,
    /// Formula of the zero-inflation component; same defaults as --formula.
    #[arg(long)]
    pub zi_formula: Option<String>,
    /// Offsets CSV with the layout of the count table.
    #[arg(long, conflicts_with = "offset_total_counts")]
    pub offsets: Option<PathBuf>,
    /// Use the log total count of each sample as its offset.
    #[arg(long)]
    pub offset_total_counts: bool,
    /// Drop variables that are nonzero in less than this fraction of samples.
    #[arg(long)]
    pub min_prevalence: Option<f64>,
    #[command(flatten)]
    pub fit: FitFlags,
    /// Label of the fit in comparison tables; defaults to the output directory name.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub p: usize,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, default_value_t = 2)]
    pub d0: usize,
    #[arg(long, default_value = "nd")]
    pub zi: ZiVariant,
    /// Inflation level: the probability itself for nd, the center of the
    /// coefficients on the probability scale for cd and rd.
    #[arg(long, default_value_t = 0.3)]
    pub pi: f64,
    /// Mean of the regression coefficients.
    #[arg(long, default_value_t = 2.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BenchArgs {
    /// Swept parameter: pi, gamma, n or p.
    #[arg(long)]
    pub axis: Axis,
    /// Paper-scale grid; the default is the desk-scale grid.
    #[arg(long, conflicts_with = "desk")]
    pub paper: bool,
    /// Desk-scale grid (default).
    #[arg(long)]
    pub desk: bool,
    #[arg(long, default_value = "nd")]
    pub zi: ZiVariant,
    /// Comma-separated methods; defaults to all.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<BenchMethod>,
    /// Comma-separated axis values overriding the grid.
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<f64>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub d0: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub pi: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Record wall times; reports are then no longer reproducible byte for byte.
    #[arg(long)]
    pub record_timing: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CompareArgs {
    /// Output directories of `zipln fit`.
    #[arg(required = true)]
    pub fits: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ProjectArgs {
    /// Output directory of `zipln fit`.
    pub fit: PathBuf,
    /// Number of components.
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Write into this directory instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
