//! Domain types of the zero-inflated Poisson log-normal model, together with
//! the generative sampler, closed-form moments and simulation scenarios.
//!
//! For sample `i` and variable `j`:
//!
//! ```text
//! Z_i  ~ N(x_i^T B, Omega^{-1})
//! W_ij ~ Bernoulli(pi_ij)
//! Y_ij | W_ij, Z_ij ~ W_ij delta_0 + (1 - W_ij) Poisson(exp(o_ij + Z_ij))
//! ```
//!
//! The zero-inflation probabilities come from one of three parameterizations
//! (see [`ZiVariant`]); `ZiVariant::None` is the plain Poisson log-normal model.

mod moments;
mod sample;
mod scenario;

pub use moments::{empirical_moments, moment_recover, zipln_mean_var, RecoveredMoments, SampleMoments};
pub use sample::{sample_dataset, sample_dataset_with_rng, MAX_POISSON_RATE};
pub use scenario::{scenario_params, toeplitz_cov, Scenario, ScenarioSpec};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZiplnError};
use crate::linalg;
use crate::special::{logistic, logit, ln_factorial};

/// Covariates driving the zero-inflation component.
#[derive(Debug, Clone, PartialEq)]
pub enum ZiCovariates {
    None,
    /// `X0`, n x d0: one row per sample (column-wise dependence, CD).
    Rows(DMatrix<f64>),
    /// `X0bar`, d0 x p: one column per variable (row-wise dependence, RD).
    Columns(DMatrix<f64>),
}

impl ZiCovariates {
    pub fn dim(&self) -> usize {
        match self {
            ZiCovariates::None => 0,
            ZiCovariates::Rows(x0) => x0.ncols(),
            ZiCovariates::Columns(x0bar) => x0bar.nrows(),
        }
    }
}

/// Everything about a dataset except the counts: offsets and both covariate sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    offsets: DMatrix<f64>,
    covariates: DMatrix<f64>,
    zi_covariates: ZiCovariates,
}

impl Design {
    pub fn new(
        offsets: DMatrix<f64>,
        covariates: DMatrix<f64>,
        zi_covariates: ZiCovariates,
    ) -> Result<Self> {
        let (n, p) = offsets.shape();
        if covariates.nrows() != n {
            return Err(ZiplnError::ShapeMismatch(format!(
                "covariates have {} rows, offsets have {n}",
                covariates.nrows()
            )));
        }
        if covariates.ncols() == 0 {
            return Err(ZiplnError::InvalidData("at least one covariate column is required".into()));
        }
        match &zi_covariates {
            ZiCovariates::Rows(x0) if x0.nrows() != n || x0.ncols() == 0 => {
                return Err(ZiplnError::ShapeMismatch(format!(
                    "row-wise ZI covariates are {}x{}, expected {n} rows",
                    x0.nrows(),
                    x0.ncols()
                )));
            }
            ZiCovariates::Columns(x0bar) if x0bar.ncols() != p || x0bar.nrows() == 0 => {
                return Err(ZiplnError::ShapeMismatch(format!(
                    "column-wise ZI covariates are {}x{}, expected {p} columns",
                    x0bar.nrows(),
                    x0bar.ncols()
                )));
            }
            _ => {}
        }
        let finite = offsets.iter().chain(covariates.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(ZiplnError::InvalidData("offsets and covariates must be finite".into()));
        }
        Ok(Self {
            offsets,
            covariates,
            zi_covariates,
        })
    }

    /// Design with all-zero offsets.
    pub fn without_offsets(p: usize, covariates: DMatrix<f64>, zi_covariates: ZiCovariates) -> Result<Self> {
        let n = covariates.nrows();
        Self::new(DMatrix::zeros(n, p), covariates, zi_covariates)
    }

    pub fn n(&self) -> usize {
        self.offsets.nrows()
    }

    pub fn p(&self) -> usize {
        self.offsets.ncols()
    }

    pub fn d(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn d0(&self) -> usize {
        self.zi_covariates.dim()
    }

    pub fn offsets(&self) -> &DMatrix<f64> {
        &self.offsets
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn zi_covariates(&self) -> &ZiCovariates {
        &self.zi_covariates
    }

    pub fn with_offsets(mut self, offsets: DMatrix<f64>) -> Result<Self> {
        if offsets.shape() != self.offsets.shape() {
            return Err(ZiplnError::ShapeMismatch("offsets shape changed".into()));
        }
        self.offsets = offsets;
        Ok(self)
    }

    /// Keep only the listed samples.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let zi = match &self.zi_covariates {
            ZiCovariates::Rows(x0) => ZiCovariates::Rows(x0.select_rows(rows)),
            other => other.clone(),
        };
        Self::new(
            self.offsets.select_rows(rows),
            self.covariates.select_rows(rows),
            zi,
        )
    }
}

/// Observed counts plus their design. Counts are stored as `f64` but are
/// validated to be nonnegative integers.
#[derive(Debug, Clone)]
pub struct CountDataset {
    counts: DMatrix<f64>,
    design: Design,
    log_factorials: DMatrix<f64>,
}

impl CountDataset {
    pub fn new(counts: DMatrix<f64>, design: Design) -> Result<Self> {
        if counts.shape() != design.offsets.shape() {
            return Err(ZiplnError::ShapeMismatch(format!(
                "counts are {}x{}, offsets are {}x{}",
                counts.nrows(),
                counts.ncols(),
                design.n(),
                design.p()
            )));
        }
        if let Some(v) = counts.iter().find(|v| !(v.is_finite() && **v >= 0.0 && v.fract() == 0.0)) {
            return Err(ZiplnError::InvalidData(format!(
                "counts must be nonnegative integers, found {v}"
            )));
        }
        let log_factorials = counts.map(ln_factorial);
        Ok(Self {
            counts,
            design,
            log_factorials,
        })
    }

    pub fn n(&self) -> usize {
        self.counts.nrows()
    }

    pub fn p(&self) -> usize {
        self.counts.ncols()
    }

    pub fn d(&self) -> usize {
        self.design.d()
    }

    pub fn d0(&self) -> usize {
        self.design.d0()
    }

    pub fn counts(&self) -> &DMatrix<f64> {
        &self.counts
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn offsets(&self) -> &DMatrix<f64> {
        self.design.offsets()
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        self.design.covariates()
    }

    pub fn zi_covariates(&self) -> &ZiCovariates {
        self.design.zi_covariates()
    }

    /// `log(Y!)`, computed once at construction.
    pub fn log_factorials(&self) -> &DMatrix<f64> {
        &self.log_factorials
    }

    pub fn is_zero(&self, i: usize, j: usize) -> bool {
        self.counts[(i, j)] == 0.0
    }

    pub fn zero_fraction(&self) -> f64 {
        self.counts.iter().filter(|v| **v == 0.0).count() as f64 / self.counts.len() as f64
    }

    /// Same design, different counts (e.g. the non-inflated counts of a simulation).
    pub fn with_counts(&self, counts: DMatrix<f64>) -> Result<Self> {
        Self::new(counts, self.design.clone())
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        Self::new(self.counts.select_rows(rows), self.design.select_rows(rows)?)
    }

    /// Full-rank check on both covariate matrices.
    pub fn check_identifiable(&self, zi: ZiVariant) -> Result<()> {
        if linalg::numerical_rank(self.covariates()) < self.d() {
            return Err(ZiplnError::Identifiability("the covariate matrix X".into()));
        }
        match (zi, self.zi_covariates()) {
            (ZiVariant::Cd, ZiCovariates::Rows(x0)) if linalg::numerical_rank(x0) < x0.ncols() => {
                Err(ZiplnError::Identifiability("the zero-inflation covariate matrix X0".into()))
            }
            (ZiVariant::Rd, ZiCovariates::Columns(x0bar))
                if linalg::numerical_rank(x0bar) < x0bar.nrows() =>
            {
                Err(ZiplnError::Identifiability(
                    "the transposed column-wise zero-inflation covariate matrix".into(),
                ))
            }
            _ => Ok(()),
        }
    }
}

/// Zero-inflation parameterization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZiVariant {
    /// No zero inflation: the plain Poisson log-normal model.
    None,
    /// One probability shared by every entry.
    Nd,
    /// `pi = logistic(X0 B0)`, driven by sample covariates.
    Cd,
    /// `pi = logistic(B0bar X0bar)`, driven by variable covariates.
    Rd,
}

impl ZiVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            ZiVariant::None => "none",
            ZiVariant::Nd => "nd",
            ZiVariant::Cd => "cd",
            ZiVariant::Rd => "rd",
        }
    }
}

impl std::fmt::Display for ZiVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ZiVariant {
    type Err = ZiplnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "pln" => Ok(ZiVariant::None),
            "nd" => Ok(ZiVariant::Nd),
            "cd" => Ok(ZiVariant::Cd),
            "rd" => Ok(ZiVariant::Rd),
            other => Err(ZiplnError::InvalidParameter(format!("unknown zero-inflation variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZiConfig {
    pub variant: ZiVariant,
    /// Prepend a column of ones to `X`.
    pub pln_intercept: bool,
    /// Prepend a column of ones to `X0` (CD) or a row of ones to `X0bar` (RD).
    pub zi_intercept: bool,
}

impl ZiConfig {
    pub fn new(variant: ZiVariant) -> Self {
        Self {
            variant,
            pln_intercept: false,
            zi_intercept: false,
        }
    }

    pub fn validate(&self, design: &Design) -> Result<()> {
        match (self.variant, design.zi_covariates()) {
            (ZiVariant::Cd, ZiCovariates::Rows(_)) | (ZiVariant::Rd, ZiCovariates::Columns(_)) => Ok(()),
            (ZiVariant::Cd, _) => Err(ZiplnError::InvalidParameter(
                "the CD variant needs row-wise zero-inflation covariates".into(),
            )),
            (ZiVariant::Rd, _) => Err(ZiplnError::InvalidParameter(
                "the RD variant needs column-wise zero-inflation covariates".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Apply the intercept flags to a design.
    pub fn apply_intercepts(&self, design: &Design) -> Result<Design> {
        let ones_col = |m: &DMatrix<f64>| m.clone().insert_column(0, 1.0);
        let x = if self.pln_intercept {
            ones_col(design.covariates())
        } else {
            design.covariates().clone()
        };
        let zi = match (self.zi_intercept, design.zi_covariates()) {
            (true, ZiCovariates::Rows(x0)) => ZiCovariates::Rows(ones_col(x0)),
            (true, ZiCovariates::Columns(x0bar)) => ZiCovariates::Columns(x0bar.clone().insert_row(0, 1.0)),
            (_, other) => other.clone(),
        };
        Design::new(design.offsets().clone(), x, zi)
    }
}

/// Zero-inflation parameters, one shape per variant.
#[derive(Debug, Clone, PartialEq)]
pub enum ZiParams {
    None,
    Nd { pi: f64 },
    /// d0 x p
    Cd { b0: DMatrix<f64> },
    /// n x d0
    Rd { b0bar: DMatrix<f64> },
}

impl ZiParams {
    pub fn variant(&self) -> ZiVariant {
        match self {
            ZiParams::None => ZiVariant::None,
            ZiParams::Nd { .. } => ZiVariant::Nd,
            ZiParams::Cd { .. } => ZiVariant::Cd,
            ZiParams::Rd { .. } => ZiVariant::Rd,
        }
    }

    /// All-zero logit-scale coefficients (`pi = 0.5` everywhere).
    pub fn neutral(variant: ZiVariant, design: &Design) -> Self {
        match variant {
            ZiVariant::None => ZiParams::None,
            ZiVariant::Nd => ZiParams::Nd { pi: 0.5 },
            ZiVariant::Cd => ZiParams::Cd {
                b0: DMatrix::zeros(design.d0(), design.p()),
            },
            ZiVariant::Rd => ZiParams::Rd {
                b0bar: DMatrix::zeros(design.n(), design.d0()),
            },
        }
    }

    /// Logit-scale coefficients as a matrix: `[[logit(pi)]]` for ND, `B0`, `B0bar`.
    pub fn coef(&self) -> Option<DMatrix<f64>> {
        match self {
            ZiParams::None => None,
            ZiParams::Nd { pi } => Some(DMatrix::from_element(1, 1, logit(*pi))),
            ZiParams::Cd { b0 } => Some(b0.clone()),
            ZiParams::Rd { b0bar } => Some(b0bar.clone()),
        }
    }

    /// Inverse of [`ZiParams::coef`].
    pub fn from_coef(variant: ZiVariant, coef: &DMatrix<f64>) -> Self {
        match variant {
            ZiVariant::None => ZiParams::None,
            ZiVariant::Nd => ZiParams::Nd {
                pi: logistic(coef[(0, 0)]),
            },
            ZiVariant::Cd => ZiParams::Cd { b0: coef.clone() },
            ZiVariant::Rd => ZiParams::Rd { b0bar: coef.clone() },
        }
    }

    pub fn validate(&self, design: &Design) -> Result<()> {
        match self {
            ZiParams::None => Ok(()),
            ZiParams::Nd { pi } => {
                if (0.0..=1.0).contains(pi) {
                    Ok(())
                } else {
                    Err(ZiplnError::InvalidParameter(format!("pi = {pi} is not a probability")))
                }
            }
            ZiParams::Cd { b0 } => match design.zi_covariates() {
                ZiCovariates::Rows(x0) if x0.ncols() == b0.nrows() && b0.ncols() == design.p() => Ok(()),
                _ => Err(ZiplnError::ShapeMismatch(
                    "B0 must be d0 x p with row-wise ZI covariates".into(),
                )),
            },
            ZiParams::Rd { b0bar } => match design.zi_covariates() {
                ZiCovariates::Columns(x0bar) if x0bar.nrows() == b0bar.ncols() && b0bar.nrows() == design.n() => {
                    Ok(())
                }
                _ => Err(ZiplnError::ShapeMismatch(
                    "B0bar must be n x d0 with column-wise ZI covariates".into(),
                )),
            },
        }
    }

    /// Logit-scale field `mu0` (n x p); `None` for the plain model.
    pub fn logit_field(&self, design: &Design) -> Option<DMatrix<f64>> {
        let (n, p) = (design.n(), design.p());
        match (self, design.zi_covariates()) {
            (ZiParams::None, _) => None,
            (ZiParams::Nd { pi }, _) => Some(DMatrix::from_element(n, p, logit(*pi))),
            (ZiParams::Cd { b0 }, ZiCovariates::Rows(x0)) => Some(x0 * b0),
            (ZiParams::Rd { b0bar }, ZiCovariates::Columns(x0bar)) => Some(b0bar * x0bar),
            _ => panic!("zero-inflation parameters do not match the design; call validate first"),
        }
    }

    /// Zero-inflation probabilities (n x p); all zero for the plain model.
    pub fn probabilities(&self, design: &Design) -> DMatrix<f64> {
        match self {
            ZiParams::Nd { pi } => DMatrix::from_element(design.n(), design.p(), *pi),
            other => match other.logit_field(design) {
                Some(mu0) => mu0.map(logistic),
                None => DMatrix::zeros(design.n(), design.p()),
            },
        }
    }
}

/// Model parameters `theta`: precision `Omega` with cached covariance `Sigma`
/// and factor `C` (`Omega = (C C^T)^{-1}`), coefficients `B`, and the
/// zero-inflation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    omega: DMatrix<f64>,
    sigma: DMatrix<f64>,
    factor: DMatrix<f64>,
    log_det_omega: f64,
    b: DMatrix<f64>,
    zi: ZiParams,
}

const SYMMETRY_TOL: f64 = 1e-10;

impl ModelParams {
    pub fn from_sigma(sigma: DMatrix<f64>, b: DMatrix<f64>, zi: ZiParams) -> Result<Self> {
        check_square_symmetric(&sigma, "Sigma")?;
        let sigma = linalg::symmetrize(&sigma);
        let chol = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| ZiplnError::InvalidParameter("Sigma is not positive definite".into()))?;
        let factor = chol.l();
        let omega = linalg::symmetrize(&chol.inverse());
        let log_det_omega = -2.0 * factor.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Self::assemble(omega, sigma, factor, log_det_omega, b, zi)
    }

    pub fn from_omega(omega: DMatrix<f64>, b: DMatrix<f64>, zi: ZiParams) -> Result<Self> {
        check_square_symmetric(&omega, "Omega")?;
        let omega = linalg::symmetrize(&omega);
        let sigma = linalg::cholesky_inverse(&omega, "Omega")?;
        let factor = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| ZiplnError::InvalidParameter("Omega is numerically singular".into()))?
            .l();
        let log_det_omega = linalg::log_det_spd(&omega, "Omega")?;
        Self::assemble(omega, sigma, factor, log_det_omega, b, zi)
    }

    /// From an arbitrary invertible factor `C`: `Sigma = C C^T`.
    pub fn from_factor(factor: DMatrix<f64>, b: DMatrix<f64>, zi: ZiParams) -> Result<Self> {
        if !factor.is_square() {
            return Err(ZiplnError::ShapeMismatch("factor C must be square".into()));
        }
        let sigma = linalg::symmetrize(&(&factor * factor.transpose()));
        let chol = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| ZiplnError::InvalidParameter("factor C is singular".into()))?;
        let log_det_omega = -2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let omega = linalg::symmetrize(&chol.inverse());
        Self::assemble(omega, sigma, factor, log_det_omega, b, zi)
    }

    fn assemble(
        omega: DMatrix<f64>,
        sigma: DMatrix<f64>,
        factor: DMatrix<f64>,
        log_det_omega: f64,
        b: DMatrix<f64>,
        zi: ZiParams,
    ) -> Result<Self> {
        if b.ncols() != omega.nrows() {
            return Err(ZiplnError::ShapeMismatch(format!(
                "B has {} columns but Omega is {}x{}",
                b.ncols(),
                omega.nrows(),
                omega.nrows()
            )));
        }
        if !log_det_omega.is_finite() || omega.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(ZiplnError::InvalidParameter("non-finite model parameters".into()));
        }
        Ok(Self {
            omega,
            sigma,
            factor,
            log_det_omega,
            b,
            zi,
        })
    }

    pub fn p(&self) -> usize {
        self.omega.nrows()
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Factor `C` with `Omega = (C C^T)^{-1}`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn log_det_omega(&self) -> f64 {
        self.log_det_omega
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn zi(&self) -> &ZiParams {
        &self.zi
    }

    pub fn with_b(mut self, b: DMatrix<f64>) -> Result<Self> {
        if b.ncols() != self.p() || b.iter().any(|v| !v.is_finite()) {
            return Err(ZiplnError::InvalidParameter("B has the wrong shape or is non-finite".into()));
        }
        self.b = b;
        Ok(self)
    }

    pub fn with_zi(mut self, zi: ZiParams) -> Self {
        self.zi = zi;
        self
    }

    pub fn with_omega(self, omega: DMatrix<f64>) -> Result<Self> {
        Self::from_omega(omega, self.b, self.zi)
    }

    /// `X B` (n x p).
    pub fn mean_field(&self, design: &Design) -> DMatrix<f64> {
        design.covariates() * &self.b
    }

    pub fn validate(&self, design: &Design) -> Result<()> {
        if self.b.nrows() != design.d() || self.b.ncols() != design.p() {
            return Err(ZiplnError::ShapeMismatch(format!(
                "B is {}x{}, design needs {}x{}",
                self.b.nrows(),
                self.b.ncols(),
                design.d(),
                design.p()
            )));
        }
        self.zi.validate(design)
    }
}

fn check_square_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(ZiplnError::ShapeMismatch(format!("{what} must be square")));
    }
    if !linalg::is_symmetric(m, SYMMETRY_TOL) {
        return Err(ZiplnError::InvalidParameter(format!("{what} is not symmetric")));
    }
    Ok(())
}

/// Variational parameters `psi = (M, S, P)`, each n x p.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalParams {
    /// Means of the Gaussian factors.
    pub m: DMatrix<f64>,
    /// Standard deviations of the Gaussian factors, strictly positive.
    pub s: DMatrix<f64>,
    /// Probabilities of the zero component; exactly zero on positive counts.
    pub p: DMatrix<f64>,
}

impl VariationalParams {
    pub fn q(&self) -> DMatrix<f64> {
        self.p.map(|v| 1.0 - v)
    }

    /// `A = exp(O + M + S^2 / 2)`.
    pub fn a(&self, offsets: &DMatrix<f64>) -> DMatrix<f64> {
        let mut a = offsets + &self.m;
        a.zip_apply(&self.s, |x, s| *x = (*x + 0.5 * s * s).exp());
        a
    }

    pub fn validate(&self, data: &CountDataset) -> Result<()> {
        let shape = (data.n(), data.p());
        if self.m.shape() != shape || self.s.shape() != shape || self.p.shape() != shape {
            return Err(ZiplnError::ShapeMismatch("variational parameters must be n x p".into()));
        }
        if self.s.iter().any(|v| !(*v > 0.0)) {
            return Err(ZiplnError::InvalidParameter("S must be strictly positive".into()));
        }
        if self.p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(ZiplnError::InvalidParameter("P must lie in [0, 1]".into()));
        }
        check_mask(data, &self.p)
    }
}

pub(crate) fn check_mask(data: &CountDataset, p: &DMatrix<f64>) -> Result<()> {
    for j in 0..data.p() {
        for i in 0..data.n() {
            if !data.is_zero(i, j) && p[(i, j)] != 0.0 {
                return Err(ZiplnError::MaskViolation {
                    row: i,
                    col: j,
                    value: p[(i, j)],
                });
            }
        }
    }
    Ok(())
}

/// Latent draws behind a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTruth {
    pub z: DMatrix<f64>,
    /// Zero-inflation indicators (0 or 1).
    pub w: DMatrix<f64>,
    /// Non-inflated counts; `Y = (1 - W) * T`.
    pub t: DMatrix<f64>,
}
