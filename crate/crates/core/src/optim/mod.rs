//! Fitting: initialization, the alternating VEM scheme for the standard bound,
//! joint adaptive gradient ascent for every bound, and minibatch steps.

mod gradient;
mod updates;
mod vem;

pub use gradient::{gradient_fit, minibatch_step, stochastic_gradient, FitState};
pub use updates::{update_b, update_b0, update_omega, update_p, ve_step};
pub use vem::vem_fit;

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::elbo::{effective_psi, ElboFamily, ElboVariant};
use crate::error::{Result, ZiplnError};
use crate::linalg::least_squares;
use crate::model::{CountDataset, ModelParams, VariationalParams, ZiParams, ZiVariant};

/// Optimization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Closed-form M-step and Newton VE-step; standard bound with free `P` only.
    Vem,
    /// Adaptive gradient ascent on all blocks jointly.
    #[serde(rename = "grad")]
    GradientJoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub method: Method,
    pub elbo_variant: ElboVariant,
    pub zi_variant: ZiVariant,
    pub max_iters: usize,
    /// Stop when the bound changes by less than `rel_tol * |J|` over
    /// [`FitConfig::window`] iterations.
    pub rel_tol: f64,
    pub window: usize,
    /// Base rate of the adaptive schedule.
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Diagonal Newton rounds on `(M, log S)` per VE-step.
    pub newton_steps: usize,
    /// Rows per stochastic step; `None` for full-batch ascent.
    pub minibatch_size: Option<usize>,
    pub seed: u64,
}

impl FitConfig {
    pub fn new(method: Method, elbo_variant: ElboVariant, zi_variant: ZiVariant) -> Self {
        Self {
            method,
            elbo_variant,
            zi_variant,
            max_iters: 1000,
            rel_tol: 1e-6,
            window: 10,
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            newton_steps: 5,
            minibatch_size: None,
            seed: 0,
        }
    }

    /// VEM on the standard bound.
    pub fn vem(zi_variant: ZiVariant) -> Self {
        Self::new(Method::Vem, ElboVariant::STANDARD, zi_variant)
    }

    pub fn gradient(elbo_variant: ElboVariant, zi_variant: ZiVariant) -> Self {
        Self::new(Method::GradientJoint, elbo_variant, zi_variant)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: &str| Err(ZiplnError::InvalidParameter(m.to_string()));
        if self.method == Method::Vem
            && (self.elbo_variant.family != ElboFamily::Standard || self.elbo_variant.analytic_p)
        {
            return bad("VEM only applies to the standard bound with free P");
        }
        if !(self.rel_tol > 0.0) {
            return bad("rel_tol must be positive");
        }
        if self.window == 0 || self.max_iters == 0 {
            return bad("window and max_iters must be positive");
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("invalid learning-rate schedule");
        }
        match self.minibatch_size {
            Some(0) => bad("minibatch_size must be positive"),
            Some(b) if b > n => bad("minibatch_size cannot exceed n"),
            Some(_) if self.method == Method::Vem => bad("minibatches require the gradient method"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub theta: ModelParams,
    /// Final variational parameters; for analytic variants `P` holds the
    /// analytic posterior at the final `theta`.
    pub psi: VariationalParams,
    pub elbo_trace: Vec<f64>,
    pub n_iters: usize,
    pub converged: bool,
    pub wall_time_s: f64,
    pub config: FitConfig,
}

impl FitResult {
    pub fn final_elbo(&self) -> f64 {
        *self.elbo_trace.last().expect("traces start with the initial bound")
    }
}

/// Initial point: `M = log(Y + 1) - O`, `S = 1`, `P = 1/2` on zeros, `B` by
/// least squares of `M` on `X`, `Omega = I`, neutral zero-inflation. With
/// zero-inflation, `M` on zeros starts at the column mean over positive counts
/// so that zeros are not all explained by a low Gaussian mean.
pub fn init_params(data: &CountDataset, config: &FitConfig) -> Result<(ModelParams, VariationalParams)> {
    let (n, p) = (data.n(), data.p());
    let with_zi = config.zi_variant != ZiVariant::None;
    let mut m = DMatrix::from_fn(n, p, |i, j| data.counts()[(i, j)].ln_1p() - data.offsets()[(i, j)]);
    if with_zi {
        for j in 0..p {
            let positive: Vec<f64> = (0..n).filter(|&i| !data.is_zero(i, j)).map(|i| m[(i, j)]).collect();
            if positive.is_empty() {
                continue;
            }
            let fill = positive.iter().sum::<f64>() / positive.len() as f64;
            for i in (0..n).filter(|&i| data.is_zero(i, j)) {
                m[(i, j)] = fill;
            }
        }
    }
    let b = least_squares(data.covariates(), &m, "X^T X is singular")?;
    let zi = ZiParams::neutral(config.zi_variant, data.design());
    let pm = DMatrix::from_fn(n, p, |i, j| if with_zi && data.is_zero(i, j) { 0.5 } else { 0.0 });
    let theta = ModelParams::from_omega(DMatrix::identity(p, p), b, zi)?;
    Ok((
        theta,
        VariationalParams {
            m,
            s: DMatrix::from_element(n, p, 1.0),
            p: pm,
        },
    ))
}

/// Fit with the configured method.
pub fn fit(data: &CountDataset, config: &FitConfig) -> Result<FitResult> {
    match config.method {
        Method::Vem => vem_fit(data, config),
        Method::GradientJoint => gradient_fit(data, config),
    }
}

/// Shared pre-flight checks.
fn prepare(data: &CountDataset, config: &FitConfig) -> Result<()> {
    config.validate(data.n())?;
    data.check_identifiable(config.zi_variant)
}

/// `|J_t - J_{t-w}| < rel_tol |J_t|`.
fn has_converged(trace: &[f64], config: &FitConfig) -> bool {
    let t = trace.len();
    if t <= config.window {
        return false;
    }
    let last = trace[t - 1];
    (last - trace[t - 1 - config.window]).abs() < config.rel_tol * last.abs()
}

fn finish(
    data: &CountDataset,
    config: &FitConfig,
    theta: ModelParams,
    psi: VariationalParams,
    elbo_trace: Vec<f64>,
    converged: bool,
    started: Instant,
) -> Result<FitResult> {
    let psi = effective_psi(config.elbo_variant, data, &theta, &psi)?;
    Ok(FitResult {
        theta,
        psi,
        n_iters: elbo_trace.len() - 1,
        elbo_trace,
        converged,
        wall_time_s: started.elapsed().as_secs_f64(),
        config: config.clone(),
    })
}
