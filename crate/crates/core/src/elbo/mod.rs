//! Evidence lower bounds of the two variational families, their entropies,
//! analytic gradients and the analytic posterior of the zero-inflation
//! indicators.
//!
//! Both bounds are sums of per-sample terms, so every evaluation here can be
//! restricted to a subset of rows (the `*_rows` functions). Model-only terms
//! such as `n/2 log det Omega` are split evenly across rows.
//!
//! Enhanced family, per entry: `W ~ B(P)`, `Z | W = 1 ~ N(x_i^T B_j, Sigma_jj)`,
//! `Z | W = 0 ~ N(M, S^2)`. With `R = M - XB` and `U = Q * R` its Gaussian part is
//!
//! ```text
//!   1/2 sum Q log S^2 + 1/2 sum P log Sigma_jj + n/2 log det Omega
//! - 1/2 Tr(Omega U^T U)
//! - 1/2 sum_ij Omega_jj (Q S^2 + P Sigma_jj + P Q R^2) + np/2
//! ```
//!
//! which is the expectation of `log N(Z; XB, Sigma)` under the mixture
//! (`E[H] = Q R`, `V[H] = P Q R^2 + Q S^2 + P Sigma_jj`) plus the mixture's
//! entropy. It reduces to the standard bound when `P = 0`.

mod gradient;

pub use gradient::{elbo_gradient, elbo_gradient_rows, ElboGradient};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZiplnError};
use crate::model::{check_mask, CountDataset, ModelParams, VariationalParams};
use crate::special::{log_phi_tilde, logistic, softplus, xlogx, LogPhiTilde};

const LOG_2PI_E: f64 = 2.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElboFamily {
    /// Fully factorized Gaussian x Bernoulli.
    Standard,
    /// Gaussian whose parameters switch on the Bernoulli indicator.
    Enhanced,
}

/// Which bound to evaluate. With `analytic_p` the variational probabilities
/// are not free: they are replaced by [`psi_analytic`] of the model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ElboVariant {
    pub family: ElboFamily,
    pub analytic_p: bool,
}

impl ElboVariant {
    pub const STANDARD: Self = Self {
        family: ElboFamily::Standard,
        analytic_p: false,
    };
    pub const ENHANCED: Self = Self {
        family: ElboFamily::Enhanced,
        analytic_p: false,
    };
    pub const STANDARD_ANALYTIC: Self = Self {
        family: ElboFamily::Standard,
        analytic_p: true,
    };
    pub const ENHANCED_ANALYTIC: Self = Self {
        family: ElboFamily::Enhanced,
        analytic_p: true,
    };

    pub const ALL: [Self; 4] = [
        Self::STANDARD,
        Self::ENHANCED,
        Self::STANDARD_ANALYTIC,
        Self::ENHANCED_ANALYTIC,
    ];

    pub fn name(&self) -> &'static str {
        match (self.family, self.analytic_p) {
            (ElboFamily::Standard, false) => "Standard",
            (ElboFamily::Enhanced, false) => "Enhanced",
            (ElboFamily::Standard, true) => "StandardAnalytic",
            (ElboFamily::Enhanced, true) => "EnhancedAnalytic",
        }
    }
}

/// Shared per-evaluation state.
pub(crate) struct Context<'a> {
    pub variant: ElboVariant,
    pub data: &'a CountDataset,
    pub theta: &'a ModelParams,
    pub psi: &'a VariationalParams,
    /// `X B`
    pub xb: DMatrix<f64>,
    pub mu0: Option<DMatrix<f64>>,
    pub sigma_diag: DVector<f64>,
    pub omega_diag: DVector<f64>,
}

/// Effective variational probabilities of one row, with the `log phi_tilde`
/// values behind them when they are analytic.
pub(crate) struct RowProbs {
    pub p: Vec<f64>,
    pub log_phi: Option<Vec<Option<LogPhiTilde>>>,
}

impl<'a> Context<'a> {
    pub fn new(
        variant: ElboVariant,
        data: &'a CountDataset,
        theta: &'a ModelParams,
        psi: &'a VariationalParams,
    ) -> Result<Self> {
        theta.validate(data.design())?;
        let shape = (data.n(), data.p());
        if psi.m.shape() != shape || psi.s.shape() != shape || psi.p.shape() != shape {
            return Err(ZiplnError::ShapeMismatch("variational parameters must be n x p".into()));
        }
        if psi.s.iter().any(|v| !(*v > 0.0)) {
            return Err(ZiplnError::InvalidParameter("S must be strictly positive".into()));
        }
        let mu0 = theta.zi().logit_field(data.design());
        if !variant.analytic_p {
            if mu0.is_none() {
                if let Some(v) = psi.p.iter().find(|v| **v != 0.0) {
                    return Err(ZiplnError::InvalidParameter(format!(
                        "a model without zero inflation needs P = 0, found {v}"
                    )));
                }
            } else {
                if psi.p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(ZiplnError::InvalidParameter("P must lie in [0, 1]".into()));
                }
                check_mask(data, &psi.p)?;
            }
        }
        Ok(Self {
            variant,
            data,
            theta,
            psi,
            xb: theta.mean_field(data.design()),
            mu0,
            sigma_diag: theta.sigma().diagonal(),
            omega_diag: theta.omega().diagonal(),
        })
    }

    pub fn row_probs(&self, i: usize) -> RowProbs {
        let p = self.data.p();
        match (&self.mu0, self.variant.analytic_p) {
            (None, _) => RowProbs {
                p: vec![0.0; p],
                log_phi: None,
            },
            (Some(_), false) => RowProbs {
                p: self.psi.p.row(i).iter().copied().collect(),
                log_phi: None,
            },
            (Some(mu0), true) => {
                let mut probs = vec![0.0; p];
                let mut lp = vec![None; p];
                for j in 0..p {
                    if self.data.is_zero(i, j) {
                        let mean = self.data.offsets()[(i, j)] + self.xb[(i, j)];
                        let l = log_phi_tilde(mean, self.sigma_diag[j])
                            .expect("Sigma has a positive diagonal");
                        probs[j] = logistic(mu0[(i, j)] - l.value);
                        lp[j] = Some(l);
                    }
                }
                RowProbs {
                    p: probs,
                    log_phi: Some(lp),
                }
            }
        }
    }

    pub fn residual_row(&self, i: usize) -> DVector<f64> {
        DVector::from_fn(self.data.p(), |j, _| self.psi.m[(i, j)] - self.xb[(i, j)])
    }

    pub fn a(&self, i: usize, j: usize) -> f64 {
        let s = self.psi.s[(i, j)];
        (self.data.offsets()[(i, j)] + self.psi.m[(i, j)] + 0.5 * s * s).exp()
    }

    /// Contribution of row `i` to the bound.
    pub fn row_value(&self, i: usize) -> f64 {
        let data = self.data;
        let psi = self.psi;
        let probs = self.row_probs(i);
        let p = data.p();
        let mut value = 0.0;
        for j in 0..p {
            let pij = probs.p[j];
            let qij = 1.0 - pij;
            let y = data.counts()[(i, j)];
            let o = data.offsets()[(i, j)];
            let m = psi.m[(i, j)];
            // Q (Y (O + M) - A - log Y!)
            value += qij * (y * (o + m) - self.a(i, j) - data.log_factorials()[(i, j)]);
            if let Some(mu0) = &self.mu0 {
                let mu0 = mu0[(i, j)];
                if pij != 0.0 {
                    value += pij * mu0;
                }
                value -= softplus(mu0);
                value -= xlogx(pij) + xlogx(qij);
            }
        }
        let r = self.residual_row(i);
        let omega = self.theta.omega();
        let half_logdet = 0.5 * self.theta.log_det_omega();
        match self.variant.family {
            ElboFamily::Standard => {
                let mut trace = r.dot(&(omega * &r));
                for j in 0..p {
                    let s = psi.s[(i, j)];
                    value += s.ln();
                    trace += self.omega_diag[j] * s * s;
                }
                value += half_logdet - 0.5 * trace + 0.5 * p as f64;
            }
            ElboFamily::Enhanced => {
                let u = DVector::from_fn(p, |j, _| (1.0 - probs.p[j]) * r[j]);
                let mut trace = u.dot(&(omega * &u));
                for j in 0..p {
                    let s = psi.s[(i, j)];
                    let pij = probs.p[j];
                    let qij = 1.0 - pij;
                    value += qij * s.ln();
                    if pij != 0.0 {
                        value += 0.5 * pij * self.sigma_diag[j].ln();
                    }
                    trace += self.omega_diag[j]
                        * (qij * s * s + pij * self.sigma_diag[j] + pij * qij * r[j] * r[j]);
                }
                value += half_logdet - 0.5 * trace + 0.5 * p as f64;
            }
        }
        value
    }

    pub fn row_entropy(&self, i: usize) -> f64 {
        let probs = self.row_probs(i);
        let mut h = 0.5 * self.data.p() as f64 * LOG_2PI_E;
        for j in 0..self.data.p() {
            let pij = probs.p[j];
            let qij = 1.0 - pij;
            let log_s = self.psi.s[(i, j)].ln();
            h -= xlogx(pij) + xlogx(qij);
            match self.variant.family {
                ElboFamily::Standard => h += log_s,
                ElboFamily::Enhanced => {
                    h += qij * log_s;
                    if pij != 0.0 {
                        h += 0.5 * pij * self.sigma_diag[j].ln();
                    }
                }
            }
        }
        h
    }
}

/// The evidence lower bound `J(theta, psi)` over all samples.
pub fn elbo(
    variant: ElboVariant,
    data: &CountDataset,
    theta: &ModelParams,
    psi: &VariationalParams,
) -> Result<f64> {
    let rows: Vec<usize> = (0..data.n()).collect();
    elbo_rows(variant, data, theta, psi, &rows)
}

/// Sum of the per-sample terms of the bound over `rows`.
pub fn elbo_rows(
    variant: ElboVariant,
    data: &CountDataset,
    theta: &ModelParams,
    psi: &VariationalParams,
    rows: &[usize],
) -> Result<f64> {
    let ctx = Context::new(variant, data, theta, psi)?;
    let terms: Vec<f64> = rows.par_iter().map(|&i| ctx.row_value(i)).collect();
    Ok(terms.iter().sum())
}

/// Entropy of the variational distribution, the penalty used by ICL.
pub fn entropy(
    variant: ElboVariant,
    data: &CountDataset,
    theta: &ModelParams,
    psi: &VariationalParams,
) -> Result<f64> {
    let ctx = Context::new(variant, data, theta, psi)?;
    Ok((0..data.n()).map(|i| ctx.row_entropy(i)).sum())
}

/// Bernoulli entropy `-sum P log P + Q log Q` (with `0 log 0 = 0`).
pub fn bernoulli_entropy(p: &DMatrix<f64>) -> f64 {
    -p.iter().map(|&v| xlogx(v) + xlogx(1.0 - v)).sum::<f64>()
}

/// Conditional probability that each zero count comes from the zero
/// component, using the Lambert-W approximation of the Poisson log-normal
/// zero probability; zero on positive counts and for models without zero
/// inflation.
pub fn psi_analytic(data: &CountDataset, theta: &ModelParams) -> Result<DMatrix<f64>> {
    theta.validate(data.design())?;
    let (n, p) = (data.n(), data.p());
    let Some(mu0) = theta.zi().logit_field(data.design()) else {
        return Ok(DMatrix::zeros(n, p));
    };
    let xb = theta.mean_field(data.design());
    let sigma = theta.sigma();
    let mut out = DMatrix::zeros(n, p);
    for j in 0..p {
        for i in 0..n {
            if data.is_zero(i, j) {
                let l = log_phi_tilde(data.offsets()[(i, j)] + xb[(i, j)], sigma[(j, j)])?;
                out[(i, j)] = logistic(mu0[(i, j)] - l.value);
            }
        }
    }
    Ok(out)
}

/// `psi` with `P` replaced by the analytic posterior when the variant asks for it.
pub fn effective_psi(
    variant: ElboVariant,
    data: &CountDataset,
    theta: &ModelParams,
    psi: &VariationalParams,
) -> Result<VariationalParams> {
    if variant.analytic_p {
        Ok(VariationalParams {
            m: psi.m.clone(),
            s: psi.s.clone(),
            p: psi_analytic(data, theta)?,
        })
    } else {
        Ok(psi.clone())
    }
}
