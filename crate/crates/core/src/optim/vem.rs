use std::time::Instant;

use super::updates::{update_b, update_b0, update_omega, update_p, ve_step};
use super::{finish, has_converged, init_params, prepare, FitConfig, FitResult, Method};
use crate::elbo::{elbo, ElboVariant};
use crate::error::{Result, ZiplnError};
use crate::model::{CountDataset, ModelParams, VariationalParams};

/// Allowed drop of the bound between iterations, relative to its magnitude.
const MONOTONE_TOL: f64 = 1e-8;

/// Alternating maximization of the standard bound: `B`, `Omega` and the
/// zero-inflation coefficients in closed form (or by a concave Newton solve),
/// then `P` in closed form and `(M, S)` by diagonal Newton steps.
pub fn vem_fit(data: &CountDataset, config: &FitConfig) -> Result<FitResult> {
    prepare(data, config)?;
    if config.method != Method::Vem {
        return Err(ZiplnError::InvalidParameter("vem_fit needs method = vem".into()));
    }
    let started = Instant::now();
    let (mut theta, mut psi) = init_params(data, config)?;
    let j0 = elbo(ElboVariant::STANDARD, data, &theta, &psi)?;
    if !j0.is_finite() {
        return Err(ZiplnError::Divergence { iteration: 0 });
    }
    let mut trace = vec![j0];
    let mut converged = false;
    for iteration in 1..=config.max_iters {
        theta = m_step(data, theta, &psi)?;
        psi.p = update_p(data, &theta, &psi);
        ve_step(data, &theta, &mut psi, config.newton_steps);

        let j = elbo(ElboVariant::STANDARD, data, &theta, &psi)?;
        if !j.is_finite() {
            return Err(ZiplnError::Divergence { iteration });
        }
        let previous = *trace.last().expect("non-empty");
        if j < previous - MONOTONE_TOL * previous.abs() {
            return Err(ZiplnError::MonotonicityViolation {
                iteration,
                previous,
                current: j,
            });
        }
        trace.push(j);
        if has_converged(&trace, config) {
            converged = true;
            break;
        }
    }
    finish(data, config, theta, psi, trace, converged, started)
}

fn m_step(data: &CountDataset, theta: ModelParams, psi: &VariationalParams) -> Result<ModelParams> {
    // B first: its maximizer does not depend on Omega, so B then Omega is the
    // joint maximum over both.
    let theta = theta.with_b(update_b(data, psi)?)?;
    let (omega, jittered) = update_omega(data, &theta, psi)?;
    let candidate = theta.clone().with_omega(omega)?;
    let theta = if jittered
        && elbo(ElboVariant::STANDARD, data, &candidate, psi)? < elbo(ElboVariant::STANDARD, data, &theta, psi)?
    {
        theta
    } else {
        candidate
    };
    let zi = update_b0(data, psi, theta.zi())?;
    Ok(theta.with_zi(zi))
}
