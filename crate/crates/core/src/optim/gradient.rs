use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::updates::clamped_logit;
use super::{finish, has_converged, init_params, prepare, FitConfig, FitResult, Method};
use crate::elbo::{elbo, elbo_gradient_rows, elbo_rows, ElboGradient, ElboVariant};
use crate::error::{Result, ZiplnError};
use crate::model::{CountDataset, ModelParams, VariationalParams, ZiParams, ZiVariant};
use crate::special::{logistic, PROB_EPS};

/// Allowed drop of the bound for an accepted step, relative to its magnitude.
const SAFEGUARD_TOL: f64 = 1e-6;
const MAX_HALVINGS: usize = 20;

/// Unconstrained coordinates: `M`, `log S`, `logit P`, `B`, `C` and the
/// logit-scale zero-inflation coefficients.
#[derive(Debug, Clone, PartialEq)]
struct Blocks {
    m: DMatrix<f64>,
    log_s: DMatrix<f64>,
    p_logit: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    zi: Option<DMatrix<f64>>,
}

impl Blocks {
    fn zeros_like(other: &Blocks) -> Self {
        let z = |m: &DMatrix<f64>| DMatrix::zeros(m.nrows(), m.ncols());
        Self {
            m: z(&other.m),
            log_s: z(&other.log_s),
            p_logit: z(&other.p_logit),
            b: z(&other.b),
            c: z(&other.c),
            zi: other.zi.as_ref().map(z),
        }
    }
}

/// State of a gradient fit: the current point and the adaptive moments.
#[derive(Debug, Clone, PartialEq)]
pub struct FitState {
    pub theta: ModelParams,
    pub psi: VariationalParams,
    config: FitConfig,
    first: Blocks,
    second: Blocks,
    /// Step counts for bias correction: shared blocks, then per row.
    t_global: i32,
    t_rows: Vec<i32>,
    steps: usize,
}

impl FitState {
    pub fn new(data: &CountDataset, config: &FitConfig, theta: ModelParams, psi: VariationalParams) -> Self {
        let shape = Blocks {
            m: psi.m.clone(),
            log_s: psi.s.clone(),
            p_logit: psi.p.clone(),
            b: theta.b().clone(),
            c: theta.factor().clone(),
            zi: theta.zi().coef(),
        };
        Self {
            theta,
            psi,
            config: config.clone(),
            first: Blocks::zeros_like(&shape),
            second: Blocks::zeros_like(&shape),
            t_global: 0,
            t_rows: vec![0; data.n()],
            steps: 0,
        }
    }

    fn variant(&self) -> ElboVariant {
        self.config.elbo_variant
    }

    fn free_p(&self) -> bool {
        !self.variant().analytic_p && self.config.zi_variant != ZiVariant::None
    }

    fn rd(&self) -> bool {
        self.config.zi_variant == ZiVariant::Rd
    }

    /// Bound over `rows`, scaled to the full sample.
    fn batch_objective(&self, data: &CountDataset, theta: &ModelParams, psi: &VariationalParams, rows: &[usize]) -> Result<f64> {
        let scale = data.n() as f64 / rows.len() as f64;
        Ok(scale * elbo_rows(self.variant(), data, theta, psi, rows)?)
    }

    /// One safeguarded adaptive ascent step on `rows`; returns the batch
    /// objective after the step.
    pub(crate) fn step(&mut self, data: &CountDataset, rows: &[usize]) -> Result<f64> {
        if rows.is_empty() {
            return Err(ZiplnError::EmptyBatch);
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= data.n()) {
            return Err(ZiplnError::InvalidParameter(format!("batch row {bad} is out of range")));
        }
        self.steps += 1;
        let iteration = self.steps;
        let grad = scaled_gradient(data, self, rows)?;
        let g = self.unconstrained(&grad);
        if !all_finite(&g) {
            return Err(ZiplnError::Divergence { iteration });
        }
        let direction = self.adam_direction(&g, rows);

        let before = self.batch_objective(data, &self.theta, &self.psi, rows)?;
        let mut scale = 1.0;
        for _ in 0..MAX_HALVINGS {
            if let Some((theta, psi)) = self.candidate(&direction, rows, scale) {
                if let Ok(after) = self.batch_objective(data, &theta, &psi, rows) {
                    if after.is_finite() && after >= before - SAFEGUARD_TOL * before.abs() {
                        self.theta = theta;
                        self.psi = psi;
                        return Ok(after);
                    }
                }
            }
            scale *= 0.5;
        }
        Err(ZiplnError::StalledAscent {
            iteration,
            halvings: MAX_HALVINGS,
        })
    }

    /// Chain the gradient into the unconstrained coordinates.
    fn unconstrained(&self, g: &ElboGradient) -> Blocks {
        let p_logit = match (&g.d_p, self.free_p()) {
            (Some(dp), true) => dp.zip_map(&self.psi.p, |d, p| d * p * (1.0 - p)),
            _ => DMatrix::zeros(self.psi.p.nrows(), self.psi.p.ncols()),
        };
        Blocks {
            m: g.d_m.clone(),
            log_s: g.d_s.component_mul(&self.psi.s),
            p_logit,
            b: g.d_b.clone(),
            c: g.d_c.clone(),
            zi: g.d_zi.clone(),
        }
    }

    /// Update the moment estimates and return the step. Row-local blocks
    /// only move on the batch rows.
    fn adam_direction(&mut self, g: &Blocks, rows: &[usize]) -> Blocks {
        let FitConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            adam_eps: eps,
            ..
        } = self.config;
        self.t_global += 1;
        for &i in rows {
            self.t_rows[i] += 1;
        }
        let mut dir = Blocks::zeros_like(g);
        let update = |m: &mut f64, v: &mut f64, grad: f64, t: i32| -> f64 {
            *m = b1 * *m + (1.0 - b1) * grad;
            *v = b2 * *v + (1.0 - b2) * grad * grad;
            let mh = *m / (1.0 - b1.powi(t));
            let vh = *v / (1.0 - b2.powi(t));
            lr * mh / (vh.sqrt() + eps)
        };
        let tg = self.t_global;
        let global = |first: &mut DMatrix<f64>, second: &mut DMatrix<f64>, grad: &DMatrix<f64>, out: &mut DMatrix<f64>| {
            for k in 0..grad.len() {
                out[k] = update(&mut first[k], &mut second[k], grad[k], tg);
            }
        };
        global(&mut self.first.b, &mut self.second.b, &g.b, &mut dir.b);
        global(&mut self.first.c, &mut self.second.c, &g.c, &mut dir.c);

        let t_rows = &self.t_rows;
        let local = |first: &mut DMatrix<f64>, second: &mut DMatrix<f64>, grad: &DMatrix<f64>, out: &mut DMatrix<f64>| {
            for &i in rows {
                for j in 0..grad.ncols() {
                    out[(i, j)] = update(&mut first[(i, j)], &mut second[(i, j)], grad[(i, j)], t_rows[i]);
                }
            }
        };
        local(&mut self.first.m, &mut self.second.m, &g.m, &mut dir.m);
        local(&mut self.first.log_s, &mut self.second.log_s, &g.log_s, &mut dir.log_s);
        if self.free_p() {
            local(&mut self.first.p_logit, &mut self.second.p_logit, &g.p_logit, &mut dir.p_logit);
        }
        if let (Some(gz), Some(f), Some(s), Some(out)) =
            (&g.zi, self.first.zi.as_mut(), self.second.zi.as_mut(), dir.zi.as_mut())
        {
            if self.config.zi_variant == ZiVariant::Rd {
                local(f, s, gz, out);
            } else {
                global(f, s, gz, out);
            }
        }
        dir
    }

    /// The point reached by `scale * direction`, or `None` if it is invalid.
    fn candidate(&self, dir: &Blocks, rows: &[usize], scale: f64) -> Option<(ModelParams, VariationalParams)> {
        let theta = &self.theta;
        let b = theta.b() + &dir.b * scale;
        let c = theta.factor() + &dir.c * scale;
        let zi = match (theta.zi().coef(), &dir.zi) {
            (Some(coef), Some(d)) => {
                let mut next = coef.clone();
                if self.rd() {
                    for &i in rows {
                        for k in 0..next.ncols() {
                            next[(i, k)] += scale * d[(i, k)];
                        }
                    }
                } else {
                    next += d * scale;
                }
                ZiParams::from_coef(self.config.zi_variant, &next)
            }
            _ => theta.zi().clone(),
        };
        if let ZiParams::Nd { pi } = zi {
            if !(pi > 0.0 && pi < 1.0) {
                return None;
            }
        }
        let new_theta = ModelParams::from_factor(c, b, zi).ok()?;

        let mut psi = self.psi.clone();
        let (lo, hi) = (clamped_logit(PROB_EPS), clamped_logit(1.0 - PROB_EPS));
        for &i in rows {
            for j in 0..psi.m.ncols() {
                psi.m[(i, j)] += scale * dir.m[(i, j)];
                psi.s[(i, j)] *= (scale * dir.log_s[(i, j)]).exp();
                if self.free_p() && psi.p[(i, j)] > 0.0 {
                    let l = (clamped_logit(psi.p[(i, j)]) + scale * dir.p_logit[(i, j)]).clamp(lo, hi);
                    psi.p[(i, j)] = logistic(l);
                }
            }
        }
        let ok = rows.iter().all(|&i| {
            psi.m.row(i).iter().all(|v| v.is_finite()) && psi.s.row(i).iter().all(|v| v.is_finite() && *v > 0.0)
        });
        ok.then_some((new_theta, psi))
    }
}

fn all_finite(b: &Blocks) -> bool {
    let fin = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
    fin(&b.m) && fin(&b.log_s) && fin(&b.p_logit) && fin(&b.b) && fin(&b.c) && b.zi.as_ref().is_none_or(fin)
}

fn scaled_gradient(data: &CountDataset, state: &FitState, rows: &[usize]) -> Result<ElboGradient> {
    let g = elbo_gradient_rows(state.variant(), data, &state.theta, &state.psi, rows)?;
    let scale = data.n() as f64 / rows.len() as f64;
    Ok(ElboGradient {
        d_omega: g.d_omega * scale,
        d_c: g.d_c * scale,
        d_b: g.d_b * scale,
        d_zi: g.d_zi.map(|m| m * scale),
        d_m: g.d_m * scale,
        d_s: g.d_s * scale,
        d_p: g.d_p.map(|m| m * scale),
    })
}

/// Gradient estimate from `batch`: the batch rows' gradient scaled by
/// `n / |batch|`, an unbiased estimate of the full gradient under uniform
/// sampling of batches.
pub fn stochastic_gradient(data: &CountDataset, state: &FitState, batch: &[usize]) -> Result<ElboGradient> {
    if batch.is_empty() {
        return Err(ZiplnError::EmptyBatch);
    }
    scaled_gradient(data, state, batch)
}

/// One stochastic ascent step on the rows of `batch`.
pub fn minibatch_step(data: &CountDataset, mut state: FitState, batch: &[usize]) -> Result<FitState> {
    state.step(data, batch)?;
    Ok(state)
}

/// Joint adaptive gradient ascent on `(theta, psi)`, with `Omega = (C C^T)^{-1}`
/// and `P` replaced by its analytic form for the analytic variants.
pub fn gradient_fit(data: &CountDataset, config: &FitConfig) -> Result<FitResult> {
    prepare(data, config)?;
    if config.method != Method::GradientJoint {
        return Err(ZiplnError::InvalidParameter("gradient_fit needs method = grad".into()));
    }
    let started = Instant::now();
    let (theta, psi) = init_params(data, config)?;
    let mut state = FitState::new(data, config, theta, psi);
    let variant = config.elbo_variant;
    let j0 = elbo(variant, data, &state.theta, &state.psi)?;
    if !j0.is_finite() {
        return Err(ZiplnError::Divergence { iteration: 0 });
    }
    let mut trace = vec![j0];
    let all: Vec<usize> = (0..data.n()).collect();
    let mut order = all.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut converged = false;
    for _ in 0..config.max_iters {
        let j = match config.minibatch_size {
            None => state.step(data, &all)?,
            Some(size) => {
                order.shuffle(&mut rng);
                for batch in order.chunks(size) {
                    state.step(data, batch)?;
                }
                elbo(variant, data, &state.theta, &state.psi)?
            }
        };
        if !j.is_finite() {
            return Err(ZiplnError::Divergence { iteration: state.steps });
        }
        trace.push(j);
        if has_converged(&trace, config) {
            converged = true;
            break;
        }
    }
    let FitState { theta, psi, .. } = state;
    finish(data, config, theta, psi, trace, converged, started)
}
