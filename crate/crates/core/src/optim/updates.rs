//! Closed-form and inner-solver updates of the standard bound, each the exact
//! (or monotone) maximizer of its block with the others held fixed.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Result, ZiplnError};
use crate::linalg::{cholesky_inverse, least_squares, symmetrize};
use crate::model::{CountDataset, ModelParams, VariationalParams, ZiCovariates, ZiParams};
use crate::special::{logistic, logit, softplus, PROB_EPS};

const NEWTON_TOL: f64 = 1e-11;
const NEWTON_MAX_ITERS: usize = 100;
const MAX_HALVINGS: usize = 30;

/// `B = (X^T X)^{-1} X^T M`.
pub fn update_b(data: &CountDataset, psi: &VariationalParams) -> Result<DMatrix<f64>> {
    least_squares(data.covariates(), &psi.m, "X^T X is singular")
}

/// `Omega = n [ (M - XB)^T (M - XB) + Diag(1^T S^2) ]^{-1}`.
///
/// Returns the matrix and whether ridge jitter was needed to invert it.
pub fn update_omega(
    data: &CountDataset,
    theta: &ModelParams,
    psi: &VariationalParams,
) -> Result<(DMatrix<f64>, bool)> {
    let r = &psi.m - theta.mean_field(data.design());
    let mut k = r.tr_mul(&r);
    for j in 0..data.p() {
        k[(j, j)] += psi.s.column(j).iter().map(|s| s * s).sum::<f64>();
    }
    let k = symmetrize(&k);
    let n = data.n() as f64;
    if let Ok(inv) = cholesky_inverse(&k, "covariance estimate") {
        if inv.iter().all(|v| v.is_finite()) {
            return Ok((inv * n, false));
        }
    }
    let p = data.p();
    let jitter = 1e-5 * k.trace() / p as f64;
    log::warn!("covariance estimate is numerically singular; adding ridge {jitter:e}");
    let mut kj = k;
    for j in 0..p {
        kj[(j, j)] += jitter;
    }
    Ok((cholesky_inverse(&kj, "jittered covariance estimate")? * n, true))
}

/// Maximizer of `sum P mu0 - log(1 + e^{mu0})` over the zero-inflation
/// coefficients, warm-started from `current`.
pub fn update_b0(data: &CountDataset, psi: &VariationalParams, current: &ZiParams) -> Result<ZiParams> {
    let clamp = |v: f64| v.clamp(PROB_EPS, 1.0 - PROB_EPS);
    match (current, data.zi_covariates()) {
        (ZiParams::None, _) => Ok(ZiParams::None),
        (ZiParams::Nd { .. }, _) => Ok(ZiParams::Nd {
            pi: clamp(psi.p.mean()),
        }),
        (ZiParams::Cd { b0 }, ZiCovariates::Rows(x0)) => {
            let cols: Vec<DVector<f64>> = (0..data.p())
                .into_par_iter()
                .map(|j| logistic_newton(x0, &psi.p.column(j).into_owned(), b0.column(j).into_owned()))
                .collect();
            Ok(ZiParams::Cd {
                b0: DMatrix::from_columns(&cols),
            })
        }
        (ZiParams::Rd { b0bar }, ZiCovariates::Columns(x0bar)) => {
            let z = x0bar.transpose();
            let rows: Vec<DVector<f64>> = (0..data.n())
                .into_par_iter()
                .map(|i| logistic_newton(&z, &psi.p.row(i).transpose(), b0bar.row(i).transpose()))
                .collect();
            Ok(ZiParams::Rd {
                b0bar: DMatrix::from_fn(data.n(), data.d0(), |i, k| rows[i][k]),
            })
        }
        _ => Err(ZiplnError::ShapeMismatch(
            "zero-inflation parameters do not match the design".into(),
        )),
    }
}

/// Damped Newton for a logistic regression with soft labels `y`.
fn logistic_newton(z: &DMatrix<f64>, y: &DVector<f64>, start: DVector<f64>) -> DVector<f64> {
    let objective = |beta: &DVector<f64>| -> f64 {
        let eta = z * beta;
        eta.iter().zip(y.iter()).map(|(e, t)| t * e - softplus(*e)).sum()
    };
    let mut beta = start;
    let mut f = objective(&beta);
    for _ in 0..NEWTON_MAX_ITERS {
        let eta = z * &beta;
        let prob = eta.map(logistic);
        let grad = z.tr_mul(&(y - &prob));
        if grad.amax() <= NEWTON_TOL {
            break;
        }
        let weights = prob.map(|p| p * (1.0 - p));
        let mut hess = DMatrix::from_fn(z.ncols(), z.ncols(), |a, b| {
            (0..z.nrows()).map(|k| z[(k, a)] * weights[k] * z[(k, b)]).sum::<f64>()
        });
        let ridge = 1e-12 * hess.diagonal().amax().max(1e-300);
        for a in 0..z.ncols() {
            hess[(a, a)] += ridge;
        }
        let step = match hess.cholesky() {
            Some(ch) => ch.solve(&grad),
            None => grad.clone(),
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let cand = &beta + &step * t;
            let fc = objective(&cand);
            // Near the optimum the objective only moves by rounding noise.
            if fc.is_finite() && fc >= f - 1e-14 * f.abs().max(1.0) {
                beta = cand;
                f = fc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    beta
}

/// `P = sigmoid(A + mu0)` on zero counts, clamped to `[1e-7, 1 - 1e-7]`;
/// zero on positive counts and for the plain model.
pub fn update_p(data: &CountDataset, theta: &ModelParams, psi: &VariationalParams) -> DMatrix<f64> {
    let (n, p) = (data.n(), data.p());
    let Some(mu0) = theta.zi().logit_field(data.design()) else {
        return DMatrix::zeros(n, p);
    };
    let a = psi.a(data.offsets());
    DMatrix::from_fn(n, p, |i, j| {
        if data.is_zero(i, j) {
            logistic(a[(i, j)] + mu0[(i, j)]).clamp(PROB_EPS, 1.0 - PROB_EPS)
        } else {
            0.0
        }
    })
}

/// Inner maximization of the standard bound in `M` and `S`: `rounds` passes
/// of one diagonal Newton step on each row of `M` followed by one on each
/// `log S_ij`, every step backtracked until its own objective does not drop.
pub fn ve_step(data: &CountDataset, theta: &ModelParams, psi: &mut VariationalParams, rounds: usize) {
    let (n, p) = (data.n(), data.p());
    let xb = theta.mean_field(data.design());
    let omega = theta.omega();
    let w = omega.diagonal();
    let q = psi.q();
    for _ in 0..rounds {
        let rows: Vec<DVector<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let ctx = RowProblem {
                    y: data.counts().row(i).transpose(),
                    o: data.offsets().row(i).transpose(),
                    xb: xb.row(i).transpose(),
                    q: q.row(i).transpose(),
                    s2: psi.s.row(i).transpose().map(|s| s * s),
                    omega,
                };
                ctx.newton_step(psi.m.row(i).transpose(), &w)
            })
            .collect();
        for (i, row) in rows.iter().enumerate() {
            psi.m.set_row(i, &row.transpose());
        }
        let m = &psi.m;
        let s_new: Vec<f64> = (0..n * p)
            .into_par_iter()
            .map(|k| {
                let (i, j) = (k % n, k / n);
                s_newton_step(
                    q[(i, j)],
                    data.offsets()[(i, j)] + m[(i, j)],
                    w[j],
                    psi.s[(i, j)],
                )
            })
            .collect();
        psi.s = DMatrix::from_vec(n, p, s_new);
    }
}

struct RowProblem<'a> {
    y: DVector<f64>,
    o: DVector<f64>,
    xb: DVector<f64>,
    q: DVector<f64>,
    s2: DVector<f64>,
    omega: &'a DMatrix<f64>,
}

impl RowProblem<'_> {
    /// Terms of the bound that depend on `M_i`.
    fn objective(&self, m: &DVector<f64>) -> f64 {
        let r = m - &self.xb;
        let mut v = -0.5 * r.dot(&(self.omega * &r));
        for j in 0..m.len() {
            let a = (self.o[j] + m[j] + 0.5 * self.s2[j]).exp();
            v += self.q[j] * (self.y[j] * m[j] - a);
        }
        v
    }

    fn newton_step(&self, m: DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let r = &m - &self.xb;
        let or = self.omega * &r;
        let step = DVector::from_fn(m.len(), |j, _| {
            let a = (self.o[j] + m[j] + 0.5 * self.s2[j]).exp();
            (self.q[j] * (self.y[j] - a) - or[j]) / (self.q[j] * a + w[j])
        });
        let f0 = self.objective(&m);
        let mut t = 1.0;
        for _ in 0..MAX_HALVINGS {
            let cand = &m + &step * t;
            let f = self.objective(&cand);
            if f.is_finite() && f >= f0 {
                return cand;
            }
            t *= 0.5;
        }
        m
    }
}

/// One backtracked Newton step on `log s` for `-q e^{c + s^2/2} + log s - w s^2 / 2`.
fn s_newton_step(q: f64, c: f64, w: f64, s: f64) -> f64 {
    let f = |s: f64| -q * (c + 0.5 * s * s).exp() + s.ln() - 0.5 * w * s * s;
    let s2 = s * s;
    let qa = q * (c + 0.5 * s2).exp();
    let d1 = -qa * s2 + 1.0 - w * s2;
    let d2 = -qa * (2.0 * s2 + s2 * s2) - 2.0 * w * s2;
    let step = -d1 / d2;
    let f0 = f(s);
    let mut t = 1.0;
    for _ in 0..MAX_HALVINGS {
        let cand = s * (step * t).exp();
        let fc = f(cand);
        if cand > 0.0 && fc.is_finite() && fc >= f0 {
            return cand;
        }
        t *= 0.5;
    }
    s
}

/// `logit` of the clamped probability.
pub(crate) fn clamped_logit(p: f64) -> f64 {
    logit(p.clamp(PROB_EPS, 1.0 - PROB_EPS))
}
