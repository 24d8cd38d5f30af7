use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{Context, ElboFamily, ElboVariant};
use crate::error::Result;
use crate::model::{CountDataset, ModelParams, VariationalParams, ZiCovariates, ZiParams};
use crate::special::{dxlogx, logistic};

/// Gradient of the bound with respect to every parameter block.
///
/// `d_omega` is the gradient over symmetric matrices: perturbing `Omega_jk`
/// and `Omega_kj` together by `h` changes the bound by `2 h d_omega[j, k]`
/// off the diagonal. `d_c` is the gradient in the factor `C` of
/// `Sigma = C C^T`. `d_zi` follows [`ZiParams::coef`], so for ND it is the
/// derivative in `logit(pi)`. `d_p` is `None` when `P` is analytic or absent
/// and is zero on positive counts otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboGradient {
    pub d_omega: DMatrix<f64>,
    pub d_c: DMatrix<f64>,
    pub d_b: DMatrix<f64>,
    pub d_zi: Option<DMatrix<f64>>,
    pub d_m: DMatrix<f64>,
    pub d_s: DMatrix<f64>,
    pub d_p: Option<DMatrix<f64>>,
}

struct RowGrad {
    d_m: Vec<f64>,
    d_s: Vec<f64>,
    d_p: Vec<f64>,
    /// Derivative in `(XB)_i`.
    d_xb: Vec<f64>,
    d_mu0: Vec<f64>,
    /// Row of the Gram factor (`R` or `U`).
    k_row: Vec<f64>,
    k_diag: Vec<f64>,
    /// Derivative in `Sigma_jj` through terms that depend on it directly.
    g_s: Vec<f64>,
}

pub fn elbo_gradient(
    variant: ElboVariant,
    data: &CountDataset,
    theta: &ModelParams,
    psi: &VariationalParams,
) -> Result<ElboGradient> {
    let rows: Vec<usize> = (0..data.n()).collect();
    elbo_gradient_rows(variant, data, theta, psi, &rows)
}

/// Gradient of [`super::elbo_rows`]. Row-local blocks are zero outside `rows`.
pub fn elbo_gradient_rows(
    variant: ElboVariant,
    data: &CountDataset,
    theta: &ModelParams,
    psi: &VariationalParams,
    rows: &[usize],
) -> Result<ElboGradient> {
    let ctx = Context::new(variant, data, theta, psi)?;
    let (n, p) = (data.n(), data.p());
    let grads: Vec<RowGrad> = rows.par_iter().map(|&i| row_gradient(&ctx, i)).collect();

    let mut d_m = DMatrix::zeros(n, p);
    let mut d_s = DMatrix::zeros(n, p);
    let mut d_p = DMatrix::zeros(n, p);
    let mut d_xb = DMatrix::zeros(rows.len(), p);
    let mut d_mu0 = DMatrix::zeros(n, p);
    let mut k_rows = DMatrix::zeros(rows.len(), p);
    let mut k_diag = DVector::<f64>::zeros(p);
    let mut g_s = DVector::<f64>::zeros(p);
    for (r, (&i, g)) in rows.iter().zip(&grads).enumerate() {
        for j in 0..p {
            d_m[(i, j)] = g.d_m[j];
            d_s[(i, j)] = g.d_s[j];
            d_p[(i, j)] = g.d_p[j];
            d_xb[(r, j)] = g.d_xb[j];
            d_mu0[(i, j)] = g.d_mu0[j];
            k_rows[(r, j)] = g.k_row[j];
            k_diag[j] += g.k_diag[j];
            g_s[j] += g.g_s[j];
        }
    }

    let sigma = theta.sigma();
    let omega = theta.omega();
    let mut k = k_rows.tr_mul(&k_rows);
    for j in 0..p {
        k[(j, j)] += k_diag[j];
    }
    let scaled = DMatrix::from_fn(p, p, |a, b| sigma[(a, b)] * g_s[b]);
    let d_omega = sigma * (0.5 * rows.len() as f64) - k * 0.5 - scaled * sigma;
    let d_c = -(omega * &d_omega * omega * theta.factor()) * 2.0;

    let x_rows = data.covariates().select_rows(rows);
    let d_b = x_rows.tr_mul(&d_xb);

    let d_zi = match (theta.zi(), data.zi_covariates()) {
        (ZiParams::None, _) => None,
        (ZiParams::Nd { .. }, _) => Some(DMatrix::from_element(1, 1, d_mu0.sum())),
        (ZiParams::Cd { .. }, ZiCovariates::Rows(x0)) => Some(x0.tr_mul(&d_mu0)),
        (ZiParams::Rd { .. }, ZiCovariates::Columns(x0bar)) => Some(&d_mu0 * x0bar.transpose()),
        _ => unreachable!("validated in Context::new"),
    };
    let free_p = ctx.mu0.is_some() && !variant.analytic_p;

    Ok(ElboGradient {
        d_omega,
        d_c,
        d_b,
        d_zi,
        d_m,
        d_s,
        d_p: free_p.then_some(d_p),
    })
}

fn row_gradient(ctx: &Context<'_>, i: usize) -> RowGrad {
    let data = ctx.data;
    let psi = ctx.psi;
    let p = data.p();
    let probs = ctx.row_probs(i);
    let r = ctx.residual_row(i);
    let omega = ctx.theta.omega();
    let w = &ctx.omega_diag;
    let sig = &ctx.sigma_diag;

    let mut out = RowGrad {
        d_m: vec![0.0; p],
        d_s: vec![0.0; p],
        d_p: vec![0.0; p],
        d_xb: vec![0.0; p],
        d_mu0: vec![0.0; p],
        k_row: vec![0.0; p],
        k_diag: vec![0.0; p],
        g_s: vec![0.0; p],
    };

    // Derivative in R, then the blocks that only touch row i.
    let (grad_r, omega_u) = match ctx.variant.family {
        ElboFamily::Standard => {
            let g = -(omega * &r);
            out.k_row.copy_from_slice(r.as_slice());
            (g, None)
        }
        ElboFamily::Enhanced => {
            let u = DVector::from_fn(p, |j, _| (1.0 - probs.p[j]) * r[j]);
            let ou = omega * &u;
            let g = DVector::from_fn(p, |j, _| {
                let q = 1.0 - probs.p[j];
                -q * ou[j] - w[j] * probs.p[j] * q * r[j]
            });
            out.k_row.copy_from_slice(u.as_slice());
            (g, Some(ou))
        }
    };

    for j in 0..p {
        let pij = probs.p[j];
        let q = 1.0 - pij;
        let s = psi.s[(i, j)];
        let a = ctx.a(i, j);
        let y = data.counts()[(i, j)];
        out.d_m[j] = q * (y - a) + grad_r[j];
        out.d_xb[j] = -grad_r[j];
        match ctx.variant.family {
            ElboFamily::Standard => {
                out.d_s[j] = -q * a * s + 1.0 / s - w[j] * s;
                out.k_diag[j] = s * s;
            }
            ElboFamily::Enhanced => {
                out.d_s[j] = -q * a * s + q / s - w[j] * q * s;
                out.k_diag[j] = q * s * s + pij * sig[j] + pij * q * r[j] * r[j];
                out.g_s[j] = 0.5 * pij / sig[j] - 0.5 * w[j] * pij;
            }
        }

        let Some(mu0) = &ctx.mu0 else { continue };
        let mu0 = mu0[(i, j)];
        out.d_mu0[j] = pij - logistic(mu0);
        if !data.is_zero(i, j) {
            continue;
        }
        // Derivative in P_ij holding everything else fixed (y = 0 here).
        let mut g_p = a + mu0 - dxlogx(pij) + dxlogx(q);
        if let Some(ou) = &omega_u {
            g_p += -s.ln() + 0.5 * sig[j].ln() + r[j] * ou[j]
                + 0.5 * w[j] * (s * s - sig[j] - (1.0 - 2.0 * pij) * r[j] * r[j]);
        }
        match &probs.log_phi {
            None => out.d_p[j] = g_p,
            Some(lp) => {
                // P = logistic(mu0 - log phi_tilde(o + xB, Sigma_jj)).
                let l = lp[j].expect("zero entries carry log phi_tilde");
                let chain = g_p * pij * q;
                out.d_mu0[j] += chain;
                out.d_xb[j] -= chain * l.d_mu;
                out.g_s[j] -= chain * l.d_sigma2;
            }
        }
    }
    out
}
