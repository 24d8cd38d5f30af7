use nalgebra::{DMatrix, DVector};

use super::{CountDataset, Design, ModelParams};
use crate::error::{Result, ZiplnError};

/// Per-entry mean and variance of `Y` under the model.
///
/// With `A = exp(o + mu + sigma_jj / 2)`:
/// `E[Y] = (1 - pi) A` and `V[Y] = E[Y] + (1 - pi) A^2 (e^{sigma_jj} - (1 - pi))`.
pub fn zipln_mean_var(params: &ModelParams, design: &Design) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    params.validate(design)?;
    let mu = params.mean_field(design);
    let pi = params.zi().probabilities(design);
    let sigma = params.sigma();
    let (n, p) = (design.n(), design.p());
    let mut mean = DMatrix::zeros(n, p);
    let mut var = DMatrix::zeros(n, p);
    for j in 0..p {
        let s = sigma[(j, j)];
        for i in 0..n {
            let a = (design.offsets()[(i, j)] + mu[(i, j)] + 0.5 * s).exp();
            let keep = 1.0 - pi[(i, j)];
            mean[(i, j)] = keep * a;
            var[(i, j)] = keep * a + keep * a * a * (s.exp() - keep);
        }
    }
    Ok((mean, var))
}

/// Raw moments of the counts, column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMoments {
    pub m1: DVector<f64>,
    pub m2: DVector<f64>,
    pub m3: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Empirical `E[Y_j]`, `E[Y_j^2]`, `E[Y_j^3]` and `Cov(Y_j, Y_k)` (1/n normalization).
pub fn empirical_moments(data: &CountDataset) -> SampleMoments {
    let y = data.counts();
    let n = y.nrows() as f64;
    let p = y.ncols();
    let m1 = DVector::from_fn(p, |j, _| y.column(j).sum() / n);
    let m2 = DVector::from_fn(p, |j, _| y.column(j).iter().map(|v| v * v).sum::<f64>() / n);
    let m3 = DVector::from_fn(p, |j, _| y.column(j).iter().map(|v| v * v * v).sum::<f64>() / n);
    let mut centered = y.clone();
    for j in 0..p {
        centered.column_mut(j).add_scalar_mut(-m1[j]);
    }
    let cov = centered.tr_mul(&centered) / n;
    SampleMoments { m1, m2, m3, cov }
}

/// Output of [`moment_recover`]: latent means, latent covariance and the
/// zero-inflation probability of each variable.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredMoments {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub pi: DVector<f64>,
}

/// Floor on `e^{sigma_jj}` before taking logs; empirical third moments are noisy.
const VARIANCE_FLOOR: f64 = 1.0 + 1e-12;

/// Invert the first three moments and the covariances of a covariate-free
/// model back to `(mu, Sigma, pi)`.
///
/// With `D2 = m2 - m1` and `F3 = m3 - 3 m2 + 2 m1` (the second and third
/// factorial moments):
/// `A e^{sigma} = D2 / m1`, `e^{sigma} = F3 m1 / D2^2`,
/// `e^{mu} = A e^{-sigma/2} = D2^4 / sqrt(F3^3 m1^5)`,
/// `pi = 1 - m1^3 F3 / D2^3`, `e^{sigma_jk} = 1 + cov_jk / (m1_j m1_k)`.
pub fn moment_recover(moments: &SampleMoments) -> Result<RecoveredMoments> {
    let SampleMoments { m1, m2, m3, cov } = moments;
    let p = m1.len();
    if m2.len() != p || m3.len() != p || cov.shape() != (p, p) {
        return Err(ZiplnError::ShapeMismatch("moment vectors disagree on p".into()));
    }
    let mut mu = DVector::zeros(p);
    let mut pi = DVector::zeros(p);
    let mut sigma = DMatrix::zeros(p, p);
    for j in 0..p {
        let d2 = m2[j] - m1[j];
        let f3 = m3[j] - 3.0 * m2[j] + 2.0 * m1[j];
        let degenerate = |reason: &str| ZiplnError::DegenerateMoments {
            column: j,
            reason: reason.to_string(),
        };
        if !(m1[j] > 0.0) {
            return Err(degenerate("E[Y] must be positive"));
        }
        if !(d2 > 0.0) {
            return Err(degenerate("E[Y^2] - E[Y] must be positive"));
        }
        if !(f3 > 0.0) {
            return Err(degenerate("E[Y^3] - 3E[Y^2] + 2E[Y] must be positive"));
        }
        let e_sigma = (f3 * m1[j] / (d2 * d2)).max(VARIANCE_FLOOR);
        let s = e_sigma.ln();
        sigma[(j, j)] = s;
        mu[j] = (d2 / m1[j]).ln() - 1.5 * s;
        pi[j] = 1.0 - m1[j] * m1[j] * e_sigma / d2;
    }
    for j in 0..p {
        for k in 0..j {
            let ratio = 1.0 + cov[(j, k)] / (m1[j] * m1[k]);
            if !(ratio > 0.0) {
                return Err(ZiplnError::DegenerateMoments {
                    column: j,
                    reason: format!("covariance with variable {k} is too negative"),
                });
            }
            sigma[(j, k)] = ratio.ln();
            sigma[(k, j)] = sigma[(j, k)];
        }
    }
    Ok(RecoveredMoments { mu, sigma, pi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ZiCovariates, ZiParams};
    use approx::assert_relative_eq;

    fn one_cell(pi: f64, mu: f64, s: f64) -> (ModelParams, Design) {
        let params = ModelParams::from_sigma(
            DMatrix::from_element(1, 1, s.max(1e-300)),
            DMatrix::from_element(1, 1, mu),
            ZiParams::Nd { pi },
        )
        .unwrap();
        let design = Design::without_offsets(1, DMatrix::from_element(1, 1, 1.0), ZiCovariates::None).unwrap();
        (params, design)
    }

    #[test]
    fn dirac_component_has_no_mass() {
        let (params, design) = one_cell(1.0, 0.3, 0.5);
        let (m, v) = zipln_mean_var(&params, &design).unwrap();
        assert_eq!(m[(0, 0)], 0.0);
        assert_eq!(v[(0, 0)], 0.0);
    }

    #[test]
    fn poisson_one() {
        let (params, design) = one_cell(0.0, 0.0, 0.0);
        let (m, v) = zipln_mean_var(&params, &design).unwrap();
        assert_relative_eq!(m[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(v[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn poisson_one_moments_invert_to_origin() {
        let moments = SampleMoments {
            m1: DVector::from_element(1, 1.0),
            m2: DVector::from_element(1, 2.0),
            m3: DVector::from_element(1, 5.0),
            cov: DMatrix::zeros(1, 1),
        };
        let r = moment_recover(&moments).unwrap();
        assert_relative_eq!(r.mu[0], 0.0, epsilon = 1e-11);
        // e^{sigma} is floored at 1 + 1e-12.
        assert!(r.sigma[(0, 0)].abs() < 1e-11);
        assert!(r.pi[0].abs() < 1e-11);
    }

    #[test]
    fn zero_covariance_gives_zero_latent_covariance() {
        let moments = SampleMoments {
            m1: DVector::from_element(2, 1.0),
            m2: DVector::from_element(2, 3.0),
            m3: DVector::from_element(2, 12.0),
            cov: DMatrix::zeros(2, 2),
        };
        let r = moment_recover(&moments).unwrap();
        assert_eq!(r.sigma[(0, 1)], 0.0);
    }

    #[test]
    fn degenerate_moments_are_rejected() {
        let moments = SampleMoments {
            m1: DVector::from_element(1, 1.0),
            m2: DVector::from_element(1, 1.0),
            m3: DVector::from_element(1, 1.0),
            cov: DMatrix::zeros(1, 1),
        };
        assert!(matches!(
            moment_recover(&moments),
            Err(ZiplnError::DegenerateMoments { column: 0, .. })
        ));
    }
}
