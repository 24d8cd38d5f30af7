use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Design, ModelParams, ZiCovariates, ZiParams, ZiVariant};
use crate::error::{Result, ZiplnError};
use crate::special::logit;

/// `Sigma_kj = alpha^{|j - k|}`.
pub fn toeplitz_cov(p: usize, alpha: f64) -> Result<DMatrix<f64>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ZiplnError::InvalidParameter(format!(
            "Toeplitz alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(DMatrix::from_fn(p, p, |j, k| alpha.powi(j.abs_diff(k) as i32)))
}

/// Sizes and levels of a simulation scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub variant: ZiVariant,
    pub n: usize,
    pub p: usize,
    pub d: usize,
    pub d0: usize,
    /// Mean of the entries of `B`.
    pub gamma: f64,
    /// ND: the inflation probability itself; CD/RD: the ZI coefficients are
    /// centered on `logit(rho)`.
    pub rho: f64,
}

/// Simulation truth plus the drawn Toeplitz parameter.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub params: ModelParams,
    pub design: Design,
    pub alpha: f64,
}

/// Draw a parameter set and a design following the simulation protocol:
/// Toeplitz covariance with `alpha ~ U[0.7, 0.9]`, one-hot covariate rows,
/// `B` entries `N(gamma, 1)`, zero-inflation coefficients `N(logit(rho), 1)`,
/// zero offsets. No intercepts are added.
pub fn scenario_params(spec: &ScenarioSpec, seed: u64) -> Result<Scenario> {
    let ScenarioSpec {
        variant,
        n,
        p,
        d,
        d0,
        gamma,
        rho,
    } = *spec;
    if n == 0 || p == 0 || d == 0 {
        return Err(ZiplnError::InvalidParameter("n, p and d must be positive".into()));
    }
    if matches!(variant, ZiVariant::Cd | ZiVariant::Rd) && d0 == 0 {
        return Err(ZiplnError::InvalidParameter("d0 must be positive for CD and RD".into()));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(ZiplnError::InvalidParameter(format!("rho must lie in (0, 1), got {rho}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = rng.random_range(0.7..0.9);
    let sigma = toeplitz_cov(p, alpha)?;
    let x = one_hot(&mut rng, n, d);
    let b = gaussian(&mut rng, d, p, gamma);
    let (zi_cov, zi) = match variant {
        ZiVariant::None => (ZiCovariates::None, ZiParams::None),
        ZiVariant::Nd => (ZiCovariates::None, ZiParams::Nd { pi: rho }),
        ZiVariant::Cd => {
            let x0 = one_hot(&mut rng, n, d0);
            let b0 = gaussian(&mut rng, d0, p, logit(rho));
            (ZiCovariates::Rows(x0), ZiParams::Cd { b0 })
        }
        ZiVariant::Rd => {
            let b0bar = one_hot(&mut rng, n, d0);
            let x0bar = gaussian(&mut rng, d0, p, logit(rho));
            (ZiCovariates::Columns(x0bar), ZiParams::Rd { b0bar })
        }
    };
    let design = Design::without_offsets(p, x, zi_cov)?;
    let params = ModelParams::from_sigma(sigma, b, zi)?;
    Ok(Scenario {
        params,
        design,
        alpha,
    })
}

/// Rows with a single one at a uniformly drawn category.
fn one_hot<R: Rng>(rng: &mut R, n: usize, k: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, k);
    for i in 0..n {
        m[(i, rng.random_range(0..k))] = 1.0;
    }
    m
}

fn gaussian<R: Rng>(rng: &mut R, rows: usize, cols: usize, mean: f64) -> DMatrix<f64> {
    let normal = Normal::new(mean, 1.0).expect("unit variance");
    DMatrix::from_fn(rows, cols, |_, _| normal.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eigenvalue;

    #[test]
    fn toeplitz_small_case() {
        let s = toeplitz_cov(3, 0.8).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, 0.8, 0.64, 0.8, 1.0, 0.8, 0.64, 0.8, 1.0]);
        assert!((s - expected).amax() < 1e-15);
        assert!(toeplitz_cov(3, 1.0).is_err());
        assert!(toeplitz_cov(3, 0.0).is_err());
    }

    #[test]
    fn toeplitz_small_alpha_is_identity() {
        let s = toeplitz_cov(4, 1e-12).unwrap();
        assert!((s - DMatrix::identity(4, 4)).amax() < 1e-11);
    }

    #[test]
    fn toeplitz_is_positive_definite() {
        for &p in &[1, 2, 10, 100, 500] {
            for &alpha in &[0.7, 0.8, 0.9] {
                assert!(min_eigenvalue(&toeplitz_cov(p, alpha).unwrap()) > 0.0, "p={p} alpha={alpha}");
            }
        }
    }

    fn spec(variant: ZiVariant, d: usize) -> ScenarioSpec {
        ScenarioSpec {
            variant,
            n: 50,
            p: 4,
            d,
            d0: 2,
            gamma: 2.0,
            rho: 0.5,
        }
    }

    #[test]
    fn single_category_is_all_ones() {
        let sc = scenario_params(&spec(ZiVariant::Nd, 1), 3).unwrap();
        assert!(sc.design.covariates().iter().all(|v| *v == 1.0));
        assert!(sc.alpha >= 0.7 && sc.alpha < 0.9);
        assert_eq!(sc.params.zi(), &ZiParams::Nd { pi: 0.5 });
    }

    #[test]
    fn shapes_per_variant() {
        let cd = scenario_params(&spec(ZiVariant::Cd, 3), 1).unwrap();
        cd.params.validate(&cd.design).unwrap();
        assert_eq!(cd.design.d0(), 2);
        for i in 0..50 {
            assert_eq!(cd.design.covariates().row(i).sum(), 1.0);
        }
        let rd = scenario_params(&spec(ZiVariant::Rd, 3), 1).unwrap();
        rd.params.validate(&rd.design).unwrap();
        match rd.params.zi() {
            ZiParams::Rd { b0bar } => assert_eq!(b0bar.shape(), (50, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scenario_is_deterministic() {
        let a = scenario_params(&spec(ZiVariant::Cd, 2), 11).unwrap();
        let b = scenario_params(&spec(ZiVariant::Cd, 2), 11).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.design, b.design);
    }
}
