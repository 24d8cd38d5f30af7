use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use super::{CountDataset, Design, LatentTruth, ModelParams};
use crate::error::{Result, ZiplnError};

/// Largest Poisson rate the sampler accepts.
pub const MAX_POISSON_RATE: f64 = 1e9;

/// Draw `(Y, truth)` from the model. Deterministic in `seed`.
pub fn sample_dataset(
    params: &ModelParams,
    design: &Design,
    seed: u64,
) -> Result<(CountDataset, LatentTruth)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_dataset_with_rng(params, design, &mut rng)
}

pub fn sample_dataset_with_rng<R: Rng + ?Sized>(
    params: &ModelParams,
    design: &Design,
    rng: &mut R,
) -> Result<(CountDataset, LatentTruth)> {
    params.validate(design)?;
    let (n, p) = (design.n(), design.p());
    let mean = params.mean_field(design);
    let pi = params.zi().probabilities(design);
    let c = params.factor();

    let mut z = DMatrix::zeros(n, p);
    let mut w = DMatrix::zeros(n, p);
    let mut t = DMatrix::zeros(n, p);
    let mut e = vec![0.0; p];
    for i in 0..n {
        for v in e.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for j in 0..p {
            // Row i of E C^T.
            let noise: f64 = (0..p).map(|k| c[(j, k)] * e[k]).sum();
            z[(i, j)] = mean[(i, j)] + noise;
        }
        for j in 0..p {
            let inflated = rng.random::<f64>() < pi[(i, j)];
            w[(i, j)] = if inflated { 1.0 } else { 0.0 };
            t[(i, j)] = poisson(rng, (design.offsets()[(i, j)] + z[(i, j)]).exp())?;
        }
    }
    let y = t.zip_map(&w, |t, w| if w == 1.0 { 0.0 } else { t });
    let data = CountDataset::new(y, design.clone())?;
    Ok((data, LatentTruth { z, w, t }))
}

fn poisson<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> Result<f64> {
    if !(rate <= MAX_POISSON_RATE) {
        return Err(ZiplnError::InvalidParameter(format!(
            "Poisson rate {rate} exceeds the supported maximum {MAX_POISSON_RATE}"
        )));
    }
    if rate <= 0.0 {
        return Ok(0.0);
    }
    let dist = Poisson::new(rate).map_err(|e| ZiplnError::InvalidParameter(e.to_string()))?;
    Ok(dist.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ZiCovariates, ZiParams};

    fn setup(pi: f64, n: usize) -> (ModelParams, Design) {
        let p = 3;
        let params = ModelParams::from_sigma(
            DMatrix::identity(p, p),
            DMatrix::zeros(1, p),
            ZiParams::Nd { pi },
        )
        .unwrap();
        let design = Design::without_offsets(p, DMatrix::from_element(n, 1, 1.0), ZiCovariates::None).unwrap();
        (params, design)
    }

    #[test]
    fn full_inflation_gives_all_zeros() {
        let (params, design) = setup(1.0, 200);
        let (data, truth) = sample_dataset(&params, &design, 1).unwrap();
        assert_eq!(data.counts().amax(), 0.0);
        assert!(truth.t.amax() > 0.0);
        assert!(truth.w.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn no_inflation_returns_poisson_draws() {
        let (params, design) = setup(0.0, 200);
        let (data, truth) = sample_dataset(&params, &design, 2).unwrap();
        assert_eq!(data.counts(), &truth.t);
        assert_eq!(truth.w.amax(), 0.0);
    }

    #[test]
    fn y_is_masked_t() {
        let (params, design) = setup(0.4, 300);
        let (data, truth) = sample_dataset(&params, &design, 3).unwrap();
        let rebuilt = truth.t.zip_map(&truth.w, |t, w| (1.0 - w) * t);
        assert_eq!(data.counts(), &rebuilt);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let (params, design) = setup(0.3, 50);
        let a = sample_dataset(&params, &design, 7).unwrap();
        let b = sample_dataset(&params, &design, 7).unwrap();
        assert_eq!(a.0.counts(), b.0.counts());
        assert_eq!(a.1, b.1);
        let c = sample_dataset(&params, &design, 8).unwrap();
        assert_ne!(a.0.counts(), c.0.counts());
    }

    #[test]
    fn overflowing_rates_are_rejected() {
        let p = 1;
        let params = ModelParams::from_sigma(
            DMatrix::identity(p, p) * 1e-6,
            DMatrix::from_element(1, 1, 30.0),
            ZiParams::None,
        )
        .unwrap();
        let design = Design::without_offsets(p, DMatrix::from_element(2, 1, 1.0), ZiCovariates::None).unwrap();
        assert!(matches!(
            sample_dataset(&params, &design, 0),
            Err(ZiplnError::InvalidParameter(_))
        ));
    }
}
