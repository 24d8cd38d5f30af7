use nalgebra::DMatrix;
use proptest::prelude::*;
use zipln::elbo::{elbo, ElboVariant};
use zipln::model::{sample_dataset, scenario_params, ScenarioSpec, ZiVariant};
use zipln::optim::{fit, init_params, update_p, FitConfig};
use zipln::selection::{criteria, param_count};
use zipln::special::{lambert_w, phi_tilde, PROB_EPS};

fn variant(k: usize) -> ZiVariant {
    [ZiVariant::Nd, ZiVariant::Cd, ZiVariant::Rd, ZiVariant::None][k % 4]
}

fn spec(zi: ZiVariant, n: usize, p: usize, rho: f64) -> ScenarioSpec {
    ScenarioSpec {
        variant: zi,
        n,
        p,
        d: 2,
        d0: 2,
        gamma: 1.0,
        rho,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lambert_w_inverts_w_exp_w(log_z in -20.0f64..14.0) {
        let z = log_z.exp();
        let w = lambert_w(z).unwrap();
        // Rounding of w is amplified by d(w e^w)/dw = e^w (1 + w).
        prop_assert!((w * w.exp() - z).abs() <= 4.0 * f64::EPSILON * (1.0 + w) * z);
        prop_assert!(lambert_w(z * 1.01).unwrap() > w);
    }

    #[test]
    fn phi_tilde_is_a_probability(mu in -3.0f64..5.0, s2 in 0.01f64..4.0) {
        let phi = phi_tilde(mu, s2).unwrap();
        prop_assert!(phi > 0.0 && phi < 1.0);
        prop_assert!(phi_tilde(mu + 0.1, s2).unwrap() < phi);
    }

    #[test]
    fn samples_factor_into_inflation_and_poisson(k in 0usize..4, seed in 0u64..1000, rho in 0.1f64..0.7) {
        let sc = scenario_params(&spec(variant(k), 30, 4, rho), seed).unwrap();
        let (data, truth) = sample_dataset(&sc.params, &sc.design, seed + 1).unwrap();
        for ((y, w), t) in data.counts().iter().zip(truth.w.iter()).zip(truth.t.iter()) {
            prop_assert!(*w == 0.0 || *w == 1.0);
            prop_assert_eq!(*y, (1.0 - w) * t);
        }
        if variant(k) == ZiVariant::None {
            prop_assert!(truth.w.iter().all(|w| *w == 0.0));
        }
        let (again, _) = sample_dataset(&sc.params, &sc.design, seed + 1).unwrap();
        prop_assert_eq!(again.counts(), data.counts());
    }

    #[test]
    fn p_update_respects_the_mask(k in 0usize..4, seed in 0u64..1000) {
        let zi = variant(k);
        let sc = scenario_params(&spec(zi, 25, 5, 0.3), seed).unwrap();
        let (data, _) = sample_dataset(&sc.params, &sc.design, seed + 1).unwrap();
        let (theta, psi) = init_params(&data, &FitConfig::vem(zi)).unwrap();
        let p = update_p(&data, &theta, &psi);
        for i in 0..data.n() {
            for j in 0..data.p() {
                let v = p[(i, j)];
                if !data.is_zero(i, j) || zi == ZiVariant::None {
                    prop_assert_eq!(v, 0.0);
                } else {
                    prop_assert!((PROB_EPS..=1.0 - PROB_EPS).contains(&v));
                }
            }
        }
    }

    #[test]
    fn param_count_grows_with_each_dimension(n in 10usize..500, p in 1usize..60, d in 1usize..5, d0 in 1usize..4) {
        for zi in [ZiVariant::None, ZiVariant::Nd, ZiVariant::Cd, ZiVariant::Rd] {
            let k = param_count(zi, n, p, d, d0);
            prop_assert!(param_count(zi, n, p + 1, d, d0) > k);
            prop_assert!(param_count(zi, n, p, d + 1, d0) > k);
        }
        prop_assert!(param_count(ZiVariant::Nd, n, p, d, d0) == param_count(ZiVariant::None, n, p, d, d0) + 1);
    }
}

#[test]
fn vem_fit_end_to_end() {
    for (k, seed) in (0..4).zip(40u64..) {
        let zi = variant(k);
        let sc = scenario_params(&spec(zi, 120, 6, 0.3), seed).unwrap();
        let (data, _) = sample_dataset(&sc.params, &sc.design, seed + 1).unwrap();
        let f = fit(&data, &FitConfig::vem(zi)).unwrap();
        assert!(f.converged, "{zi}: not converged after {} iterations", f.n_iters);
        assert!(f.elbo_trace.windows(2).all(|w| w[1] >= w[0] - 1e-8 * w[0].abs()));
        let identity = f.theta.omega() * f.theta.sigma();
        assert!((identity - DMatrix::identity(6, 6)).amax() < 1e-8);
        let j = elbo(ElboVariant::STANDARD, &data, &f.theta, &f.psi).unwrap();
        assert!((j - f.final_elbo()).abs() <= 1e-9 * j.abs());
        let row = criteria(&f, &data, "fit").unwrap();
        assert!(row.bic < row.aic);
        assert!((row.icl - (row.bic - row.entropy)).abs() <= 1e-9 * row.bic.abs());
    }
}
