//! Scalar special functions: logistic helpers, the principal branch of the
//! Lambert W function and the Lambert-W approximation of the log-normal
//! Laplace transform `E[exp(-X)]`, `X ~ LogNormal(mu, sigma2)`.

use crate::error::{Result, ZiplnError};

/// Lower clamp applied to probabilities inside logarithms.
pub const PROB_EPS: f64 = 1e-7;

const LAMBERT_MAX_ITERS: usize = 50;
const LAMBERT_TOL: f64 = 1e-14;

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `x log x` with `0 log 0 = 0` and the log argument floored at [`PROB_EPS`].
pub(crate) fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.max(PROB_EPS).ln()
    }
}

/// Derivative of [`xlogx`]; constant below the floor.
pub(crate) fn dxlogx(x: f64) -> f64 {
    if x < PROB_EPS {
        PROB_EPS.ln()
    } else {
        x.ln() + 1.0
    }
}

pub fn ln_factorial(k: f64) -> f64 {
    statrs::function::gamma::ln_gamma(k + 1.0)
}

/// Principal branch `W(z)` for `z >= 0`, by Halley iteration from `log(1 + z)`.
pub fn lambert_w(z: f64) -> Result<f64> {
    if !(z >= 0.0) {
        return Err(ZiplnError::InvalidParameter(format!(
            "lambert_w needs z >= 0, got {z}"
        )));
    }
    if z == 0.0 {
        return Ok(0.0);
    }
    if z.is_infinite() {
        return Ok(f64::INFINITY);
    }
    let mut w = z.ln_1p();
    for _ in 0..LAMBERT_MAX_ITERS {
        let ew = w.exp();
        let f = w * ew - z;
        if f == 0.0 {
            break;
        }
        let wp1 = w + 1.0;
        let step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
        w -= step;
        if step.abs() <= LAMBERT_TOL * w.abs().max(1e-300) {
            break;
        }
    }
    Ok(w)
}

/// `W(e^log_z)`, usable when `e^log_z` would overflow.
pub fn lambert_w_of_exp(log_z: f64) -> f64 {
    if log_z < 700.0 {
        return lambert_w(log_z.exp()).expect("exp is nonnegative");
    }
    // Newton on w + ln w = log_z; w > 600 here so ln w is tame.
    let mut w = log_z - log_z.ln();
    for _ in 0..LAMBERT_MAX_ITERS {
        let step = (w + w.ln() - log_z) / (1.0 + 1.0 / w);
        w -= step;
        if step.abs() <= LAMBERT_TOL * w {
            break;
        }
    }
    w
}

/// `W'(z) = W(z) / (z (1 + W(z)))`, with the limit 1 at `z = 0`.
pub fn lambert_w_derivative(z: f64) -> Result<f64> {
    let w = lambert_w(z)?;
    if z == 0.0 {
        return Ok(1.0);
    }
    Ok(w / (z * (1.0 + w)))
}

/// Approximation of `E[exp(-X)]` for `X ~ LogNormal(mu, sigma2)`.
pub fn phi_tilde(mu: f64, sigma2: f64) -> Result<f64> {
    Ok(log_phi_tilde(mu, sigma2)?.value.exp())
}

/// `log phi_tilde` with its partial derivatives in `mu` and `sigma2`.
#[derive(Debug, Clone, Copy)]
pub struct LogPhiTilde {
    pub value: f64,
    pub d_mu: f64,
    pub d_sigma2: f64,
}

pub fn log_phi_tilde(mu: f64, sigma2: f64) -> Result<LogPhiTilde> {
    if !(sigma2 > 0.0) {
        return Err(ZiplnError::InvalidParameter(format!(
            "phi_tilde needs sigma2 > 0, got {sigma2}"
        )));
    }
    let w = lambert_w_of_exp(sigma2.ln() + mu);
    let one_w = 1.0 + w;
    let value = -(w * w + 2.0 * w) / (2.0 * sigma2) - 0.5 * one_w.ln();
    // dW/dmu = W/(1+W), dW/dsigma2 = W/(sigma2 (1+W)).
    let d_mu = -w / sigma2 - w / (2.0 * one_w * one_w);
    let d_sigma2 = w * w / (2.0 * sigma2 * sigma2) - w / (2.0 * sigma2 * one_w * one_w);
    Ok(LogPhiTilde {
        value,
        d_mu,
        d_sigma2,
    })
}

/// Posterior probability of the zero component given a zero count:
/// `pi / (phi (1 - pi) + pi)`.
pub fn zero_posterior(pi: f64, phi: f64) -> f64 {
    if pi == 0.0 {
        return 0.0;
    }
    pi / (phi * (1.0 - pi) + pi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lambert_w_fixed_points() {
        assert_eq!(lambert_w(0.0).unwrap(), 0.0);
        assert_relative_eq!(lambert_w(std::f64::consts::E).unwrap(), 1.0, epsilon = 1e-15);
        // Omega constant: fixed point of w = exp(-w), contraction rate ~0.57.
        let omega = (0..200).fold(0.5f64, |w, _| (-w).exp());
        assert_relative_eq!(omega, 0.567_143_290_4, epsilon = 1e-10);
        assert_relative_eq!(lambert_w(1.0).unwrap(), omega, epsilon = 1e-15);
        assert!(lambert_w(-0.1).is_err());
    }

    #[test]
    fn lambert_w_residual_on_log_grid() {
        for k in 0..=150 {
            let z = 10f64.powf(-9.0 + 15.0 * k as f64 / 150.0);
            let w = lambert_w(z).unwrap();
            assert!((w * w.exp() - z).abs() <= 1e-12 * z.max(1.0), "z = {z}");
        }
    }

    #[test]
    fn lambert_w_of_exp_agrees_with_direct() {
        for &l in &[-20.0, -1.0, 0.0, 3.0, 50.0, 699.0] {
            let direct = lambert_w(f64::exp(l)).unwrap();
            assert_relative_eq!(lambert_w_of_exp(l), direct, max_relative = 1e-14);
        }
        let w = lambert_w_of_exp(1000.0);
        assert_relative_eq!(w + w.ln(), 1000.0, max_relative = 1e-14);
    }

    #[test]
    fn lambert_w_derivative_matches_finite_difference() {
        for &z in &[1e-3f64, 0.5, 2.0, 40.0] {
            let h = 1e-6 * z.max(1.0);
            let fd = (lambert_w(z + h).unwrap() - lambert_w(z - h).unwrap()) / (2.0 * h);
            assert_relative_eq!(lambert_w_derivative(z).unwrap(), fd, max_relative = 1e-7);
        }
    }

    #[test]
    fn phi_tilde_small_variance_limit() {
        for &mu in &[-2.0, 0.0, 1.5] {
            let limit = (-f64::exp(mu)).exp();
            assert_relative_eq!(phi_tilde(mu, 1e-8).unwrap(), limit, max_relative = 1e-6);
        }
        assert!(phi_tilde(0.0, 0.0).is_err());
    }

    #[test]
    fn phi_tilde_decreases_in_mu() {
        for &s2 in &[0.1, 0.5, 1.0, 2.0, 3.0] {
            let mut prev = f64::INFINITY;
            for k in 0..=60 {
                let mu = -2.0 + 0.1 * k as f64;
                let v = phi_tilde(mu, s2).unwrap();
                assert!(v < prev && v > 0.0 && v < 1.0);
                prev = v;
            }
        }
    }

    #[test]
    fn log_phi_tilde_derivatives() {
        for &(mu, s2) in &[(-1.0, 0.3), (0.0, 1.0), (2.5, 2.0), (4.0, 0.1)] {
            let g = log_phi_tilde(mu, s2).unwrap();
            let h = 1e-6;
            let fd_mu = (log_phi_tilde(mu + h, s2).unwrap().value
                - log_phi_tilde(mu - h, s2).unwrap().value)
                / (2.0 * h);
            let fd_s2 = (log_phi_tilde(mu, s2 + h).unwrap().value
                - log_phi_tilde(mu, s2 - h).unwrap().value)
                / (2.0 * h);
            assert_relative_eq!(g.d_mu, fd_mu, max_relative = 1e-6);
            assert_relative_eq!(g.d_sigma2, fd_s2, max_relative = 1e-6, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_posterior_arithmetic() {
        assert_relative_eq!(zero_posterior(0.5, 0.5), 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(zero_posterior(0.0, 0.3), 0.0);
    }

    #[test]
    fn softplus_is_stable() {
        assert_relative_eq!(softplus(0.0), 2f64.ln());
        assert_relative_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
        assert_relative_eq!(logistic(logit(0.3)), 0.3, epsilon = 1e-15);
    }
}
