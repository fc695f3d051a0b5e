//! Asymmetric Laplace machinery.
//!
//! The error of a quantile equation is `ALD_p(sigma)`, whose `p`-quantile is
//! zero. It is handled through the scale-location mixture
//! `eps = theta * nu + tau * sqrt(sigma * nu) * e` with `nu = sigma * z`,
//! `z ~ Exp(1)` and `e ~ N(0, 1)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{inv_gamma, std_exp, std_normal, uniform};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileConstants {
    pub p: f64,
    pub theta: f64,
    pub tau2: f64,
}

impl QuantileConstants {
    pub fn tau(&self) -> f64 {
        self.tau2.sqrt()
    }
}

fn check_probability(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("probability {p} outside (0, 1)")))
    }
}

pub fn quantile_constants(p: f64) -> Result<QuantileConstants> {
    check_probability(p)?;
    let q = p * (1.0 - p);
    Ok(QuantileConstants {
        p,
        theta: (1.0 - 2.0 * p) / q,
        tau2: 2.0 / q,
    })
}

/// Check (pinball) function `x (p - 1{x < 0})`.
#[inline]
pub fn check_loss(x: f64, p: f64) -> f64 {
    if x < 0.0 {
        x * (p - 1.0)
    } else {
        x * p
    }
}

pub fn ald_log_density(eps: f64, p: f64, sigma: f64) -> Result<f64> {
    check_probability(p)?;
    if !(sigma > 0.0) {
        return Err(Error::domain(format!("ALD scale {sigma} must be positive")));
    }
    Ok((p * (1.0 - p) / sigma).ln() - check_loss(eps, p) / sigma)
}

pub fn ald_cdf(eps: f64, p: f64, sigma: f64) -> f64 {
    if eps < 0.0 {
        p * ((1.0 - p) * eps / sigma).exp()
    } else {
        1.0 - (1.0 - p) * (-p * eps / sigma).exp()
    }
}

/// Inverse of [`ald_cdf`].
pub fn ald_quantile(u: f64, p: f64, sigma: f64) -> f64 {
    if u < p {
        sigma * (u / p).ln() / (1.0 - p)
    } else {
        -sigma * ((1.0 - u) / (1.0 - p)).ln() / p
    }
}

/// `Var(eps) = sigma^2 (theta^2 + tau^2)`.
pub fn ald_variance(p: f64, sigma: f64) -> f64 {
    let q = p * (1.0 - p);
    sigma * sigma * (1.0 - 2.0 * p + 2.0 * p * p) / (q * q)
}

/// One draw `(nu, eps)` from the mixture representation.
pub fn sample_ald<R: Rng + ?Sized>(c: &QuantileConstants, sigma: f64, rng: &mut R) -> (f64, f64) {
    let nu = sigma * std_exp(rng);
    let eps = c.theta * nu + c.tau() * (sigma * nu).sqrt() * std_normal(rng);
    (nu, eps)
}

/// Draw from `GIG(1/2, xi, psi)` with density `x^{-1/2} exp(-(xi/x + psi x)/2)`.
///
/// Uses `1/X ~ IG(mean = sqrt(psi/xi), shape = psi)` and the
/// Michael-Schucany-Haas transformation, written in terms of `k = sqrt(xi/psi)`
/// so that `xi = 0` reduces to `chi^2_1 / psi` without a special case.
pub fn sample_gig_half<R: Rng + ?Sized>(xi: f64, psi: f64, rng: &mut R) -> f64 {
    debug_assert!(xi >= 0.0 && psi > 0.0);
    let k = (xi / psi).sqrt();
    let v = std_normal(rng);
    let y = v * v;
    // Large root in 1/IG scale (small root of the IG quadratic).
    let a = k + y / (2.0 * psi) + (4.0 * psi * y * k + y * y).sqrt() / (2.0 * psi);
    if k == 0.0 || uniform(rng) * (a + k) <= a {
        a
    } else {
        k * k / a
    }
}

/// Updates the latent mixing variables given residuals
/// `w_t = y - omega g - (1 - omega) b'x - lambda f` (intercept removed too).
pub fn sample_nu<R: Rng + ?Sized>(
    w: &[f64],
    c: &QuantileConstants,
    sigma: f64,
    nu: &mut [f64],
    rng: &mut R,
) -> Result<()> {
    if !(sigma > 0.0) {
        return Err(Error::domain(format!("sigma {sigma} must be positive")));
    }
    let psi = 2.0 / sigma + c.theta * c.theta / (c.tau2 * sigma);
    for (n, &wt) in nu.iter_mut().zip(w) {
        if !wt.is_finite() {
            return Err(Error::numerical(format!("non-finite residual {wt}")));
        }
        let xi = wt * wt / (c.tau2 * sigma);
        let draw = sample_gig_half(xi, psi, rng);
        // Guard against underflow to exactly zero.
        *n = draw.max(f64::MIN_POSITIVE);
    }
    Ok(())
}

/// Posterior shape and rate of `sigma` (already halved): `(a~/2, b~/2)`.
pub fn sigma_posterior(
    w: &[f64],
    nu: &[f64],
    c: &QuantileConstants,
    a_sigma: f64,
    b_sigma: f64,
) -> Result<(f64, f64)> {
    let mut b = b_sigma;
    for (&wt, &n) in w.iter().zip(nu) {
        if !(n > 0.0) {
            return Err(Error::domain(format!("mixing variable {n} must be positive")));
        }
        b += 2.0 * n + (wt - c.theta * n).powi(2) / (c.tau2 * n);
    }
    let a = a_sigma + 3.0 * w.len() as f64;
    Ok((a / 2.0, b / 2.0))
}

pub fn sample_sigma<R: Rng + ?Sized>(
    w: &[f64],
    nu: &[f64],
    c: &QuantileConstants,
    a_sigma: f64,
    b_sigma: f64,
    rng: &mut R,
) -> Result<f64> {
    let (shape, rate) = sigma_posterior(w, nu, c, a_sigma, b_sigma)?;
    inv_gamma(shape, rate, rng)
}
