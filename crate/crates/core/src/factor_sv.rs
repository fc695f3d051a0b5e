//! Common factor with stochastic volatility, one block per quantile.
//!
//! The factor `f_t ~ N(0, exp(h_t))` loads on every country of a quantile
//! through `lambda_i`. The log-variance follows
//! `h_t = mu + rho (h_{t-1} - mu) + varsigma u_t` and is sampled with the
//! ten-component auxiliary mixture for `log f_t^2`, a banded precision
//! (all-without-a-loop) draw of the whole path, and an
//! ancillarity-sufficiency interweaving step for `(mu, varsigma)`.

use nalgebra::{DMatrix, Matrix2, Vector2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{inv_gamma, normal_ln_pdf, std_normal, uniform};
use crate::error::{Error, Result};

/// Weights, means and variances of the ten-component normal mixture
/// approximating the law of `log(chi^2_1)`.
pub const MIX_PROB: [f64; 10] = [
    0.00609, 0.04775, 0.13057, 0.20674, 0.22715, 0.18842, 0.12047, 0.05591, 0.01575, 0.00115,
];
pub const MIX_MEAN: [f64; 10] = [
    1.92677, 1.34744, 0.73504, 0.02266, -0.85173, -1.97278, -3.46788, -5.55246, -8.68384, -14.65000,
];
pub const MIX_VAR: [f64; 10] = [
    0.11265, 0.17788, 0.26768, 0.40611, 0.62699, 0.98583, 1.57469, 2.54498, 4.16591, 7.33342,
];

/// Offset inside `log(f^2 + c)` guarding exact zeros.
pub const LOG_SQ_OFFSET: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvParams {
    pub mu: f64,
    pub rho: f64,
    pub varsigma: f64,
}

impl Default for SvParams {
    fn default() -> Self {
        SvParams {
            mu: 0.0,
            rho: 0.9,
            varsigma: 0.3,
        }
    }
}

impl SvParams {
    pub fn stationary_var(&self) -> f64 {
        self.varsigma * self.varsigma / (1.0 - self.rho * self.rho)
    }

    /// One AR(1) step of the log-variance.
    pub fn step(&self, h: f64, u: f64) -> f64 {
        self.mu + self.rho * (h - self.mu) + self.varsigma * u
    }
}

/// Priors: `mu ~ N(mu_mean, mu_var)`, `(rho + 1)/2 ~ Beta(rho_a, rho_b)`,
/// `varsigma^2 ~ Gamma(1/2, 1/(2 varsigma_var))` (equivalently
/// `varsigma ~ N(0, varsigma_var)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvPrior {
    pub mu_mean: f64,
    pub mu_var: f64,
    pub rho_a: f64,
    pub rho_b: f64,
    pub varsigma_var: f64,
}

impl Default for SvPrior {
    fn default() -> Self {
        SvPrior {
            mu_mean: 0.0,
            mu_var: 100.0,
            rho_a: 5.0,
            rho_b: 1.5,
            varsigma_var: 1.0,
        }
    }
}

impl SvPrior {
    fn ln_prior(&self, mu: f64, rho: f64, varsigma2: f64) -> f64 {
        normal_ln_pdf(mu, self.mu_mean, self.mu_var)
            + (self.rho_a - 1.0) * ((1.0 + rho) / 2.0).ln()
            + (self.rho_b - 1.0) * ((1.0 - rho) / 2.0).ln()
            - 0.5 * varsigma2.ln()
            - varsigma2 / (2.0 * self.varsigma_var)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SvParams> {
        let mu = self.mu_mean + self.mu_var.sqrt() * std_normal(rng);
        let ga = crate::dist::gamma(self.rho_a, 1.0, rng)?;
        let gb = crate::dist::gamma(self.rho_b, 1.0, rng)?;
        let rho = 2.0 * ga / (ga + gb) - 1.0;
        let varsigma = (self.varsigma_var.sqrt() * std_normal(rng)).abs();
        Ok(SvParams { mu, rho, varsigma })
    }
}

/// Factor, loadings and volatility of one quantile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorBlock {
    pub f: Vec<f64>,
    pub h: Vec<f64>,
    pub loadings: Vec<f64>,
    pub sv: SvParams,
}

impl FactorBlock {
    pub fn new(num_countries: usize, num_periods: usize, h0: f64) -> Self {
        FactorBlock {
            f: vec![0.0; num_periods],
            h: vec![h0; num_periods],
            loadings: vec![0.0; num_countries],
            sv: SvParams {
                mu: h0,
                ..SvParams::default()
            },
        }
    }
}

/// Independent Gaussian draws of `f_t` given the adjusted residuals
/// `ybar` (N x T), loadings and ALD variances `psi` (N x T).
pub fn sample_factor<R: Rng + ?Sized>(
    ybar: &DMatrix<f64>,
    loadings: &[f64],
    psi: &DMatrix<f64>,
    h: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let (n, t) = ybar.shape();
    if psi.shape() != (n, t) || loadings.len() != n || h.len() != t {
        return Err(Error::domain("dimension mismatch in factor update"));
    }
    if let Some(bad) = psi.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::domain(format!("ALD variance {bad} must be positive")));
    }
    let mut f = Vec::with_capacity(t);
    for s in 0..t {
        let (mut prec, mut lin) = ((-h[s]).exp(), 0.0);
        for i in 0..n {
            prec += loadings[i] * loadings[i] / psi[(i, s)];
            lin += loadings[i] * ybar[(i, s)] / psi[(i, s)];
        }
        let v = 1.0 / prec;
        f.push(v * lin + v.sqrt() * std_normal(rng));
    }
    Ok(f)
}

/// Moments `(mean, var)` of the loading given scaled residuals and factor.
pub fn loading_posterior(yhat: &[f64], fhat: &[f64]) -> (f64, f64) {
    let ff: f64 = fhat.iter().map(|f| f * f).sum();
    let fy: f64 = fhat.iter().zip(yhat).map(|(f, y)| f * y).sum();
    let l = 1.0 / (ff + 1.0);
    (l * fy, l)
}

pub fn sample_loadings<R: Rng + ?Sized>(yhat: &[f64], fhat: &[f64], rng: &mut R) -> f64 {
    let (m, v) = loading_posterior(yhat, fhat);
    m + v.sqrt() * std_normal(rng)
}

/// Lower bidiagonal Cholesky factor of a symmetric tridiagonal matrix.
struct BandedCholesky {
    diag: Vec<f64>,
    sub: Vec<f64>,
}

impl BandedCholesky {
    fn new(d: &[f64], off: &[f64]) -> Result<Self> {
        let n = d.len();
        let mut diag = vec![0.0; n];
        let mut sub = vec![0.0; n.saturating_sub(1)];
        for t in 0..n {
            let mut v = d[t];
            if t > 0 {
                sub[t - 1] = off[t - 1] / diag[t - 1];
                v -= sub[t - 1] * sub[t - 1];
            }
            if !(v > 0.0) {
                return Err(Error::numerical("log-volatility precision not positive definite"));
            }
            diag[t] = v.sqrt();
        }
        Ok(BandedCholesky { diag, sub })
    }

    /// Solves `L a = b`.
    fn forward(&self, b: &[f64]) -> Vec<f64> {
        let mut a = vec![0.0; b.len()];
        for t in 0..b.len() {
            let mut v = b[t];
            if t > 0 {
                v -= self.sub[t - 1] * a[t - 1];
            }
            a[t] = v / self.diag[t];
        }
        a
    }

    /// Solves `L' x = a`.
    fn backward(&self, a: &[f64]) -> Vec<f64> {
        let n = a.len();
        let mut x = vec![0.0; n];
        for t in (0..n).rev() {
            let mut v = a[t];
            if t + 1 < n {
                v -= self.sub[t] * x[t + 1];
            }
            x[t] = v / self.diag[t];
        }
        x
    }
}

/// Mixture component indicators for the linearized observations.
fn sample_indicators<R: Rng + ?Sized>(ystar: &[f64], h: &[f64], rng: &mut R) -> Vec<usize> {
    let mut ln_w = [0.0; 10];
    ystar
        .iter()
        .zip(h)
        .map(|(&y, &ht)| {
            let e = y - ht;
            for j in 0..10 {
                ln_w[j] = MIX_PROB[j].ln() + normal_ln_pdf(e, MIX_MEAN[j], MIX_VAR[j]);
            }
            let m = ln_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = ln_w.iter().map(|l| (l - m).exp()).sum();
            let mut u = uniform(rng) * total;
            for (j, l) in ln_w.iter().enumerate() {
                u -= (l - m).exp();
                if u <= 0.0 {
                    return j;
                }
            }
            9
        })
        .collect()
}

/// Draws the whole log-variance path from its Gaussian conditional given
/// mixture indicators.
fn sample_path<R: Rng + ?Sized>(
    ystar: &[f64],
    comp: &[usize],
    sv: &SvParams,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = ystar.len();
    let s2 = sv.varsigma * sv.varsigma;
    let rho = sv.rho;
    let mut d = vec![0.0; n];
    let mut off = vec![0.0; n.saturating_sub(1)];
    let mut b = vec![0.0; n];
    // Prior precision of the stationary AR(1), times mu * 1 for the linear term.
    for t in 0..n {
        let inner = if n == 1 {
            1.0 - rho * rho
        } else if t == 0 || t == n - 1 {
            1.0
        } else {
            1.0 + rho * rho
        };
        d[t] = inner / s2;
        if t + 1 < n {
            off[t] = -rho / s2;
        }
    }
    for t in 0..n {
        // (Q mu 1)_t = mu * row sum of Q
        let mut row = d[t];
        if t > 0 {
            row += off[t - 1];
        }
        if t + 1 < n {
            row += off[t];
        }
        b[t] = sv.mu * row;
        let j = comp[t];
        d[t] += 1.0 / MIX_VAR[j];
        b[t] += (ystar[t] - MIX_MEAN[j]) / MIX_VAR[j];
    }
    let chol = BandedCholesky::new(&d, &off)?;
    let mean = chol.backward(&chol.forward(&b));
    let z: Vec<f64> = (0..n).map(|_| std_normal(rng)).collect();
    let noise = chol.backward(&z);
    Ok(mean.iter().zip(&noise).map(|(m, e)| m + e).collect())
}

/// Independence MH update of `(mu, rho, varsigma)` given the path
/// (centred parameterization). Proposals come from the AR(1) regression of
/// `h_t` on `(1, h_{t-1})` under a flat/inverse-gamma reference prior; the
/// acceptance ratio corrects for the actual prior and the initial state.
fn sample_params_centered<R: Rng + ?Sized>(
    h: &[f64],
    sv: &mut SvParams,
    prior: &SvPrior,
    rng: &mut R,
) -> Result<()> {
    let n = h.len();
    if n < 4 {
        return Ok(());
    }
    const REF_A: f64 = 1.0;
    const REF_B: f64 = 0.01;
    let (mut s11, mut s12, mut s22, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for t in 1..n {
        let x = h[t - 1];
        s11 += 1.0;
        s12 += x;
        s22 += x * x;
        r1 += h[t];
        r2 += x * h[t];
    }
    let ztz = Matrix2::new(s11, s12, s12, s22);
    let Some(ztz_inv) = ztz.try_inverse() else {
        return Ok(());
    };
    let bhat = ztz_inv * Vector2::new(r1, r2);
    let ssr: f64 = (1..n)
        .map(|t| (h[t] - bhat[0] - bhat[1] * h[t - 1]).powi(2))
        .sum();
    let shape = REF_A + (n as f64 - 1.0 - 2.0) / 2.0;
    let s2_new = inv_gamma(shape, REF_B + ssr / 2.0, rng)?;
    let Some(chol) = (ztz_inv * s2_new).cholesky() else {
        return Ok(());
    };
    let z = Vector2::new(std_normal(rng), std_normal(rng));
    let coef = bhat + chol.l() * z;
    let (c_new, rho_new) = (coef[0], coef[1]);
    if !(rho_new.abs() < 1.0) {
        return Ok(());
    }
    let log_weight = |c: f64, rho: f64, s2: f64| {
        let mu = c / (1.0 - rho);
        prior.ln_prior(mu, rho, s2) - (1.0 - rho).ln()
            + normal_ln_pdf(h[0], mu, s2 / (1.0 - rho * rho))
            - (-(REF_A + 1.0) * s2.ln() - REF_B / s2)
    };
    let s2_old = sv.varsigma * sv.varsigma;
    let c_old = sv.mu * (1.0 - sv.rho);
    let log_alpha = log_weight(c_new, rho_new, s2_new) - log_weight(c_old, sv.rho, s2_old);
    if uniform(rng).ln() < log_alpha {
        sv.mu = c_new / (1.0 - rho_new);
        sv.rho = rho_new;
        sv.varsigma = s2_new.sqrt();
    }
    Ok(())
}

/// Conjugate draw of `(mu, varsigma)` in the non-centred parameterization
/// `ystar_t - m_r = mu + varsigma htilde_t + N(0, v_r)`.
fn sample_params_noncentered<R: Rng + ?Sized>(
    ystar: &[f64],
    comp: &[usize],
    h: &mut [f64],
    sv: &mut SvParams,
    prior: &SvPrior,
    rng: &mut R,
) -> Result<()> {
    let htilde: Vec<f64> = h.iter().map(|v| (v - sv.mu) / sv.varsigma).collect();
    let mut prec = Matrix2::new(1.0 / prior.mu_var, 0.0, 0.0, 1.0 / prior.varsigma_var);
    let mut lin = Vector2::new(prior.mu_mean / prior.mu_var, 0.0);
    for t in 0..ystar.len() {
        let j = comp[t];
        let w = 1.0 / MIX_VAR[j];
        let x = Vector2::new(1.0, htilde[t]);
        prec += x * x.transpose() * w;
        lin += x * (w * (ystar[t] - MIX_MEAN[j]));
    }
    let Some(chol) = prec.cholesky() else {
        return Err(Error::numerical("non-centred SV precision not SPD"));
    };
    let mean = chol.solve(&lin);
    let z = Vector2::new(std_normal(rng), std_normal(rng));
    let draw = mean
        + chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::numerical("singular SV factor"))?;
    let (mu, vs) = (draw[0], draw[1]);
    if vs == 0.0 || !vs.is_finite() || !mu.is_finite() {
        return Ok(());
    }
    for (ht, &tt) in h.iter_mut().zip(&htilde) {
        *ht = mu + vs * tt;
    }
    sv.mu = mu;
    sv.varsigma = vs.abs();
    Ok(())
}

/// One update of the log-variance path and its AR(1) parameters.
pub fn sample_volatility<R: Rng + ?Sized>(
    f: &[f64],
    h: &mut Vec<f64>,
    sv: &mut SvParams,
    prior: &SvPrior,
    rng: &mut R,
) -> Result<()> {
    if f.len() != h.len() {
        return Err(Error::domain("factor and volatility paths differ in length"));
    }
    if f.is_empty() {
        return Ok(());
    }
    let ystar: Vec<f64> = f.iter().map(|v| (v * v + LOG_SQ_OFFSET).ln()).collect();
    let comp = sample_indicators(&ystar, h, rng);
    *h = sample_path(&ystar, &comp, sv, rng)?;
    sample_params_centered(h, sv, prior, rng)?;
    sample_params_noncentered(&ystar, &comp, h, sv, prior, rng)?;
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite log-volatility"));
    }
    Ok(())
}

/// Generalized Gibbs move along the scale ridge
/// `(lambda, f, h, mu) -> (c lambda, f / c, h - 2 ln c, mu - 2 ln c)`, which
/// leaves every `lambda_i f_t` and the AR(1) deviations `h_t - mu` unchanged.
///
/// Under the `N(0, 1)` loading prior and Haar measure `dc / c` the conditional
/// of `c` is `c^(n-1) exp(-c^2 S / 2) N(mu - 2 ln c; prior)` with
/// `S = sum lambda_i^2`. The first two factors are drawn exactly through
/// `c^2 ~ Gamma(n / 2, S / 2)` and the `mu` prior enters an MH correction
/// against the current point `c = 1`.
pub fn rescale_factor<R: Rng + ?Sized>(
    loadings: &mut [f64],
    block: &mut FactorBlock,
    prior: &SvPrior,
    rng: &mut R,
) -> Result<()> {
    let s: f64 = loadings.iter().map(|l| l * l).sum();
    if loadings.is_empty() || !(s > 0.0) {
        return Ok(());
    }
    let c2 = crate::dist::gamma(loadings.len() as f64 / 2.0, s / 2.0, rng)?;
    let shift = c2.ln();
    let mu = block.sv.mu;
    let log_ratio =
        normal_ln_pdf(mu - shift, prior.mu_mean, prior.mu_var) - normal_ln_pdf(mu, prior.mu_mean, prior.mu_var);
    if uniform(rng).ln() >= log_ratio {
        return Ok(());
    }
    let c = c2.sqrt();
    loadings.iter_mut().for_each(|l| *l *= c);
    block.f.iter_mut().for_each(|v| *v /= c);
    block.h.iter_mut().for_each(|v| *v -= shift);
    block.sv.mu -= shift;
    Ok(())
}

/// Simulates a log-variance path from the stationary AR(1).
pub fn simulate_log_variance<R: Rng + ?Sized>(sv: &SvParams, t: usize, rng: &mut R) -> Vec<f64> {
    let mut h = Vec::with_capacity(t);
    let mut cur = sv.mu + sv.stationary_var().sqrt() * std_normal(rng);
    for s in 0..t {
        if s > 0 {
            cur = sv.step(cur, std_normal(rng));
        }
        h.push(cur);
    }
    h
}
