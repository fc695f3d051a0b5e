//! Synthetic panels with known conditional quantiles.
//!
//! ```text
//! y_it   = mu + rho y_i,t-1 + gamma c_i,t-1 + gamma_us c_US,t-1 + lambda_i f_t + s_it u_it
//! s_it   = scale + kappa 1{c_i,t-1 > threshold, u_it < 0}
//! c_it   = a c_i,t-1 + b e_it
//! f_t    ~ N(0, exp(h_t)),  h_t AR(1)
//! ```
//!
//! With a median-zero `u` the conditional median and upper quantiles are
//! linear in the lags while the lower tail stretches by `kappa` when financial
//! conditions are tight.

use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::ald::{ald_quantile, quantile_constants, sample_ald};
use crate::dist::std_normal;
use crate::error::{Error, Result};
use crate::factor_sv::{simulate_log_variance, SvParams};
use crate::gibbs::DEFAULT_QUANTILES;
use crate::panel::{PanelDataset, Quarter};
use crate::rng::{stream, StreamRng, StreamTag};

pub const COUNTRY_CODES: [&str; 11] = ["US", "DE", "FR", "UK", "JP", "IT", "CA", "ES", "NL", "SE", "CH"];

const BURN_IN: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum NoiseLaw {
    Gaussian,
    /// `ALD_p(sigma)` with `sigma = 1`; its `p`-quantile is zero.
    Ald { p: f64 },
}

impl NoiseLaw {
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            NoiseLaw::Gaussian => Normal::standard().inverse_cdf(u),
            NoiseLaw::Ald { p } => ald_quantile(u, p, 1.0),
        }
    }

    fn sample(&self, rng: &mut StreamRng) -> f64 {
        match *self {
            NoiseLaw::Gaussian => std_normal(rng),
            NoiseLaw::Ald { p } => {
                let c = quantile_constants(p).expect("validated probability");
                sample_ald(&c, 1.0, rng).1
            }
        }
    }
}

/// Lower-tail stretch switched on by a tight own lagged FCI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailTerm {
    pub threshold: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticDgpSpec {
    pub countries: usize,
    pub periods: usize,
    pub start: Quarter,
    pub intercept: f64,
    pub own_lag: f64,
    pub fci_coef: f64,
    /// Coefficient on the lagged US FCI in the non-US equations.
    pub us_fci_coef: f64,
    pub scale: f64,
    pub tail: Option<TailTerm>,
    /// One loading per country, or a single value for all.
    pub loadings: Vec<f64>,
    pub sv: SvParams,
    pub fci_ar: f64,
    pub fci_sd: f64,
    pub noise: NoiseLaw,
}

impl Default for SyntheticDgpSpec {
    fn default() -> Self {
        SyntheticDgpSpec {
            countries: 3,
            periods: 120,
            start: Quarter::new(1990, 1).expect("valid quarter"),
            intercept: 0.5,
            own_lag: 0.3,
            fci_coef: -0.3,
            us_fci_coef: 0.0,
            scale: 1.0,
            tail: None,
            loadings: vec![0.0],
            sv: SvParams {
                mu: -1.0,
                rho: 0.95,
                varsigma: 0.2,
            },
            fci_ar: 0.8,
            fci_sd: 0.6,
            noise: NoiseLaw::Gaussian,
        }
    }
}

/// Ground truth written next to a simulated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub spec: SyntheticDgpSpec,
    pub seed: u64,
    pub factor: Vec<f64>,
    pub log_variance: Vec<f64>,
    /// `(p, Q_u(p))` of the noise law.
    pub noise_quantiles: Vec<(f64, f64)>,
    pub conditional_quantiles: Vec<TruthRow>,
}

/// Quantile of `y_it` given the lagged panel and `f_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub country: String,
    pub date: Quarter,
    pub p: f64,
    pub value: f64,
}

impl SyntheticDgpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.countries == 0 || self.countries > COUNTRY_CODES.len() {
            return Err(Error::Config(format!(
                "countries must be between 1 and {}",
                COUNTRY_CODES.len()
            )));
        }
        if self.periods < 3 {
            return Err(Error::Config("need at least 3 periods".into()));
        }
        if !(self.loadings.len() == 1 || self.loadings.len() == self.countries) {
            return Err(Error::Config("loadings: give one value or one per country".into()));
        }
        if !(self.scale > 0.0) || self.tail.is_some_and(|t| !(self.scale + t.kappa > 0.0)) {
            return Err(Error::Config("noise scale must stay positive".into()));
        }
        if let NoiseLaw::Ald { p } = self.noise {
            quantile_constants(p).map_err(|e| Error::Config(e.to_string()))?;
        }
        if !(self.sv.rho.abs() < 1.0) || !(self.fci_ar.abs() < 1.0) {
            return Err(Error::Config("autoregressive coefficients must be inside (-1, 1)".into()));
        }
        Ok(())
    }

    pub fn country_codes(&self) -> Vec<String> {
        COUNTRY_CODES[..self.countries].iter().map(|s| s.to_string()).collect()
    }

    pub fn loading(&self, country: usize) -> f64 {
        if self.loadings.len() == 1 {
            self.loadings[0]
        } else {
            self.loadings[country]
        }
    }

    /// Shock for a noise draw `u` given the own lagged FCI. Above the tail
    /// threshold the negative side is stretched by `kappa`; the map is
    /// increasing in `u`, so quantiles carry through it.
    pub fn shock(&self, fci_lag: f64, u: f64) -> f64 {
        match self.tail {
            Some(t) if fci_lag > t.threshold && u < 0.0 => (self.scale + t.kappa) * u,
            _ => self.scale * u,
        }
    }

    /// Conditional location without noise.
    pub fn location(&self, country: usize, gdp_lag: f64, fci_lag: f64, us_fci_lag: f64, f: f64) -> f64 {
        let us = if country == 0 { 0.0 } else { self.us_fci_coef * us_fci_lag };
        self.intercept + self.own_lag * gdp_lag + self.fci_coef * fci_lag + us + self.loading(country) * f
    }

    /// `p`-quantile of `y_it` given the lags and the factor.
    pub fn conditional_quantile(&self, country: usize, gdp_lag: f64, fci_lag: f64, us_fci_lag: f64, f: f64, p: f64) -> f64 {
        self.location(country, gdp_lag, fci_lag, us_fci_lag, f) + self.shock(fci_lag, self.noise.quantile(p))
    }

    /// Draws a panel and its truth. Equal `(spec, seed)` give equal output.
    pub fn generate(&self, seed: u64) -> Result<(PanelDataset, Truth)> {
        self.validate()?;
        let n = self.countries;
        let total = self.periods + BURN_IN;
        let mut rng = stream(seed, StreamTag::Simulate, 0, 0);
        let h = simulate_log_variance(&self.sv, total, &mut rng);
        let f: Vec<f64> = h.iter().map(|v| (0.5 * v).exp() * std_normal(&mut rng)).collect();
        let mut gdp = vec![vec![0.0; n]; total];
        let mut fci = vec![vec![0.0; n]; total];
        let fci_sd0 = self.fci_sd / (1.0 - self.fci_ar * self.fci_ar).sqrt();
        for c in 0..n {
            fci[0][c] = fci_sd0 * std_normal(&mut rng);
            gdp[0][c] = self.intercept / (1.0 - self.own_lag);
        }
        for t in 1..total {
            for c in 0..n {
                let u = self.noise.sample(&mut rng);
                let e = std_normal(&mut rng);
                let (gl, cl) = (gdp[t - 1][c], fci[t - 1][c]);
                gdp[t][c] = self.location(c, gl, cl, fci[t - 1][0], f[t]) + self.shock(cl, u);
                fci[t][c] = self.fci_ar * cl + self.fci_sd * e;
            }
        }
        let dates: Vec<Quarter> = (0..self.periods).map(|k| self.start.offset(k as i64)).collect();
        let keep = |m: &Vec<Vec<f64>>| {
            nalgebra::DMatrix::from_fn(self.periods, n, |r, c| m[r + BURN_IN][c])
        };
        let panel = PanelDataset::new(self.country_codes(), dates.clone(), keep(&gdp), keep(&fci))?;
        let mut rows = Vec::new();
        let codes = self.country_codes();
        for (r, date) in dates.iter().enumerate() {
            let t = r + BURN_IN;
            for (c, code) in codes.iter().enumerate() {
                for &p in &DEFAULT_QUANTILES {
                    rows.push(TruthRow {
                        country: code.clone(),
                        date: *date,
                        p,
                        value: self.conditional_quantile(c, gdp[t - 1][c], fci[t - 1][c], fci[t - 1][0], f[t], p),
                    });
                }
            }
        }
        let truth = Truth {
            spec: self.clone(),
            seed,
            factor: f[BURN_IN..].to_vec(),
            log_variance: h[BURN_IN..].to_vec(),
            noise_quantiles: DEFAULT_QUANTILES.iter().map(|&p| (p, self.noise.quantile(p))).collect(),
            conditional_quantiles: rows,
        };
        Ok((panel, truth))
    }
}

impl Truth {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn quantile_at(&self, country: &str, date: Quarter, p: f64) -> Option<f64> {
        self.conditional_quantiles
            .iter()
            .find(|r| r.country == country && r.date == date && (r.p - p).abs() < 1e-9)
            .map(|r| r.value)
    }
}
