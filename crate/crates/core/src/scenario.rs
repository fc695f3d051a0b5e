//! Variance decompositions and generalized impulse responses.
//!
//! GIRFs simulate each quantile's own model forward with the simulated growth
//! fed back into the lagged regressors. Shocked and baseline paths consume the
//! same random numbers, so a zero shock gives an exactly zero response.

use std::fmt;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ald::{ald_variance, quantile_constants, sample_ald, QuantileConstants};
use crate::diagnostics::{mean, quantile, variance};
use crate::dist::std_normal;
use crate::error::{Error, Result};
use crate::gibbs::DrawStore;
use crate::panel::{fmt_f64, CovariateKind, PanelDataset, Quarter};
use crate::rng::{stream, StreamTag};

/// Share of the shock variance due to the factor:
/// `lambda^2 e^h / (lambda^2 e^h + Var(eps))`.
pub fn vd_share(lambda: f64, h: f64, sigma: f64, p: f64) -> f64 {
    let common = lambda * lambda * h.exp();
    if common == 0.0 {
        return 0.0;
    }
    common / (common + ald_variance(p, sigma))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VdSummary {
    pub country: String,
    pub quantile: f64,
    pub mean: f64,
    pub q16: f64,
    pub q50: f64,
    pub q84: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceDecomposition {
    pub countries: Vec<String>,
    pub quantiles: Vec<f64>,
    pub dates: Vec<Quarter>,
    /// Per equation (`quantile * N + country`): time-averaged share of each draw.
    pub draw_average: Vec<Vec<f64>>,
    /// Per equation: posterior mean share at each period.
    pub time_mean: Vec<Vec<f64>>,
}

pub fn variance_decomposition(store: &DrawStore) -> Result<VarianceDecomposition> {
    if !store.spec.factor_on {
        return Err(Error::contract("variance decomposition needs a model with a factor"));
    }
    if store.num_draws == 0 {
        return Err(Error::domain("draw store holds no draws"));
    }
    let n = store.num_countries();
    let t = store.num_periods;
    let mut draw_average = Vec::with_capacity(store.equations.len());
    let mut time_mean = Vec::with_capacity(store.equations.len());
    for (e, eq) in store.equations.iter().enumerate() {
        let j = e / n;
        let p = store.spec.quantiles[j];
        let mut avg = Vec::with_capacity(store.num_draws);
        let mut by_time = vec![0.0; t];
        for d in 0..store.num_draws {
            let h = store.h_path(j, d);
            let mut s = 0.0;
            for (slot, &hs) in by_time.iter_mut().zip(h) {
                let v = vd_share(eq.loading[d], hs, eq.sigma[d], p);
                *slot += v;
                s += v;
            }
            avg.push(s / t as f64);
        }
        by_time.iter_mut().for_each(|v| *v /= store.num_draws as f64);
        draw_average.push(avg);
        time_mean.push(by_time);
    }
    Ok(VarianceDecomposition {
        countries: store.countries.clone(),
        quantiles: store.spec.quantiles.clone(),
        dates: store.target_dates.clone(),
        draw_average,
        time_mean,
    })
}

impl VarianceDecomposition {
    pub fn summary(&self) -> Vec<VdSummary> {
        let n = self.countries.len();
        self.draw_average
            .iter()
            .enumerate()
            .map(|(e, avg)| VdSummary {
                country: self.countries[e % n].clone(),
                quantile: self.quantiles[e / n],
                mean: mean(avg),
                q16: quantile(avg, 0.16),
                q50: quantile(avg, 0.5),
                q84: quantile(avg, 0.84),
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in self.summary() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_time_csv(&self, path: &Path) -> Result<()> {
        let n = self.countries.len();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["country", "quantile", "date", "share"])?;
        for (e, series) in self.time_mean.iter().enumerate() {
            for (date, v) in self.dates.iter().zip(series) {
                w.write_record([
                    self.countries[e % n].clone(),
                    fmt_f64(self.quantiles[e / n]),
                    date.to_string(),
                    fmt_f64(*v),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShockTarget {
    Factor,
    UsFci,
}

impl fmt::Display for ShockTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShockTarget::Factor => "factor",
            ShockTarget::UsFci => "us-fci",
        })
    }
}

/// Origins whose impact date falls in `[start, end]` (years, inclusive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodGroup {
    pub label: String,
    pub start: Option<i32>,
    pub end: Option<i32>,
}

impl PeriodGroup {
    pub fn contains(&self, q: Quarter) -> bool {
        self.start.is_none_or(|s| q.year() >= s) && self.end.is_none_or(|e| q.year() <= e)
    }

    pub fn defaults() -> Vec<PeriodGroup> {
        let g = |label: &str, start, end| PeriodGroup {
            label: label.into(),
            start,
            end,
        };
        vec![
            g("start-1999", None, Some(1999)),
            g("2000-2009", Some(2000), Some(2009)),
            g("2010-2019", Some(2010), Some(2019)),
            g("2020-end", Some(2020), None),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GirfOptions {
    pub horizons: usize,
    pub seed: u64,
    /// Use every `origin_stride`-th in-sample origin.
    pub origin_stride: usize,
}

impl Default for GirfOptions {
    fn default() -> Self {
        GirfOptions {
            horizons: 8,
            seed: 0,
            origin_stride: 1,
        }
    }
}

/// Posterior summary of one response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GirfBand {
    pub country: String,
    pub quantile: f64,
    /// Steps after impact; for cumulative responses the number of steps summed.
    pub horizon: usize,
    pub period: String,
    pub size: f64,
    pub mean: f64,
    /// Monte Carlo standard error of `mean` across draws.
    pub mc_se: f64,
    pub q16: f64,
    pub q50: f64,
    pub q84: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GirfResult {
    pub target: ShockTarget,
    pub cumulative: bool,
    pub bands: Vec<GirfBand>,
}

impl GirfResult {
    pub fn band(&self, country: &str, quantile: f64, horizon: usize, period: &str, size: f64) -> Option<&GirfBand> {
        self.bands.iter().find(|b| {
            b.country == country
                && (b.quantile - quantile).abs() < 1e-9
                && b.horizon == horizon
                && b.period == period
                && b.size == size
        })
    }

    /// Long format: one row per (country, quantile, horizon, period, size, band).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["target", "country", "quantile", "horizon", "period", "size", "band", "value"])?;
        for b in &self.bands {
            for (name, v) in [("mean", b.mean), ("mc_se", b.mc_se), ("q16", b.q16), ("q50", b.q50), ("q84", b.q84)] {
                w.write_record([
                    self.target.to_string(),
                    b.country.clone(),
                    fmt_f64(b.quantile),
                    b.horizon.to_string(),
                    b.period.clone(),
                    fmt_f64(b.size),
                    name.to_string(),
                    fmt_f64(v),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn band_from(country: &str, p: f64, horizon: usize, period: &str, size: f64, xs: &[f64]) -> GirfBand {
    GirfBand {
        country: country.to_string(),
        quantile: p,
        horizon,
        period: period.to_string(),
        size,
        mean: mean(xs),
        mc_se: (variance(xs) / xs.len() as f64).sqrt(),
        q16: quantile(xs, 0.16),
        q50: quantile(xs, 0.5),
        q84: quantile(xs, 0.84),
    }
}

/// Forward simulator for one (quantile, draw).
struct Simulator<'a> {
    store: &'a DrawStore,
    j: usize,
    d: usize,
    consts: QuantileConstants,
    /// Panel countries feeding each equation's regressors.
    sources: &'a [Vec<usize>],
}

/// Impact perturbation: a factor shock or a shift of one panel FCI.
#[derive(Clone, Copy)]
struct Shock {
    factor: f64,
    fci: Option<(usize, f64)>,
}

impl Simulator<'_> {
    /// Simulates `steps` periods from demeaned growth `z` and FCI `fci`
    /// (panel order), starting the log-variance at `h0`. Returns demeaned
    /// growth per `[step][equation]`.
    fn path<R: Rng + ?Sized>(&self, z0: &[f64], fci: &[f64], h0: f64, steps: usize, shock: Shock, rng: &mut R) -> Vec<Vec<f64>> {
        let store = self.store;
        let n = store.num_countries();
        let sv = store.sv(self.j, self.d);
        let mut z = z0.to_vec();
        let mut h = h0;
        let mut out = Vec::with_capacity(steps);
        let mut x = vec![0.0; store.num_covariates];
        for k in 0..steps {
            if k > 0 {
                h = sv.step(h, std_normal(rng));
            }
            let mut f = (0.5 * h).exp() * std_normal(rng);
            if k == 0 {
                f += shock.factor;
            }
            let mut ys = Vec::with_capacity(n);
            for i in 0..n {
                for (s, &c) in self.sources[i].iter().enumerate() {
                    x[2 * s] = z[c];
                    x[2 * s + 1] = fci[c];
                    if let (0, Some((us, shift))) = (k, shock.fci) {
                        if c == us {
                            x[2 * s + 1] += shift;
                        }
                    }
                }
                let eq = store.equation(i, self.j);
                let omega = eq.omega[self.d];
                let lin: f64 = store.beta(i, self.j, self.d).iter().zip(&x).map(|(b, v)| b * v).sum();
                let g = if omega != 0.0 { eq.forests[self.d].predict(&x) } else { 0.0 };
                let lambda = if store.spec.factor_on { eq.loading[self.d] } else { 0.0 };
                let eps = sample_ald(&self.consts, eq.sigma[self.d], rng).1;
                ys.push(eq.alpha[self.d] + omega * g + (1.0 - omega) * lin + lambda * f + eps);
            }
            for (i, &y) in ys.iter().enumerate() {
                z[store.country_index[i]] = y;
            }
            out.push(ys);
        }
        out
    }
}

fn check_inputs(store: &DrawStore, data: &PanelDataset, horizons: usize) -> Result<()> {
    if horizons < 1 {
        return Err(Error::domain("GIRF needs at least one horizon"));
    }
    if store.num_draws == 0 {
        return Err(Error::domain("draw store holds no draws"));
    }
    if store.spec.covariates.horizon != 1 {
        return Err(Error::contract("GIRFs iterate one-step models; estimate with horizon 1"));
    }
    if data.num_countries() != store.means.len() || data.num_periods() != store.num_periods + 1 {
        return Err(Error::domain("panel does not match the estimation sample of the draw store"));
    }
    if store.target_dates.first() != data.dates().get(1) {
        return Err(Error::domain("panel dates do not match the estimation sample of the draw store"));
    }
    Ok(())
}

/// Per draw: response per `[origin][step][equation]` for every shock size,
/// returned as `[size][draw][origin][step][equation]`.
fn simulate_differences(
    store: &DrawStore,
    data: &PanelDataset,
    j: usize,
    origins: &[usize],
    steps: usize,
    shocks: &[Shock],
    seed: u64,
) -> Result<Vec<Vec<Vec<Vec<Vec<f64>>>>>> {
    let consts = quantile_constants(store.spec.quantiles[j])?;
    let np = data.num_countries();
    let sources: Vec<Vec<usize>> = store
        .country_index
        .iter()
        .map(|&ci| store.spec.covariates.sources(ci, np))
        .collect();
    let per_draw: Vec<Vec<Vec<Vec<Vec<f64>>>>> = (0..store.num_draws)
        .into_par_iter()
        .map(|d| {
            let sim = Simulator {
                store,
                j,
                d,
                consts,
                sources: &sources,
            };
            let mut rng = stream(seed, StreamTag::Girf, j, d);
            let h = store.h_path(j, d);
            let mut by_shock = vec![Vec::with_capacity(origins.len()); shocks.len()];
            for &r in origins {
                let z: Vec<f64> = (0..np).map(|c| data.gdp()[(r, c)] - store.means[c]).collect();
                let fci: Vec<f64> = (0..np).map(|c| data.fci()[(r, c)]).collect();
                let start = rng.clone();
                let base = sim.path(&z, &fci, h[r], steps, Shock { factor: 0.0, fci: None }, &mut rng);
                for (s, &shock) in shocks.iter().enumerate() {
                    let mut crn = start.clone();
                    let hit = sim.path(&z, &fci, h[r], steps, shock, &mut crn);
                    let diff = hit
                        .iter()
                        .zip(&base)
                        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                        .collect();
                    by_shock[s].push(diff);
                }
            }
            by_shock
        })
        .collect();
    // [draw][size] -> [size][draw]
    let mut out = vec![Vec::with_capacity(store.num_draws); shocks.len()];
    for draw in per_draw {
        for (s, v) in draw.into_iter().enumerate() {
            out[s].push(v);
        }
    }
    Ok(out)
}

/// Response of growth to a shock of `size` in the factor at impact, averaged
/// over all in-sample origins, for horizons `0..options.horizons`.
pub fn girf_factor_shock(
    store: &DrawStore,
    data: &PanelDataset,
    size: f64,
    options: &GirfOptions,
) -> Result<GirfResult> {
    if !store.spec.factor_on {
        return Err(Error::contract("factor shock needs a model with a factor"));
    }
    check_inputs(store, data, options.horizons)?;
    let origins: Vec<usize> = (0..store.num_periods).step_by(options.origin_stride.max(1)).collect();
    let n = store.num_countries();
    let mut bands = Vec::new();
    for j in 0..store.num_quantiles() {
        let shock = Shock { factor: size, fci: None };
        let diffs = simulate_differences(store, data, j, &origins, options.horizons, &[shock], options.seed)?;
        for i in 0..n {
            for k in 0..options.horizons {
                let per_draw: Vec<f64> = diffs[0]
                    .iter()
                    .map(|o| o.iter().map(|path| path[k][i]).sum::<f64>() / origins.len() as f64)
                    .collect();
                bands.push(band_from(&store.countries[i], store.spec.quantiles[j], k, "all", size, &per_draw));
            }
        }
    }
    Ok(GirfResult {
        target: ShockTarget::Factor,
        cumulative: false,
        bands,
    })
}

/// Cumulative response over `options.horizons` quarters to shifting the FCI of
/// `us_country` by `k` in-sample standard deviations at impact, for each `k`
/// in `sizes`, averaged over origins within each period group.
pub fn girf_fci_shock(
    store: &DrawStore,
    data: &PanelDataset,
    us_country: &str,
    sizes: &[f64],
    periods: &[PeriodGroup],
    options: &GirfOptions,
) -> Result<GirfResult> {
    if store.spec.covariates.kind != CovariateKind::CissCc {
        return Err(Error::contract("FCI shock needs cross-country covariates including the US FCI"));
    }
    let us = data
        .country_index(us_country)
        .map_err(|_| Error::contract(format!("country {us_country} is not in the panel")))?;
    check_inputs(store, data, options.horizons)?;
    let sd = {
        let col: Vec<f64> = data.fci().column(us).iter().copied().collect();
        variance(&col).sqrt()
    };
    let origins: Vec<usize> = (0..store.num_periods).step_by(options.origin_stride.max(1)).collect();
    let shocks: Vec<Shock> = sizes
        .iter()
        .map(|&k| Shock {
            factor: 0.0,
            fci: Some((us, k * sd)),
        })
        .collect();
    let n = store.num_countries();
    let mut bands = Vec::new();
    for j in 0..store.num_quantiles() {
        let diffs = simulate_differences(store, data, j, &origins, options.horizons, &shocks, options.seed)?;
        for group in periods {
            let members: Vec<usize> = origins
                .iter()
                .enumerate()
                .filter(|(_, &r)| group.contains(store.target_dates[r]))
                .map(|(pos, _)| pos)
                .collect();
            if members.is_empty() {
                continue;
            }
            for (s, &size) in sizes.iter().enumerate() {
                for i in 0..n {
                    let per_draw: Vec<f64> = diffs[s]
                        .iter()
                        .map(|o| {
                            members
                                .iter()
                                .map(|&m| o[m].iter().map(|step| step[i]).sum::<f64>())
                                .sum::<f64>()
                                / members.len() as f64
                        })
                        .collect();
                    bands.push(band_from(
                        &store.countries[i],
                        store.spec.quantiles[j],
                        options.horizons,
                        &group.label,
                        size,
                        &per_draw,
                    ));
                }
            }
        }
    }
    Ok(GirfResult {
        target: ShockTarget::UsFci,
        cumulative: true,
        bands,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bart::{PackedForest, PackedNode, PACKED_LEAF};
    use crate::gibbs::{EquationDraws, ModelSpec, OmegaMode, QuantileDraws};
    use crate::panel::CovariateSpec;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    #[test]
    fn share_examples() {
        assert_eq!(vd_share(0.0, 1.3, 1.0, 0.3), 0.0);
        // Var(eps) = 8 at p = 0.5, sigma = 1
        assert!((vd_share(1.0, 8f64.ln(), 1.0, 0.5) - 0.5).abs() < 1e-14);
        let p = 0.1;
        let c = quantile_constants(p).unwrap();
        let direct = 2.0 * 2.0 * 0.3f64.exp() / (4.0 * 0.3f64.exp() + 0.7 * 0.7 * (c.theta * c.theta + c.tau2));
        assert!((vd_share(2.0, 0.3, 0.7, p) - direct).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn share_is_a_proportion_and_even_in_lambda(l in -5.0f64..5.0, h in -5.0f64..5.0, s in 0.01f64..5.0, p in 0.02f64..0.98) {
            let v = vd_share(l, h, s, p);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, vd_share(-l, h, s, p));
        }
    }

    /// One-country, one-quantile store with a linear AR(1) in own growth.
    fn ar_store(phi: f64, lambda: f64, sigma: f64, draws: usize, t: usize, kind: CovariateKind) -> (DrawStore, PanelDataset) {
        let n = if kind == CovariateKind::Ciss { 1 } else { 2 };
        let start = Quarter::new(1995, 1).unwrap();
        let data = PanelDataset::new(
            ["US", "XX"][..n].iter().map(|s| s.to_string()).collect(),
            (0..t + 1).map(|k| start.offset(k as i64)).collect(),
            DMatrix::from_fn(t + 1, n, |r, c| ((r * 7 + c) % 5) as f64 - 2.0),
            DMatrix::from_fn(t + 1, n, |r, c| ((r * 3 + c) % 4) as f64 * 0.5),
        )
        .unwrap();
        let k = 2 * if kind == CovariateKind::Ciss { 1 } else { n };
        let spec = ModelSpec {
            covariates: CovariateSpec::new(kind, 1),
            omega_mode: OmegaMode::Zero,
            quantiles: vec![0.5],
            ..ModelSpec::default()
        };
        let leaf = PackedForest {
            nodes: vec![PackedNode { var: PACKED_LEAF, value: 0.0, right: 0 }],
            roots: vec![0],
        };
        let mut beta = vec![0.0; k];
        beta[0] = phi;
        let eq = EquationDraws {
            alpha: vec![0.1; draws],
            beta: beta.repeat(draws),
            omega: vec![0.0; draws],
            loading: vec![lambda; draws],
            sigma: vec![sigma; draws],
            local_scales: vec![1.0; draws * k],
            forests: vec![leaf; draws],
            fit: vec![0.0; draws * t],
        };
        let mut equations = vec![eq; n];
        if n == 2 {
            // second country loads on the US FCI only
            for d in 0..draws {
                equations[1].beta[d * k..(d + 1) * k].copy_from_slice(&[0.0, 0.0, 0.0, -0.8]);
            }
            // US own FCI
            for d in 0..draws {
                equations[0].beta[d * k + 1] = -0.5;
            }
        }
        let store = DrawStore {
            spec,
            seed: 0,
            countries: data.countries().to_vec(),
            num_periods: t,
            num_covariates: k,
            num_draws: draws,
            means: data.gdp_means(),
            country_index: (0..n).collect(),
            target_dates: data.dates()[1..].to_vec(),
            equations,
            quantiles: vec![QuantileDraws {
                f: vec![0.0; draws * t],
                h: (0..draws * t).map(|i| (i % 3) as f64 * 0.2 - 0.5).collect(),
                mu: vec![-0.2; draws],
                rho: vec![0.9; draws],
                varsigma: vec![0.3; draws],
                pooled: vec![0.0; draws * k],
            }],
            phi2: vec![1.0; draws],
        };
        (store, data)
    }

    fn opts(h: usize) -> GirfOptions {
        GirfOptions { horizons: h, seed: 4, origin_stride: 1 }
    }

    #[test]
    fn zero_shock_gives_zero_response() {
        let (store, data) = ar_store(0.6, 0.8, 1.0, 20, 30, CovariateKind::Ciss);
        let r = girf_factor_shock(&store, &data, 0.0, &opts(8)).unwrap();
        assert!(r.bands.iter().all(|b| b.mean == 0.0 && b.q16 == 0.0 && b.q84 == 0.0));
    }

    #[test]
    fn static_model_responds_on_impact_only() {
        let (store, data) = ar_store(0.0, 0.8, 1.0, 20, 30, CovariateKind::Ciss);
        let r = girf_factor_shock(&store, &data, 1.5, &opts(6)).unwrap();
        for b in &r.bands {
            let expect = if b.horizon == 0 { 0.8 * 1.5 } else { 0.0 };
            assert!((b.q50 - expect).abs() < 1e-12, "{b:?}");
        }
    }

    #[test]
    fn linear_model_matches_ar_impulse_response() {
        let phi = 0.7;
        let (store, data) = ar_store(phi, 0.8, 1.0, 20, 30, CovariateKind::Ciss);
        let one = girf_factor_shock(&store, &data, 1.0, &opts(8)).unwrap();
        let two = girf_factor_shock(&store, &data, 2.0, &opts(8)).unwrap();
        for (a, b) in one.bands.iter().zip(&two.bands) {
            let expect = 0.8 * phi.powi(a.horizon as i32);
            assert!((a.mean - expect).abs() <= 3.0 * a.mc_se + 1e-12);
            assert!((b.mean - 2.0 * a.mean).abs() <= 3.0 * (a.mc_se + b.mc_se) + 1e-12);
        }
    }

    #[test]
    fn fci_shock_propagates_linearly() {
        let (store, data) = ar_store(0.5, 0.8, 1.0, 10, 40, CovariateKind::CissCc);
        let sd = variance(&data.fci().column(0).iter().copied().collect::<Vec<_>>()).sqrt();
        let r = girf_fci_shock(&store, &data, "US", &[-2.0, 0.0, 1.0], &PeriodGroup::defaults(), &opts(4)).unwrap();
        // US: impact -0.5 k sd then own AR(0.5); XX: -0.8 k sd at impact, no dynamics
        let us: f64 = (0..4).map(|j| -0.5 * 0.5f64.powi(j)).sum();
        for b in &r.bands {
            let expect = if b.country == "US" { us } else { -0.8 } * b.size * sd;
            assert!((b.q50 - expect).abs() < 1e-10, "{b:?}");
        }
        let periods: Vec<&str> = r.bands.iter().map(|b| b.period.as_str()).collect();
        assert!(periods.contains(&"start-1999") && periods.contains(&"2000-2009"));
        assert!(!periods.contains(&"2020-end"));
    }

    #[test]
    fn preconditions() {
        let (mut store, data) = ar_store(0.5, 0.8, 1.0, 5, 20, CovariateKind::Ciss);
        assert!(matches!(
            girf_fci_shock(&store, &data, "US", &[1.0], &PeriodGroup::defaults(), &opts(4)),
            Err(Error::Contract(_))
        ));
        assert!(matches!(girf_factor_shock(&store, &data, 1.0, &opts(0)), Err(Error::Domain(_))));
        store.spec.factor_on = false;
        assert!(matches!(girf_factor_shock(&store, &data, 1.0, &opts(4)), Err(Error::Contract(_))));
        assert!(matches!(variance_decomposition(&store), Err(Error::Contract(_))));
    }

    #[test]
    fn decomposition_matches_per_draw_formula() {
        let (store, _) = ar_store(0.5, 0.8, 1.3, 6, 12, CovariateKind::Ciss);
        let vd = variance_decomposition(&store).unwrap();
        for d in 0..6 {
            let h = store.h_path(0, d);
            let direct = h.iter().map(|&hs| vd_share(0.8, hs, 1.3, 0.5)).sum::<f64>() / h.len() as f64;
            assert!((vd.draw_average[0][d] - direct).abs() < 1e-15);
        }
        let s = vd.summary();
        assert_eq!(s.len(), 1);
        assert!(s[0].q16 <= s[0].q50 && s[0].q50 <= s[0].q84);
    }
}
