//! Direct h-step quantile forecasts, quantile scores and quantile-weighted
//! CRPS, and the recursive out-of-sample exercise.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::{info, warn};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ald::check_loss;
use crate::diagnostics::{mean, quantile};
use crate::dist::std_normal;
use crate::error::{Error, Result};
use crate::gibbs::{run_chain, DrawStore, ModelSpec};
use crate::panel::{build_panel_designs, regressor_row, PanelDataset, Quarter};
use crate::rng::{child_seed, stream, StreamTag};

/// Quantiles reported individually by default.
pub const QS_GRID: [f64; 5] = [0.10, 0.25, 0.50, 0.75, 0.90];

const GRID_TOL: f64 = 1e-9;

fn grid_index(grid: &[f64], p: f64) -> Option<usize> {
    grid.iter().position(|&g| (g - p).abs() < GRID_TOL)
}

/// Posterior draws of the `p`-quantile of `y_{t+h}` for equation country
/// `country` given regressors `x_new`.
///
/// Each draw is `alpha + omega g(x) + (1 - omega) beta'x + lambda f + mean`,
/// where `f ~ N(0, exp(h))` and `h` is the final in-sample log-variance moved
/// forward `horizon` steps along its AR(1) law.
pub fn predict_quantile<R: Rng + ?Sized>(
    store: &DrawStore,
    country: usize,
    p: f64,
    x_new: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let j = grid_index(&store.spec.quantiles, p)
        .ok_or_else(|| Error::domain(format!("quantile {p} was not estimated")))?;
    predict_at(store, country, j, x_new, rng)
}

/// Draws for every estimated quantile, in grid order.
pub fn predict_quantiles<R: Rng + ?Sized>(
    store: &DrawStore,
    country: usize,
    x_new: &[f64],
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    (0..store.num_quantiles())
        .map(|j| predict_at(store, country, j, x_new, rng))
        .collect()
}

fn predict_at<R: Rng + ?Sized>(
    store: &DrawStore,
    country: usize,
    j: usize,
    x_new: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    if country >= store.num_countries() {
        return Err(Error::domain(format!("country index {country} out of range")));
    }
    if x_new.len() != store.num_covariates {
        return Err(Error::domain(format!(
            "regressor vector has length {}, model expects {}",
            x_new.len(),
            store.num_covariates
        )));
    }
    if store.num_draws == 0 {
        return Err(Error::domain("draw store holds no draws"));
    }
    let eq = store.equation(country, j);
    let steps = store.spec.covariates.horizon;
    let t = store.num_periods;
    let level = store.own_mean(country);
    let mut out = Vec::with_capacity(store.num_draws);
    for d in 0..store.num_draws {
        let omega = eq.omega[d];
        let lin: f64 = store.beta(country, j, d).iter().zip(x_new).map(|(b, x)| b * x).sum();
        let g = if omega != 0.0 { eq.forests[d].predict(x_new) } else { 0.0 };
        let mut q = eq.alpha[d] + omega * g + (1.0 - omega) * lin + level;
        if store.spec.factor_on {
            let sv = store.sv(j, d);
            let mut h = store.h_path(j, d)[t - 1];
            for _ in 0..steps {
                h = sv.step(h, std_normal(rng));
            }
            q += eq.loading[d] * (0.5 * h).exp() * std_normal(rng);
        }
        out.push(q);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointSummary {
    #[default]
    Mean,
    Median,
}

impl PointSummary {
    pub fn apply(self, draws: &[f64]) -> f64 {
        match self {
            PointSummary::Mean => mean(draws),
            PointSummary::Median => quantile(draws, 0.5),
        }
    }
}

/// Predictive quantile draws for all countries at one forecast origin.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDraws {
    pub origin: Quarter,
    pub target: Quarter,
    pub horizon: usize,
    pub quantiles: Vec<f64>,
    pub countries: Vec<String>,
    /// `[country][quantile][draw]`.
    pub draws: Vec<Vec<Vec<f64>>>,
    /// Realized growth at the target date when it lies inside the panel.
    pub realized: Vec<Option<f64>>,
}

impl PredictiveDraws {
    /// Point forecast per `[country][quantile]`.
    pub fn point(&self, summary: PointSummary) -> Vec<Vec<f64>> {
        self.draws
            .iter()
            .map(|c| c.iter().map(|d| summary.apply(d)).collect())
            .collect()
    }
}

/// Forecasts from the regressors observed at panel row `origin_row`.
///
/// Regressors are demeaned with the store's training means. Each
/// (country, quantile) pair uses its own random stream derived from `seed`.
pub fn forecast_origin(
    store: &DrawStore,
    data: &PanelDataset,
    origin_row: usize,
    seed: u64,
) -> Result<PredictiveDraws> {
    if data.num_countries() != store.means.len() {
        return Err(Error::domain(format!(
            "panel has {} countries, model was trained on {}",
            data.num_countries(),
            store.means.len()
        )));
    }
    if origin_row >= data.num_periods() {
        return Err(Error::Range(format!("origin row {origin_row} outside the panel")));
    }
    let h = store.spec.covariates.horizon;
    let origin = data.dates()[origin_row];
    let target_row = origin_row + h;
    let mut draws = Vec::with_capacity(store.num_countries());
    let mut realized = Vec::with_capacity(store.num_countries());
    for (i, &ci) in store.country_index.iter().enumerate() {
        let sources = store.spec.covariates.sources(ci, data.num_countries());
        let x = regressor_row(data, origin_row, &sources, &store.means);
        let per_q = (0..store.num_quantiles())
            .map(|j| predict_at(store, i, j, x.as_slice(), &mut stream(seed, StreamTag::Forecast, i, j)))
            .collect::<Result<Vec<_>>>()?;
        draws.push(per_q);
        realized.push((target_row < data.num_periods()).then(|| data.gdp()[(target_row, ci)]));
    }
    Ok(PredictiveDraws {
        origin,
        target: origin.offset(h as i64),
        horizon: h,
        quantiles: store.spec.quantiles.clone(),
        countries: store.countries.clone(),
        draws,
        realized,
    })
}

/// Pinball loss `rho_p(y - q)`.
pub fn quantile_score(q: f64, y: f64, p: f64) -> f64 {
    check_loss(y - q, p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightScheme {
    None,
    Tails,
    Left,
    Right,
    Center,
}

impl WeightScheme {
    pub const ALL: [WeightScheme; 5] = [
        WeightScheme::None,
        WeightScheme::Tails,
        WeightScheme::Left,
        WeightScheme::Right,
        WeightScheme::Center,
    ];

    pub fn weight(self, u: f64) -> f64 {
        match self {
            WeightScheme::None => 1.0,
            WeightScheme::Tails => (2.0 * u - 1.0).powi(2),
            WeightScheme::Left => (1.0 - u).powi(2),
            WeightScheme::Right => u * u,
            WeightScheme::Center => u * (1.0 - u),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WeightScheme::None => "none",
            WeightScheme::Tails => "tails",
            WeightScheme::Left => "left",
            WeightScheme::Right => "right",
            WeightScheme::Center => "center",
        }
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WeightScheme::ALL
            .into_iter()
            .find(|w| w.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown weighting scheme `{s}`")))
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::contract("empty quantile grid"));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::contract("quantile grid must be strictly increasing"));
    }
    if grid.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::contract("quantile grid must lie in (0, 1)"));
    }
    Ok(())
}

/// `sum_j w(p_j) QS(q_j, y, p_j) / J` over an increasing grid.
pub fn qw_crps(grid: &[f64], q: &[f64], y: f64, scheme: WeightScheme) -> Result<f64> {
    check_grid(grid)?;
    if q.len() != grid.len() {
        return Err(Error::domain(format!(
            "{} forecasts for a grid of {}",
            q.len(),
            grid.len()
        )));
    }
    let delta = 1.0 / grid.len() as f64;
    Ok(grid
        .iter()
        .zip(q)
        .map(|(&p, &qp)| scheme.weight(p) * quantile_score(qp, y, p) * delta)
        .sum())
}

/// A point forecast for every quantile of an increasing grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileForecast {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl QuantileForecast {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        check_grid(&grid)?;
        if grid.len() != values.len() {
            return Err(Error::domain("grid and forecasts differ in length"));
        }
        Ok(QuantileForecast { grid, values })
    }

    /// Builds from `(p, q)` pairs given in any order.
    pub fn from_pairs(mut pairs: Vec<(f64, f64)>) -> Result<Self> {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (grid, values) = pairs.into_iter().unzip();
        QuantileForecast::new(grid, values)
    }

    /// Monotone rearrangement: the sorted forecast values on the same grid.
    pub fn rearranged(&self) -> Self {
        let mut values = self.values.clone();
        values.sort_by(f64::total_cmp);
        QuantileForecast {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn is_monotone(&self) -> bool {
        self.values.windows(2).all(|w| w[0] <= w[1])
    }

    pub fn crps(&self, y: f64, scheme: WeightScheme) -> f64 {
        qw_crps(&self.grid, &self.values, y, scheme).expect("grid validated on construction")
    }

    pub fn qs(&self, p: f64, y: f64) -> Option<f64> {
        grid_index(&self.grid, p).map(|j| quantile_score(self.values[j], y, p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedModel {
    pub name: String,
    pub spec: ModelSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OosSettings {
    pub horizons: Vec<usize>,
    pub seed: u64,
    /// Use only the first `n` holdout targets per horizon.
    pub max_origins: Option<usize>,
    pub point: PointSummary,
    pub qs_grid: Vec<f64>,
    pub schemes: Vec<WeightScheme>,
    pub benchmark: String,
}

impl Default for OosSettings {
    fn default() -> Self {
        OosSettings {
            horizons: vec![1, 4],
            seed: 0,
            max_origins: None,
            point: PointSummary::Mean,
            qs_grid: QS_GRID.to_vec(),
            schemes: WeightScheme::ALL.to_vec(),
            benchmark: "benchmark".into(),
        }
    }
}

/// One scored forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub model: String,
    pub country: String,
    pub horizon: usize,
    pub origin: Quarter,
    pub target: Quarter,
    pub grid: Vec<f64>,
    /// Point forecasts, not rearranged.
    pub q: Vec<f64>,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginFailure {
    pub horizon: usize,
    pub origin: Quarter,
    pub model: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OosReport {
    pub records: Vec<ForecastRecord>,
    pub failures: Vec<OriginFailure>,
    pub table: ScoreTable,
}

/// Chain seed shared by every model at one (horizon, origin).
pub fn origin_seed(seed: u64, horizon: usize, origin_row: usize) -> u64 {
    child_seed(seed, StreamTag::Origin, origin_row * 64 + horizon)
}

/// Re-estimates every model on the expanding window ending at each origin and
/// scores its direct forecasts of the holdout targets.
///
/// An origin whose chain fails for any model is dropped for all models and
/// listed in the report's failures.
pub fn recursive_oos(
    data: &PanelDataset,
    models: &[NamedModel],
    first_holdout: Quarter,
    settings: &OosSettings,
) -> Result<OosReport> {
    if !models.iter().any(|m| m.name == settings.benchmark) {
        return Err(Error::contract(format!(
            "benchmark model `{}` is not among the models",
            settings.benchmark
        )));
    }
    let hold = data
        .date_index(first_holdout)
        .filter(|&k| k > 0)
        .ok_or_else(|| Error::Range(format!("first holdout {first_holdout} is not inside the panel")))?;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for &h in &settings.horizons {
        let mut origins: Vec<usize> = (hold..data.num_periods())
            .filter(|&tau| tau >= h + 2)
            .map(|tau| tau - h)
            .collect();
        if let Some(n) = settings.max_origins {
            origins.truncate(n);
        }
        if origins.is_empty() {
            return Err(Error::InsufficientData(format!("no usable forecast origins at horizon {h}")));
        }
        let results: Vec<Result<std::result::Result<Vec<ForecastRecord>, OriginFailure>>> = origins
            .par_iter()
            .map(|&o| evaluate_origin(data, models, h, o, settings))
            .collect();
        for r in results {
            match r? {
                Ok(mut recs) => records.append(&mut recs),
                Err(f) => {
                    warn!("origin {} (h={}) skipped: {} failed: {}", f.origin, f.horizon, f.model, f.message);
                    failures.push(f);
                }
            }
        }
    }
    let table = ScoreTable::from_records(&records, &settings.benchmark, &settings.qs_grid, &settings.schemes)?;
    Ok(OosReport {
        records,
        failures,
        table,
    })
}

fn evaluate_origin(
    data: &PanelDataset,
    models: &[NamedModel],
    h: usize,
    o: usize,
    settings: &OosSettings,
) -> Result<std::result::Result<Vec<ForecastRecord>, OriginFailure>> {
    let train = data.slice(0, o + 1);
    let seed = origin_seed(settings.seed, h, o);
    let origin = data.dates()[o];
    info!("origin {origin} (h={h})");
    let mut out = Vec::new();
    for m in models {
        let mut spec = m.spec.clone();
        spec.covariates.horizon = h;
        let designs = build_panel_designs(&train, spec.covariates)?;
        let store = match run_chain(&designs, &spec, seed) {
            Ok(s) => s,
            Err(e @ (Error::Chain { .. } | Error::Numerical(_))) => {
                return Ok(Err(OriginFailure {
                    horizon: h,
                    origin,
                    model: m.name.clone(),
                    message: e.to_string(),
                }))
            }
            Err(e) => return Err(e),
        };
        let pd = forecast_origin(&store, data, o, child_seed(seed, StreamTag::Forecast, 0))?;
        let points = pd.point(settings.point);
        for (i, country) in pd.countries.iter().enumerate() {
            let y = pd.realized[i].expect("holdout target inside the panel");
            out.push(ForecastRecord {
                model: m.name.clone(),
                country: country.clone(),
                horizon: h,
                origin,
                target: pd.target,
                grid: pd.quantiles.clone(),
                q: points[i].clone(),
                y,
            });
        }
    }
    Ok(Ok(out))
}

/// Label of the cross-country average rows.
pub const ALL_COUNTRIES: &str = "ALL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub country: String,
    pub model: String,
    pub horizon: usize,
    pub metric: String,
    pub value: f64,
    pub ratio: f64,
}

/// Mean scores over the holdout and their ratios to the benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub benchmark: String,
    pub rows: Vec<ScoreRow>,
}

pub fn qs_metric(p: f64) -> String {
    format!("qs_{p:.2}")
}

pub fn crps_metric(scheme: WeightScheme) -> String {
    format!("crps_{scheme}")
}

impl ScoreTable {
    /// Aggregates scored forecasts. QS uses the raw forecasts; qw-CRPS uses
    /// the rearranged ones. Records are summed in origin order so the result
    /// does not depend on the order of `records`.
    pub fn from_records(
        records: &[ForecastRecord],
        benchmark: &str,
        qs_grid: &[f64],
        schemes: &[WeightScheme],
    ) -> Result<Self> {
        if !records.iter().any(|r| r.model == benchmark) {
            return Err(Error::contract(format!("no forecasts from benchmark `{benchmark}`")));
        }
        let mut groups: BTreeMap<(usize, String, String), Vec<&ForecastRecord>> = BTreeMap::new();
        for r in records {
            groups
                .entry((r.horizon, r.model.clone(), r.country.clone()))
                .or_default()
                .push(r);
        }
        // (horizon, model, metric) -> country -> mean
        let mut values: BTreeMap<(usize, String, String), BTreeMap<String, f64>> = BTreeMap::new();
        for ((h, model, country), mut recs) in groups {
            recs.sort_by(|a, b| a.origin.cmp(&b.origin).then(a.target.cmp(&b.target)));
            let mut sums: Vec<(String, f64)> = qs_grid
                .iter()
                .map(|&p| (qs_metric(p), 0.0))
                .chain(schemes.iter().map(|&s| (crps_metric(s), 0.0)))
                .collect();
            for r in &recs {
                let fc = QuantileForecast::new(r.grid.clone(), r.q.clone())?;
                let sorted = fc.rearranged();
                for (k, &p) in qs_grid.iter().enumerate() {
                    sums[k].1 += fc.qs(p, r.y).ok_or_else(|| {
                        Error::contract(format!("model `{model}` has no forecast for quantile {p}"))
                    })?;
                }
                for (k, &s) in schemes.iter().enumerate() {
                    sums[qs_grid.len() + k].1 += sorted.crps(r.y, s);
                }
            }
            for (metric, sum) in sums {
                values
                    .entry((h, model.clone(), metric))
                    .or_default()
                    .insert(country.clone(), sum / recs.len() as f64);
            }
        }
        for by_country in values.values_mut() {
            let avg = by_country.values().sum::<f64>() / by_country.len() as f64;
            by_country.insert(ALL_COUNTRIES.to_string(), avg);
        }
        let mut rows = Vec::new();
        for ((h, model, metric), by_country) in &values {
            let bench = values.get(&(*h, benchmark.to_string(), metric.clone()));
            for (country, &value) in by_country {
                let b = bench.and_then(|b| b.get(country)).copied().unwrap_or(f64::NAN);
                let ratio = if value == b { 1.0 } else { value / b };
                rows.push(ScoreRow {
                    country: country.clone(),
                    model: model.clone(),
                    horizon: *h,
                    metric: metric.clone(),
                    value,
                    ratio,
                });
            }
        }
        Ok(ScoreTable {
            benchmark: benchmark.to_string(),
            rows,
        })
    }

    pub fn ratio(&self, country: &str, model: &str, horizon: usize, metric: &str) -> Option<f64> {
        self.find(country, model, horizon, metric).map(|r| r.ratio)
    }

    pub fn value(&self, country: &str, model: &str, horizon: usize, metric: &str) -> Option<f64> {
        self.find(country, model, horizon, metric).map(|r| r.value)
    }

    fn find(&self, country: &str, model: &str, horizon: usize, metric: &str) -> Option<&ScoreRow> {
        self.rows
            .iter()
            .find(|r| r.country == country && r.model == model && r.horizon == horizon && r.metric == metric)
    }

    fn distinct<'a>(&'a self, key: impl Fn(&'a ScoreRow) -> &'a str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            let k = key(r);
            if !out.iter().any(|o| o == k) {
                out.push(k.to_string());
            }
        }
        out
    }

    pub fn models(&self) -> Vec<String> {
        self.distinct(|r| &r.model)
    }

    pub fn countries(&self) -> Vec<String> {
        self.distinct(|r| &r.country)
    }

    pub fn horizons(&self) -> Vec<usize> {
        let mut h: Vec<usize> = self.rows.iter().map(|r| r.horizon).collect();
        h.sort_unstable();
        h.dedup();
        h
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, benchmark: &str) -> Result<Self> {
        let mut rd = csv::Reader::from_path(path)?;
        let rows = rd.deserialize().collect::<std::result::Result<Vec<ScoreRow>, _>>()?;
        Ok(ScoreTable {
            benchmark: benchmark.to_string(),
            rows,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::{OmegaMode, DEFAULT_QUANTILES};
    use crate::panel::{CovariateKind, CovariateSpec};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    #[test]
    fn pinball_examples() {
        assert_eq!(quantile_score(1.3, 1.3, 0.3), 0.0);
        assert!((quantile_score(0.0, 2.0, 0.5) - 1.0).abs() < 1e-15);
        assert!((quantile_score(1.0, 0.0, 0.1) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn weights_at_the_median() {
        let w: Vec<f64> = WeightScheme::ALL.iter().map(|s| s.weight(0.5)).collect();
        assert_eq!(w, vec![1.0, 0.0, 0.25, 0.25, 0.25]);
        for s in WeightScheme::ALL {
            assert_eq!(s.to_string().parse::<WeightScheme>().unwrap(), s);
        }
    }

    #[test]
    fn crps_examples() {
        assert_eq!(qw_crps(&[0.5], &[0.7], 0.7, WeightScheme::None).unwrap(), 0.0);
        // two-point grid by hand: both pinball losses are 0.1
        let v = qw_crps(&[0.1, 0.9], &[-1.0, 1.0], 0.0, WeightScheme::None).unwrap();
        assert!((v - 0.1).abs() < 1e-15);
        let v = qw_crps(&[0.1, 0.9], &[-1.0, 1.0], 0.0, WeightScheme::Left).unwrap();
        assert!((v - (0.81 * 0.1 + 0.01 * 0.1) / 2.0).abs() < 1e-15);
        assert!(matches!(
            qw_crps(&[0.9, 0.1], &[1.0, -1.0], 0.0, WeightScheme::None),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            QuantileForecast::from_pairs(vec![(0.5, 0.0), (0.5, 1.0)]),
            Err(Error::Contract(_))
        ));
    }

    fn grid_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::btree_set(1u32..1000, 1..9)
            .prop_map(|s| s.into_iter().map(|k| k as f64 / 1000.0).collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn rearrangement_never_worsens(
            (grid, q) in grid_strategy().prop_flat_map(|g| {
                let n = g.len();
                (Just(g), prop::collection::vec(-5.0f64..5.0, n))
            }),
            y in -6.0f64..6.0,
        ) {
            let fc = QuantileForecast::new(grid, q).unwrap();
            let r = fc.rearranged();
            prop_assert!(r.is_monotone());
            prop_assert!(r.crps(y, WeightScheme::None) <= fc.crps(y, WeightScheme::None) + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn pinball_is_nonnegative_and_zero_only_at_the_realization(q in -10.0f64..10.0, y in -10.0f64..10.0, p in 0.01f64..0.99) {
            let s = quantile_score(q, y, p);
            prop_assert!(s >= 0.0);
            prop_assert_eq!(s == 0.0, q == y);
        }

        #[test]
        fn left_plus_right_is_one_minus_twice_center(u in 0.0f64..1.0) {
            let lhs = WeightScheme::Left.weight(u) + WeightScheme::Right.weight(u);
            prop_assert!((lhs - (1.0 - 2.0 * WeightScheme::Center.weight(u))).abs() < 1e-12);
        }

        #[test]
        fn grid_order_does_not_matter(q in prop::collection::vec(-3.0f64..3.0, 7), y in -4.0f64..4.0) {
            let pairs: Vec<(f64, f64)> = DEFAULT_QUANTILES.iter().copied().zip(q).collect();
            let mut rev = pairs.clone();
            rev.reverse();
            let a = QuantileForecast::from_pairs(pairs).unwrap().rearranged();
            let b = QuantileForecast::from_pairs(rev).unwrap().rearranged();
            prop_assert_eq!(a.crps(y, WeightScheme::None), b.crps(y, WeightScheme::None));
        }
    }

    fn record(model: &str, country: &str, origin: i64, q: Vec<f64>, y: f64) -> ForecastRecord {
        let o = Quarter::new(2010, 1).unwrap().offset(origin);
        ForecastRecord {
            model: model.into(),
            country: country.into(),
            horizon: 1,
            origin: o,
            target: o.next(),
            grid: vec![0.1, 0.25, 0.5, 0.75, 0.9],
            q,
            y,
        }
    }

    fn records() -> Vec<ForecastRecord> {
        let mut out = Vec::new();
        for o in 0..6 {
            for (c, model) in [("AA", "bench"), ("BB", "bench"), ("AA", "cand"), ("BB", "cand")] {
                let s = o as f64 * 0.37 + if model == "cand" { 0.2 } else { 0.0 };
                let q = vec![-1.3 + s, -0.6, 0.1 * s, 0.7, 1.2 - s];
                out.push(record(model, c, o, q, (o as f64 * 1.7).sin()));
            }
        }
        out
    }

    #[test]
    fn table_is_permutation_invariant() {
        let recs = records();
        let a = ScoreTable::from_records(&recs, "bench", &QS_GRID, &WeightScheme::ALL).unwrap();
        let mut shuffled = recs.clone();
        shuffled.reverse();
        shuffled.swap(1, 7);
        let b = ScoreTable::from_records(&shuffled, "bench", &QS_GRID, &WeightScheme::ALL).unwrap();
        assert_eq!(a, b);
        for r in a.rows.iter().filter(|r| r.model == "bench") {
            assert_eq!(r.ratio, 1.0);
        }
        assert!(a.rows.iter().all(|r| r.value >= 0.0));
    }

    #[test]
    fn table_values_match_direct_means() {
        let recs = records();
        let t = ScoreTable::from_records(&recs, "bench", &[0.1], &[WeightScheme::Left]).unwrap();
        let aa: Vec<&ForecastRecord> = recs.iter().filter(|r| r.model == "cand" && r.country == "AA").collect();
        let qs = aa.iter().map(|r| quantile_score(r.q[0], r.y, 0.1)).sum::<f64>() / aa.len() as f64;
        assert!((t.value("AA", "cand", 1, "qs_0.10").unwrap() - qs).abs() < 1e-14);
        let crps = aa
            .iter()
            .map(|r| {
                let mut q = r.q.clone();
                q.sort_by(f64::total_cmp);
                qw_crps(&r.grid, &q, r.y, WeightScheme::Left).unwrap()
            })
            .sum::<f64>()
            / aa.len() as f64;
        assert!((t.value("AA", "cand", 1, "crps_left").unwrap() - crps).abs() < 1e-14);
        let bench = t.value("AA", "bench", 1, "crps_left").unwrap();
        assert!((t.ratio("AA", "cand", 1, "crps_left").unwrap() - crps / bench).abs() < 1e-14);
        assert!(matches!(
            ScoreTable::from_records(&recs, "other", &QS_GRID, &WeightScheme::ALL),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn table_csv_round_trips() {
        let t = ScoreTable::from_records(&records(), "bench", &QS_GRID, &WeightScheme::ALL).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        t.write_csv(&path).unwrap();
        assert_eq!(ScoreTable::read_csv(&path, "bench").unwrap(), t);
    }

    fn toy_panel(t: usize) -> PanelDataset {
        let start = Quarter::new(1990, 1).unwrap();
        PanelDataset::new(
            vec!["AA".into(), "BB".into()],
            (0..t).map(|k| start.offset(k as i64)).collect(),
            DMatrix::from_fn(t, 2, |r, c| ((r * 13 + c * 5) % 17) as f64 * 0.25 - 2.0),
            DMatrix::from_fn(t, 2, |r, c| ((r * 3 + c) % 5) as f64 * 0.2),
        )
        .unwrap()
    }

    fn small_spec(omega: OmegaMode, factor: bool) -> ModelSpec {
        let mut s = ModelSpec {
            covariates: CovariateSpec::new(CovariateKind::Ciss, 1),
            omega_mode: omega,
            factor_on: factor,
            quantiles: vec![0.1, 0.5, 0.9],
            sweeps: 20,
            burn_in: 10,
            thin: 2,
            ..ModelSpec::default()
        };
        s.hyper.tree.num_trees = 5;
        s
    }

    #[test]
    fn nested_forecasts_are_deterministic_functions_of_the_draws() {
        let data = toy_panel(40);
        let x = [0.3, -0.2];
        for omega in [OmegaMode::Zero, OmegaMode::One] {
            let spec = small_spec(omega, false);
            let designs = build_panel_designs(&data, spec.covariates).unwrap();
            let store = run_chain(&designs, &spec, 3).unwrap();
            let mut rng = stream(1, StreamTag::Forecast, 0, 0);
            let q = predict_quantile(&store, 1, 0.5, &x, &mut rng).unwrap();
            let eq = store.equation(1, 1);
            for d in 0..store.num_draws {
                let expect = match omega {
                    OmegaMode::Zero => store.beta(1, 1, d)[0] * x[0] + store.beta(1, 1, d)[1] * x[1],
                    _ => eq.forests[d].predict(&x),
                } + eq.alpha[d]
                    + store.own_mean(1);
                assert!((q[d] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn prediction_errors() {
        let data = toy_panel(40);
        let spec = small_spec(OmegaMode::Estimated, true);
        let designs = build_panel_designs(&data, spec.covariates).unwrap();
        let store = run_chain(&designs, &spec, 3).unwrap();
        let mut rng = stream(1, StreamTag::Forecast, 0, 0);
        assert!(matches!(predict_quantile(&store, 0, 0.5, &[1.0], &mut rng), Err(Error::Domain(_))));
        assert!(matches!(predict_quantile(&store, 0, 0.3, &[1.0, 0.0], &mut rng), Err(Error::Domain(_))));
        let pd = forecast_origin(&store, &data, 39, 5).unwrap();
        assert_eq!(pd.realized, vec![None, None]);
        assert_eq!(pd.draws[0].len(), 3);
        assert_eq!(pd.draws[0][0].len(), store.num_draws);
        assert_eq!(pd, forecast_origin(&store, &data, 39, 5).unwrap());
    }

    #[test]
    fn self_comparison_gives_unit_ratios() {
        let data = toy_panel(30);
        let bench = ModelSpec {
            sweeps: 12,
            burn_in: 6,
            thin: 2,
            quantiles: vec![0.1, 0.25, 0.5, 0.75, 0.9],
            ..ModelSpec::benchmark(1)
        };
        let models = vec![
            NamedModel { name: "bench".into(), spec: bench.clone() },
            NamedModel { name: "copy".into(), spec: bench },
        ];
        let settings = OosSettings {
            horizons: vec![1],
            max_origins: Some(3),
            benchmark: "bench".into(),
            seed: 9,
            ..OosSettings::default()
        };
        let rep = recursive_oos(&data, &models, data.dates()[26], &settings).unwrap();
        assert!(rep.failures.is_empty());
        assert_eq!(rep.records.len(), 2 * 2 * 3);
        assert!(rep.table.rows.iter().all(|r| r.ratio == 1.0));
        let missing = OosSettings { benchmark: "nope".into(), ..settings };
        assert!(matches!(
            recursive_oos(&data, &models, data.dates()[26], &missing),
            Err(Error::Contract(_))
        ));
    }
}
