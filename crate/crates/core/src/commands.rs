//! The six CLI commands as library functions.
//!
//! Every command is a pure function of the config, its input files and the
//! seed, and returns the paths it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::forecast::{crps_metric, forecast_origin, recursive_oos, OosReport, ALL_COUNTRIES};
use crate::gibbs::{run_chain, DrawStore};
use crate::panel::{build_panel_designs, fmt_f64, load_panel, PanelDataset};
use crate::plot::{FanChart, Heatmap};
use crate::rng::{child_seed, StreamTag};
use crate::scenario::{girf_factor_shock, girf_fci_shock, variance_decomposition, GirfResult};
use crate::store::{load_store, save_store};

fn with_pool<T: Send>(cfg: &RunConfig, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?
        .install(f)
}

fn load_data(cfg: &RunConfig) -> Result<PanelDataset> {
    load_panel(&cfg.data.panel, &cfg.data.schema)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Path of the truth file written next to a simulated panel.
pub fn truth_path(panel: &Path) -> PathBuf {
    let stem = panel.file_stem().and_then(|s| s.to_str()).unwrap_or("panel");
    panel.with_file_name(format!("{stem}.truth.json"))
}

/// Draws a synthetic panel into `data.panel` plus its truth file.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let spec = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| Error::Config("missing [simulate] section".into()))?;
    let (panel, truth) = spec.generate(cfg.seed)?;
    if let Some(parent) = cfg.data.panel.parent() {
        ensure_dir(parent)?;
    }
    panel.write_csv(&cfg.data.panel)?;
    let tp = truth_path(&cfg.data.panel);
    truth.write_json(&tp)?;
    Ok(vec![cfg.data.panel.clone(), tp])
}

fn selected<'a>(cfg: &'a RunConfig, only: Option<&str>) -> Result<Vec<&'a crate::config::ModelConfig>> {
    match only {
        Some(name) => Ok(vec![cfg.model(name)?]),
        None if cfg.models.is_empty() => Err(Error::Config("no [[models]] configured".into())),
        None => Ok(cfg.models.iter().collect()),
    }
}

/// Estimates each configured model (or only `only`) on the full panel.
pub fn cmd_estimate(cfg: &RunConfig, only: Option<&str>) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    ensure_dir(&cfg.output_dir)?;
    let resolved = cfg.output_dir.join("config.resolved.toml");
    fs::write(&resolved, cfg.to_toml()?)?;
    let mut out = vec![resolved];
    for m in selected(cfg, only)? {
        let spec = cfg.model_spec(m);
        let designs = build_panel_designs(&data, spec.covariates)?;
        info!("estimating {} ({})", m.name, spec.label());
        let store = with_pool(cfg, || run_chain(&designs, &spec, cfg.seed))?;
        let dir = cfg.store_dir(&m.name);
        save_store(&store, &dir)?;
        out.push(dir);
    }
    Ok(out)
}

/// Loads the store of `name` and checks it was estimated with the current
/// configuration on `data`.
pub fn open_store(cfg: &RunConfig, name: &str, data: &PanelDataset) -> Result<DrawStore> {
    let spec = cfg.model_spec(cfg.model(name)?);
    let store = load_store(&cfg.store_dir(name))?;
    if store.spec.fingerprint() != spec.fingerprint() || store.seed != cfg.seed {
        return Err(Error::contract(format!(
            "store `{name}` was estimated with a different model spec or seed; rerun estimate"
        )));
    }
    if store.num_periods + spec.covariates.horizon != data.num_periods()
        || store.target_dates.last() != data.dates().last()
    {
        return Err(Error::contract(format!("store `{name}` was estimated on a different panel")));
    }
    Ok(store)
}

/// Quantile forecasts from the last panel quarter.
pub fn cmd_forecast(cfg: &RunConfig, only: Option<&str>) -> Result<Vec<PathBuf>> {
    let data = load_data(cfg)?;
    let dir = cfg.output_dir.join("forecasts");
    ensure_dir(&dir)?;
    let mut out = Vec::new();
    for m in selected(cfg, only)? {
        let store = open_store(cfg, &m.name, &data)?;
        let pd = forecast_origin(&store, &data, data.num_periods() - 1, child_seed(cfg.seed, StreamTag::Forecast, 0))?;
        let path = dir.join(format!("{}.csv", m.name));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["country", "origin", "target", "quantile", "mean", "median", "q16", "q84"])?;
        for (i, country) in pd.countries.iter().enumerate() {
            for (j, p) in pd.quantiles.iter().enumerate() {
                let d = &pd.draws[i][j];
                w.write_record([
                    country.clone(),
                    pd.origin.to_string(),
                    pd.target.to_string(),
                    fmt_f64(*p),
                    fmt_f64(crate::diagnostics::mean(d)),
                    fmt_f64(crate::diagnostics::quantile(d, 0.5)),
                    fmt_f64(crate::diagnostics::quantile(d, 0.16)),
                    fmt_f64(crate::diagnostics::quantile(d, 0.84)),
                ])?;
            }
        }
        w.flush()?;
        out.push(path);
    }
    Ok(out)
}

/// Recursive out-of-sample evaluation with score tables and ratio heatmaps.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<(OosReport, Vec<PathBuf>)> {
    cfg.validate()?;
    let first = cfg
        .data
        .first_holdout
        .ok_or_else(|| Error::Config("evaluate needs data.first_holdout".into()))?;
    let (models, settings) = cfg.oos()?;
    let data = load_data(cfg)?;
    let report = with_pool(cfg, || recursive_oos(&data, &models, first, &settings))?;
    let dir = cfg.output_dir.join("evaluate");
    ensure_dir(&dir)?;
    let mut out = Vec::new();

    let scores = dir.join("scores.csv");
    report.table.write_csv(&scores)?;
    out.push(scores);

    let summary = dir.join("scores.json");
    let json = serde_json::json!({
        "benchmark": settings.benchmark,
        "settings": settings,
        "failures": report.failures,
        "rows": report.table.rows,
    });
    fs::write(&summary, serde_json::to_string_pretty(&json)?)?;
    out.push(summary);

    let records = dir.join("records.csv");
    let mut w = csv::Writer::from_path(&records)?;
    w.write_record(["model", "country", "horizon", "origin", "target", "quantile", "forecast", "realized"])?;
    for r in &report.records {
        for (p, q) in r.grid.iter().zip(&r.q) {
            w.write_record([
                r.model.clone(),
                r.country.clone(),
                r.horizon.to_string(),
                r.origin.to_string(),
                r.target.to_string(),
                fmt_f64(*p),
                fmt_f64(*q),
                fmt_f64(r.y),
            ])?;
        }
    }
    w.flush()?;
    out.push(records);

    let model_names = report.table.models();
    let mut countries: Vec<String> = report
        .table
        .countries()
        .into_iter()
        .filter(|c| c != ALL_COUNTRIES)
        .collect();
    countries.push(ALL_COUNTRIES.to_string());
    for &scheme in &cfg.forecast.heatmaps {
        let metric = crps_metric(scheme);
        for h in report.table.horizons() {
            let values: Vec<f64> = countries
                .iter()
                .flat_map(|c| {
                    model_names
                        .iter()
                        .map(|m| report.table.ratio(c, m, h, &metric).unwrap_or(f64::NAN))
                        .collect::<Vec<_>>()
                })
                .collect();
            let title = format!("qw-CRPS ratio ({scheme}), h={h}, vs {}", settings.benchmark);
            let path = dir.join(format!("heatmap_{scheme}_h{h}.svg"));
            Heatmap {
                title: &title,
                rows: &countries,
                cols: &model_names,
                values: &values,
                center: 1.0,
                span: 0.25,
                lower_is_good: true,
            }
            .write(&path)?;
            out.push(path);
        }
    }
    Ok((report, out))
}

fn write_fans(res: &GirfResult, dir: &Path, horizons: usize, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut keys: Vec<(String, f64)> = Vec::new();
    for b in &res.bands {
        if !keys.iter().any(|(c, p)| c == &b.country && *p == b.quantile) {
            keys.push((b.country.clone(), b.quantile));
        }
    }
    for (country, p) in keys {
        let pick = |f: fn(&crate::scenario::GirfBand) -> f64| -> Vec<f64> {
            (0..horizons)
                .map(|k| {
                    res.bands
                        .iter()
                        .find(|b| b.country == country && b.quantile == p && b.horizon == k)
                        .map_or(f64::NAN, f)
                })
                .collect()
        };
        let (q16, q50, q84) = (pick(|b| b.q16), pick(|b| b.q50), pick(|b| b.q84));
        let title = format!("factor shock: {country}, p={p}");
        let path = dir.join(format!("factor_{country}_p{p}.svg"));
        FanChart {
            title: &title,
            q16: &q16,
            q50: &q50,
            q84: &q84,
        }
        .write(&path)?;
        out.push(path);
    }
    Ok(())
}

fn write_fci_heatmaps(res: &GirfResult, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut countries: Vec<String> = Vec::new();
    let mut periods: Vec<String> = Vec::new();
    let mut quantiles: Vec<f64> = Vec::new();
    let mut sizes: Vec<f64> = Vec::new();
    for b in &res.bands {
        if !countries.contains(&b.country) {
            countries.push(b.country.clone());
        }
        if !periods.contains(&b.period) {
            periods.push(b.period.clone());
        }
        if !quantiles.contains(&b.quantile) {
            quantiles.push(b.quantile);
        }
        if !sizes.contains(&b.size) {
            sizes.push(b.size);
        }
    }
    let rows: Vec<String> = quantiles.iter().map(|p| format!("p={p}")).collect();
    let cols: Vec<String> = sizes.iter().map(|k| format!("{k:+} sd")).collect();
    for country in &countries {
        for period in &periods {
            let values: Vec<f64> = quantiles
                .iter()
                .flat_map(|&p| {
                    sizes.iter().map(move |&k| {
                        res.bands
                            .iter()
                            .find(|b| &b.country == country && &b.period == period && b.quantile == p && b.size == k)
                            .map_or(f64::NAN, |b| b.q50)
                    })
                })
                .collect();
            let span = values.iter().filter(|v| v.is_finite()).fold(1e-9f64, |a, v| a.max(v.abs()));
            let title = format!("US FCI shock, cumulative response: {country}, {period}");
            let path = dir.join(format!("fci_{country}_{period}.svg"));
            Heatmap {
                title: &title,
                rows: &rows,
                cols: &cols,
                values: &values,
                center: 0.0,
                span,
                lower_is_good: false,
            }
            .write(&path)?;
            out.push(path);
        }
    }
    Ok(())
}

/// Factor-shock and US FCI-shock GIRFs of the configured model.
pub fn cmd_girf(cfg: &RunConfig, only: Option<&str>) -> Result<Vec<PathBuf>> {
    let model = match only {
        Some(name) => cfg.model(name)?,
        None => cfg.girf_model()?,
    };
    let data = load_data(cfg)?;
    let store = open_store(cfg, &model.name, &data)?;
    let g = &cfg.girf;
    let dir = cfg.output_dir.join("girf").join(&model.name);
    ensure_dir(&dir)?;
    let mut out = Vec::new();
    if g.factor {
        let res = with_pool(cfg, || {
            girf_factor_shock(&store, &data, g.factor_shock, &cfg.girf_options(g.horizons))
        })?;
        let path = dir.join("factor.csv");
        res.write_csv(&path)?;
        out.push(path);
        write_fans(&res, &dir, g.horizons, &mut out)?;
    }
    if g.fci {
        let res = with_pool(cfg, || {
            girf_fci_shock(
                &store,
                &data,
                &cfg.data.us_country,
                &g.fci_sizes,
                &g.periods,
                &cfg.girf_options(g.fci_horizons),
            )
        })?;
        let path = dir.join("fci.csv");
        res.write_csv(&path)?;
        out.push(path);
        write_fci_heatmaps(&res, &dir, &mut out)?;
    }
    Ok(out)
}

/// Variance decompositions of every factor model (or only `only`).
pub fn cmd_vardecomp(cfg: &RunConfig, only: Option<&str>) -> Result<Vec<PathBuf>> {
    let data = load_data(cfg)?;
    let models: Vec<_> = match only {
        Some(name) => vec![cfg.model(name)?],
        None => cfg.models.iter().filter(|m| m.factor).collect(),
    };
    if models.is_empty() {
        return Err(Error::contract("no model with a factor to decompose"));
    }
    let dir = cfg.output_dir.join("vardecomp");
    ensure_dir(&dir)?;
    let mut out = Vec::new();
    for m in models {
        let store = open_store(cfg, &m.name, &data)?;
        let vd = variance_decomposition(&store)?;
        let a = dir.join(format!("{}.csv", m.name));
        vd.write_csv(&a)?;
        let b = dir.join(format!("{}_time.csv", m.name));
        vd.write_time_csv(&b)?;
        out.push(a);
        out.push(b);
    }
    Ok(out)
}
