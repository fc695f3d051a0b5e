//! Country panel ingestion and direct-forecast design matrices.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A calendar quarter, e.g. `1999Q3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Quarter {
    year: i32,
    quarter: u8,
}

impl Quarter {
    pub fn new(year: i32, quarter: u8) -> Result<Self> {
        if !(1..=4).contains(&quarter) {
            return Err(Error::Schema(format!("quarter {quarter} outside 1..=4")));
        }
        Ok(Quarter { year, quarter })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn quarter(self) -> u8 {
        self.quarter
    }

    fn ordinal(self) -> i64 {
        self.year as i64 * 4 + (self.quarter as i64 - 1)
    }

    fn from_ordinal(ord: i64) -> Self {
        Quarter {
            year: ord.div_euclid(4) as i32,
            quarter: (ord.rem_euclid(4) + 1) as u8,
        }
    }

    pub fn offset(self, quarters: i64) -> Self {
        Self::from_ordinal(self.ordinal() + quarters)
    }

    pub fn next(self) -> Self {
        self.offset(1)
    }

    /// Number of quarters from `self` to `other`.
    pub fn distance(self, other: Quarter) -> i64 {
        other.ordinal() - self.ordinal()
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.year, self.quarter)
    }
}

impl FromStr for Quarter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (y, q) = s
            .split_once(['Q', 'q'])
            .ok_or_else(|| Error::Schema(format!("bad quarterly date `{s}` (expected YYYYQn)")))?;
        let year = y
            .parse::<i32>()
            .map_err(|_| Error::Schema(format!("bad year in `{s}`")))?;
        let quarter = q
            .parse::<u8>()
            .map_err(|_| Error::Schema(format!("bad quarter in `{s}`")))?;
        Quarter::new(year, quarter)
    }
}

impl TryFrom<String> for Quarter {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Quarter> for String {
    fn from(q: Quarter) -> String {
        q.to_string()
    }
}

/// Balanced quarterly panel of GDP growth and financial conditions.
///
/// `gdp` and `fci` are `T x N` with rows indexed by `dates` and columns by
/// `countries`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    countries: Vec<String>,
    dates: Vec<Quarter>,
    gdp: DMatrix<f64>,
    fci: DMatrix<f64>,
}

impl PanelDataset {
    pub fn new(
        countries: Vec<String>,
        dates: Vec<Quarter>,
        gdp: DMatrix<f64>,
        fci: DMatrix<f64>,
    ) -> Result<Self> {
        let (t, n) = (dates.len(), countries.len());
        if gdp.shape() != (t, n) || fci.shape() != (t, n) {
            return Err(Error::Schema(format!(
                "panel shape mismatch: dates={t}, countries={n}, gdp={:?}, fci={:?}",
                gdp.shape(),
                fci.shape()
            )));
        }
        for w in dates.windows(2) {
            if w[0].next() != w[1] {
                return Err(Error::Schema(format!("dates not consecutive at {}", w[0])));
            }
        }
        let unique: BTreeSet<&String> = countries.iter().collect();
        if unique.len() != n {
            return Err(Error::Schema("duplicate country codes".into()));
        }
        for (r, c) in (0..t).flat_map(|r| (0..n).map(move |c| (r, c))) {
            if !gdp[(r, c)].is_finite() || !fci[(r, c)].is_finite() {
                return Err(Error::MissingData {
                    country: countries[c].clone(),
                    date: dates[r].to_string(),
                });
            }
        }
        Ok(PanelDataset {
            countries,
            dates,
            gdp,
            fci,
        })
    }

    pub fn countries(&self) -> &[String] {
        &self.countries
    }

    pub fn dates(&self) -> &[Quarter] {
        &self.dates
    }

    pub fn gdp(&self) -> &DMatrix<f64> {
        &self.gdp
    }

    pub fn fci(&self) -> &DMatrix<f64> {
        &self.fci
    }

    pub fn num_periods(&self) -> usize {
        self.dates.len()
    }

    pub fn num_countries(&self) -> usize {
        self.countries.len()
    }

    pub fn country_index(&self, code: &str) -> Result<usize> {
        self.countries
            .iter()
            .position(|c| c == code)
            .ok_or_else(|| Error::Schema(format!("unknown country `{code}`")))
    }

    pub fn date_index(&self, date: Quarter) -> Option<usize> {
        let first = *self.dates.first()?;
        let d = first.distance(date);
        (d >= 0 && (d as usize) < self.dates.len()).then_some(d as usize)
    }

    /// Rows `[start, end)` of the panel.
    pub fn slice(&self, start: usize, end: usize) -> PanelDataset {
        let rows = end - start;
        PanelDataset {
            countries: self.countries.clone(),
            dates: self.dates[start..end].to_vec(),
            gdp: self.gdp.rows(start, rows).into_owned(),
            fci: self.fci.rows(start, rows).into_owned(),
        }
    }

    /// Training mean of GDP growth per country.
    pub fn gdp_means(&self) -> Vec<f64> {
        (0..self.num_countries())
            .map(|c| self.gdp.column(c).mean())
            .collect()
    }

    /// Writes the long-format CSV read by [`load_panel`].
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["country", "date", "variable", "value"])?;
        for (c, code) in self.countries.iter().enumerate() {
            for (name, m) in [("gdp", &self.gdp), ("fci", &self.fci)] {
                for (r, d) in self.dates.iter().enumerate() {
                    w.write_record([code.as_str(), &d.to_string(), name, &fmt_f64(m[(r, c)])])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest round-tripping float rendering.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// Column mapping for the long-format panel CSV.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct PanelSchema {
    pub country_column: String,
    pub date_column: String,
    pub variable_column: String,
    pub value_column: String,
    pub gdp_variable: String,
    pub fci_variable: String,
    /// Fixed country ordering; lexicographic when absent.
    pub countries: Option<Vec<String>>,
}

impl Default for PanelSchema {
    fn default() -> Self {
        PanelSchema {
            country_column: "country".into(),
            date_column: "date".into(),
            variable_column: "variable".into(),
            value_column: "value".into(),
            gdp_variable: "gdp".into(),
            fci_variable: "fci".into(),
            countries: None,
        }
    }
}

/// Reads a country manifest: one code per line, `#` comments allowed.
pub fn load_manifest(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

type SeriesMap = BTreeMap<(String, bool), BTreeMap<Quarter, f64>>;

/// Loads a long-format panel CSV and aligns it to the common span.
///
/// Leading and trailing quarters where any series is missing are trimmed;
/// a gap strictly inside the common span is an error.
pub fn load_panel(path: &Path, schema: &PanelSchema) -> Result<PanelDataset> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let (ci, di, vi, xi) = (
        col(&schema.country_column)?,
        col(&schema.date_column)?,
        col(&schema.variable_column)?,
        col(&schema.value_column)?,
    );

    let mut series: SeriesMap = BTreeMap::new();
    let mut seen_order: Vec<String> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let country = rec.get(ci).unwrap_or("").trim().to_string();
        let date: Quarter = rec.get(di).unwrap_or("").parse()?;
        let var = rec.get(vi).unwrap_or("").trim();
        let is_gdp = if var == schema.gdp_variable {
            true
        } else if var == schema.fci_variable {
            false
        } else {
            return Err(Error::Schema(format!("unknown variable `{var}`")));
        };
        let raw = rec.get(xi).unwrap_or("").trim();
        let value = if raw.is_empty() || raw.eq_ignore_ascii_case("na") {
            f64::NAN
        } else {
            raw.parse::<f64>()
                .map_err(|_| Error::Schema(format!("bad value `{raw}`")))?
        };
        if !seen_order.contains(&country) {
            seen_order.push(country.clone());
        }
        series.entry((country, is_gdp)).or_default().insert(date, value);
    }

    let countries = match &schema.countries {
        Some(manifest) => {
            for c in &seen_order {
                if !manifest.contains(c) {
                    return Err(Error::Schema(format!("unknown country `{c}`")));
                }
            }
            manifest.clone()
        }
        None => {
            let mut c = seen_order.clone();
            c.sort();
            c
        }
    };
    if countries.is_empty() {
        return Err(Error::Schema("no observations".into()));
    }

    let mut first: Option<Quarter> = None;
    let mut last: Option<Quarter> = None;
    for c in &countries {
        for is_gdp in [true, false] {
            let s = series.get(&(c.clone(), is_gdp)).ok_or_else(|| {
                Error::Schema(format!(
                    "country `{c}` has no `{}` series",
                    if is_gdp { &schema.gdp_variable } else { &schema.fci_variable }
                ))
            })?;
            let present: Vec<Quarter> = s
                .iter()
                .filter(|(_, v)| v.is_finite())
                .map(|(d, _)| *d)
                .collect();
            let (Some(&lo), Some(&hi)) = (present.first(), present.last()) else {
                return Err(Error::Schema(format!("country `{c}` has an empty series")));
            };
            first = Some(first.map_or(lo, |f| f.max(lo)));
            last = Some(last.map_or(hi, |l| l.min(hi)));
        }
    }
    let (first, last) = (first.unwrap(), last.unwrap());
    if first > last {
        return Err(Error::InsufficientData("series do not overlap".into()));
    }
    let t = first.distance(last) as usize + 1;
    let dates: Vec<Quarter> = (0..t).map(|k| first.offset(k as i64)).collect();
    let n = countries.len();
    let mut gdp = DMatrix::zeros(t, n);
    let mut fci = DMatrix::zeros(t, n);
    for (r, d) in dates.iter().enumerate() {
        for (c, code) in countries.iter().enumerate() {
            for (is_gdp, m) in [(true, &mut gdp), (false, &mut fci)] {
                let v = series[&(code.clone(), is_gdp)]
                    .get(d)
                    .copied()
                    .unwrap_or(f64::NAN);
                if !v.is_finite() {
                    return Err(Error::MissingData {
                        country: code.clone(),
                        date: d.to_string(),
                    });
                }
                m[(r, c)] = v;
            }
        }
    }
    PanelDataset::new(countries, dates, gdp, fci)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CovariateKind {
    /// Own lagged growth and own lagged financial conditions.
    #[serde(rename = "CISS")]
    Ciss,
    /// Lagged growth and financial conditions of every country.
    #[serde(rename = "CISS-CC")]
    CissCc,
}

impl fmt::Display for CovariateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CovariateKind::Ciss => "CISS",
            CovariateKind::CissCc => "CISS-CC",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub kind: CovariateKind,
    pub horizon: usize,
}

impl CovariateSpec {
    /// Number of domestic regressors, always ordered first.
    pub const DOMESTIC: usize = 2;

    pub fn new(kind: CovariateKind, horizon: usize) -> Self {
        CovariateSpec { kind, horizon }
    }

    pub fn num_covariates(&self, num_countries: usize) -> usize {
        match self.kind {
            CovariateKind::Ciss => 2,
            CovariateKind::CissCc => 2 * num_countries,
        }
    }

    /// Countries whose (growth, fci) pair enters the design of `country`,
    /// domestic first, then the rest in panel order.
    pub fn sources(&self, country: usize, num_countries: usize) -> Vec<usize> {
        let mut src = vec![country];
        if self.kind == CovariateKind::CissCc {
            src.extend((0..num_countries).filter(|&j| j != country));
        }
        src
    }
}

/// Regression design for one country at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    pub country: String,
    /// Demeaned response, dated `target_dates`.
    pub y: DVector<f64>,
    /// Regressors dated `h` quarters before each response.
    pub x: DMatrix<f64>,
    /// Training mean of GDP growth for every panel country (panel order).
    pub means: Vec<f64>,
    /// Index of `country` in the panel.
    pub country_index: usize,
    /// Panel country whose (growth, fci) pair fills columns `2k, 2k+1`.
    pub sources: Vec<usize>,
    pub target_dates: Vec<Quarter>,
    pub spec: CovariateSpec,
}

impl DesignMatrix {
    pub fn num_rows(&self) -> usize {
        self.y.len()
    }

    pub fn num_covariates(&self) -> usize {
        self.x.ncols()
    }

    pub fn own_mean(&self) -> f64 {
        self.means[self.country_index]
    }

    /// Regressor vector built from panel row `row` (demeaned with this
    /// design's training means).
    pub fn regressors_at(&self, data: &PanelDataset, row: usize) -> DVector<f64> {
        regressor_row(data, row, &self.sources, &self.means)
    }
}

/// Demeaned regressors from panel row `row` for the given source countries.
pub fn regressor_row(data: &PanelDataset, row: usize, sources: &[usize], means: &[f64]) -> DVector<f64> {
    let mut x = DVector::zeros(2 * sources.len());
    for (k, &j) in sources.iter().enumerate() {
        x[2 * k] = data.gdp[(row, j)] - means[j];
        x[2 * k + 1] = data.fci[(row, j)];
    }
    x
}

/// Builds the horizon-`h` direct-forecast design for `country`.
pub fn build_design(data: &PanelDataset, country: &str, spec: CovariateSpec) -> Result<DesignMatrix> {
    let h = spec.horizon;
    if h == 0 {
        return Err(Error::domain("forecast horizon must be at least 1"));
    }
    let t = data.num_periods();
    if t <= h + 1 {
        return Err(Error::InsufficientData(format!(
            "{t} periods cannot support horizon {h}"
        )));
    }
    let ci = data.country_index(country)?;
    let means = data.gdp_means();
    let sources = spec.sources(ci, data.num_countries());
    let rows = t - h;
    let y = DVector::from_fn(rows, |r, _| data.gdp[(r + h, ci)] - means[ci]);
    let mut x = DMatrix::zeros(rows, 2 * sources.len());
    for r in 0..rows {
        x.set_row(r, &regressor_row(data, r, &sources, &means).transpose());
    }
    Ok(DesignMatrix {
        country: country.to_string(),
        y,
        x,
        means,
        country_index: ci,
        sources,
        target_dates: data.dates[h..].to_vec(),
        spec,
    })
}

/// Designs for every panel country, in panel order.
pub fn build_panel_designs(data: &PanelDataset, spec: CovariateSpec) -> Result<Vec<DesignMatrix>> {
    data.countries()
        .iter()
        .map(|c| build_design(data, c, spec))
        .collect()
}

/// Splits at `first_holdout`: training ends the quarter before it.
pub fn train_holdout_split(
    data: &PanelDataset,
    first_holdout: Quarter,
) -> Result<(PanelDataset, PanelDataset)> {
    match data.date_index(first_holdout) {
        Some(k) if k > 0 => Ok((data.slice(0, k), data.slice(k, data.num_periods()))),
        _ => Err(Error::Range(format!(
            "first holdout {first_holdout} must lie strictly after {} and no later than {}",
            data.dates.first().map(|d| d.to_string()).unwrap_or_default(),
            data.dates.last().map(|d| d.to_string()).unwrap_or_default(),
        ))),
    }
}
