//! On-disk layout of a [`DrawStore`].
//!
//! A store directory holds `manifest.json` plus little-endian binary
//! segments and human-readable trace CSVs:
//!
//! ```text
//! manifest.json     format, version, spec, fingerprint, seed, dimensions, segment digests
//! equations.bin     per equation: alpha[D] beta[D*K] omega[D] loading[D] sigma[D] psi2[D*K] fit[D*T]
//! forests.bin       per equation and draw: n_roots u32, n_nodes u32, roots u32[], nodes (var u32, right u32, value f64)[]
//! factors.bin       per quantile: f[D*T] h[D*T] mu[D] rho[D] varsigma[D] pooled[D*K]
//! global.bin        phi2[D]
//! trace_omega.csv   draw,country,quantile,omega,loading,sigma
//! trace_factor.csv  quantile,date,f_mean,h_mean,h_q16,h_q84
//! ```
//!
//! Equations are ordered `quantile * num_countries + country`. Nothing in the
//! directory depends on wall-clock time, so equal inputs give equal bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bart::{PackedForest, PackedNode};
use crate::diagnostics::quantile;
use crate::error::{Error, Result};
use crate::gibbs::{DrawStore, EquationDraws, ModelSpec, QuantileDraws};
use crate::panel::{fmt_f64, Quarter};

pub const STORE_FORMAT: &str = "qfbart-draws";
pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimensions {
    pub countries: usize,
    pub quantiles: usize,
    pub periods: usize,
    pub covariates: usize,
    pub draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub fingerprint: String,
    pub seed: u64,
    pub dims: Dimensions,
    pub spec: ModelSpec,
    pub countries: Vec<String>,
    pub country_index: Vec<usize>,
    pub means: Vec<f64>,
    pub target_dates: Vec<Quarter>,
    pub segments: Vec<Segment>,
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn f64s(&mut self, xs: &[f64]) {
        for x in xs {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }

    fn u32(&mut self, x: u32) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    file: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(Error::Schema(format!("{} is truncated", self.file)));
        }
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(8 * n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4-byte chunk")))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Schema(format!("{} has trailing bytes", self.file)));
        }
        Ok(())
    }
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `store` into `dir` (created if needed).
pub fn save_store(store: &DrawStore, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut eqs = Writer::default();
    let mut forests = Writer::default();
    for e in &store.equations {
        eqs.f64s(&e.alpha);
        eqs.f64s(&e.beta);
        eqs.f64s(&e.omega);
        eqs.f64s(&e.loading);
        eqs.f64s(&e.sigma);
        eqs.f64s(&e.local_scales);
        eqs.f64s(&e.fit);
        for f in &e.forests {
            forests.u32(f.roots.len() as u32);
            forests.u32(f.nodes.len() as u32);
            for &r in &f.roots {
                forests.u32(r);
            }
            for n in &f.nodes {
                forests.u32(n.var);
                forests.u32(n.right);
                forests.f64s(&[n.value]);
            }
        }
    }
    let mut factors = Writer::default();
    for q in &store.quantiles {
        factors.f64s(&q.f);
        factors.f64s(&q.h);
        factors.f64s(&q.mu);
        factors.f64s(&q.rho);
        factors.f64s(&q.varsigma);
        factors.f64s(&q.pooled);
    }
    let mut global = Writer::default();
    global.f64s(&store.phi2);

    let mut segments = Vec::new();
    for (file, w) in [
        ("equations.bin", eqs),
        ("forests.bin", forests),
        ("factors.bin", factors),
        ("global.bin", global),
    ] {
        fs::write(dir.join(file), &w.0)?;
        segments.push(Segment {
            file: file.to_string(),
            bytes: w.0.len(),
            sha256: digest(&w.0),
        });
    }
    write_traces(store, dir)?;
    let manifest = Manifest {
        format: STORE_FORMAT.to_string(),
        version: STORE_VERSION,
        fingerprint: store.spec.fingerprint(),
        seed: store.seed,
        dims: Dimensions {
            countries: store.num_countries(),
            quantiles: store.num_quantiles(),
            periods: store.num_periods,
            covariates: store.num_covariates,
            draws: store.num_draws,
        },
        spec: store.spec.clone(),
        countries: store.countries.clone(),
        country_index: store.country_index.clone(),
        means: store.means.clone(),
        target_dates: store.target_dates.clone(),
        segments,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format != STORE_FORMAT {
        return Err(Error::Schema(format!("{} is not a draw store", dir.display())));
    }
    if m.version != STORE_VERSION {
        return Err(Error::Schema(format!(
            "draw store version {} (expected {STORE_VERSION})",
            m.version
        )));
    }
    if m.fingerprint != m.spec.fingerprint() {
        return Err(Error::Schema("manifest fingerprint does not match its spec".into()));
    }
    Ok(m)
}

/// Reads a store written by [`save_store`], checking segment digests.
pub fn load_store(dir: &Path) -> Result<DrawStore> {
    let m = load_manifest(dir)?;
    let read = |name: &str| -> Result<Vec<u8>> {
        let seg = m
            .segments
            .iter()
            .find(|s| s.file == name)
            .ok_or_else(|| Error::Schema(format!("manifest lacks segment {name}")))?;
        let bytes = fs::read(dir.join(name))?;
        if bytes.len() != seg.bytes || digest(&bytes) != seg.sha256 {
            return Err(Error::Schema(format!("segment {name} does not match its digest")));
        }
        Ok(bytes)
    };
    let Dimensions {
        countries: n,
        quantiles: num_q,
        periods: t,
        covariates: k,
        draws: d,
    } = m.dims;
    let eq_bytes = read("equations.bin")?;
    let forest_bytes = read("forests.bin")?;
    let mut er = Reader { buf: &eq_bytes, pos: 0, file: "equations.bin" };
    let mut fr = Reader { buf: &forest_bytes, pos: 0, file: "forests.bin" };
    let mut equations = Vec::with_capacity(n * num_q);
    for _ in 0..n * num_q {
        let mut e = EquationDraws {
            alpha: er.f64s(d)?,
            beta: er.f64s(d * k)?,
            omega: er.f64s(d)?,
            loading: er.f64s(d)?,
            sigma: er.f64s(d)?,
            local_scales: er.f64s(d * k)?,
            fit: er.f64s(d * t)?,
            forests: Vec::with_capacity(d),
        };
        for _ in 0..d {
            let num_roots = fr.u32()? as usize;
            let num_nodes = fr.u32()? as usize;
            let roots = (0..num_roots).map(|_| fr.u32()).collect::<Result<Vec<_>>>()?;
            let mut nodes = Vec::with_capacity(num_nodes);
            for _ in 0..num_nodes {
                let var = fr.u32()?;
                let right = fr.u32()?;
                let value = fr.f64s(1)?[0];
                nodes.push(PackedNode { var, value, right });
            }
            e.forests.push(PackedForest { nodes, roots });
        }
        equations.push(e);
    }
    er.finish()?;
    fr.finish()?;
    let factor_bytes = read("factors.bin")?;
    let mut qr = Reader { buf: &factor_bytes, pos: 0, file: "factors.bin" };
    let mut quantiles = Vec::with_capacity(num_q);
    for _ in 0..num_q {
        quantiles.push(QuantileDraws {
            f: qr.f64s(d * t)?,
            h: qr.f64s(d * t)?,
            mu: qr.f64s(d)?,
            rho: qr.f64s(d)?,
            varsigma: qr.f64s(d)?,
            pooled: qr.f64s(d * k)?,
        });
    }
    qr.finish()?;
    let global_bytes = read("global.bin")?;
    let mut gr = Reader { buf: &global_bytes, pos: 0, file: "global.bin" };
    let phi2 = gr.f64s(d)?;
    gr.finish()?;
    Ok(DrawStore {
        spec: m.spec,
        seed: m.seed,
        countries: m.countries,
        num_periods: t,
        num_covariates: k,
        num_draws: d,
        means: m.means,
        country_index: m.country_index,
        target_dates: m.target_dates,
        equations,
        quantiles,
        phi2,
    })
}

fn write_traces(store: &DrawStore, dir: &Path) -> Result<()> {
    let n = store.num_countries();
    let mut w = csv::Writer::from_path(dir.join("trace_omega.csv"))?;
    w.write_record(["draw", "country", "quantile", "omega", "loading", "sigma"])?;
    for d in 0..store.num_draws {
        for (e, eq) in store.equations.iter().enumerate() {
            w.write_record([
                d.to_string(),
                store.countries[e % n].clone(),
                fmt_f64(store.spec.quantiles[e / n]),
                fmt_f64(eq.omega[d]),
                fmt_f64(eq.loading[d]),
                fmt_f64(eq.sigma[d]),
            ])?;
        }
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("trace_factor.csv"))?;
    w.write_record(["quantile", "date", "f_mean", "h_mean", "h_q16", "h_q84"])?;
    let t = store.num_periods;
    for (p, q) in store.quantiles.iter().enumerate() {
        if store.num_draws == 0 {
            break;
        }
        for s in 0..t {
            let fs: Vec<f64> = (0..store.num_draws).map(|d| q.f[d * t + s]).collect();
            let hs: Vec<f64> = (0..store.num_draws).map(|d| q.h[d * t + s]).collect();
            w.write_record([
                fmt_f64(store.spec.quantiles[p]),
                store.target_dates.get(s).map(|q| q.to_string()).unwrap_or_default(),
                fmt_f64(crate::diagnostics::mean(&fs)),
                fmt_f64(crate::diagnostics::mean(&hs)),
                fmt_f64(quantile(&hs, 0.16)),
                fmt_f64(quantile(&hs, 0.84)),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
