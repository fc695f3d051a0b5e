//! Joint Gibbs sampler over all countries and quantiles.
//!
//! One sweep runs five phases:
//!
//! 1. per equation: trees and leaves, then intercept and `beta`
//! 2. per quantile: pooled means of the domestic coefficients (HSP)
//! 3. per equation: `omega` (slice sampler), loading, `sigma`, `nu`, local scales
//! 4. per quantile: factor path, log-volatility and its AR(1) parameters
//! 5. global: horseshoe scale `phi^2` and its auxiliary
//!
//! Every equation and quantile owns a ChaCha stream keyed by
//! `(seed, tag, country, quantile)`, so a sweep gives the same state whether
//! phases 1 and 3 run serially or on the rayon pool.

use log::info;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ald::{quantile_constants, sample_nu, sample_sigma, QuantileConstants};
use crate::bart::{leaf_prior_scale, Forest, ForestSampler, MoveMix, PackedForest, TreeData, TreeHyper};
use crate::dist::{std_exp, uniform};
use crate::error::{Error, Result};
use crate::factor_sv::{
    rescale_factor, sample_factor, sample_loadings, sample_volatility, FactorBlock, SvParams, SvPrior,
};
use crate::panel::{CovariateKind, CovariateSpec, DesignMatrix, Quarter};
use crate::rng::{stream, StreamRng, StreamTag};
use crate::shrinkage::{
    sample_beta, sample_global_scale, sample_local_scales, sample_pooled_mean, standardized_sq_dev,
    GlobalScale, LinearBlock, PriorKind,
};

pub const DEFAULT_QUANTILES: [f64; 7] = [0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OmegaMode {
    /// Linear quantile regression only.
    Zero,
    /// Trees only.
    One,
    Estimated,
}

impl std::fmt::Display for OmegaMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OmegaMode::Zero => "0",
            OmegaMode::One => "1",
            OmegaMode::Estimated => "est",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelHyper {
    pub tree: TreeHyper,
    pub move_mix: MoveMix,
    pub a_sigma: f64,
    pub b_sigma: f64,
    /// Prior variance of the pooled means.
    pub phitilde: f64,
    /// Prior variance of the equation intercepts.
    pub intercept_var: f64,
    /// Fixed leaf prior scale; computed from the response range when unset.
    pub leaf_scale: Option<f64>,
    pub sv: SvPrior,
}

impl Default for ModelHyper {
    fn default() -> Self {
        ModelHyper {
            tree: TreeHyper::default(),
            move_mix: MoveMix::default(),
            a_sigma: 1.0,
            b_sigma: 1.0,
            phitilde: 10.0,
            intercept_var: 100.0,
            leaf_scale: None,
            sv: SvPrior::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub covariates: CovariateSpec,
    pub prior: PriorKind,
    pub omega_mode: OmegaMode,
    pub factor_on: bool,
    pub quantiles: Vec<f64>,
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
    #[serde(default)]
    pub hyper: ModelHyper,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            covariates: CovariateSpec::new(CovariateKind::Ciss, 1),
            prior: PriorKind::PooledHorseshoe,
            omega_mode: OmegaMode::Estimated,
            factor_on: true,
            quantiles: DEFAULT_QUANTILES.to_vec(),
            sweeps: 30_000,
            burn_in: 15_000,
            thin: 5,
            hyper: ModelHyper::default(),
        }
    }
}

impl ModelSpec {
    /// Linear quantile regression without factor on the domestic covariates.
    pub fn benchmark(horizon: usize) -> Self {
        ModelSpec {
            covariates: CovariateSpec::new(CovariateKind::Ciss, horizon),
            omega_mode: OmegaMode::Zero,
            factor_on: false,
            ..ModelSpec::default()
        }
    }

    pub fn is_benchmark(&self) -> bool {
        self.omega_mode == OmegaMode::Zero && !self.factor_on && self.covariates.kind == CovariateKind::Ciss
    }

    pub fn validate(&self) -> Result<()> {
        if self.quantiles.is_empty() {
            return Err(Error::Config("empty quantile grid".into()));
        }
        if self.quantiles.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::Config("quantiles must lie in (0, 1)".into()));
        }
        if self.quantiles.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("quantile grid must be strictly increasing".into()));
        }
        if self.sweeps <= self.burn_in {
            return Err(Error::Config(format!(
                "sweeps ({}) must exceed burn_in ({})",
                self.sweeps, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.covariates.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        let h = &self.hyper;
        if h.tree.num_trees == 0 || !(h.tree.alpha > 0.0 && h.tree.alpha < 1.0) || !(h.tree.zeta > 0.0) {
            return Err(Error::Config("invalid tree prior".into()));
        }
        if !(h.a_sigma > 0.0 && h.b_sigma > 0.0 && h.phitilde > 0.0 && h.intercept_var > 0.0) {
            return Err(Error::Config("prior hyperparameters must be positive".into()));
        }
        if let Some(v) = h.leaf_scale {
            if !(v > 0.0) {
                return Err(Error::Config("leaf_scale must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn num_draws(&self) -> usize {
        (self.sweeps - self.burn_in) / self.thin
    }

    /// Short label such as `CISS-CC/HSP/w=est/factor`.
    pub fn label(&self) -> String {
        format!(
            "{}/{}/w={}/{}",
            self.covariates.kind,
            self.prior,
            self.omega_mode,
            if self.factor_on { "factor" } else { "nofactor" }
        )
    }

    /// SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Latent state of one (country, quantile) equation.
#[derive(Debug, Clone, PartialEq)]
pub struct EquationState {
    pub sampler: ForestSampler,
    pub alpha: f64,
    pub linear: LinearBlock,
    pub omega: f64,
    pub loading: f64,
    pub sigma: f64,
    pub nu: Vec<f64>,
    /// `alpha + omega g + (1 - omega) beta'x` at the training rows.
    pub location: Vec<f64>,
    pub rng: StreamRng,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    /// Indexed `quantile * num_countries + country`.
    pub equations: Vec<EquationState>,
    /// Pooled means per quantile (zero beyond the domestic block or under HS).
    pub pooled: Vec<Vec<f64>>,
    pub factors: Vec<FactorBlock>,
    pub quantile_rng: Vec<StreamRng>,
    pub global: GlobalScale,
    pub global_rng: StreamRng,
}

/// Response and covariates of one country.
#[derive(Debug, Clone)]
pub struct EquationData {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub tree: TreeData,
}

/// Covariates of one country together with the response seen by one
/// quantile equation.
struct EquationView<'a> {
    y: &'a DVector<f64>,
    x: &'a DMatrix<f64>,
    tree: &'a TreeData,
}

/// Running chain: data, spec and current state.
#[derive(Debug, Clone)]
pub struct Chain {
    spec: ModelSpec,
    data: Vec<EquationData>,
    /// Response of every equation; identical across quantiles unless
    /// replaced through [`Chain::set_response`].
    responses: Vec<DVector<f64>>,
    constants: Vec<QuantileConstants>,
    leaf_scales: Vec<f64>,
    state: ChainState,
    sweeps_done: usize,
}

trait StepContext<T> {
    fn step(self, name: &'static str) -> std::result::Result<T, (&'static str, Error)>;
}

impl<T> StepContext<T> for Result<T> {
    fn step(self, name: &'static str) -> std::result::Result<T, (&'static str, Error)> {
        self.map_err(|e| (name, e))
    }
}

type StepResult = std::result::Result<(), (&'static str, Error)>;

impl Chain {
    pub fn new(spec: ModelSpec, designs: &[DesignMatrix], seed: u64) -> Result<Self> {
        let data: Vec<EquationData> = designs
            .iter()
            .map(|d| EquationData {
                y: d.y.clone(),
                x: d.x.clone(),
                tree: TreeData::new(&d.x),
            })
            .collect();
        Chain::from_data(spec, data, seed)
    }

    pub fn from_data(spec: ModelSpec, data: Vec<EquationData>, seed: u64) -> Result<Self> {
        spec.validate()?;
        let n = data.len();
        if n == 0 {
            return Err(Error::InsufficientData("no countries".into()));
        }
        let t = data[0].y.len();
        let k = data[0].x.ncols();
        if t == 0 {
            return Err(Error::InsufficientData("no observations".into()));
        }
        for d in &data {
            if d.y.len() != t || d.x.nrows() != t || d.x.ncols() != k {
                return Err(Error::domain("country designs differ in shape"));
            }
            if d.y.iter().chain(d.x.iter()).any(|v| !v.is_finite()) {
                return Err(Error::domain("non-finite design entry"));
            }
        }
        let constants = spec
            .quantiles
            .iter()
            .map(|&p| quantile_constants(p))
            .collect::<Result<Vec<_>>>()?;
        let tree_hyper = spec.hyper.tree;
        let leaf_scales = data
            .iter()
            .map(|d| match spec.hyper.leaf_scale {
                Some(v) => Ok(v),
                None if spec.omega_mode == OmegaMode::Zero => Ok(1.0),
                None => leaf_prior_scale(d.y.min(), d.y.max(), tree_hyper.gamma, tree_hyper.num_trees),
            })
            .collect::<Result<Vec<_>>>()?;
        let omega0 = match spec.omega_mode {
            OmegaMode::Zero => 0.0,
            OmegaMode::One => 1.0,
            OmegaMode::Estimated => 0.5,
        };
        let var_y: f64 = data
            .iter()
            .map(|d| crate::diagnostics::variance(d.y.as_slice()))
            .sum::<f64>()
            / n as f64;
        let h0 = if var_y > 0.0 && var_y.is_finite() { var_y.ln() } else { 0.0 };
        let num_q = spec.quantiles.len();
        let mut equations = Vec::with_capacity(n * num_q);
        for p in 0..num_q {
            for (i, d) in data.iter().enumerate() {
                let forest = Forest::stumps(tree_hyper, leaf_scales[i]);
                equations.push(EquationState {
                    sampler: ForestSampler::new(forest, &d.tree).with_move_mix(spec.hyper.move_mix),
                    alpha: 0.0,
                    linear: LinearBlock::new(k),
                    omega: omega0,
                    loading: 0.0,
                    sigma: 1.0,
                    nu: vec![1.0; t],
                    location: vec![0.0; t],
                    rng: stream(seed, StreamTag::Equation, i, p),
                });
            }
        }
        let factors = (0..num_q).map(|_| FactorBlock::new(n, t, h0)).collect();
        let state = ChainState {
            equations,
            pooled: vec![vec![0.0; k]; num_q],
            factors,
            quantile_rng: (0..num_q).map(|p| stream(seed, StreamTag::Quantile, 0, p)).collect(),
            global: GlobalScale::default(),
            global_rng: stream(seed, StreamTag::Global, 0, 0),
        };
        let responses = (0..num_q).flat_map(|_| data.iter().map(|d| d.y.clone())).collect();
        Ok(Chain {
            spec,
            responses,
            data,
            constants,
            leaf_scales,
            state,
            sweeps_done: 0,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut ChainState {
        &mut self.state
    }

    pub fn data(&self) -> &[EquationData] {
        &self.data
    }

    pub fn num_countries(&self) -> usize {
        self.data.len()
    }

    pub fn num_periods(&self) -> usize {
        self.data[0].y.len()
    }

    pub fn num_covariates(&self) -> usize {
        self.data[0].x.ncols()
    }

    pub fn constants(&self) -> &[QuantileConstants] {
        &self.constants
    }

    pub fn leaf_scales(&self) -> &[f64] {
        &self.leaf_scales
    }

    pub fn sweeps_done(&self) -> usize {
        self.sweeps_done
    }

    /// Replaces the response of equation (`country`, `quantile`), which
    /// turns the quantiles into separate data sets (simulation-based testing).
    pub fn set_response(&mut self, country: usize, quantile: usize, y: DVector<f64>) -> Result<()> {
        if y.len() != self.num_periods() {
            return Err(Error::domain("response length mismatch"));
        }
        let n = self.num_countries();
        self.responses[quantile * n + country] = y;
        Ok(())
    }

    pub fn response(&self, country: usize, quantile: usize) -> &DVector<f64> {
        &self.responses[quantile * self.num_countries() + country]
    }

    /// Recomputes the cached locations after the state was edited by hand.
    pub fn refresh_locations(&mut self) {
        let n = self.num_countries();
        for (k, eq) in self.state.equations.iter_mut().enumerate() {
            eq.location = location(eq, &self.data[k % n].x);
        }
    }

    /// One full Gibbs cycle.
    pub fn sweep(&mut self) -> Result<()> {
        let sweep = self.sweeps_done;
        self.sweep_inner().map_err(|(step, e)| Error::Chain {
            sweep,
            step: step.to_string(),
            message: e.to_string(),
        })?;
        self.sweeps_done += 1;
        Ok(())
    }

    fn sweep_inner(&mut self) -> StepResult {
        let n = self.num_countries();
        let k = self.num_covariates();
        let num_q = self.spec.quantiles.len();
        let spec = &self.spec;
        let views: Vec<EquationView> = self
            .responses
            .iter()
            .enumerate()
            .map(|(e, y)| {
                let d = &self.data[e % n];
                EquationView { y, x: &d.x, tree: &d.tree }
            })
            .collect();
        let constants = &self.constants;
        let ChainState {
            equations,
            pooled,
            factors,
            quantile_rng,
            global,
            global_rng,
        } = &mut self.state;
        let phi2 = global.phi2;

        {
            let pooled = &*pooled;
            let factors = &*factors;
            equations.par_iter_mut().enumerate().try_for_each(|(e, eq)| {
                let p = e / n;
                update_location_block(eq, &views[e], &constants[p], &pooled[p], &factors[p].f, phi2, spec)
            })?;
        }

        if spec.prior == PriorKind::PooledHorseshoe {
            let domestic = CovariateSpec::DOMESTIC.min(k);
            for p in 0..num_q {
                for j in 0..domestic {
                    let eqs = &equations[p * n..(p + 1) * n];
                    let betas: Vec<f64> = eqs.iter().map(|eq| eq.linear.beta[j]).collect();
                    let vars: Vec<f64> = eqs.iter().map(|eq| phi2 * eq.linear.local_scales[j]).collect();
                    pooled[p][j] = sample_pooled_mean(spec.prior, &betas, &vars, spec.hyper.phitilde, &mut quantile_rng[p])
                        .step("pooled mean")?;
                }
            }
        }

        {
            let pooled = &*pooled;
            let factors = &*factors;
            equations.par_iter_mut().enumerate().try_for_each(|(e, eq)| {
                let p = e / n;
                update_scale_block(eq, &views[e], &constants[p], &pooled[p], &factors[p].f, phi2, spec)
            })?;
        }

        if spec.factor_on {
            let t = self.data[0].y.len();
            factors
                .par_iter_mut()
                .zip(quantile_rng.par_iter_mut())
                .enumerate()
                .try_for_each(|(p, (block, rng))| {
                    let c = &constants[p];
                    let eqs = &equations[p * n..(p + 1) * n];
                    let ybar = DMatrix::from_fn(n, t, |i, s| {
                        views[p * n + i].y[s] - eqs[i].location[s] - c.theta * eqs[i].nu[s]
                    });
                    let psi = DMatrix::from_fn(n, t, |i, s| c.tau2 * eqs[i].sigma * eqs[i].nu[s]);
                    let loadings: Vec<f64> = eqs.iter().map(|eq| eq.loading).collect();
                    block.f = sample_factor(&ybar, &loadings, &psi, &block.h, rng).step("factor")?;
                    block.loadings = loadings;
                    sample_volatility(&block.f, &mut block.h, &mut block.sv, &spec.hyper.sv, rng)
                        .step("volatility")
                })?;
            for (p, (block, rng)) in factors.iter_mut().zip(quantile_rng.iter_mut()).enumerate() {
                let eqs = &mut equations[p * n..(p + 1) * n];
                let mut loadings: Vec<f64> = eqs.iter().map(|eq| eq.loading).collect();
                rescale_factor(&mut loadings, block, &spec.hyper.sv, rng).step("factor scale")?;
                for (eq, &l) in eqs.iter_mut().zip(&loadings) {
                    eq.loading = l;
                }
                block.loadings = loadings;
            }
        }

        let ssd: f64 = equations
            .iter()
            .enumerate()
            .map(|(e, eq)| standardized_sq_dev(&eq.linear, &pooled[e / n]))
            .sum();
        sample_global_scale(global, ssd, n * k * num_q, global_rng).step("global scale")?;
        check_finite(equations, factors, global).step("divergence check")
    }
}

fn residual_inputs(eq: &EquationState, c: &QuantileConstants) -> Vec<f64> {
    eq.nu.iter().map(|v| c.tau2 * eq.sigma * v).collect()
}

fn location(eq: &EquationState, x: &DMatrix<f64>) -> Vec<f64> {
    let lin = x * DVector::from_column_slice(&eq.linear.beta);
    let g = eq.sampler.fit();
    (0..x.nrows())
        .map(|s| eq.alpha + eq.omega * g[s] + (1.0 - eq.omega) * lin[s])
        .collect()
}

/// Trees, then intercept and coefficients.
fn update_location_block(
    eq: &mut EquationState,
    d: &EquationView,
    c: &QuantileConstants,
    pooled: &[f64],
    f: &[f64],
    phi2: f64,
    spec: &ModelSpec,
) -> StepResult {
    let t = d.y.len();
    let k = d.x.ncols();
    let s2 = residual_inputs(eq, c);
    // y - lambda f - theta nu
    let base: Vec<f64> = (0..t)
        .map(|s| d.y[s] - eq.loading * f[s] - c.theta * eq.nu[s])
        .collect();
    let omega = eq.omega;
    if omega > 0.0 {
        let lin = d.x * DVector::from_column_slice(&eq.linear.beta);
        let r: Vec<f64> = (0..t)
            .map(|s| (base[s] - eq.alpha - (1.0 - omega) * lin[s]) / omega)
            .collect();
        let s2w: Vec<f64> = s2.iter().map(|v| v / (omega * omega)).collect();
        eq.sampler.sweep(d.tree, &r, &s2w, &mut eq.rng).step("trees")?;
    }
    let g = eq.sampler.fit();
    let mut xt = DMatrix::zeros(t, k + 1);
    let mut yt = DVector::zeros(t);
    for s in 0..t {
        let sd = s2[s].sqrt();
        yt[s] = (base[s] - omega * g[s]) / sd;
        xt[(s, 0)] = 1.0 / sd;
        for j in 0..k {
            xt[(s, j + 1)] = (1.0 - omega) * d.x[(s, j)] / sd;
        }
    }
    let mut mean = vec![0.0; k + 1];
    mean[1..].copy_from_slice(pooled);
    let mut var = vec![spec.hyper.intercept_var];
    var.extend(eq.linear.prior_variances(phi2));
    let draw = sample_beta(&yt, &xt, &mean, &var, &mut eq.rng).step("beta")?;
    eq.alpha = draw[0];
    eq.linear.beta.copy_from_slice(&draw.as_slice()[1..]);
    Ok(())
}

/// `omega`, loading, `sigma`, `nu` and local scales.
fn update_scale_block(
    eq: &mut EquationState,
    d: &EquationView,
    c: &QuantileConstants,
    pooled: &[f64],
    f: &[f64],
    phi2: f64,
    spec: &ModelSpec,
) -> StepResult {
    let t = d.y.len();
    let s2 = residual_inputs(eq, c);
    let lin = d.x * DVector::from_column_slice(&eq.linear.beta);
    let g = eq.sampler.fit().to_vec();
    if spec.omega_mode == OmegaMode::Estimated {
        // residual = a_t - omega d_t
        let (mut qa, mut qb) = (0.0, 0.0);
        for s in 0..t {
            let a = d.y[s] - eq.alpha - eq.loading * f[s] - c.theta * eq.nu[s] - lin[s];
            let dd = g[s] - lin[s];
            qa += dd * dd / s2[s];
            qb += a * dd / s2[s];
        }
        eq.omega = slice_sample_unit(eq.omega, |w| -0.5 * qa * w * w + qb * w, &mut eq.rng);
    }
    let omega = eq.omega;
    let loc: Vec<f64> = (0..t)
        .map(|s| eq.alpha + omega * g[s] + (1.0 - omega) * lin[s])
        .collect();
    if spec.factor_on {
        let mut yhat = Vec::with_capacity(t);
        let mut fhat = Vec::with_capacity(t);
        for s in 0..t {
            let sd = s2[s].sqrt();
            yhat.push((d.y[s] - loc[s] - c.theta * eq.nu[s]) / sd);
            fhat.push(f[s] / sd);
        }
        eq.loading = sample_loadings(&yhat, &fhat, &mut eq.rng);
    }
    let w: Vec<f64> = (0..t).map(|s| d.y[s] - loc[s] - eq.loading * f[s]).collect();
    eq.sigma = sample_sigma(&w, &eq.nu, c, spec.hyper.a_sigma, spec.hyper.b_sigma, &mut eq.rng).step("sigma")?;
    sample_nu(&w, c, eq.sigma, &mut eq.nu, &mut eq.rng).step("nu")?;
    sample_local_scales(&mut eq.linear, pooled, phi2, &mut eq.rng).step("local scales")?;
    eq.location = loc;
    Ok(())
}

/// Slice sampler with interval shrinkage on `(0, 1)`.
pub fn slice_sample_unit<R: Rng + ?Sized>(x0: f64, log_f: impl Fn(f64) -> f64, rng: &mut R) -> f64 {
    let level = log_f(x0) - std_exp(rng);
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let x1 = lo + uniform(rng) * (hi - lo);
        if x1 <= 0.0 || x1 >= 1.0 {
            continue;
        }
        if log_f(x1) > level {
            return x1;
        }
        if x1 < x0 {
            lo = x1;
        } else {
            hi = x1;
        }
    }
    x0
}

fn check_finite(equations: &[EquationState], factors: &[FactorBlock], global: &GlobalScale) -> Result<()> {
    let bad_eq = equations.iter().any(|eq| {
        !eq.alpha.is_finite()
            || !eq.sigma.is_finite()
            || !eq.loading.is_finite()
            || eq.linear.beta.iter().any(|b| !b.is_finite())
            || eq.nu.iter().any(|v| !v.is_finite())
    });
    let bad_f = factors
        .iter()
        .any(|b| b.f.iter().chain(&b.h).any(|v| !v.is_finite()));
    if bad_eq || bad_f || !global.phi2.is_finite() {
        return Err(Error::numerical("non-finite state"));
    }
    Ok(())
}

/// Retained draws of one (country, quantile) equation; vectors are stacked
/// draw-major.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EquationDraws {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub omega: Vec<f64>,
    pub loading: Vec<f64>,
    pub sigma: Vec<f64>,
    pub local_scales: Vec<f64>,
    pub forests: Vec<PackedForest>,
    /// Tree fits at the training rows.
    pub fit: Vec<f64>,
}

/// Retained draws of one quantile's factor block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuantileDraws {
    pub f: Vec<f64>,
    pub h: Vec<f64>,
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
    pub varsigma: Vec<f64>,
    pub pooled: Vec<f64>,
}

/// Posterior draws of a whole chain.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawStore {
    pub spec: ModelSpec,
    pub seed: u64,
    pub countries: Vec<String>,
    pub num_periods: usize,
    pub num_covariates: usize,
    pub num_draws: usize,
    /// Training means of GDP growth in panel order.
    pub means: Vec<f64>,
    /// Panel index of each equation country.
    pub country_index: Vec<usize>,
    pub target_dates: Vec<Quarter>,
    /// Indexed `quantile * num_countries + country`.
    pub equations: Vec<EquationDraws>,
    pub quantiles: Vec<QuantileDraws>,
    pub phi2: Vec<f64>,
}

impl DrawStore {
    pub fn new(spec: &ModelSpec, seed: u64, designs: &[DesignMatrix]) -> Self {
        let n = designs.len();
        let num_q = spec.quantiles.len();
        DrawStore {
            spec: spec.clone(),
            seed,
            countries: designs.iter().map(|d| d.country.clone()).collect(),
            num_periods: designs.first().map_or(0, |d| d.num_rows()),
            num_covariates: designs.first().map_or(0, |d| d.num_covariates()),
            num_draws: 0,
            means: designs.first().map_or_else(Vec::new, |d| d.means.clone()),
            country_index: designs.iter().map(|d| d.country_index).collect(),
            target_dates: designs.first().map_or_else(Vec::new, |d| d.target_dates.clone()),
            equations: vec![EquationDraws::default(); n * num_q],
            quantiles: vec![QuantileDraws::default(); num_q],
            phi2: Vec::new(),
        }
    }

    pub fn num_countries(&self) -> usize {
        self.countries.len()
    }

    pub fn num_quantiles(&self) -> usize {
        self.spec.quantiles.len()
    }

    pub fn equation(&self, country: usize, quantile: usize) -> &EquationDraws {
        &self.equations[quantile * self.num_countries() + country]
    }

    /// Training mean of the response of equation country `country`.
    pub fn own_mean(&self, country: usize) -> f64 {
        self.means[self.country_index[country]]
    }

    pub fn beta(&self, country: usize, quantile: usize, draw: usize) -> &[f64] {
        let k = self.num_covariates;
        &self.equation(country, quantile).beta[draw * k..(draw + 1) * k]
    }

    pub fn h_path(&self, quantile: usize, draw: usize) -> &[f64] {
        let t = self.num_periods;
        &self.quantiles[quantile].h[draw * t..(draw + 1) * t]
    }

    pub fn f_path(&self, quantile: usize, draw: usize) -> &[f64] {
        let t = self.num_periods;
        &self.quantiles[quantile].f[draw * t..(draw + 1) * t]
    }

    pub fn sv(&self, quantile: usize, draw: usize) -> SvParams {
        let q = &self.quantiles[quantile];
        SvParams {
            mu: q.mu[draw],
            rho: q.rho[draw],
            varsigma: q.varsigma[draw],
        }
    }

    /// Appends the current chain state as one draw.
    pub fn record(&mut self, chain: &Chain) {
        let st = chain.state();
        for (slot, eq) in self.equations.iter_mut().zip(&st.equations) {
            slot.alpha.push(eq.alpha);
            slot.beta.extend_from_slice(&eq.linear.beta);
            slot.omega.push(eq.omega);
            slot.loading.push(eq.loading);
            slot.sigma.push(eq.sigma);
            slot.local_scales.extend_from_slice(&eq.linear.local_scales);
            slot.forests.push(eq.sampler.forest().packed());
            slot.fit.extend_from_slice(eq.sampler.fit());
        }
        for ((slot, block), pooled) in self.quantiles.iter_mut().zip(&st.factors).zip(&st.pooled) {
            slot.f.extend_from_slice(&block.f);
            slot.h.extend_from_slice(&block.h);
            slot.mu.push(block.sv.mu);
            slot.rho.push(block.sv.rho);
            slot.varsigma.push(block.sv.varsigma);
            slot.pooled.extend_from_slice(pooled);
        }
        self.phi2.push(st.global.phi2);
        self.num_draws += 1;
    }
}

/// Runs the chain from scratch and keeps every `thin`-th post-burn-in draw.
pub fn run_chain(designs: &[DesignMatrix], spec: &ModelSpec, seed: u64) -> Result<DrawStore> {
    let mut chain = Chain::new(spec.clone(), designs, seed)?;
    let mut store = DrawStore::new(spec, seed, designs);
    let report = (spec.sweeps / 10).max(1);
    for it in 0..spec.sweeps {
        chain.sweep()?;
        if it >= spec.burn_in && (it - spec.burn_in) % spec.thin == spec.thin - 1 {
            store.record(&chain);
        }
        if (it + 1) % report == 0 {
            info!("{}: sweep {}/{}", spec.label(), it + 1, spec.sweeps);
        }
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{chi_square_test, ks_pvalue, ks_statistic, mean};
    use crate::dist::std_normal;

    fn design(country: &str, index: usize, y: Vec<f64>, x: DMatrix<f64>) -> DesignMatrix {
        let t = y.len();
        let start = Quarter::new(2000, 1).unwrap();
        DesignMatrix {
            country: country.into(),
            y: DVector::from_vec(y),
            x,
            means: vec![0.0; 3],
            country_index: index,
            sources: vec![index],
            target_dates: (0..t).map(|s| start.offset(s as i64)).collect(),
            spec: CovariateSpec::new(CovariateKind::Ciss, 1),
        }
    }

    fn toy_designs(n: usize, t: usize, seed: u64) -> Vec<DesignMatrix> {
        let mut g = stream(seed, StreamTag::Simulate, 0, 0);
        (0..n)
            .map(|i| {
                let x = DMatrix::from_fn(t, 2, |_, _| std_normal(&mut g));
                let y = (0..t).map(|s| 0.5 * x[(s, 0)] + std_normal(&mut g)).collect();
                design(&format!("C{i}"), i, y, x)
            })
            .collect()
    }

    fn small_spec() -> ModelSpec {
        let mut spec = ModelSpec {
            quantiles: vec![0.1, 0.5, 0.9],
            sweeps: 40,
            burn_in: 20,
            thin: 2,
            ..ModelSpec::default()
        };
        spec.hyper.tree.num_trees = 10;
        spec
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::default().validate().is_ok());
        assert_eq!(ModelSpec::default().num_draws(), 3000);
        let bad = ModelSpec {
            sweeps: 10,
            burn_in: 10,
            ..ModelSpec::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let unsorted = ModelSpec {
            quantiles: vec![0.5, 0.1],
            ..ModelSpec::default()
        };
        assert!(unsorted.validate().is_err());
        assert!(ModelSpec::benchmark(1).is_benchmark());
        assert_ne!(ModelSpec::default().fingerprint(), ModelSpec::benchmark(1).fingerprint());
    }

    #[test]
    fn identical_seeds_identical_states() {
        let designs = toy_designs(3, 40, 1);
        let mut a = Chain::new(small_spec(), &designs, 9).unwrap();
        let mut b = Chain::new(small_spec(), &designs, 9).unwrap();
        for _ in 0..5 {
            a.sweep().unwrap();
            b.sweep().unwrap();
        }
        assert_eq!(a.state(), b.state());
        let mut c = Chain::new(small_spec(), &designs, 10).unwrap();
        c.sweep().unwrap();
        assert_ne!(a.state().global, c.state().global);
    }

    #[test]
    fn serial_and_parallel_agree() {
        let designs = toy_designs(3, 40, 2);
        let serial_pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let wide_pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let run = |pool: &rayon::ThreadPool| {
            pool.install(|| {
                let mut c = Chain::new(small_spec(), &designs, 4).unwrap();
                for _ in 0..5 {
                    c.sweep().unwrap();
                }
                c.state().clone()
            })
        };
        assert_eq!(run(&serial_pool), run(&wide_pool));
    }

    #[test]
    fn pinned_omega_zero_ignores_forest() {
        let designs = toy_designs(2, 30, 3);
        let spec = ModelSpec {
            omega_mode: OmegaMode::Zero,
            factor_on: false,
            ..small_spec()
        };
        let mut plain = Chain::new(spec.clone(), &designs, 5).unwrap();
        let mut poisoned = Chain::new(spec, &designs, 5).unwrap();
        // Non-zero trees in the poisoned chain must not matter.
        for (e, eq) in poisoned.state_mut().equations.iter_mut().enumerate() {
            let mut forest = eq.sampler.forest().clone();
            for t in forest.trees.iter_mut() {
                t.set_leaf_value(0, 3.0 + e as f64);
            }
            let data = &designs[e % 2];
            eq.sampler = ForestSampler::new(forest, &TreeData::new(&data.x));
        }
        for _ in 0..10 {
            plain.sweep().unwrap();
            poisoned.sweep().unwrap();
        }
        for (a, b) in plain.state().equations.iter().zip(&poisoned.state().equations) {
            assert_eq!(a.linear, b.linear);
            assert_eq!(a.sigma, b.sigma);
            assert_eq!(a.nu, b.nu);
            assert_eq!(a.alpha, b.alpha);
            assert_eq!(a.omega, 0.0);
            assert_eq!(a.loading, 0.0);
        }
        assert!(plain.state().equations.iter().all(|eq| eq.sampler.forest().trees.iter().all(|t| t.is_stump())));
        assert_eq!(plain.state().global, poisoned.state().global);
    }

    #[test]
    fn hs_prior_keeps_pooled_means_at_zero() {
        let designs = toy_designs(2, 30, 4);
        let spec = ModelSpec {
            prior: PriorKind::Horseshoe,
            ..small_spec()
        };
        let mut c = Chain::new(spec, &designs, 1).unwrap();
        for _ in 0..5 {
            c.sweep().unwrap();
        }
        assert!(c.state().pooled.iter().flatten().all(|&v| v == 0.0));
        let mut d = Chain::new(small_spec(), &designs, 1).unwrap();
        d.sweep().unwrap();
        assert!(d.state().pooled.iter().any(|m| m[0] != 0.0));
    }

    #[test]
    fn omega_stays_in_unit_interval() {
        let designs = toy_designs(2, 40, 5);
        let mut c = Chain::new(small_spec(), &designs, 2).unwrap();
        for _ in 0..30 {
            c.sweep().unwrap();
            assert!(c.state().equations.iter().all(|eq| eq.omega > 0.0 && eq.omega < 1.0));
            assert!(c.state().factors.iter().all(|f| f.sv.rho.abs() < 1.0 && f.sv.varsigma > 0.0));
        }
    }

    #[test]
    fn run_chain_draw_count_and_shapes() {
        let designs = toy_designs(2, 25, 6);
        let spec = small_spec();
        let store = run_chain(&designs, &spec, 3).unwrap();
        assert_eq!(store.num_draws, spec.num_draws());
        assert_eq!(store.num_draws, 10);
        let eq = store.equation(1, 2);
        assert_eq!(eq.beta.len(), 10 * 2);
        assert_eq!(eq.fit.len(), 10 * 25);
        assert_eq!(eq.forests.len(), 10);
        assert_eq!(store.quantiles[0].h.len(), 10 * 25);
        assert_eq!(store, run_chain(&designs, &spec, 3).unwrap());
    }

    #[test]
    fn divergence_reports_sweep_and_step() {
        let designs = toy_designs(2, 20, 7);
        let mut c = Chain::new(small_spec(), &designs, 1).unwrap();
        c.sweep().unwrap();
        c.state_mut().equations[0].nu[3] = f64::NAN;
        match c.sweep() {
            Err(Error::Chain { sweep, step, .. }) => {
                assert_eq!(sweep, 1);
                assert!(!step.is_empty());
            }
            other => panic!("expected chain error, got {other:?}"),
        }
    }

    #[test]
    fn slice_sampler_flat_target_is_uniform() {
        let mut g = stream(3, StreamTag::Simulate, 9, 9);
        let mut w = 0.5;
        let draws: Vec<f64> = (0..10_000)
            .map(|_| {
                w = slice_sample_unit(w, |_| 0.0, &mut g);
                w
            })
            .collect();
        let d = ks_statistic(&draws, |x| x.clamp(0.0, 1.0));
        assert!(ks_pvalue(d, draws.len()) > 0.01);
    }

    #[test]
    fn slice_sampler_matches_quadrature() {
        let (qa, qb) = (30.0, 21.0);
        let log_f = |w: f64| -0.5 * qa * w * w + qb * w;
        let grid = 1000;
        let dens: Vec<f64> = (0..grid).map(|k| log_f((k as f64 + 0.5) / grid as f64).exp()).collect();
        let z: f64 = dens.iter().sum();
        let bins = 20;
        let mut expected = vec![0.0; bins];
        for (k, d) in dens.iter().enumerate() {
            expected[k * bins / grid] += d / z;
        }
        let mut g = stream(3, StreamTag::Simulate, 9, 10);
        let mut w = 0.5;
        let n = 20_000;
        let mut observed = vec![0.0; bins];
        for it in 0..n * 5 {
            w = slice_sample_unit(w, log_f, &mut g);
            if it % 5 == 0 {
                observed[((w * bins as f64) as usize).min(bins - 1)] += 1.0;
            }
        }
        for e in expected.iter_mut() {
            *e *= n as f64;
        }
        let (_, p) = chi_square_test(&observed, &expected);
        assert!(p > 0.05, "p = {p}");
    }

    #[test]
    fn indistinguishable_components_leave_omega_flat() {
        // g = beta'x exactly: the conditional of omega is constant
        let mut g = stream(8, StreamTag::Simulate, 0, 0);
        let (qa, qb) = (0.0, 0.0);
        let mut w = 0.3;
        let draws: Vec<f64> = (0..10_000)
            .map(|_| {
                w = slice_sample_unit(w, |x| -0.5 * qa * x * x + qb * x, &mut g);
                w
            })
            .collect();
        assert!((mean(&draws) - 0.5).abs() < 0.02);
    }
}
