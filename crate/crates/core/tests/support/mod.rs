//! Shared simulation helpers for the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use qfbart::bart::{depth_split_probability, Forest, ForestSampler, TreeData, TreeHyper, Tree};
use qfbart::diagnostics::geweke_z;
use qfbart::dist::{inv_gamma, std_exp, std_normal, uniform};
use qfbart::factor_sv::{simulate_log_variance, SvPrior};
use qfbart::gibbs::{Chain, EquationData, ModelSpec, OmegaMode};
use qfbart::panel::CovariateSpec;
use qfbart::rng::{stream, StreamRng, StreamTag};
use qfbart::shrinkage::PriorKind;

/// Draws one tree from the structure prior restricted to trees whose leaves
/// are all non-empty on `data`, with `N(0, v^2)` leaves.
pub fn restricted_prior_tree(data: &TreeData, h: &TreeHyper, v: f64, g: &mut StreamRng) -> Tree {
    'outer: loop {
        let mut tree = Tree::stump(0.0);
        let mut stack = vec![(0u64, (0..data.num_rows()).collect::<Vec<_>>())];
        while let Some((id, rows)) = stack.pop() {
            let d = qfbart::bart::node_depth(id);
            if uniform(g) < depth_split_probability(d, h.alpha, h.zeta) {
                let rule = data.sample_rule(g).unwrap();
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&t| rule.goes_left(data.row(t)));
                if l.is_empty() || r.is_empty() {
                    continue 'outer;
                }
                tree.grow(id, rule, 0.0, 0.0);
                stack.push((2 * id + 1, l));
                stack.push((2 * id + 2, r));
            }
        }
        for leaf in tree.leaf_ids() {
            tree.set_leaf_value(leaf, v * std_normal(g));
        }
        return tree;
    }
}

/// Replaces the chain state by a draw from the joint prior.
pub fn draw_prior_state(chain: &mut Chain, g: &mut StreamRng) {
    let spec = chain.spec().clone();
    let n = chain.num_countries();
    let k = chain.num_covariates();
    let t = chain.num_periods();
    let hyper = spec.hyper;
    let trees: Vec<TreeData> = chain.data().iter().map(|d| d.tree.clone()).collect();
    let leaf_scales = chain.leaf_scales().to_vec();
    let st = chain.state_mut();
    let xi = inv_gamma(0.5, 1.0, g).unwrap();
    st.global.xi = xi;
    st.global.phi2 = inv_gamma(0.5, 1.0 / xi, g).unwrap();
    let phi2 = st.global.phi2;
    for (p, pooled) in st.pooled.iter_mut().enumerate() {
        for j in 0..k {
            pooled[j] = if spec.prior == PriorKind::PooledHorseshoe && j < CovariateSpec::DOMESTIC {
                hyper.phitilde.sqrt() * std_normal(g)
            } else {
                0.0
            };
        }
        let block = &mut st.factors[p];
        block.sv = hyper.sv.sample(g).unwrap();
        block.h = simulate_log_variance(&block.sv, t, g);
        block.f = block.h.iter().map(|h| (h / 2.0).exp() * std_normal(g)).collect();
    }
    for (e, eq) in st.equations.iter_mut().enumerate() {
        let (p, i) = (e / n, e % n);
        for j in 0..k {
            eq.linear.aux_local[j] = inv_gamma(0.5, 1.0, g).unwrap();
            eq.linear.local_scales[j] = inv_gamma(0.5, 1.0 / eq.linear.aux_local[j], g).unwrap();
            eq.linear.beta[j] = st.pooled[p][j] + (phi2 * eq.linear.local_scales[j]).sqrt() * std_normal(g);
        }
        eq.alpha = hyper.intercept_var.sqrt() * std_normal(g);
        eq.omega = match spec.omega_mode {
            OmegaMode::Zero => 0.0,
            OmegaMode::One => 1.0,
            OmegaMode::Estimated => uniform(g),
        };
        eq.loading = if spec.factor_on { std_normal(g) } else { 0.0 };
        eq.sigma = inv_gamma(hyper.a_sigma / 2.0, hyper.b_sigma / 2.0, g).unwrap();
        eq.nu = (0..t).map(|_| eq.sigma * std_exp(g)).collect();
        let forest = Forest {
            trees: (0..hyper.tree.num_trees)
                .map(|_| restricted_prior_tree(&trees[i], &hyper.tree, leaf_scales[i], g))
                .collect(),
            leaf_scale: leaf_scales[i],
            hyper: hyper.tree,
        };
        eq.sampler = ForestSampler::new(forest, &trees[i]).with_move_mix(hyper.move_mix);
    }
    chain.refresh_locations();
}

/// Draws every equation's response given the full latent state; each
/// quantile gets its own copy of the data.
pub fn regenerate_responses(chain: &mut Chain, g: &mut StreamRng) {
    let n = chain.num_countries();
    let t = chain.num_periods();
    let c = chain.constants().to_vec();
    let ys: Vec<Vec<f64>> = chain
        .state()
        .equations
        .iter()
        .enumerate()
        .map(|(e, eq)| {
            let p = e / n;
            let f = &chain.state().factors[p].f;
            (0..t)
                .map(|s| {
                    eq.location[s]
                        + eq.loading * f[s]
                        + c[p].theta * eq.nu[s]
                        + (c[p].tau2 * eq.sigma * eq.nu[s]).sqrt() * std_normal(g)
                })
                .collect()
        })
        .collect();
    for (e, y) in ys.into_iter().enumerate() {
        chain.set_response(e % n, e / n, DVector::from_vec(y)).unwrap();
    }
}

/// Named scalar functions of the chain state compared by the Geweke test.
pub fn geweke_statistics(chain: &Chain) -> Vec<(String, f64)> {
    let n = chain.num_countries();
    let st = chain.state();
    let mut out = Vec::new();
    for (e, eq) in st.equations.iter().enumerate() {
        let tag = format!("i{}p{}", e % n, e / n);
        for (j, b) in eq.linear.beta.iter().enumerate() {
            out.push((format!("atan beta{j} {tag}"), b.atan()));
        }
        for (j, s) in eq.linear.local_scales.iter().enumerate() {
            out.push((format!("kappa psi2_{j} {tag}"), 1.0 / (1.0 + s)));
        }
        out.push((format!("log sigma {tag}"), eq.sigma.ln()));
        out.push((format!("lambda {tag}"), eq.loading));
        out.push((format!("omega {tag}"), eq.omega));
        if chain.spec().omega_mode != OmegaMode::Zero {
            let trees = &eq.sampler.forest().trees;
            out.push((format!("leaves tree0 {tag}"), trees[0].num_leaves() as f64));
            out.push((format!("depth tree1 {tag}"), trees[1].depth() as f64));
            out.push((format!("g(x0) {tag}"), eq.sampler.fit()[0]));
        }
    }
    if chain.spec().factor_on {
        for (p, b) in st.factors.iter().enumerate() {
            out.push((format!("sv mu p{p}"), b.sv.mu));
            out.push((format!("sv rho p{p}"), b.sv.rho));
            out.push((format!("sv log varsigma p{p}"), b.sv.varsigma.ln()));
            out.push((format!("atan h0 p{p}"), b.h[0].atan()));
            out.push((format!("atan hT p{p}"), b.h[b.h.len() - 1].atan()));
            out.push((format!("f0 p{p}"), b.f[0].atan()));
        }
    }
    out.push(("kappa phi2".into(), 1.0 / (1.0 + st.global.phi2)));
    out
}

pub struct GewekeOutcome {
    /// (statistic, moment, z-score)
    pub scores: Vec<(String, usize, f64)>,
}

impl GewekeOutcome {
    pub fn max_abs_z(&self) -> f64 {
        self.scores.iter().map(|s| s.2.abs()).fold(0.0, f64::max)
    }
}

/// Tiny joint model used by the getting-it-right test: fixed exogenous
/// covariates, fixed leaf scale.
pub fn geweke_chain(
    n: usize,
    t: usize,
    k: usize,
    trees: usize,
    quantiles: Vec<f64>,
    seed: u64,
    tweak: impl FnOnce(&mut ModelSpec),
) -> Chain {
    let mut g = stream(seed, StreamTag::Simulate, 100, 0);
    let data: Vec<EquationData> = (0..n)
        .map(|_| {
            let x = DMatrix::from_fn(t, k, |_, _| std_normal(&mut g));
            EquationData {
                y: DVector::from_fn(t, |_, _| std_normal(&mut g)),
                tree: TreeData::new(&x),
                x,
            }
        })
        .collect();
    let mut spec = ModelSpec {
        quantiles,
        sweeps: 2,
        burn_in: 1,
        thin: 1,
        ..ModelSpec::default()
    };
    spec.hyper.tree.num_trees = trees;
    spec.hyper.leaf_scale = Some(0.5);
    spec.hyper.intercept_var = 4.0;
    spec.hyper.sv = SvPrior {
        mu_var: 1.0,
        ..SvPrior::default()
    };
    tweak(&mut spec);
    Chain::from_data(spec, data, seed).unwrap()
}

pub fn run_geweke(mut chain: Chain, cycles: usize, seed: u64) -> GewekeOutcome {
    let mut g = stream(seed, StreamTag::Simulate, 200, 0);
    let mut marginal: Vec<Vec<f64>> = Vec::new();
    let mut successive: Vec<Vec<f64>> = Vec::new();
    let mut names = Vec::new();
    let mut prior = chain.clone();
    for _ in 0..cycles {
        draw_prior_state(&mut prior, &mut g);
        let stats = geweke_statistics(&prior);
        if names.is_empty() {
            names = stats.iter().map(|s| s.0.clone()).collect();
            marginal = vec![Vec::with_capacity(cycles); names.len()];
            successive = vec![Vec::with_capacity(cycles); names.len()];
        }
        for (m, s) in marginal.iter_mut().zip(&stats) {
            m.push(s.1);
        }
    }
    draw_prior_state(&mut chain, &mut g);
    regenerate_responses(&mut chain, &mut g);
    for _ in 0..cycles {
        chain.sweep().unwrap();
        regenerate_responses(&mut chain, &mut g);
        for (m, s) in successive.iter_mut().zip(geweke_statistics(&chain)) {
            m.push(s.1);
        }
    }
    let mut scores = Vec::new();
    for (k, name) in names.iter().enumerate() {
        for moment in 1..=2 {
            let pw = |v: &Vec<f64>| v.iter().map(|x| x.powi(moment as i32)).collect::<Vec<f64>>();
            scores.push((name.clone(), moment, geweke_z(&pw(&marginal[k]), &pw(&successive[k]))));
        }
    }
    GewekeOutcome { scores }
}
