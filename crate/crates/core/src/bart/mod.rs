//! Sum-of-trees approximation with the depth/leaf regularization prior and a
//! heteroskedastic Bayesian backfitting sampler.
//!
//! Each tree is updated against the partial residual of the others with a
//! Metropolis-Hastings move (grow, prune, change, swap) evaluated on the
//! weighted marginal likelihood with leaf values integrated out. Leaf values
//! are then drawn from their Gaussian conditionals.

mod tree;

pub use tree::{
    depth_split_probability, is_descendant, leaf_prior_scale, left_child, node_depth, parent,
    right_child, sample_prior_shape, DecisionRule, Node, PackedForest, PackedNode, Tree,
    PACKED_LEAF,
};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::std_normal;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeHyper {
    pub alpha: f64,
    pub zeta: f64,
    pub gamma: f64,
    pub num_trees: usize,
}

impl Default for TreeHyper {
    fn default() -> Self {
        TreeHyper {
            alpha: 0.95,
            zeta: 2.0,
            gamma: 2.0,
            num_trees: 250,
        }
    }
}

/// Proposal mix for the tree moves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoveMix {
    pub grow: f64,
    pub prune: f64,
    pub change: f64,
    pub swap: f64,
}

impl Default for MoveMix {
    fn default() -> Self {
        MoveMix {
            grow: 0.25,
            prune: 0.25,
            change: 0.40,
            swap: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    /// Leaf prior standard deviation `v`.
    pub leaf_scale: f64,
    pub hyper: TreeHyper,
}

impl Forest {
    /// All-stump forest with zero leaves.
    pub fn stumps(hyper: TreeHyper, leaf_scale: f64) -> Self {
        Forest {
            trees: vec![Tree::stump(0.0); hyper.num_trees],
            leaf_scale,
            hyper,
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if let Some(v) = self.trees.iter().filter_map(Tree::max_var).max() {
            if v >= x.len() {
                return Err(Error::domain(format!(
                    "forest splits on covariate {v} but input has {} entries",
                    x.len()
                )));
            }
        }
        Ok(self.trees.iter().map(|t| t.predict(x)).sum())
    }

    pub fn packed(&self) -> PackedForest {
        PackedForest::from_trees(&self.trees)
    }
}

/// Training covariates in row-major layout plus the candidate split values
/// (sorted distinct observed values of each covariate).
#[derive(Debug, Clone)]
pub struct TreeData {
    rows: Vec<Vec<f64>>,
    cutpoints: Vec<Vec<f64>>,
}

impl TreeData {
    pub fn new(x: &DMatrix<f64>) -> Self {
        let rows = (0..x.nrows())
            .map(|r| x.row(r).iter().copied().collect())
            .collect();
        let cutpoints = (0..x.ncols())
            .map(|c| {
                let mut v: Vec<f64> = x.column(c).iter().copied().collect();
                v.sort_by(f64::total_cmp);
                v.dedup();
                v
            })
            .collect();
        TreeData { rows, cutpoints }
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_covariates(&self) -> usize {
        self.cutpoints.len()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.rows[t]
    }

    pub fn cutpoints(&self, var: usize) -> &[f64] {
        &self.cutpoints[var]
    }

    /// Uniform draw over covariates, then over that covariate's observed values.
    pub fn sample_rule<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<DecisionRule> {
        let var = rng.random_range(0..self.num_covariates().max(1));
        let cuts = self.cutpoints.get(var)?;
        if cuts.is_empty() {
            return None;
        }
        let threshold = cuts[rng.random_range(0..cuts.len())];
        Some(DecisionRule { var, threshold })
    }
}

/// Log marginal likelihood of one node with leaf value integrated out,
/// up to terms that do not depend on the tree:
/// `-1/2 log(1 + v^2 sum(pi)) + (sum(pi r))^2 / (2 (sum(pi) + 1/v^2))`.
#[inline]
pub fn node_log_marginal(sum_prec: f64, sum_prec_r: f64, leaf_var: f64) -> f64 {
    -0.5 * (1.0 + leaf_var * sum_prec).ln() + 0.5 * sum_prec_r * sum_prec_r / (sum_prec + 1.0 / leaf_var)
}

/// Full log marginal density of the node data `r_t ~ N(mu, s2_t)`,
/// `mu ~ N(0, v2)`.
pub fn node_log_marginal_full(r: &[f64], s2: &[f64], leaf_var: f64) -> f64 {
    let (mut sp, mut spr, mut c) = (0.0, 0.0, 0.0);
    for (&rt, &st) in r.iter().zip(s2) {
        sp += 1.0 / st;
        spr += rt / st;
        c += -0.5 * (2.0 * std::f64::consts::PI * st).ln() - 0.5 * rt * rt / st;
    }
    c + node_log_marginal(sp, spr, leaf_var)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveStats {
    pub proposed: usize,
    pub accepted: usize,
}

/// A forest together with its cached training-set routing.
#[derive(Debug, Clone, PartialEq)]
pub struct ForestSampler {
    forest: Forest,
    move_mix: MoveMix,
    /// Leaf reached by every observation, per tree.
    leaf_of: Vec<Vec<u64>>,
    fit: Vec<f64>,
}

#[derive(Default)]
struct LeafStats {
    ids: Vec<u64>,
    prec: Vec<f64>,
    prec_r: Vec<f64>,
    count: Vec<usize>,
}

impl LeafStats {
    fn add(&mut self, id: u64, prec: f64, r: f64) {
        let k = match self.ids.iter().position(|&i| i == id) {
            Some(k) => k,
            None => {
                self.ids.push(id);
                self.prec.push(0.0);
                self.prec_r.push(0.0);
                self.count.push(0);
                self.ids.len() - 1
            }
        };
        self.prec[k] += prec;
        self.prec_r[k] += prec * r;
        self.count[k] += 1;
    }

    fn log_marginal(&self, leaf_var: f64) -> f64 {
        (0..self.ids.len())
            .map(|k| node_log_marginal(self.prec[k], self.prec_r[k], leaf_var))
            .sum()
    }
}

impl ForestSampler {
    pub fn new(forest: Forest, data: &TreeData) -> Self {
        let n = data.num_rows();
        let mut leaf_of = Vec::with_capacity(forest.trees.len());
        let mut fit = vec![0.0; n];
        for tree in &forest.trees {
            let ids: Vec<u64> = (0..n).map(|t| tree.route(data.row(t))).collect();
            for (f, &id) in fit.iter_mut().zip(&ids) {
                *f += tree.leaf_value(id).unwrap_or(0.0);
            }
            leaf_of.push(ids);
        }
        ForestSampler {
            forest,
            move_mix: MoveMix::default(),
            leaf_of,
            fit,
        }
    }

    pub fn with_move_mix(mut self, mix: MoveMix) -> Self {
        self.move_mix = mix;
        self
    }

    pub fn forest(&self) -> &Forest {
        &self.forest
    }

    pub fn into_forest(self) -> Forest {
        self.forest
    }

    /// Sum-of-trees fit at the training rows.
    pub fn fit(&self) -> &[f64] {
        &self.fit
    }

    pub fn set_leaf_scale(&mut self, v: f64) {
        self.forest.leaf_scale = v;
    }

    /// One backfitting pass over all trees against residual target `r`
    /// with observation variances `s2`.
    pub fn sweep<R: Rng + ?Sized>(
        &mut self,
        data: &TreeData,
        r: &[f64],
        s2: &[f64],
        rng: &mut R,
    ) -> Result<MoveStats> {
        let n = data.num_rows();
        if r.len() != n || s2.len() != n {
            return Err(Error::domain("residual/variance length mismatch"));
        }
        if let Some(bad) = s2.iter().find(|&&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::domain(format!("observation variance {bad} must be positive")));
        }
        if let Some(bad) = r.iter().find(|x| !x.is_finite()) {
            return Err(Error::numerical(format!("non-finite residual {bad}")));
        }
        let prec: Vec<f64> = s2.iter().map(|s| 1.0 / s).collect();
        let mut stats = MoveStats::default();
        let mut partial = vec![0.0; n];
        let mut own = vec![0.0; n];
        for s in 0..self.forest.trees.len() {
            for t in 0..n {
                own[t] = self.forest.trees[s]
                    .leaf_value(self.leaf_of[s][t])
                    .unwrap_or(0.0);
                partial[t] = r[t] - (self.fit[t] - own[t]);
            }
            stats.proposed += 1;
            if self.update_structure(s, data, &partial, &prec, rng) {
                stats.accepted += 1;
            }
            self.draw_leaves(s, &partial, &prec, rng);
            let tree = &self.forest.trees[s];
            for t in 0..n {
                let new_own = tree.leaf_value(self.leaf_of[s][t]).unwrap_or(0.0);
                self.fit[t] += new_own - own[t];
            }
        }
        Ok(stats)
    }

    fn update_structure<R: Rng + ?Sized>(
        &mut self,
        s: usize,
        data: &TreeData,
        partial: &[f64],
        prec: &[f64],
        rng: &mut R,
    ) -> bool {
        let mix = self.move_mix;
        let u: f64 = rng.random::<f64>() * (mix.grow + mix.prune + mix.change + mix.swap);
        if u < mix.grow {
            self.propose_grow(s, data, partial, prec, rng)
        } else if u < mix.grow + mix.prune {
            self.propose_prune(s, partial, prec, rng)
        } else if u < mix.grow + mix.prune + mix.change {
            self.propose_change(s, data, partial, prec, rng)
        } else {
            self.propose_swap(s, data, partial, prec, rng)
        }
    }

    fn leaf_var(&self) -> f64 {
        self.forest.leaf_scale * self.forest.leaf_scale
    }

    fn propose_grow<R: Rng + ?Sized>(
        &mut self,
        s: usize,
        data: &TreeData,
        partial: &[f64],
        prec: &[f64],
        rng: &mut R,
    ) -> bool {
        let tree = &self.forest.trees[s];
        let leaves = tree.leaf_ids();
        let leaf = leaves[rng.random_range(0..leaves.len())];
        let Some(rule) = data.sample_rule(rng) else {
            return false;
        };
        let (l, r) = (left_child(leaf), right_child(leaf));
        let mut parent_stats = LeafStats::default();
        let mut child_stats = LeafStats::default();
        let mut new_ids = Vec::new();
        for (t, &id) in self.leaf_of[s].iter().enumerate() {
            if id == leaf {
                let child = if rule.goes_left(data.row(t)) { l } else { r };
                parent_stats.add(leaf, prec[t], partial[t]);
                child_stats.add(child, prec[t], partial[t]);
                new_ids.push((t, child));
            }
        }
        if child_stats.ids.len() < 2 {
            return false;
        }
        let d = node_depth(leaf);
        let (alpha, zeta) = (self.forest.hyper.alpha, self.forest.hyper.zeta);
        let pd = depth_split_probability(d, alpha, zeta);
        let pd1 = depth_split_probability(d + 1, alpha, zeta);
        let parent_was_nog = parent(leaf).is_some_and(|p| {
            let sib = if left_child(p) == leaf { right_child(p) } else { left_child(p) };
            tree.is_leaf(sib)
        });
        let nog_after = tree.nog_ids().len() + 1 - usize::from(parent_was_nog);
        let v2 = self.leaf_var();
        let log_ratio = child_stats.log_marginal(v2) - parent_stats.log_marginal(v2)
            + pd.ln()
            + 2.0 * (1.0 - pd1).ln()
            - (1.0 - pd).ln()
            + (leaves.len() as f64).ln()
            - (nog_after as f64).ln();
        if rng.random::<f64>().ln() < log_ratio {
            self.forest.trees[s].grow(leaf, rule, 0.0, 0.0);
            for (t, child) in new_ids {
                self.leaf_of[s][t] = child;
            }
            true
        } else {
            false
        }
    }

    fn propose_prune<R: Rng + ?Sized>(
        &mut self,
        s: usize,
        partial: &[f64],
        prec: &[f64],
        rng: &mut R,
    ) -> bool {
        let tree = &self.forest.trees[s];
        let nogs = tree.nog_ids();
        if nogs.is_empty() {
            return false;
        }
        let node = nogs[rng.random_range(0..nogs.len())];
        let mut merged = LeafStats::default();
        let mut split = LeafStats::default();
        for (t, &id) in self.leaf_of[s].iter().enumerate() {
            if parent(id) == Some(node) {
                merged.add(node, prec[t], partial[t]);
                split.add(id, prec[t], partial[t]);
            }
        }
        let d = node_depth(node);
        let (alpha, zeta) = (self.forest.hyper.alpha, self.forest.hyper.zeta);
        let pd = depth_split_probability(d, alpha, zeta);
        let pd1 = depth_split_probability(d + 1, alpha, zeta);
        let leaves_after = tree.num_leaves() - 1;
        let v2 = self.leaf_var();
        let log_ratio = merged.log_marginal(v2) - split.log_marginal(v2) + (1.0 - pd).ln()
            - pd.ln()
            - 2.0 * (1.0 - pd1).ln()
            + (nogs.len() as f64).ln()
            - (leaves_after as f64).ln();
        if rng.random::<f64>().ln() < log_ratio {
            self.forest.trees[s].prune(node, 0.0);
            for id in self.leaf_of[s].iter_mut() {
                if parent(*id) == Some(node) {
                    *id = node;
                }
            }
            true
        } else {
            false
        }
    }

    /// Shared tail of change/swap: re-route the observations below `node`
    /// through `proposal` and accept on the likelihood ratio.
    fn accept_rerouted<R: Rng + ?Sized>(
        &mut self,
        s: usize,
        node: u64,
        proposal: Tree,
        data: &TreeData,
        partial: &[f64],
        prec: &[f64],
        rng: &mut R,
    ) -> bool {
        let mut old = LeafStats::default();
        let mut new = LeafStats::default();
        let mut moved = Vec::new();
        for (t, &id) in self.leaf_of[s].iter().enumerate() {
            if is_descendant(id, node) {
                let nid = proposal.route_from(node, data.row(t));
                old.add(id, prec[t], partial[t]);
                new.add(nid, prec[t], partial[t]);
                moved.push((t, nid));
            }
        }
        let leaves_below = proposal
            .leaf_ids()
            .into_iter()
            .filter(|&id| is_descendant(id, node))
            .count();
        if new.ids.len() < leaves_below {
            return false;
        }
        let v2 = self.leaf_var();
        let log_ratio = new.log_marginal(v2) - old.log_marginal(v2);
        if rng.random::<f64>().ln() < log_ratio {
            self.forest.trees[s] = proposal;
            for (t, id) in moved {
                self.leaf_of[s][t] = id;
            }
            true
        } else {
            false
        }
    }

    fn propose_change<R: Rng + ?Sized>(
        &mut self,
        s: usize,
        data: &TreeData,
        partial: &[f64],
        prec: &[f64],
        rng: &mut R,
    ) -> bool {
        let internal = self.forest.trees[s].internal_ids();
        if internal.is_empty() {
            return false;
        }
        let node = internal[rng.random_range(0..internal.len())];
        let Some(rule) = data.sample_rule(rng) else {
            return false;
        };
        let mut proposal = self.forest.trees[s].clone();
        proposal.set_rule(node, rule);
        self.accept_rerouted(s, node, proposal, data, partial, prec, rng)
    }

    fn propose_swap<R: Rng + ?Sized>(
        &mut self,
        s: usize,
        data: &TreeData,
        partial: &[f64],
        prec: &[f64],
        rng: &mut R,
    ) -> bool {
        let tree = &self.forest.trees[s];
        let pairs: Vec<(u64, u64)> = tree
            .internal_ids()
            .into_iter()
            .filter_map(|c| parent(c).map(|p| (p, c)))
            .collect();
        if pairs.is_empty() {
            return false;
        }
        let (p, c) = pairs[rng.random_range(0..pairs.len())];
        let (rp, rc) = (tree.rule(p).unwrap(), tree.rule(c).unwrap());
        let mut proposal = tree.clone();
        proposal.set_rule(p, rc);
        proposal.set_rule(c, rp);
        self.accept_rerouted(s, p, proposal, data, partial, prec, rng)
    }

    fn draw_leaves<R: Rng + ?Sized>(&mut self, s: usize, partial: &[f64], prec: &[f64], rng: &mut R) {
        let mut stats = LeafStats::default();
        for (t, &id) in self.leaf_of[s].iter().enumerate() {
            stats.add(id, prec[t], partial[t]);
        }
        let v2 = self.leaf_var();
        let tree = &mut self.forest.trees[s];
        let leaves = tree.leaf_ids();
        let mut new_vals = Vec::with_capacity(leaves.len());
        for id in leaves {
            let (sp, spr) = match stats.ids.iter().position(|&i| i == id) {
                Some(k) => (stats.prec[k], stats.prec_r[k]),
                None => (0.0, 0.0),
            };
            let post_prec = sp + 1.0 / v2;
            let value = spr / post_prec + std_normal(rng) / post_prec.sqrt();
            new_vals.push((id, value));
        }
        for &(id, value) in &new_vals {
            tree.set_leaf_value(id, value);
        }
    }
}

/// Functional form of [`ForestSampler::sweep`]: one backfitting pass
/// returning the updated forest.
pub fn backfit_sweep<R: Rng + ?Sized>(
    forest: Forest,
    x: &DMatrix<f64>,
    r: &[f64],
    s2: &[f64],
    rng: &mut R,
) -> Result<Forest> {
    let data = TreeData::new(x);
    let mut sampler = ForestSampler::new(forest, &data);
    sampler.sweep(&data, r, s2, rng)?;
    Ok(sampler.into_forest())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::{chi_square_test, mean, variance};
    use crate::dist::std_normal;
    use crate::rng::{stream, StreamRng, StreamTag};

    fn rng(k: usize) -> StreamRng {
        stream(5, StreamTag::Simulate, k, 0)
    }

    fn hyper(s: usize) -> TreeHyper {
        TreeHyper {
            num_trees: s,
            ..TreeHyper::default()
        }
    }

    #[test]
    fn marginal_matches_quadrature() {
        let r = [0.3, -1.2, 2.0];
        let s2 = [0.5, 1.5, 0.8];
        let v2 = 0.7f64;
        // Simpson over the leaf value on a wide grid
        let (lo, hi, m) = (-15.0, 15.0, 20_000);
        let step = (hi - lo) / m as f64;
        let integrand = |mu: f64| {
            let ll: f64 = r
                .iter()
                .zip(&s2)
                .map(|(&x, &s)| crate::dist::normal_ln_pdf(x, mu, s))
                .sum();
            (ll + crate::dist::normal_ln_pdf(mu, 0.0, v2)).exp()
        };
        let mut acc = integrand(lo) + integrand(hi);
        for k in 1..m {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * integrand(lo + k as f64 * step);
        }
        let quad = (acc * step / 3.0).ln();
        let closed = node_log_marginal_full(&r, &s2, v2);
        assert!((quad - closed).abs() < 1e-8, "{quad} vs {closed}");
    }

    #[test]
    fn predict_examples() {
        let f = Forest::stumps(hyper(3), 1.0);
        assert_eq!(f.predict(&[1.0]).unwrap(), 0.0);
        let mut t = Tree::stump(0.0);
        t.grow(0, DecisionRule { var: 0, threshold: 0.0 }, -1.0, 1.0);
        let f = Forest {
            trees: vec![t],
            leaf_scale: 1.0,
            hyper: hyper(1),
        };
        assert_eq!(f.predict(&[-0.5, 3.0]).unwrap(), -1.0);
        assert_eq!(f.predict(&[0.5, 3.0]).unwrap(), 1.0);
        let f2 = Forest {
            trees: vec![Tree::stump(1.5), Tree::stump(1.5)],
            leaf_scale: 1.0,
            hyper: hyper(2),
        };
        assert_eq!(f2.predict(&[]).unwrap(), 3.0);
        let mut deep = Tree::stump(0.0);
        deep.grow(0, DecisionRule { var: 2, threshold: 0.0 }, 0.0, 0.0);
        let f3 = Forest {
            trees: vec![deep],
            leaf_scale: 1.0,
            hyper: hyper(1),
        };
        assert!(f3.predict(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn single_observation_conjugate_leaf() {
        let x = DMatrix::from_element(1, 1, 0.0);
        let data = TreeData::new(&x);
        let (v, s2, r1) = (0.8f64, 0.5f64, 1.7f64);
        let mut sampler = ForestSampler::new(Forest::stumps(hyper(1), v), &data);
        let mut g = rng(0);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                sampler.sweep(&data, &[r1], &[s2], &mut g).unwrap();
                assert!(sampler.forest().trees[0].is_stump());
                sampler.fit()[0]
            })
            .collect();
        let post_mean = r1 * v * v / (v * v + s2);
        let post_var = 1.0 / (1.0 / (v * v) + 1.0 / s2);
        let se = (post_var / n as f64).sqrt();
        assert!((mean(&draws) - post_mean).abs() < 4.0 * se);
        assert!((variance(&draws) / post_var - 1.0).abs() < 0.02);
    }

    #[test]
    fn vanishing_leaf_prior_kills_fit() {
        let mut g = rng(1);
        let n = 100;
        let x = DMatrix::from_fn(n, 2, |_, _| std_normal(&mut g));
        let data = TreeData::new(&x);
        let r: Vec<f64> = (0..n).map(|t| 3.0 + x[(t, 0)]).collect();
        let mut sampler = ForestSampler::new(Forest::stumps(hyper(20), 1e-9), &data);
        for _ in 0..20 {
            sampler.sweep(&data, &r, &vec![1.0; n], &mut g).unwrap();
        }
        assert!(sampler.fit().iter().all(|f| f.abs() < 1e-6));
    }

    #[test]
    fn rejects_bad_weights() {
        let x = DMatrix::from_element(2, 1, 0.0);
        let data = TreeData::new(&x);
        let mut sampler = ForestSampler::new(Forest::stumps(hyper(1), 1.0), &data);
        let mut g = rng(2);
        assert!(matches!(
            sampler.sweep(&data, &[0.0, 0.0], &[1.0, 0.0], &mut g),
            Err(Error::Domain(_))
        ));
        assert!(sampler.sweep(&data, &[0.0], &[1.0], &mut g).is_err());
    }

    #[test]
    fn fit_cache_matches_prediction() {
        let mut g = rng(3);
        let n = 80;
        let x = DMatrix::from_fn(n, 3, |_, _| std_normal(&mut g));
        let data = TreeData::new(&x);
        let r: Vec<f64> = (0..n).map(|t| (2.0 * x[(t, 1)]).sin() + 0.1 * std_normal(&mut g)).collect();
        let mut sampler = ForestSampler::new(Forest::stumps(hyper(10), 0.3), &data);
        for _ in 0..50 {
            sampler.sweep(&data, &r, &vec![0.01; n], &mut g).unwrap();
        }
        let packed = sampler.forest().packed();
        for t in 0..n {
            let direct = sampler.forest().predict(data.row(t)).unwrap();
            assert!((direct - sampler.fit()[t]).abs() < 1e-9);
            assert!((packed.predict(data.row(t)) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn step_function_recovery() {
        let mut g = rng(4);
        let n = 500;
        let x = DMatrix::from_fn(n, 1, |_, _| 2.0 * crate::dist::uniform(&mut g) - 1.0);
        let truth = |v: f64| if v > 0.0 { 2.0 } else { 0.0 };
        let noise = 0.25f64;
        let y: Vec<f64> = (0..n).map(|t| truth(x[(t, 0)]) + noise * std_normal(&mut g)).collect();
        let (lo, hi) = y.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let s = 50;
        let v = leaf_prior_scale(lo, hi, 2.0, s).unwrap();
        let data = TreeData::new(&x);
        let mut sampler = ForestSampler::new(Forest::stumps(hyper(s), v), &data);
        let s2 = vec![noise * noise; n];
        let grid: Vec<f64> = (0..=200).map(|k| -0.99 + 1.98 * k as f64 / 200.0).collect();
        let mut acc = vec![0.0; grid.len()];
        let (sweeps, burn) = (1200, 200);
        for it in 0..sweeps {
            sampler.sweep(&data, &y, &s2, &mut g).unwrap();
            if it >= burn {
                let packed = sampler.forest().packed();
                for (a, &gx) in acc.iter_mut().zip(&grid) {
                    *a += packed.predict(&[gx]);
                }
            }
        }
        let k = (sweeps - burn) as f64;
        let rmse = (grid
            .iter()
            .zip(&acc)
            .map(|(&gx, a)| (a / k - truth(gx)).powi(2))
            .sum::<f64>()
            / grid.len() as f64)
            .sqrt();
        assert!(rmse < 0.2, "rmse {rmse}");
    }

    /// Draws a tree from the structure prior restricted to trees whose
    /// leaves are all non-empty on `data`; returns its depth.
    fn restricted_prior_depth(data: &TreeData, h: &TreeHyper, g: &mut StreamRng) -> usize {
        'outer: loop {
            let mut stack = vec![(0usize, (0..data.num_rows()).collect::<Vec<_>>())];
            let mut depth = 0;
            while let Some((d, rows)) = stack.pop() {
                if crate::dist::uniform(g) < depth_split_probability(d, h.alpha, h.zeta) {
                    let rule = data.sample_rule(g).unwrap();
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        rows.iter().partition(|&&t| rule.goes_left(data.row(t)));
                    if l.is_empty() || r.is_empty() {
                        continue 'outer;
                    }
                    stack.push((d + 1, l));
                    stack.push((d + 1, r));
                } else {
                    depth = depth.max(d);
                }
            }
            return depth;
        }
    }

    #[test]
    fn flat_likelihood_preserves_depth_prior() {
        let mut g = rng(6);
        let n = 40;
        let x = DMatrix::from_fn(n, 2, |_, _| std_normal(&mut g));
        let data = TreeData::new(&x);
        let h = hyper(10);
        let chains = 300;
        let max_bin = 4;
        let mut observed = vec![0.0; max_bin + 1];
        for c in 0..chains {
            let mut cg = stream(6, StreamTag::Simulate, c, 1);
            let mut sampler = ForestSampler::new(Forest::stumps(h, 1.0), &data);
            let r: Vec<f64> = (0..n).map(|_| std_normal(&mut cg)).collect();
            for _ in 0..60 {
                sampler.sweep(&data, &r, &vec![1e12; n], &mut cg).unwrap();
            }
            for t in &sampler.forest().trees {
                observed[t.depth().min(max_bin)] += 1.0;
            }
        }
        let total: f64 = observed.iter().sum();
        let mut expected = vec![0.0; max_bin + 1];
        let draws = 200_000;
        for _ in 0..draws {
            expected[restricted_prior_depth(&data, &h, &mut g).min(max_bin)] += 1.0;
        }
        for e in expected.iter_mut() {
            *e *= total / draws as f64;
        }
        let (_, p) = chi_square_test(&observed, &expected);
        assert!(p > 0.05, "depth histogram {observed:?} vs {expected:?}, p = {p}");
    }

    #[test]
    fn random_trees_route_everywhere() {
        let mut g = rng(7);
        let x = DMatrix::from_fn(60, 3, |_, _| std_normal(&mut g));
        let data = TreeData::new(&x);
        let mut sampler = ForestSampler::new(Forest::stumps(hyper(20), 1.0), &data);
        let r: Vec<f64> = (0..60).map(|_| std_normal(&mut g)).collect();
        for _ in 0..30 {
            sampler.sweep(&data, &r, &vec![1e6; 60], &mut g).unwrap();
        }
        for _ in 0..10_000 {
            let input: Vec<f64> = (0..3).map(|_| 3.0 * std_normal(&mut g)).collect();
            for tree in &sampler.forest().trees {
                let leaf = tree.route(&input);
                assert!(tree.is_leaf(leaf));
            }
        }
    }
}
