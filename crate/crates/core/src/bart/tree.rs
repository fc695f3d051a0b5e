use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `x[var] <= threshold` routes left, otherwise right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionRule {
    pub var: usize,
    pub threshold: f64,
}

impl DecisionRule {
    #[inline]
    pub fn goes_left(&self, x: &[f64]) -> bool {
        x[self.var] <= self.threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split(DecisionRule),
    Leaf(f64),
}

/// Binary tree stored by heap index: the root is 0 and node `k` has
/// children `2k + 1` (left) and `2k + 2` (right).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: BTreeMap<u64, Node>,
}

#[inline]
pub fn left_child(id: u64) -> u64 {
    2 * id + 1
}

#[inline]
pub fn right_child(id: u64) -> u64 {
    2 * id + 2
}

#[inline]
pub fn parent(id: u64) -> Option<u64> {
    (id > 0).then(|| (id - 1) / 2)
}

#[inline]
pub fn node_depth(id: u64) -> usize {
    (63 - (id + 1).leading_zeros()) as usize
}

/// True when `node` is `ancestor` or lies below it.
pub fn is_descendant(mut node: u64, ancestor: u64) -> bool {
    while node > ancestor {
        node = (node - 1) / 2;
    }
    node == ancestor
}

impl Tree {
    pub fn stump(value: f64) -> Self {
        let mut nodes = BTreeMap::new();
        nodes.insert(0, Node::Leaf(value));
        Tree { nodes }
    }

    pub fn from_nodes(nodes: BTreeMap<u64, Node>) -> Result<Self> {
        let t = Tree { nodes };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        if !self.nodes.contains_key(&0) {
            return Err(Error::domain("tree has no root"));
        }
        for (&id, node) in &self.nodes {
            if let Some(p) = parent(id) {
                if !matches!(self.nodes.get(&p), Some(Node::Split(_))) {
                    return Err(Error::domain(format!("node {id} has no split parent")));
                }
            }
            if let Node::Split(_) = node {
                if !self.nodes.contains_key(&left_child(id)) || !self.nodes.contains_key(&right_child(id)) {
                    return Err(Error::domain(format!("split node {id} lacks children")));
                }
            }
        }
        Ok(())
    }

    pub fn nodes(&self) -> &BTreeMap<u64, Node> {
        &self.nodes
    }

    pub fn node(&self, id: u64) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn is_stump(&self) -> bool {
        self.nodes.len() == 1
    }

    pub fn leaf_ids(&self) -> Vec<u64> {
        self.nodes
            .iter()
            .filter_map(|(&id, n)| matches!(n, Node::Leaf(_)).then_some(id))
            .collect()
    }

    pub fn internal_ids(&self) -> Vec<u64> {
        self.nodes
            .iter()
            .filter_map(|(&id, n)| matches!(n, Node::Split(_)).then_some(id))
            .collect()
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes.values().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    /// Depth of the deepest leaf (a stump has depth 0).
    pub fn depth(&self) -> usize {
        self.nodes.keys().map(|&id| node_depth(id)).max().unwrap_or(0)
    }

    pub fn is_leaf(&self, id: u64) -> bool {
        matches!(self.nodes.get(&id), Some(Node::Leaf(_)))
    }

    /// Internal nodes whose two children are both leaves.
    pub fn nog_ids(&self) -> Vec<u64> {
        self.nodes
            .iter()
            .filter_map(|(&id, n)| {
                (matches!(n, Node::Split(_))
                    && self.is_leaf(left_child(id))
                    && self.is_leaf(right_child(id)))
                .then_some(id)
            })
            .collect()
    }

    pub fn rule(&self, id: u64) -> Option<DecisionRule> {
        match self.nodes.get(&id) {
            Some(Node::Split(r)) => Some(*r),
            _ => None,
        }
    }

    pub fn leaf_value(&self, id: u64) -> Option<f64> {
        match self.nodes.get(&id) {
            Some(Node::Leaf(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn set_leaf_value(&mut self, id: u64, value: f64) {
        if let Some(n @ Node::Leaf(_)) = self.nodes.get_mut(&id) {
            *n = Node::Leaf(value);
        }
    }

    pub fn set_rule(&mut self, id: u64, rule: DecisionRule) {
        if let Some(n @ Node::Split(_)) = self.nodes.get_mut(&id) {
            *n = Node::Split(rule);
        }
    }

    /// Turns leaf `id` into a split with two leaves.
    pub fn grow(&mut self, id: u64, rule: DecisionRule, left: f64, right: f64) {
        debug_assert!(self.is_leaf(id));
        self.nodes.insert(id, Node::Split(rule));
        self.nodes.insert(left_child(id), Node::Leaf(left));
        self.nodes.insert(right_child(id), Node::Leaf(right));
    }

    /// Collapses a split whose children are both leaves.
    pub fn prune(&mut self, id: u64, value: f64) {
        debug_assert!(self.is_leaf(left_child(id)) && self.is_leaf(right_child(id)));
        self.nodes.remove(&left_child(id));
        self.nodes.remove(&right_child(id));
        self.nodes.insert(id, Node::Leaf(value));
    }

    /// Terminal node reached by `x` starting from node `start`.
    #[inline]
    pub fn route_from(&self, start: u64, x: &[f64]) -> u64 {
        let mut id = start;
        while let Some(Node::Split(rule)) = self.nodes.get(&id) {
            id = if rule.goes_left(x) {
                left_child(id)
            } else {
                right_child(id)
            };
        }
        id
    }

    #[inline]
    pub fn route(&self, x: &[f64]) -> u64 {
        self.route_from(0, x)
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.leaf_value(self.route(x)).unwrap_or(0.0)
    }

    pub fn max_var(&self) -> Option<usize> {
        self.nodes
            .values()
            .filter_map(|n| match n {
                Node::Split(r) => Some(r.var),
                Node::Leaf(_) => None,
            })
            .max()
    }
}

/// Prior probability that a node at depth `d` splits: `alpha (1 + d)^-zeta`.
pub fn depth_split_probability(d: usize, alpha: f64, zeta: f64) -> f64 {
    alpha * (1.0 + d as f64).powf(-zeta)
}

/// Leaf prior standard deviation `(y_max - y_min) / (2 gamma sqrt(S))`.
pub fn leaf_prior_scale(y_min: f64, y_max: f64, gamma: f64, num_trees: usize) -> Result<f64> {
    if !(y_max > y_min) {
        return Err(Error::domain(format!(
            "response range [{y_min}, {y_max}] is degenerate"
        )));
    }
    if !(gamma > 0.0) || num_trees == 0 {
        return Err(Error::domain("gamma must be positive and S at least 1"));
    }
    Ok((y_max - y_min) / (2.0 * gamma * (num_trees as f64).sqrt()))
}

/// Draws a tree shape from the depth-dependent branching process and
/// returns its number of terminal nodes and depth.
pub fn sample_prior_shape<R: Rng + ?Sized>(alpha: f64, zeta: f64, rng: &mut R) -> (usize, usize) {
    let mut stack = vec![0usize];
    let (mut leaves, mut depth) = (0, 0);
    while let Some(d) = stack.pop() {
        if d < 60 && rng.random::<f64>() < depth_split_probability(d, alpha, zeta) {
            stack.push(d + 1);
            stack.push(d + 1);
        } else {
            leaves += 1;
            depth = depth.max(d);
        }
    }
    (leaves, depth)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PackedNode {
    /// Split covariate, or `u32::MAX` for a leaf.
    pub var: u32,
    /// Threshold for splits, fitted value for leaves.
    pub value: f64,
    /// Index of the right child; the left child is the next node.
    pub right: u32,
}

/// Flat pre-order layout of a forest, used for retained draws.
///
/// Tree `s` occupies `nodes[roots[s]..roots[s + 1]]` (or to the end).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PackedForest {
    pub nodes: Vec<PackedNode>,
    pub roots: Vec<u32>,
}

pub const PACKED_LEAF: u32 = u32::MAX;

impl PackedForest {
    pub fn from_trees(trees: &[Tree]) -> Self {
        let mut out = PackedForest::default();
        for t in trees {
            out.roots.push(out.nodes.len() as u32);
            out.push_subtree(t, 0);
        }
        out
    }

    fn push_subtree(&mut self, tree: &Tree, id: u64) {
        match tree.node(id) {
            Some(Node::Leaf(v)) => self.nodes.push(PackedNode {
                var: PACKED_LEAF,
                value: *v,
                right: 0,
            }),
            Some(Node::Split(r)) => {
                let at = self.nodes.len();
                self.nodes.push(PackedNode {
                    var: r.var as u32,
                    value: r.threshold,
                    right: 0,
                });
                self.push_subtree(tree, left_child(id));
                self.nodes[at].right = self.nodes.len() as u32;
                self.push_subtree(tree, right_child(id));
            }
            None => unreachable!("tree invariant: split nodes have children"),
        }
    }

    pub fn num_trees(&self) -> usize {
        self.roots.len()
    }

    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut sum = 0.0;
        for &root in &self.roots {
            let mut i = root as usize;
            loop {
                let n = &self.nodes[i];
                if n.var == PACKED_LEAF {
                    sum += n.value;
                    break;
                }
                i = if x[n.var as usize] <= n.value {
                    i + 1
                } else {
                    n.right as usize
                };
            }
        }
        sum
    }

    pub fn max_var(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter(|n| n.var != PACKED_LEAF)
            .map(|n| n.var as usize)
            .max()
    }
}
