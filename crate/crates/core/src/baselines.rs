//! Comparison rules: Virtual Twins leaf unions and adjusted-value trees.

use serde::{Deserialize, Serialize};

use crate::contrast::estimate_contrast_rf;
use crate::dataset::{CovariateMatrix, TrialDataset};
use crate::error::{Error, Result};
use crate::forest::{grow_regression_tree, ForestParams, Node, Tree, TreeSpec};
use crate::policytree::{search, PolicyNode, PolicyTree, SearchResult};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VtVariant {
    /// Leaves whose mean contrast exceeds delta.
    A,
    /// Leaves where most units have contrast above delta.
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VtParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for VtParams {
    fn default() -> Self {
        Self {
            max_depth: 4,
            min_leaf: 20,
        }
    }
}

/// Regression tree of the contrast whose selected leaves form the subgroup.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafUnionRule {
    pub tree: Tree<f64>,
    pub selected_leaves: Vec<usize>,
    pub variant: VtVariant,
}

impl LeafUnionRule {
    pub fn assign(&self, x: &CovariateMatrix) -> Result<Vec<u8>> {
        let needed = self
            .tree
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature + 1),
                Node::Leaf(_) => None,
            })
            .max()
            .unwrap_or(0);
        if needed > x.n_cols() {
            return Err(Error::validation(format!(
                "rule splits on x{needed} but data has {} covariates",
                x.n_cols()
            )));
        }
        Ok((0..x.n_rows())
            .map(|i| u8::from(self.selected_leaves.contains(&self.tree.leaf_index(x, i))))
            .collect())
    }

    /// The same rule as a policy tree.
    pub fn to_policy_tree(&self) -> PolicyTree {
        fn convert(rule: &LeafUnionRule, at: usize) -> (PolicyNode, usize) {
            match &rule.tree.nodes[at] {
                Node::Leaf(_) => (PolicyNode::leaf(u8::from(rule.selected_leaves.contains(&at))), 0),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let (l, dl) = convert(rule, *left);
                    let (r, dr) = convert(rule, *right);
                    (PolicyNode::split(*feature, *threshold, l, r), 1 + dl.max(dr))
                }
            }
        }
        let (root, height) = convert(self, 0);
        PolicyTree {
            depth: height.max(1),
            root,
        }
    }
}

/// Virtual Twins on a given contrast vector.
pub fn vt_from_contrast(
    x: &CovariateMatrix,
    c_hat: &[f64],
    delta: f64,
    variant: VtVariant,
    params: VtParams,
) -> Result<LeafUnionRule> {
    if c_hat.len() != x.n_rows() {
        return Err(Error::validation("contrast length does not match covariate rows"));
    }
    if params.max_depth == 0 || params.min_leaf == 0 {
        return Err(Error::validation("VT tree needs positive depth and leaf size"));
    }
    let spec = TreeSpec {
        mtry: x.n_cols(),
        min_node_size: params.min_leaf,
        max_depth: Some(params.max_depth),
    };
    let tree = grow_regression_tree(x, c_hat, (0..x.n_rows()).collect(), &spec, &mut stream_rng(0, 0));
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); tree.nodes.len()];
    for i in 0..x.n_rows() {
        members[tree.leaf_index(x, i)].push(i);
    }
    let selected_leaves = tree
        .leaves()
        .filter(|(idx, mean)| match variant {
            VtVariant::A => **mean > delta,
            VtVariant::C => {
                let m = &members[*idx];
                let above = m.iter().filter(|&&i| c_hat[i] > delta).count();
                above as f64 / m.len() as f64 > 0.5
            }
        })
        .map(|(idx, _)| idx)
        .collect();
    Ok(LeafUnionRule {
        tree,
        selected_leaves,
        variant,
    })
}

pub fn vt_fit(
    ds: &TrialDataset,
    delta: f64,
    variant: VtVariant,
    params: VtParams,
    forest: &ForestParams,
) -> Result<LeafUnionRule> {
    let est = estimate_contrast_rf(ds, forest)?;
    vt_from_contrast(&ds.covariates, &est.c_hat, delta, variant, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeKind {
    /// Reward `Y - delta`.
    Y,
    /// Reward `c_hat - delta`.
    C,
}

/// Policy tree maximizing `sum D(X_i) (v_i - delta)` for `v = Y` or `c_hat`.
pub fn adjusted_value_from(
    x: &CovariateMatrix,
    values: &[f64],
    delta: f64,
    depth: usize,
) -> Result<SearchResult> {
    let gamma: Vec<f64> = values.iter().map(|v| v - delta).collect();
    search(x, &gamma, depth)
}

pub fn adjusted_value_tree(
    ds: &TrialDataset,
    delta: f64,
    kind: OutcomeKind,
    depth: usize,
    forest: &ForestParams,
) -> Result<PolicyTree> {
    let values = match kind {
        OutcomeKind::Y => ds.outcome.clone(),
        OutcomeKind::C => estimate_contrast_rf(ds, forest)?.c_hat,
    };
    Ok(adjusted_value_from(&ds.covariates, &values, delta, depth)?.tree)
}
