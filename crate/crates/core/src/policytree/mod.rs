//! Fixed-depth binary policy trees with two actions.
//!
//! A unit goes left at a split iff `x[feature] <= threshold`. Leaves carry
//! action 1 (select) or 0 (not select). [`search`] finds a tree that
//! maximizes the total reward of the selected units.

mod search;

pub use search::{search, SearchResult};

use serde::{Deserialize, Serialize};

use crate::dataset::CovariateMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyNode {
    Leaf {
        action: u8,
    },
    Split {
        /// 0-based covariate index.
        feature: usize,
        threshold: f64,
        left: Box<PolicyNode>,
        right: Box<PolicyNode>,
    },
}

impl PolicyNode {
    pub fn leaf(action: u8) -> Self {
        PolicyNode::Leaf { action }
    }

    pub fn split(feature: usize, threshold: f64, left: PolicyNode, right: PolicyNode) -> Self {
        PolicyNode::Split {
            feature,
            threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    fn height(&self) -> usize {
        match self {
            PolicyNode::Leaf { .. } => 0,
            PolicyNode::Split { left, right, .. } => 1 + left.height().max(right.height()),
        }
    }

    fn max_feature(&self) -> Option<usize> {
        match self {
            PolicyNode::Leaf { .. } => None,
            PolicyNode::Split {
                feature, left, right, ..
            } => Some(
                (*feature)
                    .max(left.max_feature().unwrap_or(0))
                    .max(right.max_feature().unwrap_or(0)),
            ),
        }
    }

    fn collect_features(&self, out: &mut Vec<usize>) {
        if let PolicyNode::Split {
            feature, left, right, ..
        } = self
        {
            out.push(*feature);
            left.collect_features(out);
            right.collect_features(out);
        }
    }

    fn route(&self, value: impl Fn(usize) -> f64) -> u8 {
        let mut node = self;
        loop {
            match node {
                PolicyNode::Leaf { action } => return *action,
                PolicyNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if value(*feature) <= *threshold { left } else { right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TreeDoc", into = "TreeDoc")]
pub struct PolicyTree {
    pub depth: usize,
    pub root: PolicyNode,
}

impl PolicyTree {
    pub fn new(depth: usize, root: PolicyNode) -> Result<Self> {
        if depth == 0 {
            return Err(Error::validation("tree depth must be at least 1"));
        }
        if root.height() > depth {
            return Err(Error::validation(format!(
                "tree has height {} but declared depth {depth}",
                root.height()
            )));
        }
        if let Some(bad) = find_bad_leaf(&root) {
            return Err(Error::validation(format!("leaf action {bad} is not 0 or 1")));
        }
        if let Some(bad) = find_bad_threshold(&root) {
            return Err(Error::validation(format!("split value {bad} is not finite")));
        }
        Ok(Self { depth, root })
    }

    pub fn constant(depth: usize, action: u8) -> Self {
        Self {
            depth,
            root: PolicyNode::leaf(action),
        }
    }

    /// Action for one covariate row.
    pub fn assign_row(&self, row: &[f64]) -> u8 {
        self.root.route(|f| row[f])
    }

    /// Actions for every row of `x`.
    pub fn assign(&self, x: &CovariateMatrix) -> Result<Vec<u8>> {
        if let Some(f) = self.root.max_feature() {
            if f >= x.n_cols() {
                return Err(Error::validation(format!(
                    "tree splits on x{} but data has {} covariates",
                    f + 1,
                    x.n_cols()
                )));
            }
        }
        Ok((0..x.n_rows())
            .map(|i| self.root.route(|f| x.get(i, f)))
            .collect())
    }

    /// Split features in pre-order, 0-based.
    pub fn split_features(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.root.collect_features(&mut out);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("policy trees always serialize")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy trees always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn find_bad_leaf(node: &PolicyNode) -> Option<u8> {
    match node {
        PolicyNode::Leaf { action } => (*action > 1).then_some(*action),
        PolicyNode::Split { left, right, .. } => find_bad_leaf(left).or_else(|| find_bad_leaf(right)),
    }
}

fn find_bad_threshold(node: &PolicyNode) -> Option<f64> {
    match node {
        PolicyNode::Leaf { .. } => None,
        PolicyNode::Split {
            threshold, left, right, ..
        } => {
            if threshold.is_finite() {
                find_bad_threshold(left).or_else(|| find_bad_threshold(right))
            } else {
                Some(*threshold)
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeDoc {
    depth: usize,
    node: NodeDoc,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NodeDoc {
    Leaf {
        action: u8,
    },
    Split {
        split_var: usize,
        split_value: f64,
        left: Box<NodeDoc>,
        right: Box<NodeDoc>,
    },
}

impl From<PolicyTree> for TreeDoc {
    fn from(tree: PolicyTree) -> Self {
        fn convert(node: PolicyNode) -> NodeDoc {
            match node {
                PolicyNode::Leaf { action } => NodeDoc::Leaf { action },
                PolicyNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => NodeDoc::Split {
                    split_var: feature + 1,
                    split_value: threshold,
                    left: Box::new(convert(*left)),
                    right: Box::new(convert(*right)),
                },
            }
        }
        TreeDoc {
            depth: tree.depth,
            node: convert(tree.root),
        }
    }
}

impl TryFrom<TreeDoc> for PolicyTree {
    type Error = Error;

    fn try_from(doc: TreeDoc) -> Result<Self> {
        fn convert(node: NodeDoc) -> Result<PolicyNode> {
            match node {
                NodeDoc::Leaf { action } => Ok(PolicyNode::Leaf { action }),
                NodeDoc::Split {
                    split_var,
                    split_value,
                    left,
                    right,
                } => {
                    if split_var == 0 {
                        return Err(Error::validation("split_var is 1-based"));
                    }
                    Ok(PolicyNode::split(
                        split_var - 1,
                        split_value,
                        convert(*left)?,
                        convert(*right)?,
                    ))
                }
            }
        }
        PolicyTree::new(doc.depth, convert(doc.node)?)
    }
}
