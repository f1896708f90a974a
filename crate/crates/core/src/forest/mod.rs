//! Bagged tree ensembles.
//!
//! [`RegressionForest`] is a bootstrap-aggregated CART ensemble with
//! out-of-bag prediction. [`SurvivalForest`] grows log-rank split trees
//! whose leaves hold Kaplan-Meier curves. Tree `t` draws its bootstrap and
//! feature subsets from stream `t` of the forest seed, so fits are
//! identical regardless of how many worker threads run them.

mod regression;
mod survival;
mod tree;

pub use regression::{
    fit_regression_forest, fit_regression_forest_keyed, OobPrediction, RegressionForest,
};
pub use survival::{fit_survival_forest, SurvivalCurve, SurvivalForest};

pub(crate) use regression::grow_regression_tree;
pub use tree::{Node, Tree};

use crate::error::{Error, Result};

/// Hyperparameters shared by both forest kinds.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ForestParams {
    pub num_trees: usize,
    /// Features tried per node. `None` picks `max(ceil(r/3), 1)` for
    /// regression and `ceil(sqrt(r))` for survival forests.
    pub mtry: Option<usize>,
    /// Minimum in-bag samples in every child of a split.
    pub min_node_size: usize,
    /// `None` grows until nodes are pure or too small to split.
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl ForestParams {
    pub fn regression(seed: u64) -> Self {
        Self {
            num_trees: 1000,
            mtry: None,
            min_node_size: 5,
            max_depth: None,
            seed,
        }
    }

    pub fn survival(seed: u64) -> Self {
        Self {
            num_trees: 1000,
            mtry: None,
            min_node_size: 15,
            max_depth: None,
            seed,
        }
    }

    pub fn with_trees(mut self, num_trees: usize) -> Self {
        self.num_trees = num_trees;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub(crate) fn regression_mtry(&self, r: usize) -> usize {
        self.mtry.unwrap_or_else(|| r.div_ceil(3).max(1))
    }

    pub(crate) fn survival_mtry(&self, r: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| ((r as f64).sqrt().ceil() as usize).max(1))
    }

    pub(crate) fn validate(&self, n: usize, r: usize, mtry: usize) -> Result<()> {
        if self.num_trees == 0 {
            return Err(Error::validation("num_trees must be positive"));
        }
        if self.min_node_size == 0 {
            return Err(Error::validation("min_node_size must be positive"));
        }
        if mtry == 0 || mtry > r {
            return Err(Error::validation(format!("mtry = {mtry} must lie in 1..={r}")));
        }
        if self.max_depth == Some(0) {
            return Err(Error::validation("max_depth must be positive"));
        }
        if n < self.min_node_size {
            return Err(Error::validation(format!(
                "{n} training rows is fewer than min_node_size = {}",
                self.min_node_size
            )));
        }
        Ok(())
    }
}

/// Per-tree growth controls after defaults are resolved.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TreeSpec {
    pub mtry: usize,
    pub min_node_size: usize,
    pub max_depth: Option<usize>,
}

/// Midpoint threshold strictly below `hi`, so `lo` routes left and `hi` right.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) * 0.5;
    if mid < hi {
        mid
    } else {
        lo
    }
}

/// Draw `mtry` distinct features out of `r`, returned in ascending order.
pub(crate) fn sample_features(rng: &mut impl rand::Rng, r: usize, mtry: usize) -> Vec<usize> {
    let mut features = rand::seq::index::sample(rng, r, mtry).into_vec();
    features.sort_unstable();
    features
}
