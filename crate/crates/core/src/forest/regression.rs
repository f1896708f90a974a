use rand::Rng;
use rayon::prelude::*;

use super::tree::{partition, Builder, Node, Tree};
use super::{midpoint, sample_features, ForestParams, TreeSpec};
use crate::dataset::CovariateMatrix;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Bootstrap-aggregated CART regression forest.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionForest {
    pub trees: Vec<Tree<f64>>,
    /// `inbag[t][i]` is how many times training row `i` was drawn for tree `t`.
    pub inbag: Vec<Vec<u32>>,
    n_features: usize,
}

/// Out-of-bag predictions plus the number of rows that were in-bag for
/// every tree and fell back to the full-forest average.
#[derive(Debug, Clone, PartialEq)]
pub struct OobPrediction {
    pub values: Vec<f64>,
    pub fallback_count: usize,
}

pub fn fit_regression_forest(
    x: &CovariateMatrix,
    y: &[f64],
    params: &ForestParams,
) -> Result<RegressionForest> {
    fit_regression_forest_keyed(x, y, None, params)
}

/// Like [`fit_regression_forest`], but bootstrap draws are made over rows
/// ordered by `keys`. Two datasets that are row permutations of each other
/// and carry the same per-row keys yield identical trees.
pub fn fit_regression_forest_keyed(
    x: &CovariateMatrix,
    y: &[f64],
    keys: Option<&[u64]>,
    params: &ForestParams,
) -> Result<RegressionForest> {
    let n = x.n_rows();
    if y.len() != n {
        return Err(Error::validation(format!(
            "{} responses for {n} covariate rows",
            y.len()
        )));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::validation(format!("non-finite response at row {}", i + 1)));
    }
    let mtry = params.regression_mtry(x.n_cols());
    params.validate(n, x.n_cols(), mtry)?;
    let spec = TreeSpec {
        mtry,
        min_node_size: params.min_node_size,
        max_depth: params.max_depth,
    };
    let canonical = canonical_order(n, keys)?;

    let grown: Vec<(Tree<f64>, Vec<u32>)> = (0..params.num_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(params.seed, t as u64);
            let (samples, counts) = bootstrap(&mut rng, &canonical);
            (grow_regression_tree(x, y, samples, &spec, &mut rng), counts)
        })
        .collect();
    let (trees, inbag) = grown.into_iter().unzip();
    Ok(RegressionForest {
        trees,
        inbag,
        n_features: x.n_cols(),
    })
}

pub(crate) fn canonical_order(n: usize, keys: Option<&[u64]>) -> Result<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(keys) = keys {
        if keys.len() != n {
            return Err(Error::validation("one key per row required"));
        }
        order.sort_by_key(|&i| keys[i]);
    }
    Ok(order)
}

/// `n` draws with replacement; returns the draw list and per-row counts.
pub(crate) fn bootstrap(rng: &mut impl Rng, canonical: &[usize]) -> (Vec<usize>, Vec<u32>) {
    let n = canonical.len();
    let mut counts = vec![0u32; n];
    let samples = (0..n)
        .map(|_| {
            let i = canonical[rng.random_range(0..n)];
            counts[i] += 1;
            i
        })
        .collect();
    (samples, counts)
}

impl RegressionForest {
    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    fn check_columns(&self, x: &CovariateMatrix) -> Result<()> {
        if x.n_cols() != self.n_features {
            return Err(Error::validation(format!(
                "forest was fit on {} covariates, got {}",
                self.n_features,
                x.n_cols()
            )));
        }
        Ok(())
    }

    /// Bagged mean over all trees.
    pub fn predict(&self, x: &CovariateMatrix) -> Result<Vec<f64>> {
        self.check_columns(x)?;
        let k = self.trees.len() as f64;
        Ok((0..x.n_rows())
            .into_par_iter()
            .map(|i| self.trees.iter().map(|t| *t.leaf_for(x, i)).sum::<f64>() / k)
            .collect())
    }

    /// Out-of-bag prediction on the training matrix.
    pub fn predict_oob(&self, x_train: &CovariateMatrix) -> Result<OobPrediction> {
        self.check_columns(x_train)?;
        let n = self.inbag.first().map_or(0, Vec::len);
        if x_train.n_rows() != n {
            return Err(Error::validation(format!(
                "out-of-bag prediction needs the {n}-row training matrix, got {} rows",
                x_train.n_rows()
            )));
        }
        let per_row: Vec<(f64, bool)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let (mut sum, mut count, mut all) = (0.0, 0usize, 0.0);
                for (tree, inbag) in self.trees.iter().zip(&self.inbag) {
                    let v = *tree.leaf_for(x_train, i);
                    all += v;
                    if inbag[i] == 0 {
                        sum += v;
                        count += 1;
                    }
                }
                if count > 0 {
                    (sum / count as f64, false)
                } else {
                    (all / self.trees.len() as f64, true)
                }
            })
            .collect();
        Ok(OobPrediction {
            fallback_count: per_row.iter().filter(|(_, f)| *f).count(),
            values: per_row.into_iter().map(|(v, _)| v).collect(),
        })
    }
}

/// Best split of a node, scored by within-child sum of squared deviations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct RegressionSplit {
    pub feature: usize,
    pub threshold: f64,
    pub sse: f64,
}

/// Exhaustive search over midpoints of consecutive distinct values of each
/// candidate feature. Both children must keep `min_node_size` samples.
/// Ties go to the lower feature, then the smaller threshold.
pub(crate) fn best_regression_split(
    x: &CovariateMatrix,
    y: &[f64],
    samples: &[usize],
    features: &[usize],
    min_node_size: usize,
) -> Option<RegressionSplit> {
    let m = samples.len();
    if m < 2 * min_node_size || m < 2 {
        return None;
    }
    let total: f64 = samples.iter().map(|&i| y[i]).sum();
    let total_sq: f64 = samples.iter().map(|&i| y[i] * y[i]).sum();
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(m);
    let mut best: Option<RegressionSplit> = None;
    for &feature in features {
        let col = x.column(feature);
        pairs.clear();
        pairs.extend(samples.iter().map(|&i| (col[i], y[i])));
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left = 0.0;
        for p in 0..m - 1 {
            left += pairs[p].1;
            let n_left = p + 1;
            if n_left < min_node_size || m - n_left < min_node_size {
                continue;
            }
            if pairs[p].0 >= pairs[p + 1].0 {
                continue;
            }
            let right = total - left;
            let sse = total_sq
                - left * left / n_left as f64
                - right * right / (m - n_left) as f64;
            if best.is_none_or(|b| sse < b.sse) {
                best = Some(RegressionSplit {
                    feature,
                    threshold: midpoint(pairs[p].0, pairs[p + 1].0),
                    sse,
                });
            }
        }
    }
    best
}

pub(crate) fn grow_regression_tree(
    x: &CovariateMatrix,
    y: &[f64],
    samples: Vec<usize>,
    spec: &TreeSpec,
    rng: &mut impl Rng,
) -> Tree<f64> {
    let mut builder = Builder::new();
    grow_node(&mut builder, x, y, samples, spec, 0, rng);
    builder.finish()
}

fn grow_node(
    builder: &mut Builder<f64>,
    x: &CovariateMatrix,
    y: &[f64],
    samples: Vec<usize>,
    spec: &TreeSpec,
    depth: usize,
    rng: &mut impl Rng,
) -> usize {
    let mean = samples.iter().map(|&i| y[i]).sum::<f64>() / samples.len() as f64;
    let slot = builder.reserve(mean);
    let pure = samples.iter().all(|&i| y[i] == y[samples[0]]);
    if pure || spec.max_depth.is_some_and(|d| depth >= d) {
        return slot;
    }
    if samples.len() < 2 * spec.min_node_size {
        return slot;
    }
    let features = sample_features(rng, x.n_cols(), spec.mtry);
    let Some(split) = best_regression_split(x, y, &samples, &features, spec.min_node_size) else {
        return slot;
    };
    let (left, right) = partition(x, &samples, split.feature, split.threshold);
    drop(samples);
    let left = grow_node(builder, x, y, left, spec, depth + 1, rng);
    let right = grow_node(builder, x, y, right, spec, depth + 1, rng);
    builder.set(
        slot,
        Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        },
    );
    slot
}
