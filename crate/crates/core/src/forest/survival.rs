use rand::Rng;
use rayon::prelude::*;

use super::regression::{bootstrap, canonical_order};
use super::tree::{partition, Builder, Node, Tree};
use super::{midpoint, sample_features, ForestParams, TreeSpec};
use crate::dataset::CovariateMatrix;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Right-continuous survival step function. `S(t) = 1` for `t < times[0]`
/// and `S(t) = values[k]` on `[times[k], times[k+1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl SurvivalCurve {
    pub fn constant_one() -> Self {
        Self {
            times: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Kaplan-Meier estimate from (time, event) pairs, repeated entries allowed.
    pub fn kaplan_meier(obs: &mut [(f64, u8)]) -> Self {
        obs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut at_risk = obs.len();
        let mut s = 1.0;
        let mut curve = Self::constant_one();
        let mut i = 0;
        while i < obs.len() {
            let t = obs[i].0;
            let mut j = i;
            let mut deaths = 0usize;
            while j < obs.len() && obs[j].0 == t {
                deaths += obs[j].1 as usize;
                j += 1;
            }
            if deaths > 0 {
                s *= 1.0 - deaths as f64 / at_risk as f64;
                curve.times.push(t);
                curve.values.push(s);
            }
            at_risk -= j - i;
            i = j;
        }
        curve
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&u| u <= t);
        if k == 0 {
            1.0
        } else {
            self.values[k - 1]
        }
    }

    /// Exact integral of the step function over `[0, tau]`.
    pub fn integral(&self, tau: f64) -> f64 {
        let mut area = 0.0;
        let mut prev_t = 0.0;
        let mut prev_s = 1.0;
        for (&t, &s) in self.times.iter().zip(&self.values) {
            if t >= tau {
                break;
            }
            area += prev_s * (t - prev_t);
            prev_t = t;
            prev_s = s;
        }
        area + prev_s * (tau - prev_t).max(0.0)
    }
}

/// Random survival forest with log-rank splits and Kaplan-Meier leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalForest {
    pub trees: Vec<Tree<SurvivalCurve>>,
    pub inbag: Vec<Vec<u32>>,
    /// Ascending distinct event times of the training data.
    pub time_grid: Vec<f64>,
    n_features: usize,
}

pub fn fit_survival_forest(
    x: &CovariateMatrix,
    time: &[f64],
    event: &[u8],
    params: &ForestParams,
) -> Result<SurvivalForest> {
    let n = x.n_rows();
    if time.len() != n || event.len() != n {
        return Err(Error::validation("time and event must have one entry per row"));
    }
    if time.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::validation("survival times must be finite and non-negative"));
    }
    if event.iter().any(|&e| e > 1) {
        return Err(Error::validation("event indicators must be 0 or 1"));
    }
    if !event.contains(&1) {
        return Err(Error::validation("survival forest needs at least one event"));
    }
    let mtry = params.survival_mtry(x.n_cols());
    params.validate(n, x.n_cols(), mtry)?;
    let spec = TreeSpec {
        mtry,
        min_node_size: params.min_node_size,
        max_depth: params.max_depth,
    };
    let canonical = canonical_order(n, None)?;
    let data = SurvData { x, time, event };
    let grown: Vec<(Tree<SurvivalCurve>, Vec<u32>)> = (0..params.num_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(params.seed, t as u64);
            let (samples, counts) = bootstrap(&mut rng, &canonical);
            let mut builder = Builder::new();
            grow_node(&mut builder, &data, samples, &spec, 0, &mut rng);
            (builder.finish(), counts)
        })
        .collect();
    let (trees, inbag) = grown.into_iter().unzip();
    let mut time_grid: Vec<f64> = (0..n).filter(|&i| event[i] == 1).map(|i| time[i]).collect();
    time_grid.sort_by(f64::total_cmp);
    time_grid.dedup();
    Ok(SurvivalForest {
        trees,
        inbag,
        time_grid,
        n_features: x.n_cols(),
    })
}

impl SurvivalForest {
    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    fn check_row(&self, len: usize) -> Result<()> {
        if len != self.n_features {
            return Err(Error::validation(format!(
                "forest was fit on {} covariates, got {len}",
                self.n_features
            )));
        }
        Ok(())
    }

    /// Forest-averaged survival curve, evaluated on the training event grid.
    pub fn predict_survival_curve(&self, x: &[f64]) -> Result<SurvivalCurve> {
        self.check_row(x.len())?;
        let mut sum = vec![0.0; self.time_grid.len()];
        for tree in &self.trees {
            let leaf = tree.leaf(tree.leaf_index_for(x));
            let mut k = 0;
            let mut s = 1.0;
            for (g, &t) in self.time_grid.iter().enumerate() {
                while k < leaf.times.len() && leaf.times[k] <= t {
                    s = leaf.values[k];
                    k += 1;
                }
                sum[g] += s;
            }
        }
        let k = self.trees.len() as f64;
        Ok(SurvivalCurve {
            times: self.time_grid.clone(),
            values: sum.into_iter().map(|v| (v / k).clamp(0.0, 1.0)).collect(),
        })
    }

    fn leaf_integrals(&self, tau: f64) -> Vec<Vec<f64>> {
        self.trees
            .iter()
            .map(|tree| {
                tree.nodes
                    .iter()
                    .map(|node| match node {
                        Node::Leaf(curve) => curve.integral(tau),
                        Node::Split { .. } => f64::NAN,
                    })
                    .collect()
            })
            .collect()
    }

    fn check_tau(tau: f64) -> Result<()> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::validation(format!("tau must be positive, got {tau}")));
        }
        Ok(())
    }

    /// Restricted mean survival time up to `tau` for each row of `x`.
    pub fn predict_rmst(&self, x: &CovariateMatrix, tau: f64) -> Result<Vec<f64>> {
        Self::check_tau(tau)?;
        self.check_row(x.n_cols())?;
        let areas = self.leaf_integrals(tau);
        let k = self.trees.len() as f64;
        Ok((0..x.n_rows())
            .into_par_iter()
            .map(|i| {
                self.trees
                    .iter()
                    .zip(&areas)
                    .map(|(tree, a)| a[tree.leaf_index(x, i)])
                    .sum::<f64>()
                    / k
            })
            .collect())
    }

    /// Out-of-bag restricted mean survival time on the training matrix.
    /// Rows that are in-bag for every tree use the full forest.
    pub fn predict_rmst_oob(&self, x_train: &CovariateMatrix, tau: f64) -> Result<super::OobPrediction> {
        Self::check_tau(tau)?;
        self.check_row(x_train.n_cols())?;
        let n = self.inbag.first().map_or(0, Vec::len);
        if x_train.n_rows() != n {
            return Err(Error::validation(format!(
                "out-of-bag prediction needs the {n}-row training matrix, got {} rows",
                x_train.n_rows()
            )));
        }
        let areas = self.leaf_integrals(tau);
        let per_row: Vec<(f64, bool)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let (mut sum, mut count, mut all) = (0.0, 0usize, 0.0);
                for ((tree, a), inbag) in self.trees.iter().zip(&areas).zip(&self.inbag) {
                    let v = a[tree.leaf_index(x_train, i)];
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
        Ok(super::OobPrediction {
            fallback_count: per_row.iter().filter(|(_, f)| *f).count(),
            values: per_row.into_iter().map(|(v, _)| v).collect(),
        })
    }
}

struct SurvData<'a> {
    x: &'a CovariateMatrix,
    time: &'a [f64],
    event: &'a [u8],
}

fn grow_node(
    builder: &mut Builder<SurvivalCurve>,
    data: &SurvData,
    samples: Vec<usize>,
    spec: &TreeSpec,
    depth: usize,
    rng: &mut impl Rng,
) -> usize {
    let mut obs: Vec<(f64, u8)> = samples.iter().map(|&i| (data.time[i], data.event[i])).collect();
    let slot = builder.reserve(SurvivalCurve::kaplan_meier(&mut obs));
    if spec.max_depth.is_some_and(|d| depth >= d) || samples.len() < 2 * spec.min_node_size {
        return slot;
    }
    if !samples.iter().any(|&i| data.event[i] == 1) {
        return slot;
    }
    let features = sample_features(rng, data.x.n_cols(), spec.mtry);
    let Some(split) = logrank_best_split(
        data.x,
        data.time,
        data.event,
        &samples,
        &features,
        spec.min_node_size,
    ) else {
        return slot;
    };
    let (left, right) = partition(data.x, &samples, split.feature, split.threshold);
    drop(samples);
    let left = grow_node(builder, data, left, spec, depth + 1, rng);
    let right = grow_node(builder, data, right, spec, depth + 1, rng);
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

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LogrankSplit {
    pub feature: usize,
    pub threshold: f64,
    /// Standardized two-sample log-rank statistic `U^2 / V`.
    pub statistic: f64,
}

struct Fenwick {
    tree: Vec<f64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self { tree: vec![0.0; n + 1] }
    }

    fn add(&mut self, i: usize, v: f64) {
        let mut i = i + 1;
        while i < self.tree.len() {
            self.tree[i] += v;
            i += i & i.wrapping_neg();
        }
    }

    /// Sum over positions `0..=i`.
    fn prefix(&self, i: usize) -> f64 {
        let mut i = i + 1;
        let mut s = 0.0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Best log-rank split over the candidate features.
///
/// For a left group `L`, with `Y_k, d_k` the node's at-risk and event counts
/// at distinct event time `t_k`, and `idx(s)` the number of event times not
/// after sample `s`:
/// `U = sum_L (delta_s - H(idx s))`, `V = sum_L G(idx s) - Q`, where
/// `Q = sum_{s,s' in L} C(min(idx s, idx s'))` is maintained with two
/// Fenwick trees as samples move left in feature order.
pub(crate) fn logrank_best_split(
    x: &CovariateMatrix,
    time: &[f64],
    event: &[u8],
    samples: &[usize],
    features: &[usize],
    min_node_size: usize,
) -> Option<LogrankSplit> {
    let m = samples.len();
    if m < 2 * min_node_size || m < 2 {
        return None;
    }
    let mut by_time: Vec<(f64, u8)> = samples.iter().map(|&i| (time[i], event[i])).collect();
    by_time.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut event_times = Vec::new();
    let mut deaths = Vec::new();
    let mut at_risk = Vec::new();
    let mut i = 0;
    while i < m {
        let t = by_time[i].0;
        let mut j = i;
        let mut d = 0usize;
        while j < m && by_time[j].0 == t {
            d += by_time[j].1 as usize;
            j += 1;
        }
        if d > 0 {
            event_times.push(t);
            deaths.push(d as f64);
            at_risk.push((m - i) as f64);
        }
        i = j;
    }
    if event_times.is_empty() {
        return None;
    }
    let n_times = event_times.len();
    // Prefix arrays indexed by idx in 0..=n_times.
    let mut h = vec![0.0; n_times + 1];
    let mut g = vec![0.0; n_times + 1];
    let mut c = vec![0.0; n_times + 1];
    for k in 0..n_times {
        let (y, d) = (at_risk[k], deaths[k]);
        let w = if y > 1.0 { d * (y - d) / (y - 1.0) } else { 0.0 };
        h[k + 1] = h[k] + d / y;
        g[k + 1] = g[k] + w / y;
        c[k + 1] = c[k] + w / (y * y);
    }
    let idx_of: Vec<usize> = samples
        .iter()
        .map(|&s| event_times.partition_point(|&t| t <= time[s]))
        .collect();

    let mut best: Option<LogrankSplit> = None;
    let mut order: Vec<usize> = (0..m).collect();
    for &feature in features {
        let col = x.column(feature);
        order.sort_by(|&a, &b| col[samples[a]].total_cmp(&col[samples[b]]));
        let mut sum_c = Fenwick::new(n_times + 1);
        let mut cnt = Fenwick::new(n_times + 1);
        let (mut u, mut gl, mut q) = (0.0, 0.0, 0.0);
        for p in 0..m - 1 {
            let pos = order[p];
            let s = samples[pos];
            let ix = idx_of[pos];
            let below_c = sum_c.prefix(ix);
            let above = p as f64 - cnt.prefix(ix);
            q += c[ix] + 2.0 * (below_c + c[ix] * above);
            sum_c.add(ix, c[ix]);
            cnt.add(ix, 1.0);
            u += event[s] as f64 - h[ix];
            gl += g[ix];

            let n_left = p + 1;
            if n_left < min_node_size || m - n_left < min_node_size {
                continue;
            }
            let (lo, hi) = (col[s], col[samples[order[p + 1]]]);
            if lo >= hi {
                continue;
            }
            let v = gl - q;
            if v <= 1e-12 {
                continue;
            }
            let statistic = u * u / v;
            if best.is_none_or(|b| statistic > b.statistic) {
                best = Some(LogrankSplit {
                    feature,
                    threshold: midpoint(lo, hi),
                    statistic,
                });
            }
        }
    }
    best
}
