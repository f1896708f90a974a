//! Oracle threshold, evaluation metrics and the replicate benchmark.
//!
//! The optimal rule selects `C(x) >= eta` where `eta` is the smallest cut
//! with `E[C | C >= eta] >= delta`. Rules are scored on a test draw with
//! known contrasts.

mod benchmark;

pub use benchmark::{benchmark, BenchmarkConfig, BenchmarkTable, CellKey, CellSummary, Method};

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::LeafUnionRule;
use crate::dataset::CovariateMatrix;
use crate::error::{Error, Result};
use crate::policytree::PolicyTree;
use crate::rng::stream_rng;
use crate::simulate::{reference_contrasts, trial_contrast, ScenarioSpec};

/// Size of the fixed contrast sample behind scenarios 2 and 3.
pub const ETA_SAMPLE_SIZE: usize = 1_000_000;
const ETA_SAMPLE_SEED: u64 = 0x5eed_0010;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EtaSource {
    Analytic,
    MonteCarlo { sample_size: usize, seed: Option<u64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaOracle {
    pub eta: f64,
    pub delta: f64,
    pub source: EtaSource,
}

/// Descending sample with prefix sums for O(log n) conditional means.
struct SortedSample {
    desc: Vec<f64>,
    prefix: Vec<f64>,
}

impl SortedSample {
    fn new(sample: &[f64]) -> Self {
        let mut desc = sample.to_vec();
        desc.sort_by(|a, b| b.total_cmp(a));
        let mut prefix = Vec::with_capacity(desc.len() + 1);
        prefix.push(0.0);
        let mut s = 0.0;
        for v in &desc {
            s += v;
            prefix.push(s);
        }
        Self { desc, prefix }
    }

    fn count_at_least(&self, t: f64) -> usize {
        self.desc.partition_point(|&v| v >= t)
    }

    /// `mean(c | c >= t)`; `None` when no value reaches `t`.
    fn conditional_mean(&self, t: f64) -> Option<f64> {
        let k = self.count_at_least(t);
        (k > 0).then(|| self.prefix[k] / k as f64)
    }
}

fn bisect_eta(sample: &SortedSample, delta: f64) -> Result<f64> {
    if sample.desc.is_empty() {
        return Err(Error::validation("eta needs a non-empty sample"));
    }
    if !delta.is_finite() {
        return Err(Error::validation("delta must be finite"));
    }
    if let Some(v) = sample.desc.iter().find(|v| !v.is_finite()) {
        return Err(Error::validation(format!("non-finite contrast {v} in eta sample")));
    }
    let max = sample.desc[0];
    let min = *sample.desc.last().unwrap();
    if delta >= max {
        return Err(Error::InfeasibleThreshold {
            delta,
            max_attainable: max,
        });
    }
    if sample.conditional_mean(min).unwrap() >= delta {
        return Ok(min);
    }
    let (mut lo, mut hi) = (min, max);
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if sample.conditional_mean(mid).is_some_and(|m| m >= delta) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Bisection for the smallest cut whose conditional mean reaches `delta`.
pub fn solve_eta(sample: &[f64], delta: f64) -> Result<EtaOracle> {
    let eta = bisect_eta(&SortedSample::new(sample), delta)?;
    Ok(EtaOracle {
        eta,
        delta,
        source: EtaSource::MonteCarlo {
            sample_size: sample.len(),
            seed: None,
        },
    })
}

/// Closed form for `C ~ U[-2, 2]`: `E[C | C >= eta] = (eta + 2) / 2`.
pub fn solve_eta_uniform(delta: f64) -> Result<EtaOracle> {
    if !delta.is_finite() {
        return Err(Error::validation("delta must be finite"));
    }
    if delta >= 2.0 {
        return Err(Error::InfeasibleThreshold {
            delta,
            max_attainable: 2.0,
        });
    }
    Ok(EtaOracle {
        eta: (2.0 * delta - 2.0).max(-2.0),
        delta,
        source: EtaSource::Analytic,
    })
}

fn scenario_sample(id: u8) -> Arc<SortedSample> {
    static CACHE: OnceLock<Mutex<HashMap<u8, Arc<SortedSample>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(s) = cache.lock().unwrap().get(&id) {
        return s.clone();
    }
    let mut rng = stream_rng(ETA_SAMPLE_SEED, id as u64);
    let sample: Vec<f64> = (0..ETA_SAMPLE_SIZE)
        .map(|_| {
            let x1 = rng.random_range(-2.0..2.0);
            let x2 = rng.random_range(-2.0..2.0);
            trial_contrast(id, x1, x2)
        })
        .collect();
    let s = Arc::new(SortedSample::new(&sample));
    cache.lock().unwrap().entry(id).or_insert(s).clone()
}

/// Oracle threshold for a simulation scenario: closed form for scenario 1,
/// a fixed 10^6-draw sample for 2 and 3, and the survival reference
/// population for 4.
pub fn eta_for_scenario(spec: &ScenarioSpec, delta: f64) -> Result<EtaOracle> {
    spec.validate()?;
    match spec.id {
        1 => solve_eta_uniform(delta),
        _ => eta_monte_carlo(spec, delta),
    }
}

/// Monte Carlo threshold for any scenario: the fixed 10^6-draw sample for
/// 1 to 3 and the survival reference population for 4.
pub fn eta_monte_carlo(spec: &ScenarioSpec, delta: f64) -> Result<EtaOracle> {
    spec.validate()?;
    if spec.is_survival() {
        let c = reference_contrasts(spec)?;
        let mut oracle = solve_eta(&c, delta)?;
        oracle.source = EtaSource::MonteCarlo {
            sample_size: c.len(),
            seed: None,
        };
        return Ok(oracle);
    }
    Ok(EtaOracle {
        eta: bisect_eta(&scenario_sample(spec.id), delta)?,
        delta,
        source: EtaSource::MonteCarlo {
            sample_size: ETA_SAMPLE_SIZE,
            seed: Some(ETA_SAMPLE_SEED),
        },
    })
}

/// `pr(C >= eta)` under the scenario's contrast distribution.
pub fn optimal_proportion(spec: &ScenarioSpec, delta: f64) -> Result<f64> {
    let oracle = eta_for_scenario(spec, delta)?;
    match spec.id {
        1 => Ok(((2.0 - oracle.eta) / 4.0).clamp(0.0, 1.0)),
        2 | 3 => {
            let s = scenario_sample(spec.id);
            Ok(s.count_at_least(oracle.eta) as f64 / s.desc.len() as f64)
        }
        _ => {
            let c = reference_contrasts(spec)?;
            Ok(c.iter().filter(|&&v| v >= oracle.eta).count() as f64 / c.len() as f64)
        }
    }
}

/// Mean of the sample values at or above `t`.
pub fn conditional_mean_above(sample: &[f64], t: f64) -> Option<f64> {
    SortedSample::new(sample).conditional_mean(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub proportion: f64,
    /// Mean true contrast of the selected units; `None` if nobody is selected.
    pub ate: Option<f64>,
    pub rcd: f64,
    /// Share of selected units with positive true contrast.
    pub rpi: Option<f64>,
}

/// Anything that assigns units to the subgroup.
pub trait SubgroupRule {
    fn assign(&self, x: &CovariateMatrix) -> Result<Vec<u8>>;
}

impl SubgroupRule for PolicyTree {
    fn assign(&self, x: &CovariateMatrix) -> Result<Vec<u8>> {
        PolicyTree::assign(self, x)
    }
}

impl SubgroupRule for LeafUnionRule {
    fn assign(&self, x: &CovariateMatrix) -> Result<Vec<u8>> {
        LeafUnionRule::assign(self, x)
    }
}

pub fn evaluate_assignments(selected: &[u8], truth: &[f64], eta: f64) -> Result<Metrics> {
    if selected.len() != truth.len() || truth.is_empty() {
        return Err(Error::validation("assignments and contrasts must be non-empty and aligned"));
    }
    let n = truth.len() as f64;
    let mut k = 0usize;
    let (mut sum_c, mut positive, mut correct) = (0.0, 0usize, 0usize);
    for (&a, &c) in selected.iter().zip(truth) {
        if a == 1 {
            k += 1;
            sum_c += c;
            positive += usize::from(c > 0.0);
        }
        correct += usize::from(a == u8::from(c >= eta));
    }
    Ok(Metrics {
        proportion: k as f64 / n,
        ate: (k > 0).then(|| sum_c / k as f64),
        rcd: correct as f64 / n,
        rpi: (k > 0).then(|| positive as f64 / k as f64),
    })
}

pub fn evaluate_rule(
    rule: &dyn SubgroupRule,
    x: &CovariateMatrix,
    truth: Option<&[f64]>,
    eta: &EtaOracle,
) -> Result<Metrics> {
    let truth = truth.ok_or_else(|| Error::validation("evaluation needs the true contrast"))?;
    if truth.len() != x.n_rows() {
        return Err(Error::validation("true contrast length does not match covariate rows"));
    }
    evaluate_assignments(&rule.assign(x)?, truth, eta.eta)
}

/// Whether every split of the tree uses `x1` or `x2`, with at least one split.
pub fn recovers_signal_features(tree: &PolicyTree) -> bool {
    let f = tree.split_features();
    !f.is_empty() && f.iter().all(|&j| j < 2)
}
