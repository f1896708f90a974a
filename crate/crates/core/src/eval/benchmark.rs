use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{eta_for_scenario, evaluate_assignments, recovers_signal_features, EtaOracle, Metrics};
use crate::baselines::{adjusted_value_from, vt_from_contrast, VtParams, VtVariant};
use crate::capital::{fit_from_contrast, CapitalConfig};
use crate::contrast::{estimate_contrasts, estimate_rmst_contrast, ContrastEstimate, Estimator};
use crate::dataset::CovariateMatrix;
use crate::error::{Error, Result};
use crate::forest::ForestParams;
use crate::policytree::PolicyTree;
use crate::reward::RewardKind;
use crate::rng::derive_seed;
use crate::simulate::{gen_survival, gen_trial, true_delta, ScenarioSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Capital,
    VtA,
    VtC,
    AdjY,
    AdjC,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Capital => "capital",
            Method::VtA => "vt-a",
            Method::VtC => "vt-c",
            Method::AdjY => "adj-y",
            Method::AdjC => "adj-c",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub scenario: ScenarioSpec,
    pub n_grid: Vec<usize>,
    /// Thresholds to evaluate. Empty for scenario 4 means its true delta.
    pub delta_grid: Vec<f64>,
    pub reward_kinds: Vec<RewardKind>,
    /// Penalties for reward 3; other rewards always use 0.
    pub lambda_grid: Vec<f64>,
    pub methods: Vec<Method>,
    /// Contrast estimators run for the CAPITAL method. Baselines use `Rf`.
    pub estimators: Vec<Estimator>,
    pub depth: usize,
    pub reps: usize,
    pub seed: u64,
    pub forest: ForestParams,
    pub vt: VtParams,
    pub test_size: usize,
}

impl BenchmarkConfig {
    pub fn new(scenario: ScenarioSpec, n: usize, reps: usize, seed: u64) -> Self {
        let forest = if scenario.is_survival() {
            ForestParams::survival(seed)
        } else {
            ForestParams::regression(seed)
        };
        Self {
            scenario,
            n_grid: vec![n],
            delta_grid: if scenario.is_survival() { Vec::new() } else { vec![1.0] },
            reward_kinds: vec![if scenario.is_survival() {
                RewardKind::Value
            } else {
                RewardKind::Sign
            }],
            lambda_grid: vec![0.0],
            methods: vec![Method::Capital],
            estimators: vec![Estimator::Rf],
            depth: 2,
            reps,
            seed,
            forest,
            vt: VtParams::default(),
            test_size: 10_000,
        }
    }

    fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.reps < 2 {
            return Err(Error::validation("benchmark needs at least 2 replicates"));
        }
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return Err(Error::validation("n grid must hold positive sizes"));
        }
        if self.methods.is_empty() || self.reward_kinds.is_empty() || self.estimators.is_empty() {
            return Err(Error::validation("methods, rewards and estimators must be non-empty"));
        }
        if self.test_size == 0 {
            return Err(Error::validation("test size must be positive"));
        }
        if self.lambda_grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::validation("lambda grid must be nonnegative"));
        }
        if self.scenario.is_survival() && self.methods.iter().any(|m| *m != Method::Capital) {
            return Err(Error::validation("survival benchmarks support the capital method only"));
        }
        Ok(())
    }
}

/// One table cell: everything but the metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub n: usize,
    pub delta: f64,
    pub method: Method,
    pub estimator: Option<Estimator>,
    pub reward: Option<RewardKind>,
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub key: CellKey,
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
    pub n_reps: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub scenario: ScenarioSpec,
    pub reps: usize,
    pub rows: Vec<CellSummary>,
}

impl BenchmarkTable {
    pub fn find(&self, key: &CellKey, metric: &str) -> Option<&CellSummary> {
        self.rows.iter().find(|r| &r.key == key && r.metric == metric)
    }

    /// Mean of `metric` for the first cell matching `method`, `delta` and `lambda`.
    pub fn mean(&self, method: Method, estimator: Option<Estimator>, delta: f64, lambda: Option<f64>, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| {
                r.key.method == method
                    && (estimator.is_none() || r.key.estimator == estimator)
                    && r.key.delta == delta
                    && (lambda.is_none() || r.key.lambda == lambda)
                    && r.metric == metric
            })
            .map(|r| r.mean)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,n,delta,method,estimator,reward,lambda,metric,mean,sd,n_reps,failed\n");
        for r in &self.rows {
            let k = &r.key;
            let _ = writeln!(
                out,
                "{},{},{:?},{},{},{},{},{},{:?},{:?},{},{}",
                self.scenario.id,
                k.n,
                k.delta,
                k.method.label(),
                k.estimator.map(estimator_label).unwrap_or(""),
                k.reward.map(|w| w.label().to_string()).unwrap_or_default(),
                k.lambda.map(|l| format!("{l:?}")).unwrap_or_default(),
                r.metric,
                r.mean,
                r.sd,
                r.n_reps,
                r.failed
            );
        }
        out
    }

    /// Markdown table with `mean(sd)` per metric column.
    pub fn to_markdown(&self) -> String {
        let metrics = ["proportion", "ate", "rcd", "rpi", "feature_recovery"];
        let mut out = String::from("| n | delta | method | estimator | reward | lambda |");
        for m in metrics {
            let _ = write!(out, " {m} |");
        }
        out.push('\n');
        out.push_str(&"|---".repeat(6 + metrics.len()));
        out.push_str("|\n");
        let mut keys: Vec<&CellKey> = Vec::new();
        for r in &self.rows {
            if !keys.contains(&&r.key) {
                keys.push(&r.key);
            }
        }
        for k in keys {
            let _ = write!(
                out,
                "| {} | {} | {} | {} | {} | {} |",
                k.n,
                k.delta,
                k.method.label(),
                k.estimator.map(estimator_label).unwrap_or("-"),
                k.reward.map(|w| w.label().to_string()).unwrap_or_else(|| "-".into()),
                k.lambda.map(|l| l.to_string()).unwrap_or_else(|| "-".into()),
            );
            for m in metrics {
                match self.find(k, m) {
                    Some(c) if c.n_reps > 0 => {
                        let _ = write!(out, " {:.2}({:.2}) |", c.mean, c.sd);
                    }
                    _ => out.push_str(" - |"),
                }
            }
            out.push('\n');
        }
        out
    }
}

fn estimator_label(e: Estimator) -> &'static str {
    match e {
        Estimator::Rf => "rf",
        Estimator::Dr => "dr",
        Estimator::DrReg => "dr-reg",
    }
}

/// Per-replicate metric values for one cell; `Err` marks a failed replicate.
type RepOutcome = std::result::Result<Metrics, String>;

type MetricGetter = Box<dyn Fn(&RepRecord) -> Option<f64>>;

struct RepRecord {
    outcome: RepOutcome,
    recovery: Option<f64>,
}

fn cell_keys(cfg: &BenchmarkConfig, n: usize, deltas: &[f64]) -> Vec<CellKey> {
    let mut keys = Vec::new();
    for &delta in deltas {
        for &method in &cfg.methods {
            match method {
                Method::Capital => {
                    let estimators: Vec<Option<Estimator>> = if cfg.scenario.is_survival() {
                        vec![None]
                    } else {
                        cfg.estimators.iter().copied().map(Some).collect()
                    };
                    for estimator in estimators {
                        for &reward in &cfg.reward_kinds {
                            let lambdas = if reward == RewardKind::Penalized {
                                cfg.lambda_grid.clone()
                            } else {
                                vec![0.0]
                            };
                            for lambda in lambdas {
                                keys.push(CellKey {
                                    n,
                                    delta,
                                    method,
                                    estimator,
                                    reward: Some(reward),
                                    lambda: Some(lambda),
                                });
                            }
                        }
                    }
                }
                Method::VtA | Method::VtC | Method::AdjC => keys.push(CellKey {
                    n,
                    delta,
                    method,
                    estimator: Some(Estimator::Rf),
                    reward: None,
                    lambda: None,
                }),
                Method::AdjY => keys.push(CellKey {
                    n,
                    delta,
                    method,
                    estimator: None,
                    reward: None,
                    lambda: None,
                }),
            }
        }
    }
    keys
}

struct Replicate {
    x: CovariateMatrix,
    outcome: Vec<f64>,
    contrasts: Vec<(Estimator, ContrastEstimate)>,
    test_x: CovariateMatrix,
    test_truth: Vec<f64>,
}

fn prepare(cfg: &BenchmarkConfig, n: usize, rep: usize) -> Result<Replicate> {
    let rep_seed = derive_seed(derive_seed(cfg.seed, n as u64), rep as u64);
    let forest = cfg.forest.clone().with_seed(derive_seed(rep_seed, 2));
    if cfg.scenario.is_survival() {
        let train = gen_survival(&cfg.scenario, n, derive_seed(rep_seed, 1))?;
        let test = gen_survival(&cfg.scenario, cfg.test_size, derive_seed(rep_seed, 0))?;
        let est = estimate_rmst_contrast(&train, &forest, None)?;
        return Ok(Replicate {
            x: train.covariates,
            outcome: Vec::new(),
            contrasts: vec![(Estimator::Rf, est)],
            test_x: test.covariates,
            test_truth: test.true_contrast.expect("simulated data carry truth"),
        });
    }
    let train = gen_trial(&cfg.scenario, n, derive_seed(rep_seed, 1))?;
    let test = gen_trial(&cfg.scenario, cfg.test_size, derive_seed(rep_seed, 0))?;
    let mut wanted: Vec<Estimator> = Vec::new();
    if cfg.methods.contains(&Method::Capital) {
        wanted.extend(&cfg.estimators);
    }
    if cfg.methods.iter().any(|m| matches!(m, Method::VtA | Method::VtC | Method::AdjC))
        && !wanted.contains(&Estimator::Rf)
    {
        wanted.push(Estimator::Rf);
    }
    let ests = if wanted.is_empty() {
        Vec::new()
    } else {
        estimate_contrasts(&train, &wanted, &forest)?
    };
    Ok(Replicate {
        x: train.covariates,
        outcome: train.outcome,
        contrasts: wanted.into_iter().zip(ests).collect(),
        test_x: test.covariates,
        test_truth: test.true_contrast.expect("simulated data carry truth"),
    })
}

fn run_cell(cfg: &BenchmarkConfig, rep: &Replicate, key: &CellKey, eta: &EtaOracle) -> Result<(Metrics, Option<f64>)> {
    let contrast = |e: Estimator| {
        rep.contrasts
            .iter()
            .find(|(t, _)| *t == e)
            .map(|(_, c)| c)
            .expect("contrast prepared for every requested estimator")
    };
    let tree: PolicyTree = match key.method {
        Method::Capital => {
            let est = contrast(key.estimator.unwrap_or(Estimator::Rf));
            let mut cc = CapitalConfig::new(key.delta, key.reward.expect("capital cells carry a reward"), 0);
            cc.lambda = key.lambda.unwrap_or(0.0);
            cc.depth = cfg.depth;
            fit_from_contrast(&rep.x, est.clone(), &cc)?.tree
        }
        Method::VtA | Method::VtC => {
            let variant = if key.method == Method::VtA {
                VtVariant::A
            } else {
                VtVariant::C
            };
            let c = &contrast(Estimator::Rf).c_hat;
            vt_from_contrast(&rep.x, c, key.delta, variant, cfg.vt)?.to_policy_tree()
        }
        Method::AdjY => adjusted_value_from(&rep.x, &rep.outcome, key.delta, cfg.depth)?.tree,
        Method::AdjC => adjusted_value_from(&rep.x, &contrast(Estimator::Rf).c_hat, key.delta, cfg.depth)?.tree,
    };
    let metrics = evaluate_assignments(&tree.assign(&rep.test_x)?, &rep.test_truth, eta.eta)?;
    Ok((metrics, Some(f64::from(u8::from(recovers_signal_features(&tree))))))
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Run every replicate and aggregate mean and sd per cell and metric.
/// Errors if any cell has fewer than 90% successful replicates.
pub fn benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkTable> {
    cfg.validate()?;
    let deltas = if cfg.delta_grid.is_empty() {
        if !cfg.scenario.is_survival() {
            return Err(Error::validation("delta grid must be non-empty"));
        }
        vec![true_delta(&cfg.scenario)?]
    } else {
        cfg.delta_grid.clone()
    };
    let etas: Vec<EtaOracle> = deltas
        .iter()
        .map(|&d| eta_for_scenario(&cfg.scenario, d))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for &n in &cfg.n_grid {
        let keys = cell_keys(cfg, n, &deltas);
        let per_rep: Vec<Vec<RepRecord>> = (0..cfg.reps)
            .into_par_iter()
            .map(|rep| match prepare(cfg, n, rep) {
                Err(e) => keys
                    .iter()
                    .map(|_| RepRecord {
                        outcome: Err(e.to_string()),
                        recovery: None,
                    })
                    .collect(),
                Ok(data) => keys
                    .iter()
                    .map(|k| {
                        let eta = &etas[deltas.iter().position(|&d| d == k.delta).unwrap()];
                        match run_cell(cfg, &data, k, eta) {
                            Ok((m, rec)) => RepRecord {
                                outcome: Ok(m),
                                recovery: rec,
                            },
                            Err(e) => RepRecord {
                                outcome: Err(e.to_string()),
                                recovery: None,
                            },
                        }
                    })
                    .collect(),
            })
            .collect();

        for (ci, key) in keys.iter().enumerate() {
            let records: Vec<&RepRecord> = per_rep.iter().map(|r| &r[ci]).collect();
            let ok = records.iter().filter(|r| r.outcome.is_ok()).count();
            if (ok as f64) < 0.9 * cfg.reps as f64 {
                let first = records.iter().find_map(|r| r.outcome.as_ref().err()).cloned().unwrap_or_default();
                return Err(Error::Internal(format!(
                    "{} of {} replicates failed for {} at n = {n}, delta = {}: {first}",
                    cfg.reps - ok,
                    cfg.reps,
                    key.method.label(),
                    key.delta
                )));
            }
            let columns: [(&str, MetricGetter); 5] = [
                ("proportion", Box::new(|r| r.outcome.as_ref().ok().map(|m| m.proportion))),
                ("ate", Box::new(|r| r.outcome.as_ref().ok().and_then(|m| m.ate))),
                ("rcd", Box::new(|r| r.outcome.as_ref().ok().map(|m| m.rcd))),
                ("rpi", Box::new(|r| r.outcome.as_ref().ok().and_then(|m| m.rpi))),
                ("feature_recovery", Box::new(|r| r.recovery)),
            ];
            for (metric, get) in columns.iter() {
                let values: Vec<f64> = records.iter().filter_map(|r| get(r)).collect();
                let (mean, sd) = mean_sd(&values);
                rows.push(CellSummary {
                    key: key.clone(),
                    metric: metric.to_string(),
                    mean,
                    sd,
                    n_reps: values.len(),
                    failed: cfg.reps - values.len(),
                });
            }
        }
    }
    Ok(BenchmarkTable {
        scenario: cfg.scenario,
        reps: cfg.reps,
        rows,
    })
}
