//! The subgroup selection pipeline: contrast, reward table, rewards, tree.

use serde::{Deserialize, Serialize};

use crate::contrast::{estimate_contrast, estimate_rmst_contrast, ContrastEstimate, Estimator};
use crate::dataset::{CovariateMatrix, SurvivalDataset, TrialDataset};
use crate::error::{Error, Result};
use crate::eval::solve_eta;
use crate::forest::ForestParams;
use crate::policytree::{search, PolicyTree};
use crate::reward::{build_reward_table, build_rewards, RewardKind, RewardTable, RewardVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapitalConfig {
    pub delta: f64,
    pub reward_kind: RewardKind,
    pub lambda: f64,
    pub depth: usize,
    pub estimator: Estimator,
    pub forest: ForestParams,
    /// Minimum beneficial value; only 0 is supported.
    pub gamma_floor: f64,
}

impl CapitalConfig {
    pub fn new(delta: f64, reward_kind: RewardKind, seed: u64) -> Self {
        Self {
            delta,
            reward_kind,
            lambda: 0.0,
            depth: 2,
            estimator: Estimator::Rf,
            forest: ForestParams::regression(seed),
            gamma_floor: 0.0,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::validation(format!("delta must be positive, got {}", self.delta)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::validation(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if self.lambda > 0.0 && self.reward_kind != RewardKind::Penalized {
            return Err(Error::validation("a positive lambda requires reward 3"));
        }
        if self.depth == 0 {
            return Err(Error::validation("depth must be at least 1"));
        }
        if self.gamma_floor != 0.0 {
            return Err(Error::validation("only gamma_floor = 0 is supported"));
        }
        Ok(())
    }
}

/// Fitted rule together with every intermediate artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsrFit {
    pub tree: PolicyTree,
    pub objective: f64,
    pub contrast: ContrastEstimate,
    pub table: RewardTable,
    pub rewards: RewardVector,
}

/// Reward construction and tree search on a given contrast. Fails with an
/// infeasible-threshold error when no cut of `c_hat` reaches `delta`.
pub fn fit_from_contrast(
    x: &CovariateMatrix,
    contrast: ContrastEstimate,
    cfg: &CapitalConfig,
) -> Result<SsrFit> {
    cfg.validate()?;
    if contrast.len() != x.n_rows() {
        return Err(Error::validation("contrast length does not match covariate rows"));
    }
    solve_eta(&contrast.c_hat, cfg.delta)?;
    let table = build_reward_table(&contrast.c_hat, cfg.delta)?;
    let rewards = build_rewards(&table, cfg.reward_kind, cfg.lambda)?;
    let found = search(x, &rewards.gamma_select, cfg.depth)?;
    Ok(SsrFit {
        tree: found.tree,
        objective: found.objective,
        contrast,
        table,
        rewards,
    })
}

pub fn fit_ssr(ds: &TrialDataset, cfg: &CapitalConfig) -> Result<SsrFit> {
    cfg.validate()?;
    let contrast = estimate_contrast(ds, cfg.estimator, &cfg.forest)?;
    fit_from_contrast(&ds.covariates, contrast, cfg)
}

/// Survival pipeline on the RMST contrast. `tau` defaults to the
/// min-of-max observed time rule.
pub fn fit_ssr_survival(ds: &SurvivalDataset, cfg: &CapitalConfig, tau: Option<f64>) -> Result<SsrFit> {
    cfg.validate()?;
    let contrast = estimate_rmst_contrast(ds, &cfg.forest, tau)?;
    fit_from_contrast(&ds.covariates, contrast, cfg)
}

/// Pipeline on the ground-truth contrast stored in the dataset.
pub fn contrast_bypass(ds: &TrialDataset, cfg: &CapitalConfig) -> Result<SsrFit> {
    let truth = ds
        .true_contrast
        .clone()
        .ok_or_else(|| Error::validation("dataset carries no true contrast"))?;
    fit_from_contrast(&ds.covariates, ContrastEstimate::oracle(truth)?, cfg)
}
