//! Ranked cumulative means and per-unit rewards.
//!
//! Units are ranked by `r_i = c_hat_i - delta` in descending order. The
//! running mean of the top `k` values is nonnegative exactly when
//! selecting those `k` units meets the average-effect threshold, and each
//! unit's reward is read off the running mean at its own rank.

use serde::{Deserialize, Serialize};

use crate::contrast::ContrastEstimate;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTable {
    pub delta: f64,
    /// Unit indices sorted by `c_hat - delta`, descending, ties by index.
    pub order: Vec<usize>,
    pub r_sorted: Vec<f64>,
    pub cum_mean: Vec<f64>,
    /// 1-based rank of each unit.
    pub rank: Vec<usize>,
    pub c_hat: Vec<f64>,
}

impl RewardTable {
    pub fn len(&self) -> usize {
        self.c_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c_hat.is_empty()
    }

    /// Running mean at the rank of unit `i`.
    pub fn cum_mean_of(&self, i: usize) -> f64 {
        self.cum_mean[self.rank[i] - 1]
    }
}

pub fn build_reward_table(c_hat: &[f64], delta: f64) -> Result<RewardTable> {
    if c_hat.is_empty() {
        return Err(Error::validation("reward table needs at least one unit"));
    }
    if !delta.is_finite() {
        return Err(Error::validation("delta must be finite"));
    }
    if let Some(i) = c_hat.iter().position(|v| !v.is_finite()) {
        return Err(Error::validation(format!("non-finite contrast at unit {}", i + 1)));
    }
    let r: Vec<f64> = c_hat.iter().map(|c| c - delta).collect();
    let mut order: Vec<usize> = (0..r.len()).collect();
    order.sort_by(|&a, &b| r[b].total_cmp(&r[a]));
    let r_sorted: Vec<f64> = order.iter().map(|&i| r[i]).collect();
    // Incremental form keeps the computed means non-increasing; a plain
    // prefix sum can drift upward by an ulp over runs of equal values.
    let mut cum_mean = Vec::with_capacity(r.len());
    let mut mean = 0.0;
    for (k, v) in r_sorted.iter().enumerate() {
        mean += (v - mean) / (k + 1) as f64;
        cum_mean.push(mean);
    }
    let mut rank = vec![0; r.len()];
    for (k, &i) in order.iter().enumerate() {
        rank[i] = k + 1;
    }
    Ok(RewardTable {
        delta,
        order,
        r_sorted,
        cum_mean,
        rank,
        c_hat: c_hat.to_vec(),
    })
}

/// Same construction on an RMST contrast.
pub fn build_survival_reward_table(est: &ContrastEstimate, delta: f64) -> Result<RewardTable> {
    build_reward_table(&est.c_hat, delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    /// Sign of the running mean at the unit's rank (reward 1).
    Sign,
    /// The running mean itself (reward 2).
    Value,
    /// Running mean plus `lambda * min(c_hat, 0)` (reward 3).
    Penalized,
}

impl RewardKind {
    /// Numeric label used on the command line.
    pub fn from_label(label: u8) -> Result<Self> {
        match label {
            1 => Ok(RewardKind::Sign),
            2 => Ok(RewardKind::Value),
            3 => Ok(RewardKind::Penalized),
            _ => Err(Error::validation(format!("reward must be 1, 2 or 3, got {label}"))),
        }
    }

    pub fn label(self) -> u8 {
        match self {
            RewardKind::Sign => 1,
            RewardKind::Value => 2,
            RewardKind::Penalized => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardVector {
    pub kind: RewardKind,
    pub lambda: f64,
    /// Reward for selecting each unit; not selecting always scores 0.
    pub gamma_select: Vec<f64>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn build_rewards(table: &RewardTable, kind: RewardKind, lambda: f64) -> Result<RewardVector> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::validation(format!("lambda must be nonnegative, got {lambda}")));
    }
    if lambda > 0.0 && kind != RewardKind::Penalized {
        return Err(Error::validation("a positive lambda requires the penalized reward"));
    }
    let gamma_select = (0..table.len())
        .map(|i| {
            let m = table.cum_mean_of(i);
            match kind {
                RewardKind::Sign => sign(m),
                RewardKind::Value => m,
                RewardKind::Penalized => {
                    let c = table.c_hat[i];
                    if c < 0.0 {
                        m + lambda * c
                    } else {
                        m
                    }
                }
            }
        })
        .collect();
    Ok(RewardVector {
        kind,
        lambda,
        gamma_select,
    })
}
