//! Per-unit treatment contrast estimators.
//!
//! The T-learner fits one regression forest per arm. A unit's own-arm
//! prediction is out-of-bag and its other-arm prediction uses the full
//! forest of that arm, so no unit's outcome enters its own contrast. The
//! doubly robust learner builds a pseudo-outcome from the same arm fits.
//! Survival data use per-arm survival forests and a restricted mean
//! survival time contrast.

use serde::{Deserialize, Serialize};

use crate::dataset::{CovariateMatrix, SurvivalDataset, TrialDataset};
use crate::error::{Error, Result};
use crate::forest::{
    fit_regression_forest, fit_regression_forest_keyed, fit_survival_forest, ForestParams,
};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorTag {
    RfOobTlearner,
    DrPlain,
    DrRegressed,
    RmstForest,
    /// Ground-truth contrast supplied directly.
    Oracle,
}

/// Estimator choice for continuous outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Rf,
    Dr,
    DrReg,
}

impl Estimator {
    pub fn tag(self) -> EstimatorTag {
        match self {
            Estimator::Rf => EstimatorTag::RfOobTlearner,
            Estimator::Dr => EstimatorTag::DrPlain,
            Estimator::DrReg => EstimatorTag::DrRegressed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastEstimate {
    pub c_hat: Vec<f64>,
    /// Arm-0 regression (or RMST) evaluated at every unit.
    pub arm0: Vec<f64>,
    pub arm1: Vec<f64>,
    pub estimator: EstimatorTag,
    /// Survival horizon, RMST estimates only.
    pub tau: Option<f64>,
}

impl ContrastEstimate {
    pub fn len(&self) -> usize {
        self.c_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c_hat.is_empty()
    }

    /// Wrap a known contrast vector.
    pub fn oracle(c: Vec<f64>) -> Result<Self> {
        if let Some(i) = c.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!("non-finite contrast at row {}", i + 1)));
        }
        Ok(Self {
            arm0: vec![0.0; c.len()],
            arm1: c.clone(),
            c_hat: c,
            estimator: EstimatorTag::Oracle,
            tau: None,
        })
    }
}

/// Per-arm regressions `m_a(x_i)` at every unit.
struct ArmFits {
    m0: Vec<f64>,
    m1: Vec<f64>,
}

fn fit_arms(ds: &TrialDataset, params: &ForestParams, keys: Option<&[u64]>) -> Result<ArmFits> {
    let n = ds.len();
    let mut m = [vec![0.0; n], vec![0.0; n]];
    for arm in 0..2u8 {
        let rows = ds.arm_indices(arm);
        if rows.len() < params.min_node_size {
            return Err(Error::validation(format!(
                "arm {arm} has {} units, fewer than min_node_size = {}",
                rows.len(),
                params.min_node_size
            )));
        }
        let x = ds.covariates.select_rows(&rows);
        let y: Vec<f64> = rows.iter().map(|&i| ds.outcome[i]).collect();
        let arm_keys: Option<Vec<u64>> = keys.map(|k| rows.iter().map(|&i| k[i]).collect());
        let p = params.clone().with_seed(derive_seed(params.seed, arm as u64));
        let forest = fit_regression_forest_keyed(&x, &y, arm_keys.as_deref(), &p)?;
        let own = forest.predict_oob(&x)?.values;
        let all = forest.predict(&ds.covariates)?;
        let mut own_iter = own.into_iter();
        for (i, slot) in m[arm as usize].iter_mut().enumerate() {
            *slot = if ds.treatment[i] == arm {
                own_iter.next().expect("one OOB value per arm row")
            } else {
                all[i]
            };
        }
    }
    let [m0, m1] = m;
    Ok(ArmFits { m0, m1 })
}

fn check_keys(ds: &TrialDataset, keys: &[u64]) -> Result<()> {
    if keys.len() != ds.len() {
        return Err(Error::validation("one key per unit required"));
    }
    Ok(())
}

/// Two-forest T-learner with out-of-bag own-arm predictions.
pub fn estimate_contrast_rf(ds: &TrialDataset, params: &ForestParams) -> Result<ContrastEstimate> {
    rf_from_arms(fit_arms(ds, params, None)?)
}

/// T-learner whose bootstrap draws follow `keys` rather than row order, so
/// a row-permuted dataset with permuted keys gives the permuted estimate.
pub fn estimate_contrast_rf_keyed(
    ds: &TrialDataset,
    params: &ForestParams,
    keys: &[u64],
) -> Result<ContrastEstimate> {
    check_keys(ds, keys)?;
    rf_from_arms(fit_arms(ds, params, Some(keys))?)
}

fn rf_from_arms(arms: ArmFits) -> Result<ContrastEstimate> {
    let c_hat = arms.m1.iter().zip(&arms.m0).map(|(a, b)| a - b).collect();
    Ok(ContrastEstimate {
        c_hat,
        arm0: arms.m0,
        arm1: arms.m1,
        estimator: EstimatorTag::RfOobTlearner,
        tau: None,
    })
}

/// Doubly robust pseudo-outcome with the known propensity. With `regress`
/// the pseudo-outcome is smoothed by an out-of-bag forest on `X`.
pub fn estimate_contrast_dr(
    ds: &TrialDataset,
    params: &ForestParams,
    regress: bool,
) -> Result<ContrastEstimate> {
    let arms = fit_arms(ds, params, None)?;
    dr_from_arms(ds, params, arms, regress)
}

fn dr_from_arms(
    ds: &TrialDataset,
    params: &ForestParams,
    arms: ArmFits,
    regress: bool,
) -> Result<ContrastEstimate> {
    let phi = dr_pseudo_outcome(ds, &arms.m0, &arms.m1);
    let (c_hat, estimator) = if regress {
        let p = params.clone().with_seed(derive_seed(params.seed, 2));
        let forest = fit_regression_forest(&ds.covariates, &phi, &p)?;
        (forest.predict_oob(&ds.covariates)?.values, EstimatorTag::DrRegressed)
    } else {
        (phi, EstimatorTag::DrPlain)
    };
    Ok(ContrastEstimate {
        c_hat,
        arm0: arms.m0,
        arm1: arms.m1,
        estimator,
        tau: None,
    })
}

pub(crate) fn dr_pseudo_outcome(ds: &TrialDataset, m0: &[f64], m1: &[f64]) -> Vec<f64> {
    let pi = ds.propensity;
    (0..ds.len())
        .map(|i| {
            let a = ds.treatment[i] as f64;
            let m_a = if ds.treatment[i] == 1 { m1[i] } else { m0[i] };
            (a - pi) / (pi * (1.0 - pi)) * (ds.outcome[i] - m_a) + m1[i] - m0[i]
        })
        .collect()
}

pub fn estimate_contrast(
    ds: &TrialDataset,
    estimator: Estimator,
    params: &ForestParams,
) -> Result<ContrastEstimate> {
    match estimator {
        Estimator::Rf => estimate_contrast_rf(ds, params),
        Estimator::Dr => estimate_contrast_dr(ds, params, false),
        Estimator::DrReg => estimate_contrast_dr(ds, params, true),
    }
}

/// Several estimators from one pair of arm forests. Output order follows
/// `estimators`.
pub fn estimate_contrasts(
    ds: &TrialDataset,
    estimators: &[Estimator],
    params: &ForestParams,
) -> Result<Vec<ContrastEstimate>> {
    let arms = fit_arms(ds, params, None)?;
    estimators
        .iter()
        .map(|e| {
            let arms = ArmFits {
                m0: arms.m0.clone(),
                m1: arms.m1.clone(),
            };
            match e {
                Estimator::Rf => rf_from_arms(arms),
                Estimator::Dr => dr_from_arms(ds, params, arms, false),
                Estimator::DrReg => dr_from_arms(ds, params, arms, true),
            }
        })
        .collect()
}

/// Minimum over arms of the largest observed time in that arm.
pub fn compute_tau(ds: &SurvivalDataset) -> Result<f64> {
    let mut tau = f64::INFINITY;
    for arm in 0..2u8 {
        let max = ds
            .arm_indices(arm)
            .iter()
            .map(|&i| ds.observed_time[i])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::validation(format!("arm {arm} is empty")));
        }
        tau = tau.min(max);
    }
    Ok(tau)
}

/// Restricted mean survival time contrast from per-arm survival forests.
pub fn estimate_rmst_contrast(
    ds: &SurvivalDataset,
    params: &ForestParams,
    tau: Option<f64>,
) -> Result<ContrastEstimate> {
    let tau = match tau {
        Some(t) => t,
        None => compute_tau(ds)?,
    };
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::validation(format!("tau must be positive, got {tau}")));
    }
    let n = ds.len();
    let mut mu = [vec![0.0; n], vec![0.0; n]];
    for arm in 0..2u8 {
        let rows = ds.arm_indices(arm);
        let x: CovariateMatrix = ds.covariates.select_rows(&rows);
        let time: Vec<f64> = rows.iter().map(|&i| ds.observed_time[i]).collect();
        let event: Vec<u8> = rows.iter().map(|&i| ds.event[i]).collect();
        let p = params.clone().with_seed(derive_seed(params.seed, arm as u64));
        let forest = fit_survival_forest(&x, &time, &event, &p)?;
        let own = forest.predict_rmst_oob(&x, tau)?.values;
        let all = forest.predict_rmst(&ds.covariates, tau)?;
        let mut own_iter = own.into_iter();
        for (i, slot) in mu[arm as usize].iter_mut().enumerate() {
            *slot = if ds.treatment[i] == arm {
                own_iter.next().expect("one OOB value per arm row")
            } else {
                all[i]
            };
        }
    }
    let [arm0, arm1] = mu;
    Ok(ContrastEstimate {
        c_hat: arm1.iter().zip(&arm0).map(|(a, b)| a - b).collect(),
        arm0,
        arm1,
        estimator: EstimatorTag::RmstForest,
        tau: Some(tau),
    })
}
