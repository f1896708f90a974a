//! Synthetic trials with known contrasts.
//!
//! Scenarios 1-3 draw `X ~ U[-2,2]^r`, `A ~ Bernoulli(1/2)` and
//! `Y = x1 + 2 x2 + A C(X) + e` with standard normal noise and
//! `C = x1`, `x1 * x2` and `x1 - x2` respectively. Scenario 4 draws
//! `X ~ U[-1,1]^r` and `T = exp(0.1 x1 + 0.2 x2 + A x1 + e)` under normal,
//! logistic or `ln(-ln U)` noise, censored by `U[0, c0]` with `c0` tuned
//! to a target censoring rate. Its ground-truth contrast is the restricted
//! mean survival time difference evaluated from a large sorted noise sample.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{CovariateMatrix, SurvivalDataset, TrialDataset};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, ChaCha8Rng};

/// Monte Carlo size for the noise table, censoring calibration and the
/// truth reference sample.
pub const ORACLE_DRAWS: usize = 100_000;

const NOISE_SEED: u64 = 0x5eed_0001;
const CALIBRATION_SEED: u64 = 0x5eed_0002;
const REFERENCE_SEED: u64 = 0x5eed_0003;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Noise {
    Normal,
    Logistic,
    Extreme,
}

impl Noise {
    fn draw(self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Noise::Normal => rng.sample(StandardNormal),
            Noise::Logistic => {
                let u = open_unit(rng);
                (u / (1.0 - u)).ln()
            }
            Noise::Extreme => (-open_unit(rng).ln()).ln(),
        }
    }

    fn index(self) -> u64 {
        match self {
            Noise::Normal => 0,
            Noise::Logistic => 1,
            Noise::Extreme => 2,
        }
    }
}

/// Uniform draw on the open interval (0, 1).
fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: u8,
    pub r: usize,
    pub noise: Option<Noise>,
    pub censor_level: Option<f64>,
}

impl ScenarioSpec {
    pub fn trial(id: u8) -> Self {
        Self {
            id,
            r: 10,
            noise: None,
            censor_level: None,
        }
    }

    pub fn survival(noise: Noise, censor_level: f64) -> Self {
        Self {
            id: 4,
            r: 10,
            noise: Some(noise),
            censor_level: Some(censor_level),
        }
    }

    pub fn with_r(mut self, r: usize) -> Self {
        self.r = r;
        self
    }

    pub fn is_survival(&self) -> bool {
        self.id == 4
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.id) {
            return Err(Error::validation(format!("scenario must be 1-4, got {}", self.id)));
        }
        if self.r < 2 {
            return Err(Error::validation("scenarios need at least 2 covariates"));
        }
        if self.id == 4 {
            if self.noise.is_none() {
                return Err(Error::validation("scenario 4 needs a noise law"));
            }
            match self.censor_level {
                Some(c) if c > 0.0 && c < 1.0 => {}
                Some(c) => {
                    return Err(Error::validation(format!(
                        "censoring level must lie in (0, 1), got {c}"
                    )))
                }
                None => return Err(Error::validation("scenario 4 needs a censoring level")),
            }
        } else if self.noise.is_some() || self.censor_level.is_some() {
            return Err(Error::validation("noise and censoring apply to scenario 4 only"));
        }
        Ok(())
    }

    fn noise_law(&self) -> Noise {
        self.noise.expect("validated survival spec")
    }
}

/// True contrast of a trial scenario at `(x1, x2)`.
pub fn trial_contrast(id: u8, x1: f64, x2: f64) -> f64 {
    match id {
        1 => x1,
        2 => x1 * x2,
        3 => x1 - x2,
        _ => panic!("scenario {id} has no trial contrast"),
    }
}

fn uniform_columns(rng: &mut ChaCha8Rng, n: usize, r: usize, half_width: f64) -> Vec<Vec<f64>> {
    let mut cols = vec![Vec::with_capacity(n); r];
    for _ in 0..n {
        for col in cols.iter_mut() {
            col.push(rng.random_range(-half_width..half_width));
        }
    }
    cols
}

pub fn gen_trial(spec: &ScenarioSpec, n: usize, seed: u64) -> Result<TrialDataset> {
    spec.validate()?;
    if spec.is_survival() {
        return Err(Error::validation("scenario 4 is a survival scenario"));
    }
    if n == 0 {
        return Err(Error::validation("n must be positive"));
    }
    let mut rng = stream_rng(seed, 0);
    let cols = uniform_columns(&mut rng, n, spec.r, 2.0);
    let mut treatment = Vec::with_capacity(n);
    let mut outcome = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for i in 0..n {
        let (x1, x2) = (cols[0][i], cols[1][i]);
        let c = trial_contrast(spec.id, x1, x2);
        let a = u8::from(rng.random::<f64>() < 0.5);
        let e: f64 = rng.sample(StandardNormal);
        treatment.push(a);
        outcome.push(x1 + 2.0 * x2 + a as f64 * c + e);
        truth.push(c);
    }
    TrialDataset::new(
        CovariateMatrix::from_columns(cols)?,
        treatment,
        outcome,
        0.5,
        Some(truth),
    )
}

fn survival_baseline(x1: f64, x2: f64) -> f64 {
    0.1 * x1 + 0.2 * x2
}

/// Sorted noise draws with prefix sums of `exp(e)`, so that
/// `E[min(exp(a + e), tau)]` is a binary search.
struct NoiseTable {
    eps: Vec<f64>,
    exp_prefix: Vec<f64>,
}

impl NoiseTable {
    fn new(noise: Noise) -> Self {
        let mut rng = stream_rng(NOISE_SEED, noise.index());
        let mut eps: Vec<f64> = (0..ORACLE_DRAWS).map(|_| noise.draw(&mut rng)).collect();
        eps.sort_by(f64::total_cmp);
        let mut exp_prefix = Vec::with_capacity(eps.len() + 1);
        exp_prefix.push(0.0);
        let mut s = 0.0;
        for e in &eps {
            s += e.exp();
            exp_prefix.push(s);
        }
        Self { eps, exp_prefix }
    }

    fn expected_min(&self, a: f64, tau: f64) -> f64 {
        let cut = tau.ln() - a;
        let k = self.eps.partition_point(|&e| e < cut);
        let m = self.eps.len() as f64;
        (a.exp() * self.exp_prefix[k] + tau * (self.eps.len() - k) as f64) / m
    }
}

fn noise_table(noise: Noise) -> Arc<NoiseTable> {
    static CACHE: OnceLock<Mutex<HashMap<Noise, Arc<NoiseTable>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(t) = cache.lock().unwrap().get(&noise) {
        return t.clone();
    }
    let table = Arc::new(NoiseTable::new(noise));
    cache.lock().unwrap().entry(noise).or_insert(table).clone()
}

/// Ground-truth RMST difference at covariate row `x` with horizon `tau`.
pub fn true_rmst_contrast(spec: &ScenarioSpec, x: &[f64], tau: f64) -> Result<f64> {
    spec.validate()?;
    if !spec.is_survival() {
        return Err(Error::validation("RMST contrasts exist for scenario 4 only"));
    }
    let table = noise_table(spec.noise_law());
    let u = survival_baseline(x[0], x[1]);
    Ok(table.expected_min(u + x[0], tau) - table.expected_min(u, tau))
}

/// One survival draw per unit: covariates, arm, event time, censoring uniform.
struct RawSurvival {
    cols: Vec<Vec<f64>>,
    treatment: Vec<u8>,
    time: Vec<f64>,
    censor_u: Vec<f64>,
}

fn raw_survival(noise: Noise, r: usize, n: usize, rng: &mut ChaCha8Rng) -> RawSurvival {
    let cols = uniform_columns(rng, n, r, 1.0);
    let mut treatment = Vec::with_capacity(n);
    let mut time = Vec::with_capacity(n);
    let mut censor_u = Vec::with_capacity(n);
    for i in 0..n {
        let (x1, x2) = (cols[0][i], cols[1][i]);
        let a = u8::from(rng.random::<f64>() < 0.5);
        let e = noise.draw(rng);
        treatment.push(a);
        time.push((survival_baseline(x1, x2) + a as f64 * x1 + e).exp());
        censor_u.push(rng.random::<f64>());
    }
    RawSurvival {
        cols,
        treatment,
        time,
        censor_u,
    }
}

fn censor_time(c0: f64, u: f64) -> f64 {
    if c0.is_infinite() {
        f64::INFINITY
    } else {
        c0 * u
    }
}

fn censoring_rate(raw: &RawSurvival, c0: f64) -> f64 {
    let censored = raw
        .time
        .iter()
        .zip(&raw.censor_u)
        .filter(|(&t, &u)| t > censor_time(c0, u))
        .count();
    censored as f64 / raw.time.len() as f64
}

fn level_key(noise: Noise, level: f64) -> (Noise, u64) {
    (noise, level.to_bits())
}

/// Censoring cutoff `c0` whose Monte Carlo censoring rate is within 0.005
/// of the scenario's target.
pub fn calibrate_c0(spec: &ScenarioSpec) -> Result<f64> {
    spec.validate()?;
    if !spec.is_survival() {
        return Err(Error::validation("censoring calibration applies to scenario 4 only"));
    }
    let noise = spec.noise_law();
    let target = spec.censor_level.expect("validated survival spec");
    static CACHE: OnceLock<Mutex<HashMap<(Noise, u64), f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(&c0) = cache.lock().unwrap().get(&level_key(noise, target)) {
        return Ok(c0);
    }
    let mut rng = stream_rng(CALIBRATION_SEED, noise.index());
    let raw = raw_survival(noise, 2, ORACLE_DRAWS, &mut rng);
    let c0 = bisect_c0(&raw, target)?;
    cache.lock().unwrap().insert(level_key(noise, target), c0);
    Ok(c0)
}

fn bisect_c0(raw: &RawSurvival, target: f64) -> Result<f64> {
    let mut lo = 1e-9;
    let mut hi = 1.0;
    let mut widenings = 0;
    while censoring_rate(raw, hi) > target {
        hi *= 2.0;
        widenings += 1;
        if widenings > 200 {
            return Err(Error::Internal("censoring calibration failed to bracket".into()));
        }
    }
    if censoring_rate(raw, lo) < target {
        return Err(Error::Internal("censoring calibration failed to bracket".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let rate = censoring_rate(raw, mid);
        if (rate - target).abs() < 0.005 {
            return Ok(mid);
        }
        if rate > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Internal("censoring calibration did not converge".into()))
}

/// Reference draw for the truth horizon and oracle threshold.
struct Reference {
    tau: f64,
    contrasts: Vec<f64>,
}

fn reference(spec: &ScenarioSpec, c0: f64) -> Result<Arc<Reference>> {
    let noise = spec.noise_law();
    static CACHE: OnceLock<Mutex<HashMap<(Noise, u64), Arc<Reference>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(r) = cache.lock().unwrap().get(&(noise, c0.to_bits())) {
        return Ok(r.clone());
    }
    let mut rng = stream_rng(REFERENCE_SEED, noise.index());
    let raw = raw_survival(noise, 2, ORACLE_DRAWS, &mut rng);
    let mut arm_max = [f64::NEG_INFINITY; 2];
    for i in 0..ORACLE_DRAWS {
        let obs = raw.time[i].min(censor_time(c0, raw.censor_u[i]));
        let a = raw.treatment[i] as usize;
        arm_max[a] = arm_max[a].max(obs);
    }
    let tau = arm_max[0].min(arm_max[1]);
    let table = noise_table(noise);
    let contrasts = (0..ORACLE_DRAWS)
        .map(|i| {
            let (x1, x2) = (raw.cols[0][i], raw.cols[1][i]);
            let u = survival_baseline(x1, x2);
            table.expected_min(u + x1, tau) - table.expected_min(u, tau)
        })
        .collect();
    let r = Arc::new(Reference { tau, contrasts });
    Ok(cache.lock().unwrap().entry((noise, c0.to_bits())).or_insert(r).clone())
}

/// Truth horizon: minimum over arms of the largest observed time in a
/// censored reference sample of 100 000 draws.
pub fn truth_tau(spec: &ScenarioSpec) -> Result<f64> {
    Ok(reference(spec, calibrate_c0(spec)?)?.tau)
}

/// True contrasts over the reference sample, used as the oracle population.
pub fn reference_contrasts(spec: &ScenarioSpec) -> Result<Vec<f64>> {
    Ok(reference(spec, calibrate_c0(spec)?)?.contrasts.clone())
}

/// Mean true contrast over the better half of the reference population.
/// Used as the survival threshold, so the optimal subgroup is half the
/// population.
pub fn true_delta(spec: &ScenarioSpec) -> Result<f64> {
    let mut c = reference_contrasts(spec)?;
    c.sort_by(|a, b| b.total_cmp(a));
    let half = c.len() / 2;
    Ok(c[..half].iter().sum::<f64>() / half as f64)
}

pub fn gen_survival(spec: &ScenarioSpec, n: usize, seed: u64) -> Result<SurvivalDataset> {
    let c0 = calibrate_c0(spec)?;
    gen_survival_with_c0(spec, n, seed, c0)
}

/// Survival draw with an explicit censoring cutoff; `f64::INFINITY`
/// disables censoring.
pub fn gen_survival_with_c0(
    spec: &ScenarioSpec,
    n: usize,
    seed: u64,
    c0: f64,
) -> Result<SurvivalDataset> {
    spec.validate()?;
    if !spec.is_survival() {
        return Err(Error::validation("survival data come from scenario 4"));
    }
    if n == 0 {
        return Err(Error::validation("n must be positive"));
    }
    if !(c0 > 0.0) {
        return Err(Error::validation(format!("c0 must be positive, got {c0}")));
    }
    let tau = reference(spec, c0)?.tau;
    let mut rng = stream_rng(seed, 0);
    let raw = raw_survival(spec.noise_law(), spec.r, n, &mut rng);
    let table = noise_table(spec.noise_law());
    let mut time = Vec::with_capacity(n);
    let mut event = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for i in 0..n {
        let c = censor_time(c0, raw.censor_u[i]);
        time.push(raw.time[i].min(c));
        event.push(u8::from(raw.time[i] <= c));
        let (x1, x2) = (raw.cols[0][i], raw.cols[1][i]);
        let u = survival_baseline(x1, x2);
        truth.push(table.expected_min(u + x1, tau) - table.expected_min(u, tau));
    }
    SurvivalDataset::new(
        CovariateMatrix::from_columns(raw.cols)?,
        raw.treatment,
        time,
        event,
        Some(truth),
    )
}
