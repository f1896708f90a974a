pub mod dataset;
pub mod error;
pub mod forest;
pub mod rng;
pub mod contrast;
pub mod policytree;
pub mod reward;
pub mod simulate;
pub mod capital;
pub mod baselines;
pub mod eval;
