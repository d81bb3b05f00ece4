#![allow(dead_code)]

use dyndml::data::{validate_dataset, PanelDataset, RawColumns};
use dyndml::learners::{LearnerKind, Penalty};
use dyndml::nuisance::LearnerConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dataset(
    y2: Vec<f64>,
    d1: Vec<i64>,
    d2: Vec<i64>,
    x0: Vec<Vec<f64>>,
    x1: Vec<Vec<f64>>,
) -> PanelDataset {
    validate_dataset(
        RawColumns {
            y2,
            d1,
            d2,
            x0,
            x1,
            ..Default::default()
        },
        3,
    )
    .unwrap()
}

/// Covariates and treatments independent of each other: every propensity
/// is 1/2 and outcomes are pure noise.
pub fn coin_data(n: usize, p: usize, seed: u64) -> PanelDataset {
    let mut r = rng(seed);
    let normal = |r: &mut ChaCha8Rng| -> f64 { r.sample(rand_distr::StandardNormal) };
    let x0: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| normal(&mut r)).collect())
        .collect();
    let x1: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| normal(&mut r)).collect())
        .collect();
    let d1: Vec<i64> = (0..n).map(|_| i64::from(r.random_bool(0.5))).collect();
    let d2: Vec<i64> = (0..n).map(|_| i64::from(r.random_bool(0.5))).collect();
    let y2: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
    dataset(y2, d1, d2, x0, x1)
}

/// Lasso outcome models and logistic-lasso propensities at a fixed penalty.
pub fn fixed_penalty(lambda: f64) -> LearnerConfig {
    LearnerConfig {
        penalty: Penalty::Fixed(lambda),
        ..LearnerConfig::uniform(LearnerKind::Lasso, LearnerKind::LogisticLasso)
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
