//! Randomized grid search: visit `budget` distinct grid cells in a seeded
//! random order and keep the configuration with the best dev micro-F1.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::fit;
use super::{FinetuneError, TrainConfig};
use crate::corpus::DatasetSplit;

/// Candidate values per hyperparameter. The grid is their cartesian product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dropout_rates: Vec<f64>,
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub epochs: Vec<usize>,
}

impl SearchSpace {
    pub fn len(&self) -> usize {
        self.dropout_rates.len() * self.learning_rates.len() * self.batch_sizes.len() * self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every grid cell applied to `base`, in a fixed nested order.
    pub fn grid(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::with_capacity(self.len());
        for &dropout_rate in &self.dropout_rates {
            for &learning_rate in &self.learning_rates {
                for &batch_size in &self.batch_sizes {
                    for &epochs in &self.epochs {
                        out.push(TrainConfig { dropout_rate, learning_rate, batch_size, epochs, ..base.clone() });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub config: TrainConfig,
    pub dev_micro_f1: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: TrainConfig,
    pub best_dev_micro_f1: f64,
    /// Trials in visit order.
    pub trials: Vec<Trial>,
}

/// Seeded visit order over `grid_len` cells, truncated to `budget`.
pub fn visit_order(grid_len: usize, budget: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..grid_len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.truncate(budget);
    order
}

/// `a` beats `b`: higher score, then lower dropout, then lower learning rate.
fn better(a: (f64, &TrainConfig), b: (f64, &TrainConfig)) -> bool {
    use std::cmp::Ordering::*;
    match a.0.total_cmp(&b.0) {
        Greater => true,
        Less => false,
        Equal => match a.1.dropout_rate.total_cmp(&b.1.dropout_rate) {
            Less => true,
            Greater => false,
            Equal => a.1.learning_rate < b.1.learning_rate,
        },
    }
}

/// Search with a caller-supplied scorer returning dev micro-F1.
pub fn hyperparameter_search_with<F>(
    base: &TrainConfig,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    mut evaluate: F,
) -> Result<SearchOutcome, FinetuneError>
where
    F: FnMut(&TrainConfig) -> Result<f64, FinetuneError>,
{
    if space.is_empty() {
        return Err(FinetuneError::EmptySearchSpace);
    }
    if budget == 0 {
        return Err(FinetuneError::InvalidConfig { field: "budget", reason: "must be at least 1".into() });
    }
    let grid = space.grid(base);
    let mut trials = Vec::new();
    let mut best: Option<(f64, TrainConfig)> = None;
    for cell in visit_order(grid.len(), budget, seed) {
        let config = grid[cell].clone();
        match evaluate(&config) {
            Ok(score) => {
                if best.as_ref().is_none_or(|(s, c)| better((score, &config), (*s, c))) {
                    best = Some((score, config.clone()));
                }
                trials.push(Trial { config, dev_micro_f1: Some(score), error: None });
            }
            Err(e) => trials.push(Trial { config, dev_micro_f1: None, error: Some(e.to_string()) }),
        }
    }
    let (best_dev_micro_f1, best) = best.ok_or(FinetuneError::AllConfigsFailed)?;
    Ok(SearchOutcome { best, best_dev_micro_f1, trials })
}

/// Trains every visited configuration and scores its final epoch on `dev`.
pub fn hyperparameter_search(
    base: &TrainConfig,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    train: &DatasetSplit,
    dev: &DatasetSplit,
) -> Result<SearchOutcome, FinetuneError> {
    hyperparameter_search_with(base, space, budget, seed, |config| Ok(fit(config, train, dev)?.run.final_dev().micro_f1))
}
