//! Encoder adapters: anything that maps a batch of token sequences to one
//! pooled vector per sample and can backpropagate into its own parameters.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::FinetuneError;
use crate::textprep::TokenizedSample;

/// A trainable contextual encoder producing a pooled representation.
///
/// Implementations own their parameters. `backward` returns gradients in the
/// same order and shape as `params_mut` exposes the parameters, flattened.
pub trait Encoder: Send {
    /// State retained between `encode` and `backward`.
    type Cache;

    fn encoder_id(&self) -> &str;
    fn hidden_size(&self) -> usize;
    fn encode(&self, batch: &[TokenizedSample]) -> Result<(Array2<f64>, Self::Cache), FinetuneError>;
    fn backward(&self, cache: &Self::Cache, grad_pooled: &Array2<f64>) -> Vec<Vec<f64>>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;
}

/// Randomly initialised bag-of-embeddings encoder for smoke runs and tests.
///
/// The mean embedding of the attended tokens goes through a tanh pooler,
/// standing in for the pooled output of BERT-style encoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyEncoder {
    id: String,
    embeddings: Array2<f64>,
    pool_weight: Array2<f64>,
    pool_bias: Array1<f64>,
}

pub struct TinyCache {
    context: Array2<f64>,
    pooled: Array2<f64>,
    tokens: Vec<Vec<u32>>,
}

impl TinyEncoder {
    pub const DEFAULT_HIDDEN: usize = 64;

    pub fn new<R: Rng + ?Sized>(id: impl Into<String>, vocab_size: usize, hidden: usize, rng: &mut R) -> Self {
        let emb = Normal::new(0.0, 1.0).expect("valid std");
        let pool = Normal::new(0.0, 1.0 / (hidden as f64).sqrt()).expect("valid std");
        TinyEncoder {
            id: id.into(),
            embeddings: Array2::from_shape_simple_fn((vocab_size, hidden), || emb.sample(rng)),
            pool_weight: Array2::from_shape_simple_fn((hidden, hidden), || pool.sample(rng)),
            pool_bias: Array1::zeros(hidden),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embeddings.nrows()
    }
}

impl Encoder for TinyEncoder {
    type Cache = TinyCache;

    fn encoder_id(&self) -> &str {
        &self.id
    }

    fn hidden_size(&self) -> usize {
        self.embeddings.ncols()
    }

    fn encode(&self, batch: &[TokenizedSample]) -> Result<(Array2<f64>, TinyCache), FinetuneError> {
        let hidden = self.hidden_size();
        let vocab = self.vocab_size();
        let mut context = Array2::zeros((batch.len(), hidden));
        let mut tokens = Vec::with_capacity(batch.len());
        for (i, sample) in batch.iter().enumerate() {
            let ids: Vec<u32> = sample
                .token_ids
                .iter()
                .zip(&sample.attention_mask)
                .filter(|(_, &m)| m == 1)
                .map(|(&t, _)| t)
                .collect();
            if ids.is_empty() {
                return Err(FinetuneError::Encoder(format!("sample {:?} has no attended tokens", sample.id)));
            }
            if let Some(&bad) = ids.iter().find(|&&t| t as usize >= vocab) {
                return Err(FinetuneError::Encoder(format!("token id {bad} outside vocabulary of {vocab}")));
            }
            let mut row = context.row_mut(i);
            for &t in &ids {
                row += &self.embeddings.row(t as usize);
            }
            row /= ids.len() as f64;
            tokens.push(ids);
        }
        let pooled = (context.dot(&self.pool_weight.t()) + &self.pool_bias).mapv(f64::tanh);
        Ok((pooled.clone(), TinyCache { context, pooled, tokens }))
    }

    fn backward(&self, cache: &TinyCache, grad_pooled: &Array2<f64>) -> Vec<Vec<f64>> {
        let pre = grad_pooled * &cache.pooled.mapv(|h| 1.0 - h * h);
        let grad_pool_weight = pre.t().dot(&cache.context);
        let grad_pool_bias = pre.sum_axis(Axis(0));
        let grad_context = pre.dot(&self.pool_weight);
        let mut grad_embeddings = Array2::<f64>::zeros(self.embeddings.raw_dim());
        for (i, ids) in cache.tokens.iter().enumerate() {
            let g = grad_context.row(i);
            let share = &g / ids.len() as f64;
            for &t in ids {
                let mut row = grad_embeddings.row_mut(t as usize);
                row += &share;
            }
        }
        vec![
            grad_embeddings.into_raw_vec_and_offset().0,
            grad_pool_weight.as_standard_layout().into_owned().into_raw_vec_and_offset().0,
            grad_pool_bias.into_raw_vec_and_offset().0,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.embeddings.as_slice_mut().expect("standard layout"),
            self.pool_weight.as_slice_mut().expect("standard layout"),
            self.pool_bias.as_slice_mut().expect("standard layout"),
        ]
    }
}
