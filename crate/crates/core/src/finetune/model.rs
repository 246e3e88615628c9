//! Encoder -> dropout -> affine head -> softmax.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::Encoder;
use super::loss::{softmax, weighted_cross_entropy_with_logits, Reduction};
use super::FinetuneError;
use crate::textprep::TokenizedSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active.
    Train,
    /// Dropout is the identity; output is deterministic.
    Eval,
}

/// Affine map from the pooled representation to one logit per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl ClassifierHead {
    /// Zero-initialised, so an untrained model predicts the uniform
    /// distribution.
    pub fn zeros(classes: usize, hidden: usize) -> Self {
        ClassifierHead { weight: Array2::zeros((classes, hidden)), bias: Array1::zeros(classes) }
    }

    pub fn classes(&self) -> usize {
        self.weight.nrows()
    }
}

struct Pass<C> {
    encoder_cache: C,
    keep_scale: Option<Array2<f64>>,
    dropped: Array2<f64>,
    logits: Array2<f64>,
}

pub struct ModelAssembly<E: Encoder> {
    pub encoder: E,
    pub head: ClassifierHead,
    dropout_rate: f64,
    dropout_rng: ChaCha8Rng,
}

impl<E: Encoder> ModelAssembly<E> {
    pub fn new(encoder: E, classes: usize, dropout_rate: f64, dropout_seed: u64) -> Self {
        let head = ClassifierHead::zeros(classes, encoder.hidden_size());
        Self::with_head(encoder, head, dropout_rate, dropout_seed)
    }

    pub fn with_head(encoder: E, head: ClassifierHead, dropout_rate: f64, dropout_seed: u64) -> Self {
        assert!((0.0..1.0).contains(&dropout_rate), "dropout rate must be in [0, 1)");
        assert_eq!(head.weight.ncols(), encoder.hidden_size(), "head width must match encoder");
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        dropout_rng.set_stream(2);
        ModelAssembly { encoder, head, dropout_rate, dropout_rng }
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn classes(&self) -> usize {
        self.head.classes()
    }

    fn pass(&mut self, batch: &[TokenizedSample], mode: Mode) -> Result<Pass<E::Cache>, FinetuneError> {
        let (pooled, encoder_cache) = self.encoder.encode(batch)?;
        if pooled.dim() != (batch.len(), self.encoder.hidden_size()) {
            return Err(FinetuneError::Encoder(format!(
                "encoder returned {:?}, expected ({}, {})",
                pooled.dim(),
                batch.len(),
                self.encoder.hidden_size()
            )));
        }
        let (dropped, keep_scale) = if mode == Mode::Train && self.dropout_rate > 0.0 {
            let keep = 1.0 - self.dropout_rate;
            let rng = &mut self.dropout_rng;
            let scale = Array2::from_shape_simple_fn(pooled.raw_dim(), || if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
            (&pooled * &scale, Some(scale))
        } else {
            (pooled, None)
        };
        let logits = dropped.dot(&self.head.weight.t()) + &self.head.bias;
        Ok(Pass { encoder_cache, keep_scale, dropped, logits })
    }

    /// Class probabilities, one row per sample.
    pub fn forward(&mut self, batch: &[TokenizedSample], mode: Mode) -> Result<Array2<f64>, FinetuneError> {
        Ok(softmax(&self.pass(batch, mode)?.logits))
    }

    /// Training-mode loss and gradients for every parameter tensor, ordered
    /// as [`Self::params_mut`] returns them.
    pub fn loss_and_grads(
        &mut self,
        batch: &[TokenizedSample],
        targets: &[usize],
        weights: &[f64],
        reduction: Reduction,
    ) -> Result<(f64, Vec<Vec<f64>>), FinetuneError> {
        let pass = self.pass(batch, Mode::Train)?;
        let (loss, grad_logits) = weighted_cross_entropy_with_logits(&pass.logits, targets, weights, reduction)?;
        let grad_head_weight = grad_logits.t().dot(&pass.dropped);
        let grad_head_bias = grad_logits.sum_axis(Axis(0));
        let mut grad_pooled = grad_logits.dot(&self.head.weight);
        if let Some(scale) = &pass.keep_scale {
            grad_pooled *= scale;
        }
        let mut grads = self.encoder.backward(&pass.encoder_cache, &grad_pooled);
        grads.push(grad_head_weight.as_standard_layout().into_owned().into_raw_vec_and_offset().0);
        grads.push(grad_head_bias.into_raw_vec_and_offset().0);
        Ok((loss, grads))
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut params = self.encoder.params_mut();
        params.push(self.head.weight.as_slice_mut().expect("standard layout"));
        params.push(self.head.bias.as_slice_mut().expect("standard layout"));
        params
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finetune::encoder::TinyEncoder;
    use crate::textprep::{tokenize, HashingTokenizer};
    use ndarray::array;
    use proptest::prelude::*;

    fn batch(texts: &[&str]) -> Vec<TokenizedSample> {
        let tok = HashingTokenizer::new(64);
        texts.iter().map(|t| tokenize(t, &tok, 16).unwrap()).collect()
    }

    fn model(dropout: f64) -> ModelAssembly<TinyEncoder> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = TinyEncoder::new("stub:tiny:64", 68, 8, &mut rng);
        let mut m = ModelAssembly::new(enc, 2, dropout, 3);
        m.head.weight = Array2::from_shape_fn((2, 8), |(i, j)| ((i * 8 + j) as f64 * 0.37).sin());
        m.head.bias = array![0.1, -0.2];
        m
    }

    #[test]
    fn single_sample_gives_one_by_two() {
        let p = model(0.1).forward(&batch(&["نص"]), Mode::Eval).unwrap();
        assert_eq!(p.dim(), (1, 2));
        assert!((p.row(0).sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eval_is_deterministic() {
        let mut m = model(0.3);
        let b = batch(&["a b c", "d e", "f"]);
        assert_eq!(m.forward(&b, Mode::Eval).unwrap(), m.forward(&b, Mode::Eval).unwrap());
    }

    #[test]
    fn zero_dropout_train_equals_eval() {
        let mut m = model(0.0);
        let b = batch(&["a b c", "d e", "f"]);
        let train = m.forward(&b, Mode::Train).unwrap();
        let eval = m.forward(&b, Mode::Eval).unwrap();
        assert!(train.iter().zip(&eval).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn dropout_perturbs_train_mode() {
        let mut m = model(0.5);
        let b = batch(&["a b c d e f g h"]);
        let eval = m.forward(&b, Mode::Eval).unwrap();
        let differs = (0..10).any(|_| m.forward(&b, Mode::Train).unwrap() != eval);
        assert!(differs);
    }

    #[test]
    fn out_of_vocabulary_token_is_an_encoder_failure() {
        let mut m = model(0.0);
        let bad = TokenizedSample { id: "x".into(), token_ids: vec![2, 500, 3], attention_mask: vec![1, 1, 1], original_length: 3 };
        assert!(matches!(m.forward(&[bad], Mode::Eval), Err(FinetuneError::Encoder(_))));
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        assert_eq!(argmax(array![0.9, 0.1].view()), 0);
        assert_eq!(argmax(array![0.5, 0.5].view()), 0);
        assert_eq!(argmax(array![0.2, 0.8].view()), 1);
    }

    /// Parameter gradients against central differences of the full model
    /// loss (dropout off so the loss is a deterministic function).
    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut m = model(0.0);
        let b = batch(&["a b c", "d e", "a f"]);
        let targets = [0, 1, 1];
        let weights = [1.0, 4.0];
        let (_, grads) = m.loss_and_grads(&b, &targets, &weights, Reduction::WeightedMean).unwrap();
        let h = 1e-6;
        for (k, grad) in grads.iter().enumerate() {
            let len = m.params_mut()[k].len();
            for j in (0..len).step_by((len / 7).max(1)) {
                let orig = m.params_mut()[k][j];
                m.params_mut()[k][j] = orig + h;
                let (up, _) = m.loss_and_grads(&b, &targets, &weights, Reduction::WeightedMean).unwrap();
                m.params_mut()[k][j] = orig - h;
                let (down, _) = m.loss_and_grads(&b, &targets, &weights, Reduction::WeightedMean).unwrap();
                m.params_mut()[k][j] = orig;
                let numeric = (up - down) / (2.0 * h);
                assert!((numeric - grad[j]).abs() < 1e-7, "tensor {k} index {j}: {numeric} vs {}", grad[j]);
            }
        }
    }

    proptest! {
        #[test]
        fn argmax_invariant_under_monotone_rescaling(p in 0.0f64..=1.0, a in 0.01f64..100.0, b in -5.0f64..5.0) {
            prop_assume!((2.0 * p - 1.0).abs() > 1e-9);
            let row = array![p, 1.0 - p];
            let scaled = row.mapv(|x| a * x + b);
            let cubed = row.mapv(|x| x.powi(3));
            prop_assert_eq!(argmax(row.view()), argmax(scaled.view()));
            prop_assert_eq!(argmax(row.view()), argmax(cubed.view()));
        }
    }
}
