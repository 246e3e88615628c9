//! Cross-entropy over predicted class probabilities, with optional per-class
//! weights.
//!
//! For N samples and C classes the unreduced loss of sample `i` is
//! `w[y_i] * -ln p[i, y_i]`, where `y_i` is the true class. Probabilities are
//! clamped to [`PROB_EPSILON`] before the logarithm.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

pub const PROB_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("class weight {weight} for class {class} must be positive")]
    NonPositiveWeight { class: usize, weight: f64 },
    #[error("row {row} is not a probability distribution")]
    InvalidProbabilities { row: usize },
    #[error("row {row} of the target matrix is not one-hot")]
    InvalidOneHot { row: usize },
}

/// How per-sample losses are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Sum of weighted losses divided by the sum of the weights applied.
    /// Without weights this is the plain mean.
    #[default]
    WeightedMean,
    /// Plain sum of (weighted) per-sample losses.
    Sum,
}

/// Validated loss inputs: an N x C probability matrix, one true class per
/// row and, optionally, one weight per class.
#[derive(Debug, Clone, PartialEq)]
pub struct LossInputs {
    probs: Array2<f64>,
    targets: Vec<usize>,
    weights: Option<Vec<f64>>,
}

impl LossInputs {
    pub fn new(probs: Array2<f64>, targets: Vec<usize>, weights: Option<Vec<f64>>) -> Result<Self, LossError> {
        let (n, c) = probs.dim();
        if targets.len() != n {
            return Err(LossError::ShapeMismatch(format!("{n} probability rows but {} targets", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(LossError::ShapeMismatch(format!("target class {bad} with only {c} columns")));
        }
        for (row, p) in probs.axis_iter(Axis(0)).enumerate() {
            let in_range = p.iter().all(|&x| (0.0..=1.0).contains(&x));
            if !in_range || (p.sum() - 1.0).abs() > 1e-6 {
                return Err(LossError::InvalidProbabilities { row });
            }
        }
        if let Some(w) = &weights {
            check_weights(w, c)?;
        }
        Ok(LossInputs { probs, targets, weights })
    }

    /// Builds inputs from a one-hot target matrix.
    pub fn from_one_hot(probs: Array2<f64>, one_hot: ArrayView2<'_, f64>, weights: Option<Vec<f64>>) -> Result<Self, LossError> {
        if one_hot.dim() != probs.dim() {
            return Err(LossError::ShapeMismatch(format!("targets {:?} vs probabilities {:?}", one_hot.dim(), probs.dim())));
        }
        let mut targets = Vec::with_capacity(one_hot.nrows());
        for (row, y) in one_hot.axis_iter(Axis(0)).enumerate() {
            let ones: Vec<usize> = y.iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(j, _)| j).collect();
            let zeros = y.iter().filter(|&&v| v == 0.0).count();
            if ones.len() != 1 || zeros + 1 != y.len() {
                return Err(LossError::InvalidOneHot { row });
            }
            targets.push(ones[0]);
        }
        LossInputs::new(probs, targets, weights)
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self, LossError> {
        check_weights(&weights, self.probs.ncols())?;
        self.weights = Some(weights);
        Ok(self)
    }
}

fn check_weights(w: &[f64], classes: usize) -> Result<(), LossError> {
    if w.len() != classes {
        return Err(LossError::ShapeMismatch(format!("{} class weights for {classes} classes", w.len())));
    }
    match w.iter().enumerate().find(|(_, &x)| !(x > 0.0 && x.is_finite())) {
        Some((class, &weight)) => Err(LossError::NonPositiveWeight { class, weight }),
        None => Ok(()),
    }
}

/// Per-sample losses and their reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub per_sample: Vec<f64>,
    pub reduced: f64,
}

fn neg_log(p: f64) -> f64 {
    -p.max(PROB_EPSILON).ln()
}

fn reduce(per_sample: &[f64], applied: &[f64], reduction: Reduction) -> f64 {
    let total: f64 = per_sample.iter().sum();
    match reduction {
        Reduction::Sum => total,
        Reduction::WeightedMean if per_sample.is_empty() => 0.0,
        Reduction::WeightedMean => total / applied.iter().sum::<f64>(),
    }
}

/// Unweighted cross-entropy; any weights on `inputs` are ignored.
pub fn cross_entropy(inputs: &LossInputs, reduction: Reduction) -> LossValue {
    let per_sample: Vec<f64> =
        inputs.targets.iter().enumerate().map(|(i, &t)| neg_log(inputs.probs[[i, t]])).collect();
    let ones = vec![1.0; per_sample.len()];
    let reduced = reduce(&per_sample, &ones, reduction);
    LossValue { per_sample, reduced }
}

/// Class-weighted cross-entropy. Fails if `inputs` carries no weights.
pub fn weighted_cross_entropy(inputs: &LossInputs, reduction: Reduction) -> Result<LossValue, LossError> {
    let weights = inputs
        .weights
        .as_ref()
        .ok_or_else(|| LossError::ShapeMismatch("weighted loss requires one weight per class".into()))?;
    let applied: Vec<f64> = inputs.targets.iter().map(|&t| weights[t]).collect();
    let per_sample: Vec<f64> = inputs
        .targets
        .iter()
        .zip(&applied)
        .enumerate()
        .map(|(i, (&t, &w))| w * neg_log(inputs.probs[[i, t]]))
        .collect();
    let reduced = reduce(&per_sample, &applied, reduction);
    Ok(LossValue { per_sample, reduced })
}

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|z| (z - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|e| e / sum);
    }
    out
}

/// Weighted cross-entropy of `softmax(logits)` and its gradient with respect
/// to the logits.
///
/// The loss is computed as `logsumexp(z_i) - z_i[y_i]` rather than through
/// clamped probabilities, so it stays finite for any logits. The gradient
/// row for sample `i` is `w[y_i] * (softmax(z_i) - onehot(y_i))`, divided
/// by the applied weight sum under [`Reduction::WeightedMean`].
pub fn weighted_cross_entropy_with_logits(
    logits: &Array2<f64>,
    targets: &[usize],
    weights: &[f64],
    reduction: Reduction,
) -> Result<(f64, Array2<f64>), LossError> {
    let (n, c) = logits.dim();
    if targets.len() != n {
        return Err(LossError::ShapeMismatch(format!("{n} logit rows but {} targets", targets.len())));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
        return Err(LossError::ShapeMismatch(format!("target class {bad} with only {c} columns")));
    }
    check_weights(weights, c)?;
    let probs = softmax(logits);
    let applied: Vec<f64> = targets.iter().map(|&t| weights[t]).collect();
    let per_sample: Vec<f64> = logits
        .axis_iter(Axis(0))
        .zip(targets)
        .zip(&applied)
        .map(|((z, &t), &w)| {
            let max = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            w * (lse - z[t])
        })
        .collect();
    let loss = reduce(&per_sample, &applied, reduction);
    let scale = match reduction {
        Reduction::Sum => 1.0,
        Reduction::WeightedMean if n == 0 => 0.0,
        Reduction::WeightedMean => 1.0 / applied.iter().sum::<f64>(),
    };
    let mut grad = probs;
    for (i, (&t, &w)) in targets.iter().zip(&applied).enumerate() {
        grad[[i, t]] -= 1.0;
        grad.row_mut(i).mapv_inplace(|g| g * w * scale);
    }
    Ok((loss, grad))
}
