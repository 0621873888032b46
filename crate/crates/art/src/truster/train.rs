//! Mini-batch gradient descent for the pairwise ranking scorer. Fully
//! deterministic given the seed: fixed shuffles, sequential accumulation.

use serde::{Deserialize, Serialize};

use crate::hash::fnv1a64;
use crate::rng;

use super::loss::{pairwise_loss, sigmoid};
use super::{featurize, FeatureConfig, PreferencePair, TrainingMeta, TrusterError, TrusterModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub l2: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams { epochs: 20, learning_rate: 0.1, batch_size: 64, seed: 0, l2: 1e-4 }
    }
}

/// Sparse difference f_preferred − f_non_preferred of one pair's features.
struct PairDiff {
    entries: Vec<(usize, f64)>,
}

impl PairDiff {
    fn dot(&self, weights: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| weights[i] * v).sum()
    }
}

fn pair_diff(pair: &PreferencePair, config: &FeatureConfig) -> PairDiff {
    let f_j = featurize(&pair.question, &pair.preferred.raw_text, config);
    let f_k = featurize(&pair.question, &pair.non_preferred.raw_text, config);
    let entries = f_j
        .values()
        .iter()
        .zip(f_k.values())
        .enumerate()
        .filter_map(|(i, (a, b))| {
            let d = a - b;
            (d != 0.0).then_some((i, d))
        })
        .collect();
    PairDiff { entries }
}

fn held_out_accuracy(diffs: &[&PairDiff], weights: &[f64]) -> f64 {
    if diffs.is_empty() {
        return 0.0;
    }
    let correct = diffs.iter().filter(|d| d.dot(weights) > 0.0).count();
    correct as f64 / diffs.len() as f64
}

/// Train a ranking model on preference pairs. Ten percent of the pairs,
/// selected by query-id hash, are held out; the returned model is the
/// epoch snapshot with the best held-out pairwise accuracy (the final
/// model when no validation pairs exist). `training_meta.final_train_loss`
/// is the mean pairwise loss of the returned model over the training
/// pairs.
pub fn train(
    pairs: &[PreferencePair],
    config: &FeatureConfig,
    params: &TrainParams,
) -> Result<TrusterModel, TrusterError> {
    if pairs.is_empty() {
        return Err(TrusterError::NoPairs);
    }
    config.validate()?;

    let diffs: Vec<PairDiff> = pairs.iter().map(|p| pair_diff(p, config)).collect();

    let mut train_idx: Vec<usize> = Vec::new();
    let mut val_idx: Vec<usize> = Vec::new();
    for (i, pair) in pairs.iter().enumerate() {
        if fnv1a64(pair.query_id.as_bytes()).is_multiple_of(10) {
            val_idx.push(i);
        } else {
            train_idx.push(i);
        }
    }
    if train_idx.is_empty() {
        train_idx = std::mem::take(&mut val_idx);
    }
    let val_diffs: Vec<&PairDiff> = val_idx.iter().map(|&i| &diffs[i]).collect();

    let dim = config.dim;
    let mut weights = vec![0.0f64; dim];
    let mut best_weights = weights.clone();
    let mut best_accuracy = -1.0f64;
    let batch_size = params.batch_size.max(1);
    let mut rng = rng::seeded(params.seed);
    let mut grad = vec![0.0f64; dim];

    for epoch in 0..params.epochs {
        rng::shuffle(&mut rng, &mut train_idx);
        for (batch_no, batch) in train_idx.chunks(batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for &i in batch {
                let diff = &diffs[i];
                let delta = diff.dot(&weights);
                batch_loss += pairwise_loss(delta, 0.0);
                let coeff = -(1.0 - sigmoid(delta));
                for &(slot, v) in &diff.entries {
                    grad[slot] += coeff * v;
                }
            }
            let l2_term: f64 = params.l2 * weights.iter().map(|w| w * w).sum::<f64>();
            batch_loss = batch_loss / batch.len() as f64 + l2_term;
            if !batch_loss.is_finite() {
                return Err(TrusterError::NonFiniteLoss { epoch, batch: batch_no });
            }
            let inv = 1.0 / batch.len() as f64;
            for (w, g) in weights.iter_mut().zip(&grad) {
                *w -= params.learning_rate * (g * inv + 2.0 * params.l2 * *w);
            }
        }
        if !val_diffs.is_empty() {
            let accuracy = held_out_accuracy(&val_diffs, &weights);
            if accuracy > best_accuracy {
                best_accuracy = accuracy;
                best_weights.copy_from_slice(&weights);
            }
        }
    }

    let final_weights = if val_diffs.is_empty() || params.epochs == 0 { weights } else { best_weights };
    let train_loss = train_idx
        .iter()
        .map(|&i| pairwise_loss(diffs[i].dot(&final_weights), 0.0))
        .sum::<f64>()
        / train_idx.len() as f64;

    Ok(TrusterModel {
        weights: final_weights,
        bias: 0.0,
        feature_config: *config,
        training_meta: TrainingMeta {
            epochs: params.epochs,
            learning_rate: params.learning_rate,
            final_train_loss: train_loss,
        },
    })
}

/// Held-out pairwise accuracy of an existing model over pairs (fraction
/// with score(preferred) strictly above score(non_preferred)).
pub fn pairwise_accuracy(model: &TrusterModel, pairs: &[PreferencePair]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let diffs: Vec<PairDiff> =
        pairs.iter().map(|p| pair_diff(p, &model.feature_config)).collect();
    let refs: Vec<&PairDiff> = diffs.iter().collect();
    held_out_accuracy(&refs, &model.weights)
}
