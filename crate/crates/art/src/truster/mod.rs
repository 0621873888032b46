//! The Trust stage: preference-pair mining, a hashed-feature pairwise
//! ranking scorer, its trainer, and candidate selection.

mod features;
mod loss;
mod train;

pub use features::{
    featurize, FeatureConfig, FeatureVector, DEFAULT_DIMENSION, DEFAULT_HASH_SEED, MIN_DIMENSION,
    SCALAR_SLOTS,
};
pub use loss::{loss_gradient, pairwise_loss, sigmoid, LossGradient};
pub use train::{pairwise_accuracy, train, TrainParams};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answers::{answers_equal, Score};
use crate::types::{Prediction, PredictionSource};

#[derive(Debug, Error)]
pub enum TrusterError {
    #[error("feature dimension mismatch: expected {model}, got {vector}")]
    DimensionMismatch { model: usize, vector: usize },
    #[error("feature config mismatch: the vector was produced with a different seed or dimension")]
    ConfigMismatch,
    #[error("feature dimension must be at least {min}, got {dim}")]
    DimensionTooSmall { min: usize, dim: usize },
    #[error("no preference pairs to train on")]
    NoPairs,
    #[error("non-finite loss at epoch {epoch}, batch {batch}; aborting")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("selection requires an initial and a refined candidate")]
    InvalidCandidates,
    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u32),
    #[error("model file error: {0}")]
    ModelFile(String),
}

/// A (correct, incorrect) prediction pair for the same question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub query_id: String,
    pub question: String,
    pub preferred: Prediction,
    pub non_preferred: Prediction,
}

/// Predictions for one query, each with its score against the query's gold.
#[derive(Debug, Clone)]
pub struct ScoredGroup {
    pub query_id: String,
    pub question: String,
    pub predictions: Vec<(Prediction, Score)>,
}

/// Mine preference pairs: for each query with at least one correct and one
/// incorrect prediction, emit the (correct × incorrect) cross product in
/// sample-index order, truncated to `max_pairs_per_query`. Unparseable
/// predictions join neither side. Queries lacking either class emit
/// nothing.
pub fn build_preference_pairs(
    groups: &[ScoredGroup],
    max_pairs_per_query: usize,
) -> Vec<PreferencePair> {
    let mut pairs = Vec::new();
    for group in groups {
        let correct: Vec<&Prediction> = group
            .predictions
            .iter()
            .filter(|(_, s)| *s == Score::Correct)
            .map(|(p, _)| p)
            .collect();
        let incorrect: Vec<&Prediction> = group
            .predictions
            .iter()
            .filter(|(_, s)| *s == Score::Incorrect)
            .map(|(p, _)| p)
            .collect();
        let mut emitted = 0;
        'query: for c in &correct {
            for i in &incorrect {
                if emitted >= max_pairs_per_query {
                    break 'query;
                }
                pairs.push(PreferencePair {
                    query_id: group.query_id.clone(),
                    question: group.question.clone(),
                    preferred: (*c).clone(),
                    non_preferred: (*i).clone(),
                });
                emitted += 1;
            }
        }
    }
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub learning_rate: f64,
    pub final_train_loss: f64,
}

/// Linear ranking scorer over hashed text features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrusterModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub feature_config: FeatureConfig,
    pub training_meta: TrainingMeta,
}

const MODEL_FILE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct VersionedModel {
    version: u32,
    #[serde(flatten)]
    model: TrusterModel,
}

impl TrusterModel {
    pub fn zeroed(feature_config: FeatureConfig) -> Self {
        TrusterModel {
            weights: vec![0.0; feature_config.dim],
            bias: 0.0,
            feature_config,
            training_meta: TrainingMeta { epochs: 0, learning_rate: 0.0, final_train_loss: 0.0 },
        }
    }

    /// Affine score weights·f + bias. Refuses vectors from a different
    /// feature config.
    pub fn score(&self, f: &FeatureVector) -> Result<f64, TrusterError> {
        if *f.config() != self.feature_config {
            return Err(TrusterError::ConfigMismatch);
        }
        if f.values().len() != self.weights.len() {
            return Err(TrusterError::DimensionMismatch {
                model: self.weights.len(),
                vector: f.values().len(),
            });
        }
        let dot: f64 = self.weights.iter().zip(f.values()).map(|(w, x)| w * x).sum();
        Ok(dot + self.bias)
    }

    pub fn score_text(&self, question: &str, prediction_text: &str) -> f64 {
        let f = featurize(question, prediction_text, &self.feature_config);
        self.score(&f).expect("featurize produces a matching vector")
    }

    pub fn save(&self, path: &Path) -> Result<(), TrusterError> {
        let wrapped = VersionedModel { version: MODEL_FILE_VERSION, model: self.clone() };
        let json = serde_json::to_string(&wrapped)
            .map_err(|e| TrusterError::ModelFile(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| TrusterError::ModelFile(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, TrusterError> {
        let raw =
            std::fs::read_to_string(path).map_err(|e| TrusterError::ModelFile(e.to_string()))?;
        let wrapped: VersionedModel =
            serde_json::from_str(&raw).map_err(|e| TrusterError::ModelFile(e.to_string()))?;
        if wrapped.version != MODEL_FILE_VERSION {
            return Err(TrusterError::UnsupportedVersion(wrapped.version));
        }
        wrapped.model.feature_config.validate()?;
        if wrapped.model.weights.len() != wrapped.model.feature_config.dim {
            return Err(TrusterError::DimensionMismatch {
                model: wrapped.model.feature_config.dim,
                vector: wrapped.model.weights.len(),
            });
        }
        Ok(wrapped.model)
    }
}

/// Result of selecting between the initial and refined candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub chosen: Prediction,
    /// True when the initial prediction was kept.
    pub reverted: bool,
    /// (initial score, refined score); absent when selection
    /// short-circuited because both final answers agree.
    pub scores: Option<(f64, f64)>,
}

/// Choose between the candidates by ranking score; ties keep the initial
/// prediction. When both extracted final answers are equal the outcome
/// cannot differ, so selection short-circuits to the initial prediction
/// without scoring.
pub fn select(
    model: &TrusterModel,
    question: &str,
    initial: &Prediction,
    refined: &Prediction,
) -> Result<Selection, TrusterError> {
    if initial.source != PredictionSource::Initial || refined.source != PredictionSource::Refined {
        return Err(TrusterError::InvalidCandidates);
    }
    if let (Some(a), Some(b)) = (&initial.final_answer, &refined.final_answer) {
        if answers_equal(a, b) == Ok(true) {
            return Ok(Selection { chosen: initial.clone(), reverted: true, scores: None });
        }
    }
    let f_initial = featurize(question, &initial.raw_text, &model.feature_config);
    let f_refined = featurize(question, &refined.raw_text, &model.feature_config);
    let s_initial = model.score(&f_initial)?;
    let s_refined = model.score(&f_refined)?;
    let keep_initial = s_initial >= s_refined;
    Ok(Selection {
        chosen: if keep_initial { initial.clone() } else { refined.clone() },
        reverted: keep_initial,
        scores: Some((s_initial, s_refined)),
    })
}
