//! Hashed text features for the pairwise ranking scorer: a bag of hashed
//! tokens over (question ⊕ prediction text) plus three scalar features in
//! reserved trailing slots.

use serde::{Deserialize, Serialize};

use crate::hash;
use crate::types::TaskKind;

use super::TrusterError;

/// Number of reserved trailing slots: chain length in steps, arithmetic
/// annotation count, final-answer sentinel presence.
pub const SCALAR_SLOTS: usize = 3;
pub const MIN_DIMENSION: usize = 8;
pub const DEFAULT_DIMENSION: usize = 4096;
pub const DEFAULT_HASH_SEED: u64 = 17;

/// Hash seed and dimension. A model only accepts vectors produced with its
/// own config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub dim: usize,
    pub seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { dim: DEFAULT_DIMENSION, seed: DEFAULT_HASH_SEED }
    }
}

impl FeatureConfig {
    pub fn new(dim: usize, seed: u64) -> Result<Self, TrusterError> {
        let config = FeatureConfig { dim, seed };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), TrusterError> {
        if self.dim < MIN_DIMENSION {
            return Err(TrusterError::DimensionTooSmall { min: MIN_DIMENSION, dim: self.dim });
        }
        Ok(())
    }

    fn token_slots(&self) -> usize {
        self.dim - SCALAR_SLOTS
    }

    /// Slot a token hashes to. Exposed so fixtures and diagnostics can
    /// position weights on known tokens.
    pub fn token_slot(&self, token: &str) -> usize {
        let state = hash::fnv1a64_continue(hash::FNV_OFFSET_BASIS, &self.seed.to_le_bytes());
        let h = hash::fnv1a64_continue(state, token.as_bytes());
        (h % self.token_slots() as u64) as usize
    }
}

/// A dense feature vector tied to the config that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    values: Vec<f64>,
    config: FeatureConfig,
}

impl FeatureVector {
    pub fn from_values(values: Vec<f64>, config: FeatureConfig) -> Result<Self, TrusterError> {
        if values.len() != config.dim {
            return Err(TrusterError::DimensionMismatch {
                model: config.dim,
                vector: values.len(),
            });
        }
        Ok(FeatureVector { values, config })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

/// Sentence-step count: segments delimited by newline or by `.`/`!`
/// followed by whitespace (so decimals do not split).
fn chain_steps(text: &str) -> usize {
    let mut steps = 0;
    let mut start = 0;
    let mut count_segment = |segment: &str| {
        if !segment.trim().is_empty() {
            steps += 1;
        }
    };
    for (idx, c) in text.char_indices() {
        let breaks = c == '\n'
            || ((c == '.' || c == '!')
                && text[idx + c.len_utf8()..].chars().next().is_none_or(|n| n.is_whitespace()));
        if breaks {
            count_segment(&text[start..idx]);
            start = idx + c.len_utf8();
        }
    }
    count_segment(&text[start..]);
    steps
}

fn has_final_answer(text: &str) -> bool {
    crate::answers::extract_final_answer(text, TaskKind::MathWord).is_ok()
        || crate::answers::extract_final_answer(text, TaskKind::BooleanQa).is_ok()
}

/// Featurize a (question, prediction text) pair. Deterministic: hashed
/// token counts in the leading slots, scalar features in the reserved
/// trailing slots.
pub fn featurize(question: &str, prediction_text: &str, config: &FeatureConfig) -> FeatureVector {
    let mut values = vec![0.0; config.dim];
    for token in tokens(question).chain(tokens(prediction_text)) {
        values[config.token_slot(&token)] += 1.0;
    }
    let base = config.token_slots();
    values[base] = chain_steps(prediction_text) as f64;
    values[base + 1] = prediction_text.matches("<<").count() as f64;
    values[base + 2] = if has_final_answer(prediction_text) { 1.0 } else { 0.0 };
    FeatureVector { values, config: *config }
}
