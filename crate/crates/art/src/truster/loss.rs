//! Pairwise ranking loss −log σ(Δ) and its analytic gradient, both in
//! overflow-safe form.

use super::{FeatureVector, TrusterError, TrusterModel};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^x) without overflow: max(x, 0) + ln(1 + e^{-|x|}).
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Ranking loss for a (preferred, non-preferred) score pair:
/// −log σ(Δ) = log(1 + e^{−Δ}) with Δ = s_preferred − s_non_preferred.
/// Strictly decreasing in Δ and positive for all finite Δ.
pub fn pairwise_loss(s_preferred: f64, s_non_preferred: f64) -> f64 {
    softplus(-(s_preferred - s_non_preferred))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub weights: Vec<f64>,
    /// Always zero: the bias cancels in the score difference.
    pub bias: f64,
}

/// Analytic gradient of the pairwise loss with respect to the model:
/// ∂L/∂w = −(1 − σ(Δ))·(f_preferred − f_non_preferred), ∂L/∂bias = 0.
pub fn loss_gradient(
    f_preferred: &FeatureVector,
    f_non_preferred: &FeatureVector,
    model: &TrusterModel,
) -> Result<LossGradient, TrusterError> {
    let s_j = model.score(f_preferred)?;
    let s_k = model.score(f_non_preferred)?;
    let coeff = -(1.0 - sigmoid(s_j - s_k));
    let weights = f_preferred
        .values()
        .iter()
        .zip(f_non_preferred.values())
        .map(|(a, b)| coeff * (a - b))
        .collect();
    Ok(LossGradient { weights, bias: 0.0 })
}
