//! Closed-form and Monte Carlo model of the Ask/Refine/Trust cascade,
//! parameterized by stage-level confusion rates. Reproduces the
//! qualitative behavior of the full pipeline at desk scale: always
//! refining can hurt, and ask-ordered partial refinement has an interior
//! sweet spot.

use serde::{Deserialize, Serialize};

use crate::rng;

/// Stage-level parameters of the simulated cascade. Refinement flips are
/// independent of the ask decision given correctness; `trust_acc` is the
/// probability the Truster picks the correct candidate when the two
/// candidates differ in correctness (ties in correctness keep the initial
/// prediction, matching the selection rule).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CascadeParams {
    /// Accuracy of the initial prediction.
    pub a0: f64,
    /// P(ask flags a sample | sample incorrect).
    pub ask_tpr: f64,
    /// P(ask flags a sample | sample correct).
    pub ask_fpr: f64,
    /// P(refined correct | was incorrect, refined).
    pub fix_rate: f64,
    /// P(refined incorrect | was correct, refined).
    pub break_rate: f64,
    /// P(Truster picks the correct candidate | candidates differ).
    pub trust_acc: f64,
}

impl CascadeParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("a0", self.a0),
            ("ask_tpr", self.ask_tpr),
            ("ask_fpr", self.ask_fpr),
            ("fix_rate", self.fix_rate),
            ("break_rate", self.break_rate),
            ("trust_acc", self.trust_acc),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} = {v} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrustMode {
    /// Keep the refined candidate whenever refinement ran.
    NoTrust,
    /// Apply the Truster on the branches where the candidates differ.
    WithTrust,
}

/// Exact expected accuracy of the cascade, by enumerating the outcome tree
/// (initial correct?) × (flagged?) × (refinement flips?).
pub fn expected_accuracy(p: &CascadeParams, mode: TrustMode) -> f64 {
    let kept_correct = p.a0 * (1.0 - p.ask_fpr);
    // Flagged branches: candidates are (initial, refined).
    let correct_refined_ok = p.a0 * p.ask_fpr * (1.0 - p.break_rate);
    let correct_refined_broken = p.a0 * p.ask_fpr * p.break_rate;
    let incorrect_refined_fixed = (1.0 - p.a0) * p.ask_tpr * p.fix_rate;

    match mode {
        TrustMode::NoTrust => kept_correct + correct_refined_ok + incorrect_refined_fixed,
        TrustMode::WithTrust => {
            kept_correct
                + correct_refined_ok
                + correct_refined_broken * p.trust_acc
                + incorrect_refined_fixed * p.trust_acc
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub accuracy: f64,
    pub refine_rate: f64,
    /// Fraction of all samples where selection kept the initial
    /// prediction after refinement.
    pub revert_rate: f64,
}

const CHUNK: usize = 4096;

/// Monte Carlo run of the full cascade (ask, refine, trust) over `n`
/// samples. Seeds are derived per fixed-size chunk, so the merged
/// statistics do not depend on how chunks would be scheduled.
pub fn simulate(p: &CascadeParams, n: usize, seed: u64) -> SimStats {
    assert!(n >= 1, "simulate requires n >= 1");
    let mut correct = 0u64;
    let mut refined = 0u64;
    let mut reverted = 0u64;

    let chunks = n.div_ceil(CHUNK);
    for chunk_idx in 0..chunks {
        let lo = chunk_idx * CHUNK;
        let hi = (lo + CHUNK).min(n);
        let mut rng =
            rng::seeded(seed ^ (chunk_idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        for _ in lo..hi {
            let init_correct = rng::unit_f64(&mut rng) < p.a0;
            let flag_prob = if init_correct { p.ask_fpr } else { p.ask_tpr };
            let flagged = rng::unit_f64(&mut rng) < flag_prob;
            if !flagged {
                correct += u64::from(init_correct);
                continue;
            }
            refined += 1;
            let refined_correct = if init_correct {
                rng::unit_f64(&mut rng) >= p.break_rate
            } else {
                rng::unit_f64(&mut rng) < p.fix_rate
            };
            let (final_correct, kept_initial) = if refined_correct == init_correct {
                // Same correctness: selection keeps the initial prediction.
                (init_correct, true)
            } else {
                let picked_correct = rng::unit_f64(&mut rng) < p.trust_acc;
                let chose_initial = picked_correct == init_correct;
                (picked_correct, chose_initial)
            };
            correct += u64::from(final_correct);
            reverted += u64::from(kept_initial);
        }
    }

    SimStats {
        accuracy: correct as f64 / n as f64,
        refine_rate: refined as f64 / n as f64,
        revert_rate: reverted as f64 / n as f64,
    }
}

/// How the refined fraction is picked in a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepOrder {
    /// Refine a uniformly chosen fraction of all samples.
    Uniform,
    /// Refine ask-flagged samples first, then unflagged ones.
    AskOrdered,
}

/// Expected accuracy when exactly a fraction `f` of samples is refined,
/// in closed form.
///
/// Uniform order is linear in `f`:
/// `A(f) = a0 + f·[(1−a0)·fix − a0·break]` for `NoTrust`, with the trust
/// correction applied analogously for `WithTrust`. Ask-ordered refinement
/// is piecewise linear with a breakpoint at the flagged mass, where the
/// refined pool switches from mostly-incorrect to mostly-correct samples.
pub fn accuracy_at_fraction(
    p: &CascadeParams,
    fraction: f64,
    mode: TrustMode,
    order: SweepOrder,
) -> f64 {
    let f = fraction.clamp(0.0, 1.0);
    // Per-unit-mass accuracy delta of refining a pool with a given
    // incorrect share.
    let slope = |incorrect_share: f64| -> f64 {
        let correct_share = 1.0 - incorrect_share;
        match mode {
            TrustMode::NoTrust => {
                incorrect_share * p.fix_rate - correct_share * p.break_rate
            }
            TrustMode::WithTrust => {
                incorrect_share * p.fix_rate * p.trust_acc
                    - correct_share * p.break_rate * (1.0 - p.trust_acc)
            }
        }
    };

    match order {
        SweepOrder::Uniform => p.a0 + f * slope(1.0 - p.a0),
        SweepOrder::AskOrdered => {
            let flagged_mass = (1.0 - p.a0) * p.ask_tpr + p.a0 * p.ask_fpr;
            let unflagged_mass = 1.0 - flagged_mass;
            let flagged_incorrect = if flagged_mass > 0.0 {
                (1.0 - p.a0) * p.ask_tpr / flagged_mass
            } else {
                0.0
            };
            let unflagged_incorrect = if unflagged_mass > 0.0 {
                (1.0 - p.a0) * (1.0 - p.ask_tpr) / unflagged_mass
            } else {
                0.0
            };
            let from_flagged = f.min(flagged_mass);
            let from_unflagged = (f - flagged_mass).max(0.0);
            p.a0 + from_flagged * slope(flagged_incorrect)
                + from_unflagged * slope(unflagged_incorrect)
        }
    }
}

/// Evaluate [`accuracy_at_fraction`] over a list of fractions.
pub fn sweep_fraction(
    p: &CascadeParams,
    fractions: &[f64],
    mode: TrustMode,
    order: SweepOrder,
) -> Vec<(f64, f64)> {
    fractions
        .iter()
        .map(|&f| (f, accuracy_at_fraction(p, f, mode, order)))
        .collect()
}
