//! Refinement-rate sweep: force-refine the ⌈f·n⌉ most refine-worthy
//! samples for each fraction f and record the resulting accuracy.

use serde::{Deserialize, Serialize};

use crate::answers::{score_prediction, Score};
use crate::asker::ask;
use crate::pool::parallel_map;
use crate::refiner::refine;
use crate::rng;
use crate::truster::select;
use crate::types::{AskDecision, AskOutcome, Prediction, Query};

use super::{predict_initial, Components, PipelineError, PipelineMode, PipelineConfig};

/// How samples are ranked for forced refinement: ask-flagged first (then
/// id order), or a seeded random order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineSweepOrder {
    #[default]
    Ask,
    Random,
}

fn ceil_fraction(f: f64, n: usize) -> usize {
    (((f * n as f64) - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Sweep the refinement fraction over a gold-labeled dataset.
///
/// For each fraction, exactly `⌈f·n⌉` samples (most refine-worthy first)
/// are forced through refinement; in ART mode the Truster then selects,
/// otherwise the refined output is kept. Returns one (fraction, accuracy)
/// point per requested fraction; fractions above `refinement_cap` are
/// skipped.
pub fn refinement_rate_sweep(
    queries: &[Query],
    cfg: &PipelineConfig,
    comps: &Components,
    fractions: &[f64],
    order: PipelineSweepOrder,
    seed: u64,
) -> Result<Vec<(f64, f64)>, PipelineError> {
    for q in queries {
        if q.gold_answer.is_none() {
            return Err(PipelineError::MissingGold(q.id.clone()));
        }
    }
    for &f in fractions {
        if !(0.0..=1.0).contains(&f) {
            return Err(PipelineError::Config(format!("sweep fraction {f} outside [0, 1]")));
        }
    }
    let asker = comps
        .asker
        .ok_or_else(|| PipelineError::Config("sweep requires an asker backend".into()))?;
    let refiner = comps
        .refiner
        .ok_or_else(|| PipelineError::Config("sweep requires a refiner backend".into()))?;
    if cfg.mode == PipelineMode::Art && comps.truster.is_none() {
        return Err(PipelineError::Config("art mode requires a truster model".into()));
    }

    let cap = cfg.refinement_cap.unwrap_or(1.0);
    let kept: Vec<f64> = fractions.iter().copied().filter(|f| *f <= cap).collect();
    let n = queries.len();
    if n == 0 {
        return Ok(kept.into_iter().map(|f| (f, 0.0)).collect());
    }

    // Stage one: initial prediction and ask outcome for every sample.
    let staged: Vec<(Prediction, Option<AskOutcome>)> =
        parallel_map(queries, cfg.workers, |_, q| {
            let initial = match predict_initial(q, cfg, comps) {
                Ok(p) => p,
                Err(_) => super::empty_prediction(comps.predictor.id()),
            };
            let outcome = ask(q, &initial, asker).ok();
            (initial, outcome)
        });

    // Refine-worthiness ranking.
    let mut ranked: Vec<usize> = (0..n).collect();
    match order {
        PipelineSweepOrder::Ask => ranked.sort_by_key(|&i| {
            let flagged = staged[i]
                .1
                .as_ref()
                .is_some_and(|o| o.decision == AskDecision::NotAnswered);
            (!flagged, queries[i].id.clone())
        }),
        PipelineSweepOrder::Random => {
            let mut r = rng::seeded(seed);
            rng::shuffle(&mut r, &mut ranked);
        }
    }

    // Compute forced-refinement outcomes once, for the largest fraction.
    let max_m = kept.iter().map(|&f| ceil_fraction(f, n)).max().unwrap_or(0);
    let prefix: Vec<usize> = ranked[..max_m].to_vec();
    let forced: Vec<Option<Prediction>> = parallel_map(&prefix, cfg.workers, |_, &i| {
        let (initial, outcome) = &staged[i];
        let outcome = outcome.as_ref()?;
        let forced_outcome = AskOutcome {
            subquestions: outcome.subquestions.clone(),
            decision: AskDecision::NotAnswered,
        };
        let refined = refine(&queries[i], &forced_outcome, refiner).ok()?;
        match (cfg.mode, comps.truster) {
            (PipelineMode::Art, Some(model)) => {
                match select(model, &queries[i].question, initial, &refined) {
                    Ok(sel) => Some(sel.chosen),
                    Err(_) => None,
                }
            }
            _ => Some(refined),
        }
    });

    let mut curve = Vec::with_capacity(kept.len());
    for &f in &kept {
        let m = ceil_fraction(f, n);
        let mut correct = 0usize;
        for (rank, &i) in ranked.iter().enumerate() {
            let gold = queries[i].gold_answer.as_ref().expect("checked above");
            let candidate: &Prediction = if rank < m {
                forced[rank].as_ref().unwrap_or(&staged[i].0)
            } else {
                &staged[i].0
            };
            if score_prediction(candidate, gold) == Score::Correct {
                correct += 1;
            }
        }
        curve.push((f, correct as f64 / n as f64));
    }
    Ok(curve)
}

/// Render a sweep curve as the two-column CSV format.
pub fn curve_to_csv(curve: &[(f64, f64)]) -> String {
    let mut out = String::from("fraction,accuracy\n");
    for (f, acc) in curve {
        out.push_str(&format!("{f},{acc}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_fraction_boundaries() {
        assert_eq!(ceil_fraction(0.0, 20), 0);
        assert_eq!(ceil_fraction(1.0, 20), 20);
        assert_eq!(ceil_fraction(0.1, 20), 2);
        assert_eq!(ceil_fraction(0.05, 20), 1);
        assert_eq!(ceil_fraction(0.7, 10), 7);
        assert_eq!(ceil_fraction(0.35, 20), 7);
        assert_eq!(ceil_fraction(0.12, 20), 3); // 2.4 rounds up
    }

    #[test]
    fn csv_format() {
        let csv = curve_to_csv(&[(0.0, 0.5), (1.0, 0.25)]);
        assert_eq!(csv, "fraction,accuracy\n0,0.5\n1,0.25\n");
    }
}
