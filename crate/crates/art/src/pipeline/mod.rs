//! End-to-end orchestration: initial prediction (with optional majority
//! vote), the Ask/Refine/Trust flow, the self-refinement baseline,
//! evaluation reports, and refinement-rate sweeps.

mod dataset;
mod sweep;

pub use dataset::{load_dataset, DatasetError, Split};
pub use sweep::{curve_to_csv, refinement_rate_sweep, PipelineSweepOrder};

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answers::{answers_equal, extract_final_answer, score_prediction, Score};
use crate::asker::{ask, decide_refine};
use crate::backend::{generate_k, Backend, BackendError, GenerationResult};
use crate::pool::parallel_map;
use crate::prompts::{
    build_predict_prompt, build_self_refine_prompt, build_self_select_prompt, PredictionStyle,
    SELF_REFINE_AFFIRM_MARKER,
};
use crate::refiner::refine;
use crate::truster::{select, ScoredGroup, TrusterError, TrusterModel};
use crate::types::{
    Answer, AskOutcome, GenMeta, Prediction, PredictionSource, Query,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("query {0} has no gold answer")]
    MissingGold(String),
    #[error("majority vote requires at least one answer")]
    EmptyVote,
    #[error("majority vote over mixed answer variants")]
    MixedVariants,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Truster(#[from] TrusterError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    InitialOnly,
    SelfRefineAll,
    #[default]
    Art,
}

/// How the self-refinement baseline picks its final output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelfSelection {
    /// Keep the refined output.
    #[default]
    MostRecent,
    /// Prompt the model to choose between initial and refined.
    SelfSelect,
}

pub const DEFAULT_VOTE_TEMPERATURES: [f64; 5] = [0.0, 0.3, 0.4, 0.7, 0.8];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mode: PipelineMode,
    #[serde(default)]
    pub prediction_style: PredictionStyle,
    /// Majority vote over the first `k_vote` temperatures of the schedule;
    /// 1 means single greedy prediction (maj1@1).
    #[serde(default = "default_k_vote")]
    pub k_vote: usize,
    #[serde(default = "default_vote_temperatures")]
    pub vote_temperatures: Vec<f64>,
    #[serde(default)]
    pub self_selection: SelfSelection,
    /// Sweep-only: fractions above the cap are skipped.
    #[serde(default)]
    pub refinement_cap: Option<f64>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_max_tokens_prediction")]
    pub max_tokens_prediction: u32,
    #[serde(default = "default_max_tokens_refinement")]
    pub max_tokens_refinement: u32,
}

fn default_k_vote() -> usize {
    1
}
fn default_vote_temperatures() -> Vec<f64> {
    DEFAULT_VOTE_TEMPERATURES.to_vec()
}
fn default_workers() -> usize {
    4
}
fn default_max_tokens_prediction() -> u32 {
    crate::backend::DEFAULT_MAX_TOKENS_PREDICTION
}
fn default_max_tokens_refinement() -> u32 {
    crate::backend::DEFAULT_MAX_TOKENS_REFINEMENT
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: PipelineMode::Art,
            prediction_style: PredictionStyle::Cot,
            k_vote: 1,
            vote_temperatures: default_vote_temperatures(),
            self_selection: SelfSelection::MostRecent,
            refinement_cap: None,
            workers: default_workers(),
            max_tokens_prediction: default_max_tokens_prediction(),
            max_tokens_refinement: default_max_tokens_refinement(),
        }
    }
}

/// Resolved stage backends and the Truster model for a run.
#[derive(Clone, Copy)]
pub struct Components<'a> {
    pub predictor: &'a dyn Backend,
    pub asker: Option<&'a dyn Backend>,
    pub refiner: Option<&'a dyn Backend>,
    pub truster: Option<&'a TrusterModel>,
}

impl<'a> Components<'a> {
    pub fn predictor_only(predictor: &'a dyn Backend) -> Self {
        Components { predictor, asker: None, refiner: None, truster: None }
    }
}

fn validate(cfg: &PipelineConfig, comps: &Components) -> Result<(), PipelineError> {
    if cfg.k_vote == 0 {
        return Err(PipelineError::Config("k_vote must be positive".into()));
    }
    if cfg.k_vote > 1 && cfg.vote_temperatures.len() < cfg.k_vote {
        return Err(PipelineError::Config(format!(
            "k_vote = {} but only {} vote temperatures configured",
            cfg.k_vote,
            cfg.vote_temperatures.len()
        )));
    }
    if cfg.mode == PipelineMode::Art {
        if comps.asker.is_none() || comps.refiner.is_none() {
            return Err(PipelineError::Config(
                "art mode requires asker and refiner backends".into(),
            ));
        }
        if comps.truster.is_none() {
            return Err(PipelineError::Config("art mode requires a truster model".into()));
        }
    }
    Ok(())
}

/// Most frequent canonical answer; ties break to the earliest occurrence.
pub fn majority_vote(answers: &[Answer]) -> Result<Answer, PipelineError> {
    let first = answers.first().ok_or(PipelineError::EmptyVote)?;
    let mut counts: Vec<(&Answer, usize)> = Vec::new();
    for answer in answers {
        if answers_equal(answer, first).is_err() {
            return Err(PipelineError::MixedVariants);
        }
        match counts
            .iter_mut()
            .find(|(a, _)| answers_equal(a, answer) == Ok(true))
        {
            Some((_, count)) => *count += 1,
            None => counts.push((answer, 1)),
        }
    }
    let mut winner = &counts[0];
    for entry in &counts[1..] {
        if entry.1 > winner.1 {
            winner = entry;
        }
    }
    Ok(winner.0.clone())
}

fn to_prediction(q: &Query, generated: GenerationResult, temperature: f64, seed: Option<i64>) -> Prediction {
    Prediction {
        final_answer: extract_final_answer(&generated.text, q.task).ok(),
        raw_text: generated.text,
        source: PredictionSource::Initial,
        gen_meta: GenMeta { temperature, seed, backend_id: generated.backend_id },
    }
}

fn empty_prediction(backend_id: &str) -> Prediction {
    Prediction {
        raw_text: String::new(),
        final_answer: None,
        source: PredictionSource::Initial,
        gen_meta: GenMeta { temperature: 0.0, seed: None, backend_id: backend_id.into() },
    }
}

/// Initial prediction: greedy for `k_vote = 1`, otherwise majority vote
/// over the first `k_vote` schedule temperatures, represented by the first
/// sample agreeing with the vote.
fn predict_initial(
    q: &Query,
    cfg: &PipelineConfig,
    comps: &Components,
) -> Result<Prediction, PipelineError> {
    let mut req = build_predict_prompt(q, cfg.prediction_style);
    req.max_tokens = cfg.max_tokens_prediction;
    if cfg.k_vote <= 1 {
        let generated = comps.predictor.generate(&req)?;
        return Ok(to_prediction(q, generated, 0.0, None));
    }
    let temps = &cfg.vote_temperatures[..cfg.k_vote];
    let slots = generate_k(comps.predictor, &req, cfg.k_vote, temps)?;
    let predictions: Vec<Prediction> = slots
        .into_iter()
        .enumerate()
        .filter_map(|(i, slot)| slot.ok().map(|g| to_prediction(q, g, temps[i], Some(i as i64))))
        .collect();
    let answers: Vec<Answer> =
        predictions.iter().filter_map(|p| p.final_answer.clone()).collect();
    if answers.is_empty() {
        return Ok(predictions.into_iter().next().expect("at least one slot succeeded"));
    }
    let vote = majority_vote(&answers)?;
    let representative = predictions
        .iter()
        .find(|p| p.final_answer.as_ref().is_some_and(|a| answers_equal(a, &vote) == Ok(true)))
        .expect("vote winner has a representative");
    Ok(representative.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub chosen_source: PredictionSource,
    pub reverted: bool,
    pub scores: Option<(f64, f64)>,
}

/// Everything the pipeline did for one query. The summary report is
/// derived from these records alone, so any aggregate can be recomputed
/// from the trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub query_id: String,
    pub gold_answer: Option<Answer>,
    pub initial: Prediction,
    pub ask_outcome: Option<AskOutcome>,
    pub refined: Option<Prediction>,
    pub selection: Option<SelectionTrace>,
    #[serde(rename = "final")]
    pub final_prediction: Prediction,
    pub correct_initial: Option<bool>,
    pub correct_after_refine: Option<bool>,
    pub correct_final: Option<bool>,
    pub errors: Vec<String>,
}

fn correctness(p: &Prediction, gold: Option<&Answer>) -> Option<bool> {
    gold.map(|g| score_prediction(p, g) == Score::Correct)
}

fn finish_trace(
    q: &Query,
    initial: Prediction,
    ask_outcome: Option<AskOutcome>,
    refined: Option<Prediction>,
    selection: Option<SelectionTrace>,
    final_prediction: Prediction,
    errors: Vec<String>,
) -> TraceRecord {
    let gold = q.gold_answer.as_ref();
    let after_refine = refined.as_ref().unwrap_or(&initial);
    TraceRecord {
        query_id: q.id.clone(),
        gold_answer: q.gold_answer.clone(),
        correct_initial: correctness(&initial, gold),
        correct_after_refine: correctness(after_refine, gold),
        correct_final: correctness(&final_prediction, gold),
        initial,
        ask_outcome,
        refined,
        selection,
        final_prediction,
        errors,
    }
}

/// The full Ask/Refine/Trust flow for one query. Refinement is lazy: the
/// refiner backend is only invoked when the ask decision requests it, and
/// the initial candidate is never lost — any stage failure falls back to
/// it and is recorded in the trace.
pub fn run_art(q: &Query, cfg: &PipelineConfig, comps: &Components) -> TraceRecord {
    let mut errors = Vec::new();
    let (initial, initial_failed) = match predict_initial(q, cfg, comps) {
        Ok(p) => (p, false),
        Err(e) => {
            errors.push(format!("initial: {e}"));
            (empty_prediction(comps.predictor.id()), true)
        }
    };
    let mut ask_outcome = None;
    let mut refined = None;
    let mut selection = None;
    let mut final_prediction = initial.clone();

    'stages: {
        if initial_failed {
            break 'stages;
        }
        let asker = comps.asker.expect("validated");
        let outcome = match ask(q, &initial, asker) {
            Ok(o) => o,
            Err(e) => {
                errors.push(format!("ask: {e}"));
                break 'stages;
            }
        };
        let wants_refine = decide_refine(&outcome);
        ask_outcome = Some(outcome);
        if !wants_refine {
            break 'stages;
        }
        let refiner = comps.refiner.expect("validated");
        let refined_prediction = match refine(q, ask_outcome.as_ref().unwrap(), refiner) {
            Ok(p) => p,
            Err(e) => {
                errors.push(format!("refine: {e}"));
                break 'stages;
            }
        };
        refined = Some(refined_prediction.clone());
        match select(comps.truster.expect("validated"), &q.question, &initial, &refined_prediction)
        {
            Ok(sel) => {
                final_prediction = sel.chosen.clone();
                selection = Some(SelectionTrace {
                    chosen_source: sel.chosen.source,
                    reverted: sel.reverted,
                    scores: sel.scores,
                });
            }
            Err(e) => errors.push(format!("select: {e}")),
        }
    }

    finish_trace(q, initial, ask_outcome, refined, selection, final_prediction, errors)
}

fn first_sentence(text: &str) -> &str {
    let end = text
        .char_indices()
        .find(|&(_, c)| c == '.' || c == '\n')
        .map(|(i, _)| i)
        .unwrap_or(text.len());
    &text[..end]
}

/// The self-refinement baseline: the predictor critiques and refines every
/// sample itself. An affirming critique keeps the initial text as the
/// refined candidate; the final output is the refined candidate unless
/// self-selection is configured.
pub fn run_self_refine(q: &Query, cfg: &PipelineConfig, comps: &Components) -> TraceRecord {
    let mut errors = Vec::new();
    let (initial, initial_failed) = match predict_initial(q, cfg, comps) {
        Ok(p) => (p, false),
        Err(e) => {
            errors.push(format!("initial: {e}"));
            (empty_prediction(comps.predictor.id()), true)
        }
    };
    let mut refined = None;
    let mut selection = None;
    let mut final_prediction = initial.clone();

    'stages: {
        if initial_failed {
            break 'stages;
        }
        let critique_req = build_self_refine_prompt(q, &initial.raw_text);
        let generated = match comps.predictor.generate(&critique_req) {
            Ok(g) => g,
            Err(e) => {
                errors.push(format!("self-refine: {e}"));
                break 'stages;
            }
        };
        let affirmed =
            first_sentence(&generated.text).to_lowercase().contains(SELF_REFINE_AFFIRM_MARKER);
        let refined_prediction = if affirmed {
            Prediction {
                raw_text: initial.raw_text.clone(),
                final_answer: initial.final_answer.clone(),
                source: PredictionSource::Refined,
                gen_meta: GenMeta {
                    temperature: 0.0,
                    seed: None,
                    backend_id: generated.backend_id,
                },
            }
        } else {
            Prediction {
                final_answer: extract_final_answer(&generated.text, q.task).ok(),
                gen_meta: GenMeta {
                    temperature: 0.0,
                    seed: None,
                    backend_id: generated.backend_id.clone(),
                },
                raw_text: generated.text,
                source: PredictionSource::Refined,
            }
        };
        refined = Some(refined_prediction.clone());

        match cfg.self_selection {
            SelfSelection::MostRecent => final_prediction = refined_prediction,
            SelfSelection::SelfSelect => {
                let sel_req =
                    build_self_select_prompt(q, &initial.raw_text, &refined_prediction.raw_text);
                let keep_initial = match comps.predictor.generate(&sel_req) {
                    Err(e) => {
                        errors.push(format!("self-select: {e}"));
                        false
                    }
                    Ok(choice) => {
                        let lower = choice.text.to_lowercase();
                        let one = lower.matches("candidate 1").count();
                        let two = lower.matches("candidate 2").count();
                        match (one > 0, two > 0) {
                            (true, false) => true,
                            (false, true) => false,
                            _ => {
                                errors.push(format!(
                                    "self-select: ambiguous choice {:?}",
                                    choice.text
                                ));
                                false
                            }
                        }
                    }
                };
                final_prediction =
                    if keep_initial { initial.clone() } else { refined_prediction.clone() };
                selection = Some(SelectionTrace {
                    chosen_source: final_prediction.source,
                    reverted: keep_initial,
                    scores: None,
                });
            }
        }
    }

    finish_trace(q, initial, None, refined, selection, final_prediction, errors)
}

/// Initial prediction only; refinement stages are no-ops.
pub fn run_initial_only(q: &Query, cfg: &PipelineConfig, comps: &Components) -> TraceRecord {
    let mut errors = Vec::new();
    let initial = match predict_initial(q, cfg, comps) {
        Ok(p) => p,
        Err(e) => {
            errors.push(format!("initial: {e}"));
            empty_prediction(comps.predictor.id())
        }
    };
    finish_trace(q, initial.clone(), None, None, None, initial, errors)
}

fn run_query(q: &Query, cfg: &PipelineConfig, comps: &Components) -> TraceRecord {
    match cfg.mode {
        PipelineMode::InitialOnly => run_initial_only(q, cfg, comps),
        PipelineMode::SelfRefineAll => run_self_refine(q, cfg, comps),
        PipelineMode::Art => run_art(q, cfg, comps),
    }
}

/// Run the configured mode over a dataset. Gold answers are not required;
/// correctness fields stay unset where gold is absent.
pub fn run_dataset(
    queries: &[Query],
    cfg: &PipelineConfig,
    comps: &Components,
) -> Result<Vec<TraceRecord>, PipelineError> {
    validate(cfg, comps)?;
    Ok(parallel_map(queries, cfg.workers, |_, q| run_query(q, cfg, comps)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy_initial: f64,
    pub accuracy_after_refine: f64,
    pub accuracy_final: f64,
    pub refine_rate: f64,
    /// Fraction of all samples where selection kept the initial
    /// prediction after refining.
    pub revert_rate: f64,
    #[serde(skip_serializing, default)]
    pub traces: Vec<TraceRecord>,
}

/// Derive the summary from per-example traces. The report is a pure
/// function of the trace records.
pub fn assemble_report(traces: Vec<TraceRecord>) -> EvalReport {
    let n = traces.len();
    let denom = n.max(1) as f64;
    let count = |f: &dyn Fn(&TraceRecord) -> bool| traces.iter().filter(|t| f(t)).count() as f64;
    EvalReport {
        n,
        accuracy_initial: count(&|t| t.correct_initial == Some(true)) / denom,
        accuracy_after_refine: count(&|t| t.correct_after_refine == Some(true)) / denom,
        accuracy_final: count(&|t| t.correct_final == Some(true)) / denom,
        refine_rate: count(&|t| t.refined.is_some()) / denom,
        revert_rate: count(&|t| t.selection.as_ref().is_some_and(|s| s.reverted)) / denom,
        traces,
    }
}

/// Evaluate the configured mode over a gold-labeled dataset.
pub fn evaluate(
    queries: &[Query],
    cfg: &PipelineConfig,
    comps: &Components,
) -> Result<EvalReport, PipelineError> {
    for q in queries {
        if q.gold_answer.is_none() {
            return Err(PipelineError::MissingGold(q.id.clone()));
        }
    }
    let traces = run_dataset(queries, cfg, comps)?;
    Ok(assemble_report(traces))
}

pub fn write_trace_jsonl(traces: &[TraceRecord], path: &Path) -> Result<(), PipelineError> {
    let mut file = std::fs::File::create(path)?;
    for trace in traces {
        writeln!(file, "{}", serde_json::to_string(trace).expect("trace serializes"))?;
    }
    Ok(())
}

pub fn write_report_json(report: &EvalReport, path: &Path) -> Result<(), PipelineError> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(path, json)?;
    Ok(())
}

pub fn read_trace_jsonl(path: &Path) -> Result<Vec<TraceRecord>, PipelineError> {
    let content = std::fs::read_to_string(path)?;
    let mut traces = Vec::new();
    for line in content.lines().filter(|l| !l.trim().is_empty()) {
        traces.push(serde_json::from_str(line).map_err(|e| {
            PipelineError::Config(format!("trace line does not parse: {e}"))
        })?);
    }
    Ok(traces)
}

/// Statistics from collecting scored prediction groups for Truster
/// training. Both tallies are reported: group/pair counts are downstream,
/// predictions_used is the raw sample count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupStats {
    pub queries: usize,
    pub predictions_used: usize,
    pub failed_slots: usize,
    pub skipped_queries: usize,
}

/// Sample `k` predictions per query and score them against gold, grouped
/// per query — the raw material for preference-pair mining.
pub fn collect_scored_groups(
    train: &[Query],
    backend: &dyn Backend,
    k: usize,
    temperatures: &[f64],
    style: PredictionStyle,
    workers: usize,
) -> Result<(Vec<ScoredGroup>, GroupStats), PipelineError> {
    for q in train {
        if q.gold_answer.is_none() {
            return Err(PipelineError::MissingGold(q.id.clone()));
        }
    }
    let per_query: Vec<(Option<ScoredGroup>, usize)> = parallel_map(train, workers, |_, q| {
        let gold = q.gold_answer.as_ref().expect("checked above");
        let req = build_predict_prompt(q, style);
        let slots = match generate_k(backend, &req, k, temperatures) {
            Ok(slots) => slots,
            Err(_) => return (None, k),
        };
        let mut failed = 0usize;
        let mut predictions = Vec::new();
        for (i, slot) in slots.into_iter().enumerate() {
            match slot {
                Err(_) => failed += 1,
                Ok(generated) => {
                    let p = to_prediction(q, generated, temperatures[i], Some(i as i64));
                    let score = score_prediction(&p, gold);
                    predictions.push((p, score));
                }
            }
        }
        (
            Some(ScoredGroup {
                query_id: q.id.clone(),
                question: q.question.clone(),
                predictions,
            }),
            failed,
        )
    });

    let mut stats = GroupStats { queries: train.len(), ..GroupStats::default() };
    let mut groups = Vec::new();
    for (group, failed) in per_query {
        match group {
            None => stats.skipped_queries += 1,
            Some(g) => {
                stats.failed_slots += failed;
                stats.predictions_used += g.predictions.len();
                groups.push(g);
            }
        }
    }
    groups.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    Ok((groups, stats))
}
