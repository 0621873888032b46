//! Acceptance suite: one test per criterion, each asserting its tolerance
//! and runtime budget and printing a pass line.

use std::path::Path;
use std::time::Instant;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use art::answers::{answers_equal, extract_final_answer};
use art::asker::{
    build_ask_prompt, build_asker_training_data, records_to_jsonl, SENTINEL_ANSWERED,
    SENTINEL_NOT_ANSWERED,
};
use art::backend::{wire, GenerationRequest, Message, ScriptedBackend, ScriptedFallback};
use art::pipeline::{
    collect_scored_groups, curve_to_csv, evaluate, write_report_json, write_trace_jsonl,
    Components, PipelineConfig,
};
use art::prompts::{build_predict_prompt, PredictionStyle};
use art::refiner::build_refine_prompt;
use art::simulator::{
    expected_accuracy, simulate, sweep_fraction, CascadeParams, SweepOrder, TrustMode,
};
use art::truster::{
    build_preference_pairs, featurize, loss_gradient, pairwise_accuracy, pairwise_loss, train,
    FeatureConfig, FeatureVector, PreferencePair, TrainParams, TrusterModel,
};
use art::types::{Answer, AskDecision, GenMeta, Prediction, PredictionSource, Query, TaskKind};

fn budget(name: &str, start: Instant, limit_secs: f64) {
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        elapsed < limit_secs,
        "{name} exceeded its runtime budget: {elapsed:.2}s >= {limit_secs}s"
    );
    println!("[{name}] PASS ({elapsed:.3}s)");
}

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
}

// --- criterion 1: loss unit values and numerical stability ---------------

#[test]
fn c1_loss_unit_values() {
    let start = Instant::now();

    // Extended-precision oracle values, frozen (nearest f64 below):
    //   ln 2                 = 0.693147180559945309417232121458...
    //   log(1 + e^{-1})      = 0.313261687518222834048995494967...
    //   log(1 + e^{+1})      = 1.313261687518222834048995494967...
    assert!((pairwise_loss(0.0, 0.0) - std::f64::consts::LN_2).abs() < 1e-9);
    assert!((pairwise_loss(1.0, 0.0) - 0.313_261_687_518_222_8).abs() < 1e-9);
    assert!((pairwise_loss(0.0, 1.0) - 1.313_261_687_518_222_8).abs() < 1e-9);

    // Stability at extreme deltas: finite, matching the asymptotes.
    let at_pos = pairwise_loss(10_000.0, 0.0);
    assert!(at_pos.is_finite() && (at_pos - 0.0).abs() < 1e-9);
    let at_neg = pairwise_loss(0.0, 10_000.0);
    assert!(at_neg.is_finite() && (at_neg - 10_000.0).abs() < 1e-9);

    budget("criterion 1: loss unit values", start, 1.0);
}

// --- criterion 2: analytic gradient vs central finite differences --------

#[test]
fn c2_gradient_matches_finite_differences() {
    let start = Instant::now();
    let dim = 16;
    let config = FeatureConfig::new(dim, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let h = 1e-5;

    for draw in 0..100 {
        let weights: Vec<f64> = (0..dim).map(|_| unit(&mut rng) * 2.0 - 1.0).collect();
        let bias = unit(&mut rng) * 4.0 - 2.0;
        let f_j: Vec<f64> = (0..dim).map(|_| unit(&mut rng) * 4.0 - 2.0).collect();
        let f_k: Vec<f64> = (0..dim).map(|_| unit(&mut rng) * 4.0 - 2.0).collect();

        let mut model = TrusterModel::zeroed(config);
        model.weights = weights.clone();
        model.bias = bias;
        let vj = FeatureVector::from_values(f_j.clone(), config).unwrap();
        let vk = FeatureVector::from_values(f_k.clone(), config).unwrap();
        let analytic = loss_gradient(&vj, &vk, &model).unwrap();
        assert_eq!(analytic.bias, 0.0, "bias gradient must vanish");

        let loss_at = |w: &[f64]| -> f64 {
            let sj: f64 = w.iter().zip(&f_j).map(|(a, b)| a * b).sum::<f64>() + bias;
            let sk: f64 = w.iter().zip(&f_k).map(|(a, b)| a * b).sum::<f64>() + bias;
            pairwise_loss(sj, sk)
        };
        let numeric: Vec<f64> = (0..dim)
            .map(|i| {
                let mut hi = weights.clone();
                hi[i] += h;
                let mut lo = weights.clone();
                lo[i] -= h;
                (loss_at(&hi) - loss_at(&lo)) / (2.0 * h)
            })
            .collect();

        let err: f64 = analytic
            .weights
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n) * (a - n))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt().max(1e-8);
        assert!(
            err / scale < 1e-4,
            "draw {draw}: relative gradient error {} exceeds 1e-4",
            err / scale
        );
    }
    budget("criterion 2: gradient vs finite differences", start, 5.0);
}

// --- criterion 3: trainer reaches the separability bar -------------------

const SENTINEL_TOKEN: &str = "veridical";

fn fillers(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    (0..n).map(|_| format!("tok{:02}", rng.next_u64() % 50)).collect()
}

fn synthetic_pair(rng: &mut ChaCha8Rng, query_id: String) -> PreferencePair {
    let question = fillers(rng, 3).join(" ");
    let mut preferred_tokens = fillers(rng, 8);
    let insert_at = (rng.next_u64() % (preferred_tokens.len() as u64 + 1)) as usize;
    preferred_tokens.insert(insert_at, SENTINEL_TOKEN.to_string());
    let non_preferred_tokens = fillers(rng, 8);

    let gen = |text: String| Prediction {
        raw_text: text,
        final_answer: None,
        source: PredictionSource::Initial,
        gen_meta: GenMeta { temperature: 0.3, seed: None, backend_id: "synthetic".into() },
    };
    PreferencePair {
        query_id,
        question,
        preferred: gen(preferred_tokens.join(" ")),
        non_preferred: gen(non_preferred_tokens.join(" ")),
    }
}

fn synthetic_set(n: usize, seed: u64) -> Vec<PreferencePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| synthetic_pair(&mut rng, format!("q{i:05}"))).collect()
}

#[test]
fn c3_truster_training_on_separable_pairs() {
    let start = Instant::now();
    let pairs = synthetic_set(2000, 11);
    let config = FeatureConfig::default();
    let params = TrainParams { seed: 7, ..TrainParams::default() };

    let model = train(&pairs, &config, &params).unwrap();
    let held_out = synthetic_set(400, 99);
    let accuracy = pairwise_accuracy(&model, &held_out);
    assert!(accuracy >= 0.95, "held-out pairwise accuracy {accuracy} below 0.95");

    // Deterministic across reruns with the same seed.
    let again = train(&pairs, &config, &params).unwrap();
    assert_eq!(model.weights, again.weights);
    assert_eq!(
        model.training_meta.final_train_loss.to_bits(),
        again.training_meta.final_train_loss.to_bits()
    );
    budget("criterion 3: separable truster training", start, 10.0);
}

// --- criterion 4: answer extraction corpus --------------------------------

#[test]
fn c4_answer_extraction_corpus() {
    let start = Instant::now();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/extraction_cases.jsonl");
    let content = std::fs::read_to_string(fixture).unwrap();

    #[derive(serde::Deserialize)]
    struct Case {
        text: String,
        task: TaskKind,
        expect: Option<Answer>,
    }

    let mut cases = 0;
    for (lineno, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let case: Case = serde_json::from_str(line).unwrap();
        let got = extract_final_answer(&case.text, case.task);
        match (&case.expect, got) {
            (Some(expected), Ok(actual)) => assert_eq!(
                *expected, actual,
                "line {}: wrong extraction for {:?}",
                lineno + 1,
                case.text
            ),
            (None, Err(_)) => {}
            (expected, actual) => panic!(
                "line {}: expected {:?}, got {:?} for {:?}",
                lineno + 1,
                expected,
                actual,
                case.text
            ),
        }
        cases += 1;
    }
    assert!(cases >= 30, "corpus must hold at least 30 cases, found {cases}");
    budget("criterion 4: answer extraction corpus", start, 1.0);
}

// --- criterion 5: end-to-end ART on the 20-query scripted fixture --------

const MARKER: &str = "goodpick";

#[derive(Clone, Copy)]
enum Plan {
    /// Asker answers; no refinement. `correct` controls the initial answer.
    Keep { correct: bool },
    /// Asker requests refinement. Initial/refined may be correct; the
    /// marker token steers the truster when the answers differ.
    Refine { initial_correct: bool, refined_correct: bool, marker_on_initial: bool },
}

struct World {
    queries: Vec<Query>,
    predictor: ScriptedBackend,
    asker_backend: ScriptedBackend,
    refiner_backend: ScriptedBackend,
    truster: TrusterModel,
    cfg: PipelineConfig,
}

impl World {
    fn components(&self) -> Components<'_> {
        Components {
            predictor: &self.predictor,
            asker: Some(&self.asker_backend),
            refiner: Some(&self.refiner_backend),
            truster: Some(&self.truster),
        }
    }
}

fn answer_for(q_idx: usize, correct: bool) -> i64 {
    if correct {
        q_idx as i64
    } else {
        q_idx as i64 + 1000
    }
}

fn build_world(plans: &[Plan]) -> World {
    let cfg = PipelineConfig::default();
    let predictor = ScriptedBackend::new("pred", ScriptedFallback::Error);
    let asker_backend = ScriptedBackend::new("ask", ScriptedFallback::Error);
    let refiner_backend = ScriptedBackend::new("refine", ScriptedFallback::Error);

    let feature_config = FeatureConfig::new(512, 17).unwrap();
    let mut truster = TrusterModel::zeroed(feature_config);
    truster.weights[feature_config.token_slot(MARKER)] = 1.0;

    let mut queries = Vec::new();
    for (i, &plan) in plans.iter().enumerate() {
        let q = Query {
            id: format!("q{i:02}"),
            task: TaskKind::MathWord,
            question: format!("Fixture question {i}?"),
            gold_answer: Some(Answer::from(i as i64)),
            gold_subquestions: vec![],
            facts: vec![],
        };

        let (initial_answer, marker_on_initial) = match plan {
            Plan::Keep { correct } => (answer_for(i, correct), false),
            Plan::Refine { initial_correct, marker_on_initial, .. } => {
                (answer_for(i, initial_correct), marker_on_initial)
            }
        };
        let marker = if marker_on_initial { format!(" {MARKER}") } else { String::new() };
        let initial_text =
            format!("chain for query {i}{marker}. The answer is {initial_answer}.");
        let mut predict_req = build_predict_prompt(&q, cfg.prediction_style);
        predict_req.max_tokens = cfg.max_tokens_prediction;
        predictor.insert_response(&predict_req.messages, 0.0, 0, initial_text.clone());

        let initial_pred = Prediction {
            raw_text: initial_text,
            final_answer: None,
            source: PredictionSource::Initial,
            gen_meta: GenMeta { temperature: 0.0, seed: None, backend_id: "pred".into() },
        };
        let ask_req = build_ask_prompt(&q, &initial_pred);
        match plan {
            Plan::Keep { .. } => asker_backend.insert_response(
                &ask_req.messages,
                0.0,
                0,
                format!("Is the final total right? {SENTINEL_ANSWERED}"),
            ),
            Plan::Refine { refined_correct, marker_on_initial, .. } => {
                asker_backend.insert_response(
                    &ask_req.messages,
                    0.0,
                    0,
                    format!("Is step one right? Is the final total right? {SENTINEL_NOT_ANSWERED}"),
                );
                let subqs = vec![
                    "Is step one right?".to_string(),
                    "Is the final total right?".to_string(),
                ];
                let refine_req = build_refine_prompt(&q, &subqs, &[]).unwrap();
                let refined_answer = answer_for(i, refined_correct);
                let marker =
                    if marker_on_initial { String::new() } else { format!(" {MARKER}") };
                refiner_backend.insert_response(
                    &refine_req.messages,
                    0.0,
                    0,
                    format!("rederivation for query {i}{marker}. The answer is {refined_answer}."),
                );
            }
        }
        queries.push(q);
    }
    World { queries, predictor, asker_backend, refiner_backend, truster, cfg }
}

/// The 20-query plan: 8 kept (6 correct, 2 wrong) and 12 refined
/// (4 fixed-and-trusted, 2 broken-and-reverted, 3 same-wrong answers,
/// 2 same-correct answers, 1 fixed-but-wrongly-reverted).
fn twenty_query_plans() -> Vec<Plan> {
    let mut plans = Vec::new();
    for _ in 0..6 {
        plans.push(Plan::Keep { correct: true });
    }
    for _ in 0..2 {
        plans.push(Plan::Keep { correct: false });
    }
    for _ in 0..4 {
        plans.push(Plan::Refine {
            initial_correct: false,
            refined_correct: true,
            marker_on_initial: false,
        });
    }
    for _ in 0..2 {
        plans.push(Plan::Refine {
            initial_correct: true,
            refined_correct: false,
            marker_on_initial: true,
        });
    }
    for _ in 0..3 {
        plans.push(Plan::Refine {
            initial_correct: false,
            refined_correct: false,
            marker_on_initial: false,
        });
    }
    for _ in 0..2 {
        plans.push(Plan::Refine {
            initial_correct: true,
            refined_correct: true,
            marker_on_initial: false,
        });
    }
    plans.push(Plan::Refine {
        initial_correct: false,
        refined_correct: true,
        marker_on_initial: true,
    });
    plans
}

#[test]
fn c5_end_to_end_art_fixture() {
    let start = Instant::now();
    let world = build_world(&twenty_query_plans());
    let report = evaluate(&world.queries, &world.cfg, &world.components()).unwrap();

    // Hand-computed oracle over the 20 traces.
    assert_eq!(report.n, 20);
    assert_eq!(report.accuracy_initial, 10.0 / 20.0);
    assert_eq!(report.accuracy_after_refine, 13.0 / 20.0);
    assert_eq!(report.accuracy_final, 14.0 / 20.0);
    assert_eq!(report.refine_rate, 12.0 / 20.0);
    assert_eq!(report.revert_rate, 8.0 / 20.0);

    // Laziness: refiner calls equal the NotAnswered decisions.
    let not_answered = report
        .traces
        .iter()
        .filter(|t| {
            t.ask_outcome.as_ref().is_some_and(|o| o.decision == AskDecision::NotAnswered)
        })
        .count();
    assert_eq!(not_answered, 12);
    assert_eq!(world.refiner_backend.call_count(), 12);

    // Accuracy accounting is recomputable from the traces alone.
    let recount = report
        .traces
        .iter()
        .filter(|t| {
            let gold = t.gold_answer.as_ref().unwrap();
            t.final_prediction
                .final_answer
                .as_ref()
                .is_some_and(|a| answers_equal(a, gold) == Ok(true))
        })
        .count();
    assert_eq!(recount as f64 / 20.0, report.accuracy_final);

    budget("criterion 5: end-to-end fixture", start, 5.0);
}

// --- criterion 6: builder accounting --------------------------------------

/// Correct-sample counts per query for the 10-query builder fixture.
const CORRECT_PER_QUERY: [usize; 10] = [0, 1, 2, 3, 4, 5, 2, 3, 1, 4];
const BUILDER_TEMPS: [f64; 5] = [0.0, 0.3, 0.4, 0.7, 0.8];

fn builder_fixture() -> (Vec<Query>, ScriptedBackend) {
    let backend = ScriptedBackend::new("builder", ScriptedFallback::Error);
    let mut queries = Vec::new();
    for (qi, &n_correct) in CORRECT_PER_QUERY.iter().enumerate() {
        let q = Query {
            id: format!("b{qi:02}"),
            task: TaskKind::MathWord,
            question: format!("Builder question {qi}?"),
            gold_answer: Some(Answer::from(qi as i64)),
            gold_subquestions: vec![format!("Step question {qi}?")],
            facts: vec![],
        };
        let req = build_predict_prompt(&q, PredictionStyle::Cot);
        for (s, &temp) in BUILDER_TEMPS.iter().enumerate() {
            let answer = if s < n_correct { qi as i64 } else { qi as i64 + 500 };
            backend.insert_response(
                &req.messages,
                temp,
                s as u32,
                format!("sample {s} chain for {qi}. The answer is {answer}."),
            );
        }
        queries.push(q);
    }
    (queries, backend)
}

#[test]
fn c6_builder_accounting() {
    let start = Instant::now();
    let (queries, backend) = builder_fixture();

    // Asker-data builder: exactly 50 records pre-dedup, labels sound.
    let build = build_asker_training_data(
        &queries,
        &backend,
        5,
        &BUILDER_TEMPS,
        PredictionStyle::Cot,
        4,
    )
    .unwrap();
    assert_eq!(build.stats.raw_records, 50);
    assert_eq!(build.stats.kept_records, 50);
    for record in &build.records {
        let gold_idx: i64 = record.question
            .trim_start_matches("Builder question ")
            .trim_end_matches('?')
            .parse()
            .unwrap();
        let gold = Answer::from(gold_idx);
        let extracted = extract_final_answer(&record.prediction_text, TaskKind::MathWord);
        let is_correct = matches!(&extracted, Ok(a) if answers_equal(a, &gold) == Ok(true));
        assert_eq!(
            record.decision_label == AskDecision::Answered,
            is_correct,
            "label soundness violated on {record:?}"
        );
    }

    // Preference-pair builder: exact cross-product counts.
    let (groups, stats) =
        collect_scored_groups(&queries, &backend, 5, &BUILDER_TEMPS, PredictionStyle::Cot, 4)
            .unwrap();
    assert_eq!(stats.predictions_used, 50);
    let pairs = build_preference_pairs(&groups, 100);
    let expected_total: usize = CORRECT_PER_QUERY.iter().map(|&c| c * (5 - c)).sum();
    assert_eq!(pairs.len(), expected_total);
    for (qi, &c) in CORRECT_PER_QUERY.iter().enumerate() {
        let id = format!("b{qi:02}");
        let count = pairs.iter().filter(|p| p.query_id == id).count();
        assert_eq!(count, c * (5 - c), "cross product wrong for query {id}");
    }
    // The cap truncates per query.
    let capped = build_preference_pairs(&groups, 3);
    let expected_capped: usize = CORRECT_PER_QUERY.iter().map(|&c| (c * (5 - c)).min(3)).sum();
    assert_eq!(capped.len(), expected_capped);

    budget("criterion 6: builder accounting", start, 5.0);
}

// --- criterion 7: simulator agreement and sweep shape ---------------------

#[test]
fn c7_simulator_agreement_and_sweep_shape() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(777);
    let n = 100_000;
    let bound = 4.0 * (0.25 / n as f64).sqrt();

    for draw in 0..50 {
        let p = CascadeParams {
            a0: unit(&mut rng),
            ask_tpr: unit(&mut rng),
            ask_fpr: unit(&mut rng),
            fix_rate: unit(&mut rng),
            break_rate: unit(&mut rng),
            trust_acc: unit(&mut rng),
        };
        let expected = expected_accuracy(&p, TrustMode::WithTrust);
        let stats = simulate(&p, n, draw as u64);
        assert!(
            (stats.accuracy - expected).abs() < bound,
            "draw {draw}: simulated {} vs expected {expected} (bound {bound}) at {p:?}",
            stats.accuracy
        );
    }

    // Always-refine hurts when expected harm exceeds expected help.
    let harmful = CascadeParams {
        a0: 0.7771,
        ask_tpr: 0.8,
        ask_fpr: 0.2,
        fix_rate: 0.5,
        break_rate: 0.2,
        trust_acc: 0.75,
    };
    assert!((1.0 - harmful.a0) * harmful.fix_rate < harmful.a0 * harmful.break_rate);
    let curve = sweep_fraction(&harmful, &[0.0, 1.0], TrustMode::NoTrust, SweepOrder::Uniform);
    assert!(curve[1].1 < curve[0].1, "always refining must hurt: {curve:?}");

    // Ask-ordered selection has an interior sweet spot near the flagged mass.
    let spot = CascadeParams { ask_fpr: 0.15, ..harmful };
    let fractions: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let curve = sweep_fraction(&spot, &fractions, TrustMode::NoTrust, SweepOrder::AskOrdered);
    let (argmax, _) = curve
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.1.partial_cmp(&b.1).unwrap())
        .unwrap();
    assert!(0 < argmax && argmax < curve.len() - 1, "interior maximum expected: {curve:?}");
    let flagged_mass = (1.0 - spot.a0) * spot.ask_tpr + spot.a0 * spot.ask_fpr;
    assert!(
        (curve[argmax].0 - flagged_mass).abs() <= 0.05,
        "sweet spot {} should sit near the flagged mass {flagged_mass}",
        curve[argmax].0
    );

    budget("criterion 7: simulator agreement and sweep shape", start, 30.0);
}

// --- criterion 8: wire protocol golden fixtures ---------------------------

#[test]
fn c8_wire_protocol_golden_round_trip() {
    let start = Instant::now();
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");

    // Request encoder: canonical bytes equal the golden file.
    let req = GenerationRequest::greedy(
        vec![
            Message::system("You are a careful assistant."),
            Message::user("What is 2+2?"),
        ],
        128,
    );
    let encoded = wire::request_to_json(&wire::encode_request(&req, "test-model"));
    let golden_request = std::fs::read_to_string(dir.join("golden_chat_request.json")).unwrap();
    assert_eq!(encoded, golden_request.trim_end(), "request encoding must be byte-identical");

    // Response decoder: decode the golden file, re-encode byte-identically.
    let golden_response = std::fs::read_to_string(dir.join("golden_chat_response.json")).unwrap();
    let (text, usage) = wire::decode_response(&golden_response).unwrap();
    assert_eq!(text, "2 + 2 = <<2+2=4>>4. The answer is 4.");
    assert_eq!(usage.prompt_tokens, 24);
    assert_eq!(usage.completion_tokens, 13);
    let parsed: wire::ChatResponse = serde_json::from_str(&golden_response).unwrap();
    assert_eq!(
        wire::response_to_json(&parsed),
        golden_response.trim_end(),
        "response re-encoding must be byte-identical"
    );

    budget("criterion 8: wire protocol golden fixtures", start, 1.0);
}

// --- criterion 9: bitwise determinism of criteria 3-7 artifacts -----------

#[test]
fn c9_bitwise_determinism() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();

    let mut artifact_sets: Vec<Vec<Vec<u8>>> = Vec::new();
    for run in 0..2 {
        let run_dir = dir.path().join(format!("run{run}"));
        std::fs::create_dir_all(&run_dir).unwrap();
        let mut artifacts: Vec<Vec<u8>> = Vec::new();

        // Criterion 3 artifact: trained model file.
        let pairs = synthetic_set(300, 5);
        let model = train(
            &pairs,
            &FeatureConfig::new(1024, 17).unwrap(),
            &TrainParams { seed: 7, epochs: 5, ..TrainParams::default() },
        )
        .unwrap();
        let model_path = run_dir.join("truster.json");
        model.save(&model_path).unwrap();
        artifacts.push(std::fs::read(&model_path).unwrap());

        // Criterion 5 artifacts: report and trace files.
        let world = build_world(&twenty_query_plans());
        let report = evaluate(&world.queries, &world.cfg, &world.components()).unwrap();
        let trace_path = run_dir.join("trace.jsonl");
        let report_path = run_dir.join("report.json");
        write_trace_jsonl(&report.traces, &trace_path).unwrap();
        write_report_json(&report, &report_path).unwrap();
        artifacts.push(std::fs::read(&trace_path).unwrap());
        artifacts.push(std::fs::read(&report_path).unwrap());

        // Criterion 6 artifacts: builder outputs.
        let (queries, backend) = builder_fixture();
        let build = build_asker_training_data(
            &queries,
            &backend,
            5,
            &BUILDER_TEMPS,
            PredictionStyle::Cot,
            4,
        )
        .unwrap();
        artifacts.push(records_to_jsonl(&build.records).into_bytes());
        let (groups, _) =
            collect_scored_groups(&queries, &backend, 5, &BUILDER_TEMPS, PredictionStyle::Cot, 4)
                .unwrap();
        let pairs = build_preference_pairs(&groups, 100);
        let pairs_bytes: Vec<u8> = pairs
            .iter()
            .flat_map(|p| {
                let mut line = serde_json::to_vec(p).unwrap();
                line.push(b'\n');
                line
            })
            .collect();
        artifacts.push(pairs_bytes);

        // Criterion 7 artifacts: simulation stats and sweep curve.
        let p = CascadeParams {
            a0: 0.7771,
            ask_tpr: 0.8,
            ask_fpr: 0.2,
            fix_rate: 0.4,
            break_rate: 0.1,
            trust_acc: 0.75,
        };
        let stats = simulate(&p, 100_000, 42);
        artifacts.push(serde_json::to_vec(&stats).unwrap());
        let fractions: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let curve = sweep_fraction(&p, &fractions, TrustMode::WithTrust, SweepOrder::AskOrdered);
        artifacts.push(curve_to_csv(&curve).into_bytes());

        artifact_sets.push(artifacts);
    }

    assert_eq!(artifact_sets[0].len(), artifact_sets[1].len());
    for (i, (a, b)) in artifact_sets[0].iter().zip(&artifact_sets[1]).enumerate() {
        assert_eq!(a, b, "artifact {i} differs between identical runs");
    }

    budget("criterion 9: bitwise determinism", start, 30.0);
}

// Golden affine-score fixture: the expected value was computed once in
// exact rational arithmetic (all entries are dyadic, so the f64 dot
// product is exact) and pinned.
#[test]
fn golden_model_score_fixture() {
    #[derive(serde::Deserialize)]
    struct Golden {
        feature_config: FeatureConfig,
        weights: Vec<f64>,
        bias: f64,
        vector: Vec<f64>,
        expected_score: f64,
    }
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden_truster_score.json");
    let golden: Golden = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let mut model = TrusterModel::zeroed(golden.feature_config);
    model.weights = golden.weights;
    model.bias = golden.bias;
    let vector = FeatureVector::from_values(golden.vector, golden.feature_config).unwrap();
    assert_eq!(model.score(&vector).unwrap(), golden.expected_score);
}

// The featurizer is shared by training and selection; a quick cross-check
// that fixture marker slots behave as the end-to-end fixture assumes.
#[test]
fn fixture_marker_feature_sanity() {
    let config = FeatureConfig::new(512, 17).unwrap();
    let with = featurize("q", &format!("chain {MARKER}. The answer is 2."), &config);
    let without = featurize("q", "chain. The answer is 2.", &config);
    let slot = config.token_slot(MARKER);
    assert_eq!(with.values()[slot] - without.values()[slot], 1.0);
}
