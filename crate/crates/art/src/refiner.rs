//! The Refine stage: re-derive an answer guided by the Asker's
//! subquestions, with dataset facts as extra context for boolean QA.

use thiserror::Error;

use crate::answers::extract_final_answer;
use crate::asker::decide_refine;
use crate::backend::{
    Backend, BackendError, GenerationRequest, Message, DEFAULT_MAX_TOKENS_REFINEMENT,
};
use crate::types::{AskOutcome, GenMeta, Prediction, PredictionSource, Query, TaskKind};

#[derive(Debug, Error)]
pub enum RefinerError {
    #[error("refinement requires at least one subquestion")]
    EmptySubquestions,
    #[error("refine called although the ask decision did not request it")]
    RefinementNotRequested,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Prompt listing each subquestion as a step to answer in order, asking for
/// a full re-derivation that ends with the final-answer sentinel. Facts are
/// prepended as a context block when present. The initial prediction is
/// deliberately not shown: the refinement answers the subquestions from
/// scratch rather than anchoring on the flawed chain.
pub fn build_refine_prompt(
    q: &Query,
    subquestions: &[String],
    facts: &[String],
) -> Result<GenerationRequest, RefinerError> {
    if subquestions.is_empty() {
        return Err(RefinerError::EmptySubquestions);
    }
    debug_assert!(facts.is_empty() || q.task == TaskKind::BooleanQa);

    let rule = match q.task {
        TaskKind::MathWord => {
            "Write each calculation as <<expression=result>>. End with a final line of the form \
             \"The answer is <number>.\""
        }
        TaskKind::BooleanQa => {
            "End with a final line of the form \"Answer: True\" or \"Answer: False\"."
        }
    };
    let system = format!(
        "You solve the problem by answering each given sub-question in order, then conclude. {rule}"
    );

    let mut user = String::new();
    if !facts.is_empty() {
        user.push_str("Facts:\n");
        for fact in facts {
            user.push_str("- ");
            user.push_str(fact);
            user.push('\n');
        }
        user.push('\n');
    }
    user.push_str("Question: ");
    user.push_str(&q.question);
    user.push_str("\n\nAnswer each sub-question in order:\n");
    for (i, subq) in subquestions.iter().enumerate() {
        user.push_str(&format!("{}. {subq}\n", i + 1));
    }

    Ok(GenerationRequest::greedy(
        vec![Message::system(system), Message::user(user)],
        DEFAULT_MAX_TOKENS_REFINEMENT,
    ))
}

/// Run the Refine stage for an outcome that requested it. The returned
/// prediction has `source = Refined`; a chain whose answer cannot be
/// extracted yields `final_answer = None` rather than an error.
pub fn refine(
    q: &Query,
    outcome: &AskOutcome,
    backend: &dyn Backend,
) -> Result<Prediction, RefinerError> {
    if !decide_refine(outcome) {
        return Err(RefinerError::RefinementNotRequested);
    }
    let facts: &[String] = match q.task {
        TaskKind::BooleanQa => &q.facts,
        TaskKind::MathWord => &[],
    };
    let req = build_refine_prompt(q, &outcome.subquestions, facts)?;
    let generated = backend.generate(&req)?;
    let final_answer = extract_final_answer(&generated.text, q.task).ok();
    Ok(Prediction {
        raw_text: generated.text,
        final_answer,
        source: PredictionSource::Refined,
        gen_meta: GenMeta {
            temperature: req.temperature,
            seed: req.seed,
            backend_id: generated.backend_id,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ScriptedBackend, ScriptedFallback};
    use crate::types::{Answer, AskDecision, NumericValue};

    fn math_query() -> Query {
        Query {
            id: "q1".into(),
            task: TaskKind::MathWord,
            question: "How many dollars did the customer pay on this shopping trip?".into(),
            gold_answer: None,
            gold_subquestions: vec![],
            facts: vec![],
        }
    }

    fn bool_query() -> Query {
        Query {
            id: "q2".into(),
            task: TaskKind::BooleanQa,
            question: "Can a greyhound walk on two legs?".into(),
            gold_answer: None,
            gold_subquestions: vec![],
            facts: vec!["Greyhounds are dogs.".into(), "Dogs walk on four legs.".into()],
        }
    }

    fn outcome(subqs: &[&str]) -> AskOutcome {
        AskOutcome {
            subquestions: subqs.iter().map(|s| s.to_string()).collect(),
            decision: AskDecision::NotAnswered,
        }
    }

    const LOYALTY_SUBQS: [&str; 3] = [
        "How much did the customer get in rewards?",
        "What was the coupons cost?",
        "How much did the customer pay on this shopping trip?",
    ];

    #[test]
    fn prompt_lists_subquestions_in_order() {
        let q = math_query();
        let req = build_refine_prompt(
            &q,
            &LOYALTY_SUBQS.map(String::from),
            &[],
        )
        .unwrap();
        let user = &req.messages[1].content;
        let p1 = user.find("1. How much did the customer get in rewards?").unwrap();
        let p2 = user.find("2. What was the coupons cost?").unwrap();
        let p3 = user.find("3. How much did the customer pay").unwrap();
        assert!(p1 < p2 && p2 < p3);
    }

    #[test]
    fn facts_block_present_for_boolean_qa() {
        let q = bool_query();
        let req =
            build_refine_prompt(&q, &["What type of animal is a greyhound?".into()], &q.facts)
                .unwrap();
        assert!(req.messages[1].content.contains("Greyhounds are dogs."));
        assert!(req.messages[1].content.starts_with("Facts:"));
    }

    #[test]
    fn empty_subquestions_rejected() {
        let q = math_query();
        assert!(matches!(
            build_refine_prompt(&q, &[], &[]),
            Err(RefinerError::EmptySubquestions)
        ));
    }

    #[test]
    fn refine_extracts_final_answer() {
        let q = math_query();
        let out = outcome(&LOYALTY_SUBQS);
        let backend = ScriptedBackend::new("ref", ScriptedFallback::Error);
        let req = build_refine_prompt(&q, &out.subquestions, &[]).unwrap();
        backend.insert_response(
            &req.messages,
            0.0,
            0,
            "The customer had 80 / 20 = $<<80/20=4>>4 in rewards. Their coupon was worth \
             4 * 2 = $<<4*2=8>>8. Thus they paid 43 - 4 - 8 = $<<43-4-8=31>>31 on this \
             shopping trip.",
        );
        let p = refine(&q, &out, &backend).unwrap();
        assert_eq!(p.source, PredictionSource::Refined);
        assert_eq!(p.final_answer, Some(Answer::Numeric(NumericValue("31".into()))));
        assert_eq!(p.gen_meta.backend_id, "ref");
    }

    #[test]
    fn extraction_miss_yields_absent_answer() {
        let q = math_query();
        let out = outcome(&["Any question?"]);
        let backend = ScriptedBackend::new("ref", ScriptedFallback::Error);
        let req = build_refine_prompt(&q, &out.subquestions, &[]).unwrap();
        backend.insert_response(&req.messages, 0.0, 0, "no numbers here at all");
        let p = refine(&q, &out, &backend).unwrap();
        assert_eq!(p.final_answer, None);
    }

    #[test]
    fn boolean_refinement_with_facts() {
        let q = bool_query();
        let out = outcome(&["What type of animal is a greyhound?", "Does it walk on two legs?"]);
        let backend = ScriptedBackend::new("ref", ScriptedFallback::Error);
        let req = build_refine_prompt(&q, &out.subquestions, &q.facts).unwrap();
        backend.insert_response(
            &req.messages,
            0.0,
            0,
            "A greyhound is a dog. Dogs walk on four legs, not two. Answer: False",
        );
        let p = refine(&q, &out, &backend).unwrap();
        assert_eq!(p.final_answer, Some(Answer::Boolean(false)));
    }

    #[test]
    fn refine_requires_requested_outcome() {
        let q = math_query();
        let mut out = outcome(&["Any question?"]);
        out.decision = AskDecision::Answered;
        let backend = ScriptedBackend::new("ref", ScriptedFallback::Error);
        assert!(matches!(
            refine(&q, &out, &backend),
            Err(RefinerError::RefinementNotRequested)
        ));
    }

    #[test]
    fn prompt_is_pure() {
        let q = math_query();
        let subqs = vec!["How much?".to_string()];
        let a = build_refine_prompt(&q, &subqs, &[]).unwrap();
        let b = build_refine_prompt(&q, &subqs, &[]).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
    }
}
