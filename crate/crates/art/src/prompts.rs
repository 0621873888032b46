//! Prompt templates for initial prediction and the self-refinement
//! baseline. Templates are fixed strings so request fingerprints stay
//! stable across runs.

use serde::{Deserialize, Serialize};

use crate::backend::{GenerationRequest, Message, DEFAULT_MAX_TOKENS_PREDICTION};
use crate::types::{Query, TaskKind};

/// Reasoning style of the initial prediction: one chain of thought, or
/// inline subquestion decomposition before the final answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionStyle {
    #[default]
    Cot,
    Decomp,
}

const MATH_ANSWER_RULE: &str =
    "End with a final line of the form \"The answer is <number>.\"";
const BOOL_ANSWER_RULE: &str =
    "End with a final line of the form \"Answer: True\" or \"Answer: False\".";

fn predict_system(task: TaskKind, style: PredictionStyle) -> String {
    let (solver, rule) = match task {
        TaskKind::MathWord => (
            "You are a careful math problem solver. Write each calculation as <<expression=result>>.",
            MATH_ANSWER_RULE,
        ),
        TaskKind::BooleanQa => ("You are a careful reasoner.", BOOL_ANSWER_RULE),
    };
    match style {
        PredictionStyle::Cot => {
            format!("{solver} Work through the problem step by step. {rule}")
        }
        PredictionStyle::Decomp => format!(
            "{solver} First list the sub-questions the problem requires, then answer each of them in order. {rule}"
        ),
    }
}

/// Prompt for the initial prediction of a query.
pub fn build_predict_prompt(q: &Query, style: PredictionStyle) -> GenerationRequest {
    GenerationRequest::greedy(
        vec![
            Message::system(predict_system(q.task, style)),
            Message::user(q.question.clone()),
        ],
        DEFAULT_MAX_TOKENS_PREDICTION,
    )
}

/// Marker an affirming self-critique must contain in its first sentence.
pub const SELF_REFINE_AFFIRM_MARKER: &str = "the reasoning is correct";

/// Prompt asking the model to critique and, if needed, rewrite its own
/// solution (the self-refinement baseline).
pub fn build_self_refine_prompt(q: &Query, prediction_text: &str) -> GenerationRequest {
    let rule = match q.task {
        TaskKind::MathWord => MATH_ANSWER_RULE,
        TaskKind::BooleanQa => BOOL_ANSWER_RULE,
    };
    let system = format!(
        "You review your own solution. If the reasoning is correct, reply starting with \
         \"Yes, the reasoning is correct.\" and restate the solution. Otherwise write a \
         corrected step-by-step solution. {rule}"
    );
    let user = format!("Question: {}\n\nProposed solution: {}", q.question, prediction_text);
    GenerationRequest::greedy(
        vec![Message::system(system), Message::user(user)],
        DEFAULT_MAX_TOKENS_PREDICTION,
    )
}

/// Prompt asking the model itself to choose between the initial and the
/// refined candidate (the self-selection baseline).
pub fn build_self_select_prompt(
    q: &Query,
    initial_text: &str,
    refined_text: &str,
) -> GenerationRequest {
    let system = "You choose between two candidate solutions. Reply with exactly \
                  \"Candidate 1\" or \"Candidate 2\"."
        .to_string();
    let user = format!(
        "Question: {}\n\nCandidate 1:\n{}\n\nCandidate 2:\n{}\n\nWhich candidate is correct?",
        q.question, initial_text, refined_text
    );
    GenerationRequest::greedy(
        vec![Message::system(system), Message::user(user)],
        DEFAULT_MAX_TOKENS_PREDICTION,
    )
}
