//! Domain types shared by every pipeline stage.
//!
//! All types serialize to canonical JSON records (lower_snake_case field
//! names) and are immutable values, safe to share between workers.

use serde::{Deserialize, Serialize};

/// The two task families the pipeline handles. Math word problems carry
/// numeric answers, boolean QA carries true/false answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    MathWord,
    BooleanQa,
}

/// A canonical numeric value: the exact decimal string (separators and
/// currency stripped, zeros normalized) plus its parsed value. Equality is
/// by canonical string, so golden files never drift through float
/// formatting.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NumericValue(pub(crate) String);

impl NumericValue {
    /// Canonical value of an integer (integers are their own canonical
    /// form). Arbitrary tokens go through numeric normalization instead.
    pub fn from_integer(n: i64) -> NumericValue {
        NumericValue(n.to_string())
    }

    pub fn canonical(&self) -> &str {
        &self.0
    }

    pub fn as_f64(&self) -> f64 {
        self.0.parse().expect("canonical numeric string parses")
    }
}

impl From<i64> for Answer {
    fn from(n: i64) -> Answer {
        Answer::Numeric(NumericValue::from_integer(n))
    }
}

impl std::fmt::Display for NumericValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// A final answer: numeric for math word problems, boolean for boolean QA.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Answer {
    Numeric(NumericValue),
    Boolean(bool),
}

impl Answer {
    pub fn task_kind(&self) -> TaskKind {
        match self {
            Answer::Numeric(_) => TaskKind::MathWord,
            Answer::Boolean(_) => TaskKind::BooleanQa,
        }
    }
}

impl std::fmt::Display for Answer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Answer::Numeric(v) => write!(f, "{v}"),
            Answer::Boolean(b) => write!(f, "{}", if *b { "True" } else { "False" }),
        }
    }
}

/// A task instance. Gold fields are optional so the same type serves both
/// training (gold present) and inference (gold absent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub task: TaskKind,
    pub question: String,
    #[serde(default)]
    pub gold_answer: Option<Answer>,
    #[serde(default)]
    pub gold_subquestions: Vec<String>,
    #[serde(default)]
    pub facts: Vec<String>,
}

/// Which stage produced a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionSource {
    Initial,
    Refined,
}

/// Generation provenance carried on every prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenMeta {
    pub temperature: f64,
    #[serde(default)]
    pub seed: Option<i64>,
    pub backend_id: String,
}

/// A reasoning chain plus its extracted final answer. `final` is present
/// exactly when extraction succeeded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub raw_text: String,
    #[serde(rename = "final")]
    pub final_answer: Option<Answer>,
    pub source: PredictionSource,
    pub gen_meta: GenMeta,
}

/// The Asker's verdict: `NotAnswered` requests refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AskDecision {
    Answered,
    NotAnswered,
}

/// Parsed Asker output: the generated subquestions plus the binary
/// refinement decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AskOutcome {
    pub subquestions: Vec<String>,
    pub decision: AskDecision,
}
