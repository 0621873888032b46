//! JSONL dataset loading for both task families, with the boolean-QA
//! file-order split rule (first 20% test, remaining 80% train).

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::answers::normalize_numeric;
use crate::types::{Answer, Query, TaskKind};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: malformed record: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("line {line}: missing gold answer")]
    MissingGold { line: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which part of a file to load. Math-word files ship pre-split, so every
/// variant loads the whole file; boolean-QA files follow the file-order
/// rule: the first 20% of records are the test set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Split {
    #[default]
    All,
    Train,
    Test,
}

#[derive(Deserialize)]
struct MathRecord {
    question: String,
    answer: Option<String>,
    #[serde(default)]
    subquestions: Vec<String>,
}

#[derive(Deserialize)]
struct BoolRecord {
    question: String,
    #[serde(default)]
    decomposition: Vec<String>,
    #[serde(default)]
    facts: Vec<String>,
    answer: Option<bool>,
}

/// Gold value of a math-word record: the token after the last `####`
/// delimiter line.
fn parse_hash_gold(answer_text: &str, line: usize) -> Result<Answer, DatasetError> {
    let delimited = answer_text
        .lines()
        .rev()
        .find_map(|l| l.trim_start().strip_prefix("####"))
        .ok_or_else(|| DatasetError::MalformedRecord {
            line,
            message: "answer has no #### delimiter line".into(),
        })?;
    normalize_numeric(delimited.trim())
        .map(Answer::Numeric)
        .map_err(|e| DatasetError::MalformedRecord { line, message: e.to_string() })
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into())
}

/// Load a JSONL dataset. IDs are imposed as `{file_stem}-{index:05}` with
/// the index reflecting file order (so train/test ids stay stable across
/// splits).
pub fn load_dataset(path: &Path, task: TaskKind, split: Split) -> Result<Vec<Query>, DatasetError> {
    let content = std::fs::read_to_string(path)?;
    let stem = file_stem(path);

    let mut queries = Vec::new();
    let mut index = 0usize;
    for (lineno, raw) in content.lines().enumerate() {
        let line = lineno + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let query = match task {
            TaskKind::MathWord => {
                let record: MathRecord = serde_json::from_str(raw).map_err(|e| {
                    DatasetError::MalformedRecord { line, message: e.to_string() }
                })?;
                let answer_text =
                    record.answer.ok_or(DatasetError::MissingGold { line })?;
                let gold = parse_hash_gold(&answer_text, line)?;
                Query {
                    id: format!("{stem}-{index:05}"),
                    task,
                    question: record.question,
                    gold_answer: Some(gold),
                    gold_subquestions: record.subquestions,
                    facts: Vec::new(),
                }
            }
            TaskKind::BooleanQa => {
                let record: BoolRecord = serde_json::from_str(raw).map_err(|e| {
                    DatasetError::MalformedRecord { line, message: e.to_string() }
                })?;
                let gold = record.answer.ok_or(DatasetError::MissingGold { line })?;
                Query {
                    id: format!("{stem}-{index:05}"),
                    task,
                    question: record.question,
                    gold_answer: Some(Answer::Boolean(gold)),
                    gold_subquestions: record.decomposition,
                    facts: record.facts,
                }
            }
        };
        queries.push(query);
        index += 1;
    }

    if task == TaskKind::BooleanQa {
        let n_test = queries.len() * 20 / 100;
        match split {
            Split::All => {}
            Split::Test => queries.truncate(n_test),
            Split::Train => {
                queries.drain(..n_test);
            }
        }
    }
    Ok(queries)
}
