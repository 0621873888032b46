//! Final-answer extraction from reasoning chains and scoring against gold.
//! This is the correctness oracle every other stage builds on, so the
//! extraction rules are fixed, ordered, and environment-independent.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Answer, NumericValue, Prediction, TaskKind};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExtractError {
    #[error("no final answer found in text")]
    NoAnswerFound,
    #[error("matched numeric token failed to parse: {0:?}")]
    MalformedNumber(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("cannot compare answers of different kinds")]
pub struct TypeMismatch;

/// The marker patterns an extraction rule tries, in order. First matching
/// pattern wins; within a pattern the last occurrence in the text is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerPattern {
    /// A `#### <value>` delimiter line (gold-record style).
    HashDelimiterLine,
    /// The last "The answer is <value>" sentence.
    AnswerSentinel,
    /// The last arithmetic annotation result `<<...=value>>`.
    ArithmeticAnnotation,
    /// A trailing true/false/yes/no token.
    TrailingBoolean,
}

/// Ordered extraction patterns for one task kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionRule {
    pub task: TaskKind,
    pub patterns: Vec<MarkerPattern>,
}

impl ExtractionRule {
    pub fn for_task(task: TaskKind) -> Self {
        let patterns = match task {
            TaskKind::MathWord => vec![
                MarkerPattern::HashDelimiterLine,
                MarkerPattern::AnswerSentinel,
                MarkerPattern::ArithmeticAnnotation,
            ],
            TaskKind::BooleanQa => vec![MarkerPattern::TrailingBoolean],
        };
        ExtractionRule { task, patterns }
    }
}

/// How a prediction scores against gold. Total over all predictions:
/// missing extraction is `Unparseable`, never an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Score {
    Correct,
    Incorrect,
    Unparseable,
}

// Token grammar: optional sign and currency (either order), digits with
// optional strict 3-digit thousands groups, optional decimal part.
static NUMERIC_TOKEN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?:(?P<s1>[+-])?(?P<c1>[$€£])?|(?P<c2>[$€£])?(?P<s2>[+-])?)(?P<int>\d{1,3}(?:,\d{3})+|\d+)(?:\.(?P<frac>\d+))?$").unwrap()
});

static HASH_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^####\s*(.+?)\s*$").unwrap());

static ANSWER_SENTENCE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)the answer is\s+([^\s.,;:!?]+(?:,\d{3})*(?:\.\d+)?)").unwrap()
});

static ANNOTATION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"<<[^<>]*=([^<>=]*)>>").unwrap());

/// Parse a numeric token into its canonical form.
///
/// Accepted grammar: optional sign, optional leading currency symbol,
/// digits with optional thousands separators, optional decimal part.
/// Canonicalization strips separators and currency, collapses signed zero,
/// and drops trailing fractional zeros so `"35.0"` equals `"35"`.
pub fn normalize_numeric(token: &str) -> Result<NumericValue, ExtractError> {
    let token = token.trim();
    let caps = NUMERIC_TOKEN
        .captures(token)
        .ok_or_else(|| ExtractError::MalformedNumber(token.to_string()))?;

    let negative = caps
        .name("s1")
        .or_else(|| caps.name("s2"))
        .is_some_and(|s| s.as_str() == "-");
    let int_digits: String = caps["int"].chars().filter(|c| *c != ',').collect();
    let mut frac = caps.name("frac").map_or("", |m| m.as_str()).to_string();
    while frac.ends_with('0') {
        frac.pop();
    }

    let int_trimmed = int_digits.trim_start_matches('0');
    let int_part = if int_trimmed.is_empty() { "0" } else { int_trimmed };

    let is_zero = int_part == "0" && frac.is_empty();
    let mut canonical = String::new();
    if negative && !is_zero {
        canonical.push('-');
    }
    canonical.push_str(int_part);
    if !frac.is_empty() {
        canonical.push('.');
        canonical.push_str(&frac);
    }

    // Guard the finiteness invariant: absurd digit strings overflow f64.
    let value: f64 = canonical
        .parse()
        .map_err(|_| ExtractError::MalformedNumber(token.to_string()))?;
    if !value.is_finite() {
        return Err(ExtractError::MalformedNumber(token.to_string()));
    }
    Ok(NumericValue(canonical))
}

/// Extract the canonical final answer from a reasoning chain.
///
/// Math word problems scan, in order: a `#### <value>` delimiter line, the
/// last "The answer is <value>" sentence, then the last arithmetic
/// annotation `<<...=value>>`. Boolean QA scans backwards for a trailing
/// true/false/yes/no token. Deterministic: same text, same result.
pub fn extract_final_answer(text: &str, task: TaskKind) -> Result<Answer, ExtractError> {
    extract_with_rule(text, &ExtractionRule::for_task(task))
}

/// Apply an extraction rule: patterns tried in order, first matching
/// pattern wins; within a pattern the last occurrence in the text is used.
pub fn extract_with_rule(text: &str, rule: &ExtractionRule) -> Result<Answer, ExtractError> {
    for pattern in &rule.patterns {
        match pattern {
            MarkerPattern::HashDelimiterLine => {
                if let Some(caps) = HASH_LINE.captures_iter(text).last() {
                    return normalize_numeric(&caps[1]).map(Answer::Numeric);
                }
            }
            MarkerPattern::AnswerSentinel => {
                if let Some(caps) = ANSWER_SENTENCE.captures_iter(text).last() {
                    return normalize_numeric(&caps[1]).map(Answer::Numeric);
                }
            }
            MarkerPattern::ArithmeticAnnotation => {
                if let Some(caps) = ANNOTATION.captures_iter(text).last() {
                    return normalize_numeric(caps[1].trim()).map(Answer::Numeric);
                }
            }
            MarkerPattern::TrailingBoolean => {
                if let Ok(answer) = extract_boolean(text) {
                    return Ok(answer);
                }
            }
        }
    }
    Err(ExtractError::NoAnswerFound)
}

fn extract_boolean(text: &str) -> Result<Answer, ExtractError> {
    for raw in text.split_whitespace().rev() {
        let token = raw.trim_matches(|c: char| !c.is_alphanumeric());
        if token.eq_ignore_ascii_case("true") || token.eq_ignore_ascii_case("yes") {
            return Ok(Answer::Boolean(true));
        }
        if token.eq_ignore_ascii_case("false") || token.eq_ignore_ascii_case("no") {
            return Ok(Answer::Boolean(false));
        }
    }
    Err(ExtractError::NoAnswerFound)
}

/// True iff both answers have the same variant and equal canonical forms.
/// Numeric comparison is exact after normalization, no epsilon.
pub fn answers_equal(a: &Answer, b: &Answer) -> Result<bool, TypeMismatch> {
    match (a, b) {
        (Answer::Numeric(x), Answer::Numeric(y)) => Ok(x.canonical() == y.canonical()),
        (Answer::Boolean(x), Answer::Boolean(y)) => Ok(x == y),
        _ => Err(TypeMismatch),
    }
}

/// Score a prediction against gold. Total function: a prediction with no
/// extracted answer is `Unparseable`, and a variant mismatch counts as
/// `Incorrect` (a chain answering the wrong kind of question cannot be
/// correct).
pub fn score_prediction(p: &Prediction, gold: &Answer) -> Score {
    match &p.final_answer {
        None => Score::Unparseable,
        Some(ans) => match answers_equal(ans, gold) {
            Ok(true) => Score::Correct,
            Ok(false) | Err(TypeMismatch) => Score::Incorrect,
        },
    }
}
