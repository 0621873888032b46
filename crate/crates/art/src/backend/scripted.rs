//! Deterministic scripted backend: completions are looked up by (prompt
//! fingerprint, exact temperature, sample index), making every pipeline
//! run over it bitwise reproducible.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use super::{fingerprint_messages, Backend, BackendError, GenerationRequest, GenerationResult, Message, Usage};

/// What to do when no scripted entry matches: fail the call or echo the
/// last message back (useful as a stand-in model in smoke tests).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedFallback {
    #[default]
    Error,
    Echo,
}

/// One line of a scripted backend script file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    /// Hex-encoded message-sequence fingerprint.
    pub fingerprint: String,
    pub temperature: f64,
    pub index: u32,
    pub text: String,
}

pub struct ScriptedBackend {
    id: String,
    fallback: ScriptedFallback,
    // Temperature keyed by exact bits: the schedule is a fixed finite set.
    entries: RwLock<HashMap<(u64, u64, u32), String>>,
    calls: AtomicU64,
}

impl ScriptedBackend {
    pub fn new(id: impl Into<String>, fallback: ScriptedFallback) -> Self {
        ScriptedBackend {
            id: id.into(),
            fallback,
            entries: RwLock::new(HashMap::new()),
            calls: AtomicU64::new(0),
        }
    }

    /// Load a JSONL script file of [`ScriptEntry`] records.
    pub fn from_path(
        id: impl Into<String>,
        fallback: ScriptedFallback,
        path: &Path,
    ) -> std::io::Result<Self> {
        let file = std::fs::File::open(path)?;
        let backend = ScriptedBackend::new(id, fallback);
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(&line).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("script line {}: {e}", lineno + 1),
                )
            })?;
            let fp = u64::from_str_radix(&entry.fingerprint, 16).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("script line {}: bad fingerprint: {e}", lineno + 1),
                )
            })?;
            backend.insert_raw(fp, entry.temperature, entry.index, entry.text);
        }
        Ok(backend)
    }

    /// Write out every entry as a JSONL script, sorted for stable files.
    pub fn save(&self, mut w: impl Write) -> std::io::Result<()> {
        let entries = self.entries.read().unwrap();
        let mut rows: Vec<ScriptEntry> = entries
            .iter()
            .map(|(&(fp, temp_bits, index), text)| ScriptEntry {
                fingerprint: format!("{fp:016x}"),
                temperature: f64::from_bits(temp_bits),
                index,
                text: text.clone(),
            })
            .collect();
        rows.sort_by(|a, b| {
            (&a.fingerprint, a.temperature.to_bits(), a.index)
                .cmp(&(&b.fingerprint, b.temperature.to_bits(), b.index))
        });
        for row in rows {
            writeln!(w, "{}", serde_json::to_string(&row).unwrap())?;
        }
        Ok(())
    }

    pub fn insert_raw(&self, fingerprint: u64, temperature: f64, index: u32, text: impl Into<String>) {
        self.entries
            .write()
            .unwrap()
            .insert((fingerprint, temperature.to_bits(), index), text.into());
    }

    /// Script a response for the exact message sequence at (temperature, index).
    pub fn insert_response(
        &self,
        messages: &[Message],
        temperature: f64,
        index: u32,
        text: impl Into<String>,
    ) {
        self.insert_raw(fingerprint_messages(messages), temperature, index, text);
    }

    /// Number of generate calls served so far (for laziness assertions).
    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn approx_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

impl Backend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        req.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        let fingerprint = req.fingerprint();
        let index = req.seed.unwrap_or(0).max(0) as u32;
        let key = (fingerprint, req.temperature.to_bits(), index);
        let text = match self.entries.read().unwrap().get(&key) {
            Some(text) => text.clone(),
            None => match self.fallback {
                ScriptedFallback::Echo => {
                    req.messages.last().map(|m| m.content.clone()).unwrap_or_default()
                }
                ScriptedFallback::Error => {
                    return Err(BackendError::ScriptMiss {
                        fingerprint,
                        temperature: req.temperature,
                        index,
                    })
                }
            },
        };
        let prompt_tokens: u64 = req.messages.iter().map(|m| approx_tokens(&m.content)).sum();
        Ok(GenerationResult {
            usage: Usage { prompt_tokens, completion_tokens: approx_tokens(&text) },
            text,
            backend_id: self.id.clone(),
        })
    }
}
