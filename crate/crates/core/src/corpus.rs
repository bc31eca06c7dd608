//! Instruction datasets: prompts that ask an image model to render a quoted
//! piece of text.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::chat::{BackendError, ChatBackend, ChatMessage};
use crate::jsonl::{self, JsonlError};
use crate::prompts;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Io(#[from] JsonlError),
    #[error("invalid record{}: {message}", line.map(|l| format!(" on line {l}")).unwrap_or_default())]
    Validation { line: Option<usize>, message: String },
    #[error("no balanced double-quoted span in instruction")]
    MissingQuote,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("iterations must be at least 1")]
    NoIterations,
    #[error("quote must be nonempty and free of double quotes, got {0:?}")]
    InvalidQuote(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// One dataset row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub id: String,
    /// Full prompt handed to the image model.
    pub instruction: String,
    /// Text the image must contain, verbatim.
    pub quote: String,
    pub category: String,
    pub style: String,
    /// Unrecognized fields, kept so a load/save cycle loses nothing.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Instruction {
    pub fn new(
        id: impl Into<String>,
        instruction: impl Into<String>,
        quote: impl Into<String>,
        category: impl Into<String>,
        style: impl Into<String>,
    ) -> Self {
        Instruction {
            id: id.into(),
            instruction: instruction.into(),
            quote: quote.into(),
            category: category.into(),
            style: style.into(),
            extra: Map::new(),
        }
    }

    /// The quote must appear inside the instruction wrapped in double quotes.
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.quote.is_empty() {
            return Err(format!("instruction `{}` has an empty quote", self.id));
        }
        if !self.instruction.contains(&format!("\"{}\"", self.quote)) {
            return Err(format!(
                "instruction `{}` does not contain its quote {:?} between double quotes",
                self.id, self.quote
            ));
        }
        Ok(())
    }
}

fn validate_all(corpus: &[Instruction]) -> Result<(), CorpusError> {
    let mut seen = HashSet::new();
    for (i, row) in corpus.iter().enumerate() {
        row.validate().map_err(|message| CorpusError::Validation {
            line: Some(i + 1),
            message,
        })?;
        if !seen.insert(row.id.as_str()) {
            return Err(CorpusError::Validation {
                line: Some(i + 1),
                message: format!("duplicate id `{}`", row.id),
            });
        }
    }
    Ok(())
}

/// Parses and validates a line-delimited dataset held in memory.
pub fn parse_dataset(input: &str) -> Result<Vec<Instruction>, CorpusError> {
    let corpus: Vec<Instruction> = jsonl::parse_str(input)?;
    validate_all(&corpus)?;
    Ok(corpus)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Instruction>, CorpusError> {
    let corpus: Vec<Instruction> = jsonl::read_path(path)?;
    validate_all(&corpus)?;
    Ok(corpus)
}

pub fn save_dataset(path: &Path, corpus: &[Instruction]) -> Result<(), CorpusError> {
    validate_all(corpus)?;
    Ok(jsonl::write_path(path, corpus)?)
}

/// The bundled 118-row synthetic corpus. It follows the schema and category
/// mix of the original instruction set but is not that dataset.
pub fn sample_corpus() -> Vec<Instruction> {
    parse_dataset(include_str!("../assets/sample_corpus.jsonl")).expect("bundled corpus is valid")
}

/// The longest span enclosed by a pair of double quotes. Quotes pair up left
/// to right; on equal lengths the earlier span wins.
pub fn extract_quote(instruction_text: &str) -> Result<String, CorpusError> {
    let marks: Vec<usize> = instruction_text.match_indices('"').map(|(i, _)| i).collect();
    marks
        .chunks_exact(2)
        .map(|p| &instruction_text[p[0] + 1..p[1]])
        .fold(None::<&str>, |best, span| match best {
            Some(b) if b.chars().count() >= span.chars().count() => Some(b),
            _ => Some(span),
        })
        .map(str::to_owned)
        .ok_or(CorpusError::MissingQuote)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_instructions: usize,
    pub avg_words_instruction: f64,
    pub avg_words_quote: f64,
    pub category_histogram: BTreeMap<String, usize>,
}

pub fn dataset_stats(corpus: &[Instruction]) -> Result<CorpusStats, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let n = corpus.len() as f64;
    let words = |s: &str| s.split_whitespace().count() as f64;
    let mut category_histogram = BTreeMap::new();
    for row in corpus {
        *category_histogram.entry(row.category.clone()).or_insert(0) += 1;
    }
    Ok(CorpusStats {
        n_instructions: corpus.len(),
        avg_words_instruction: corpus.iter().map(|r| words(&r.instruction)).sum::<f64>() / n,
        avg_words_quote: corpus.iter().map(|r| words(&r.quote)).sum::<f64>() / n,
        category_histogram,
    })
}

/// Raw material for one enriched instruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionSeed {
    pub id: String,
    pub seed_text: String,
    pub quote: String,
    #[serde(default)]
    pub category: String,
    #[serde(default)]
    pub style: String,
}

/// Puts `quote` between double quotes inside `text`, after removing every
/// other double quote. The first verbatim occurrence is wrapped; otherwise
/// the quote is appended.
fn embed_quote(text: &str, quote: &str) -> String {
    let stripped: String = text.replace('"', "");
    let stripped = stripped.trim();
    match stripped.find(quote) {
        Some(at) => format!(
            "{}\"{}\"{}",
            &stripped[..at],
            quote,
            &stripped[at + quote.len()..]
        ),
        None if stripped.is_empty() => format!("\"{quote}\""),
        None => {
            let sep = if stripped.ends_with(['.', '!', '?']) { " " } else { ". " };
            format!("{stripped}{sep}The text reads \"{quote}\".")
        }
    }
}

/// Runs `iterations` enrichment rounds through `chat`, feeding each reply back
/// as the next draft. Whatever the backend returns, the result carries the
/// quote verbatim between double quotes and is the only quoted span.
pub async fn synth_instruction(
    seed: &InstructionSeed,
    chat: &dyn ChatBackend,
    iterations: usize,
) -> Result<Instruction, CorpusError> {
    if iterations == 0 {
        return Err(CorpusError::NoIterations);
    }
    if seed.quote.trim().is_empty() || seed.quote.contains('"') {
        return Err(CorpusError::InvalidQuote(seed.quote.clone()));
    }

    let mut draft = embed_quote(&seed.seed_text, &seed.quote);
    for round in 1..=iterations {
        let messages = vec![
            ChatMessage::system(prompts::enrich_system_prompt(round, iterations, &seed.quote)),
            ChatMessage::user(draft.clone()),
        ];
        let reply = chat.complete(messages).await?;
        draft = embed_quote(&reply.content, &seed.quote);
    }

    let mut out = Instruction::new(&seed.id, draft, &seed.quote, &seed.category, &seed.style);
    out.extra.insert(
        "prompt_version".into(),
        Value::String(prompts::ENRICH_VERSION.into()),
    );
    debug_assert!(out.validate().is_ok());
    Ok(out)
}
