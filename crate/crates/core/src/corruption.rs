//! Seeded typographic noise: deletes, repeats, swaps and garbles characters
//! and words of a reference quote to produce controlled degraded copies.
//!
//! Operations run in a fixed order (word deletion, word duplication, word
//! shuffle, character deletion, duplication, transposition, glyph
//! substitution, truncation, blanking). Each operation draws from its own
//! ChaCha stream keyed by `(seed, item index, operation)`, so the output for
//! one item never depends on other items or on other specs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Instruction;
use crate::text::GLYPH_PLACEHOLDER;

#[derive(Debug, Error, PartialEq)]
pub enum CorruptionError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("rate `{name}` = {value} is outside [0, 1]")]
    InvalidRate { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionSpec {
    pub char_delete: f64,
    pub char_duplicate: f64,
    pub char_transpose: f64,
    /// Replace a character with the glyph placeholder.
    pub glyph_substitute: f64,
    pub word_delete: f64,
    pub word_duplicate: f64,
    pub word_shuffle: bool,
    /// Fraction of characters cut from the end.
    pub truncate_fraction: f64,
    pub blank: bool,
    pub seed: u64,
}

#[derive(Clone, Copy)]
#[repr(u64)]
enum Op {
    WordDelete = 1,
    WordDuplicate,
    WordShuffle,
    CharDelete,
    CharDuplicate,
    CharTranspose,
    GlyphSubstitute,
}

impl CorruptionSpec {
    /// The same rate for all four character-level operations.
    pub fn uniform(rate: f64, seed: u64) -> Self {
        CorruptionSpec {
            char_delete: rate,
            char_duplicate: rate,
            char_transpose: rate,
            glyph_substitute: rate,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), CorruptionError> {
        let rates = [
            ("char_delete", self.char_delete),
            ("char_duplicate", self.char_duplicate),
            ("char_transpose", self.char_transpose),
            ("glyph_substitute", self.glyph_substitute),
            ("word_delete", self.word_delete),
            ("word_duplicate", self.word_duplicate),
            ("truncate_fraction", self.truncate_fraction),
        ];
        for (name, value) in rates {
            if !(0.0..=1.0).contains(&value) {
                return Err(CorruptionError::InvalidRate { name, value });
            }
        }
        Ok(())
    }

    fn rng(&self, item: u64, op: Op) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(item.wrapping_mul(16).wrapping_add(op as u64));
        rng
    }
}

fn keep_filter<T: Clone>(items: &[T], rate: f64, rng: &mut ChaCha8Rng) -> Vec<T> {
    items
        .iter()
        .filter(|_| !rng.random_bool(rate.clamp(0.0, 1.0)))
        .cloned()
        .collect()
}

fn duplicate<T: Clone>(items: &[T], rate: f64, rng: &mut ChaCha8Rng) -> Vec<T> {
    let mut out = Vec::with_capacity(items.len());
    for it in items {
        out.push(it.clone());
        if rng.random_bool(rate.clamp(0.0, 1.0)) {
            out.push(it.clone());
        }
    }
    out
}

/// Corrupts `text` as item 0. Equivalent to `corrupt_item(text, spec, 0)`.
pub fn corrupt_text(text: &str, spec: &CorruptionSpec) -> String {
    corrupt_item(text, spec, 0)
}

/// Corrupts `text` using the draws reserved for item `item`.
pub fn corrupt_item(text: &str, spec: &CorruptionSpec, item: u64) -> String {
    if spec.blank {
        return String::new();
    }

    let mut text = text.to_owned();

    if spec.word_delete > 0.0 || spec.word_duplicate > 0.0 || spec.word_shuffle {
        let mut words: Vec<&str> = text.split_whitespace().collect();
        if spec.word_delete > 0.0 {
            words = keep_filter(&words, spec.word_delete, &mut spec.rng(item, Op::WordDelete));
        }
        if spec.word_duplicate > 0.0 {
            words = duplicate(&words, spec.word_duplicate, &mut spec.rng(item, Op::WordDuplicate));
        }
        if spec.word_shuffle {
            words.shuffle(&mut spec.rng(item, Op::WordShuffle));
        }
        text = words.join(" ");
    }

    let mut chars: Vec<char> = text.chars().collect();
    if spec.char_delete > 0.0 {
        chars = keep_filter(&chars, spec.char_delete, &mut spec.rng(item, Op::CharDelete));
    }
    if spec.char_duplicate > 0.0 {
        chars = duplicate(&chars, spec.char_duplicate, &mut spec.rng(item, Op::CharDuplicate));
    }
    if spec.char_transpose > 0.0 {
        let mut rng = spec.rng(item, Op::CharTranspose);
        let mut i = 0;
        while i + 1 < chars.len() {
            if rng.random_bool(spec.char_transpose.clamp(0.0, 1.0)) {
                chars.swap(i, i + 1);
                i += 2;
            } else {
                i += 1;
            }
        }
    }
    if spec.glyph_substitute > 0.0 {
        let mut rng = spec.rng(item, Op::GlyphSubstitute);
        for c in chars.iter_mut() {
            if rng.random_bool(spec.glyph_substitute.clamp(0.0, 1.0)) {
                *c = GLYPH_PLACEHOLDER;
            }
        }
    }
    if spec.truncate_fraction > 0.0 {
        let keep = (chars.len() as f64 * (1.0 - spec.truncate_fraction.clamp(0.0, 1.0))).round() as usize;
        chars.truncate(keep);
    }
    chars.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptedPair {
    pub instruction_id: String,
    pub spec_index: usize,
    pub quote: String,
    pub corrupted: String,
}

/// One pair per (instruction, spec), instruction-major.
pub fn generate_pairs(
    corpus: &[Instruction],
    specs: &[CorruptionSpec],
) -> Result<Vec<CorruptedPair>, CorruptionError> {
    if corpus.is_empty() {
        return Err(CorruptionError::EmptyCorpus);
    }
    for s in specs {
        s.validate()?;
    }
    Ok(corpus
        .iter()
        .enumerate()
        .flat_map(|(item, row)| {
            specs.iter().enumerate().map(move |(spec_index, spec)| CorruptedPair {
                instruction_id: row.id.clone(),
                spec_index,
                quote: row.quote.clone(),
                corrupted: corrupt_item(&row.quote, spec, item as u64),
            })
        })
        .collect())
}
