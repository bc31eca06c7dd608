//! Text normalization shared by every metric and extraction backend.

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Placeholder emitted by extraction backends for glyphs that do not read as
/// any character.
pub const GLYPH_PLACEHOLDER: char = '@';

/// A string together with its normalized form.
///
/// The normalized form is NFC-composed, has every whitespace run collapsed to
/// a single ASCII space, is trimmed, and is lowercased when case folding is
/// requested. Normalizing `normalized` again yields the same string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedText {
    pub raw: String,
    pub normalized: String,
    pub glyph_count: usize,
}

impl NormalizedText {
    pub fn new(raw: &str, case_fold: bool) -> Self {
        normalize_text(raw, case_fold)
    }

    pub fn as_str(&self) -> &str {
        &self.normalized
    }

    pub fn is_empty(&self) -> bool {
        self.normalized.is_empty()
    }

    /// Length in Unicode scalar values.
    pub fn char_len(&self) -> usize {
        self.normalized.chars().count()
    }

    pub fn chars(&self) -> Vec<char> {
        self.normalized.chars().collect()
    }

    /// Space-separated tokens of the normalized string.
    pub fn words(&self) -> Vec<&str> {
        if self.normalized.is_empty() {
            Vec::new()
        } else {
            self.normalized.split(' ').collect()
        }
    }
}

pub fn normalize_text(raw: &str, case_fold: bool) -> NormalizedText {
    let folded: String = if case_fold {
        raw.to_lowercase()
    } else {
        raw.to_owned()
    };
    let composed: String = folded.nfc().collect();

    let mut normalized = String::with_capacity(composed.len());
    for word in composed.split_whitespace() {
        if !normalized.is_empty() {
            normalized.push(' ');
        }
        normalized.push_str(word);
    }

    let glyph_count = normalized.chars().filter(|&c| c == GLYPH_PLACEHOLDER).count();
    NormalizedText {
        raw: raw.to_owned(),
        normalized,
        glyph_count,
    }
}
