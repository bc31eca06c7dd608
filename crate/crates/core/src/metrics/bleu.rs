//! Unigram BLEU over words and over characters.

use std::collections::HashMap;
use std::hash::Hash;

use super::{MetricKind, MetricScore};
use crate::text::NormalizedText;

/// Clipped unigram precision times the brevity penalty. No smoothing.
fn unigram_bleu<T: Eq + Hash>(candidate: &[T], reference: &[T]) -> f64 {
    match (candidate.is_empty(), reference.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        (false, false) => {}
    }

    let mut ref_counts: HashMap<&T, usize> = HashMap::new();
    for tok in reference {
        *ref_counts.entry(tok).or_default() += 1;
    }
    let mut cand_counts: HashMap<&T, usize> = HashMap::new();
    for tok in candidate {
        *cand_counts.entry(tok).or_default() += 1;
    }
    let clipped: usize = cand_counts
        .iter()
        .map(|(tok, &n)| n.min(ref_counts.get(tok).copied().unwrap_or(0)))
        .sum();

    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let precision = clipped as f64 / c;
    let brevity = if c >= r { 1.0 } else { (1.0 - r / c).exp() };
    precision * brevity
}

/// BLEU-1 on space-separated words.
pub fn bleu1(candidate: &NormalizedText, reference: &NormalizedText) -> MetricScore {
    MetricScore::new(
        MetricKind::Bleu1,
        unigram_bleu(&candidate.words(), &reference.words()),
    )
}

/// BLEU-1 where every character, spaces included, is a token.
pub fn char_bleu(candidate: &NormalizedText, reference: &NormalizedText) -> MetricScore {
    MetricScore::new(
        MetricKind::CharBleu,
        unigram_bleu(&candidate.chars(), &reference.chars()),
    )
}
