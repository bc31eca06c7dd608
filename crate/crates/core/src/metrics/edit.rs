use super::{MetricKind, MetricScore};
use crate::text::NormalizedText;

/// Levenshtein distance over Unicode scalar values (unit insert, delete and
/// substitute costs).
pub fn levenshtein(a: &[char], b: &[char]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance divided by the mean length of the two strings, clamped to
/// `[0, 1]`. Two empty strings are at distance 0.
pub fn ned_distance(a: &NormalizedText, b: &NormalizedText) -> f64 {
    let (a, b) = (a.chars(), b.chars());
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let d = levenshtein(&a, &b) as f64;
    (2.0 * d / (a.len() + b.len()) as f64).min(1.0)
}

/// `1 - ned_distance`.
pub fn ned(a: &NormalizedText, b: &NormalizedText) -> MetricScore {
    MetricScore::new(MetricKind::Ned, 1.0 - ned_distance(a, b))
}
