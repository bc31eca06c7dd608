use super::{MetricKind, MetricScore};
use crate::text::NormalizedText;

/// Length of the longest common (not necessarily contiguous) subsequence.
pub fn lcs_len(a: &[char], b: &[char]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut row = vec![0usize; b.len() + 1];
    for ca in a {
        let mut diag = 0;
        for (j, cb) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if ca == cb { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// LCS length divided by the length of the longer string.
pub fn nlcs(a: &NormalizedText, b: &NormalizedText) -> MetricScore {
    let (a, b) = (a.chars(), b.chars());
    let longest = a.len().max(b.len());
    let value = if longest == 0 {
        1.0
    } else {
        lcs_len(&a, &b) as f64 / longest as f64
    };
    MetricScore::new(MetricKind::Nlcs, value)
}
