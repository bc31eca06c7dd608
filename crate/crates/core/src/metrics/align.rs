use super::{AlignmentParams, MetricKind, MetricScore};
use crate::text::NormalizedText;

/// Best local alignment score with a linear gap penalty.
pub fn smith_waterman_score(a: &[char], b: &[char], params: &AlignmentParams) -> i64 {
    let (m, x, g) = (
        i64::from(params.match_score()),
        i64::from(params.mismatch()),
        i64::from(params.gap()),
    );
    let mut prev = vec![0i64; b.len() + 1];
    let mut cur = vec![0i64; b.len() + 1];
    let mut best = 0;
    for ca in a {
        cur[0] = 0;
        for (j, cb) in b.iter().enumerate() {
            let diag = prev[j] + if ca == cb { m } else { x };
            let cell = diag.max(prev[j + 1] + g).max(cur[j] + g).max(0);
            cur[j + 1] = cell;
            best = best.max(cell);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

/// Local alignment score divided by the best score achievable, which is
/// `match * min(|a|, |b|)`.
pub fn smith_waterman(a: &NormalizedText, b: &NormalizedText, params: &AlignmentParams) -> MetricScore {
    let (a, b) = (a.chars(), b.chars());
    let value = match (a.is_empty(), b.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        (false, false) => {
            let raw = smith_waterman_score(&a, &b, params) as f64;
            let ceiling = f64::from(params.match_score()) * a.len().min(b.len()) as f64;
            (raw / ceiling).clamp(0.0, 1.0)
        }
    };
    MetricScore::new(MetricKind::SmithWaterman, value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::normalize_text;

    fn c(s: &str) -> Vec<char> {
        s.chars().collect()
    }

    #[test]
    fn textbook_example() {
        let p = AlignmentParams::new(3, -3, -2).unwrap();
        assert_eq!(smith_waterman_score(&c("GGTTGACTA"), &c("TGTTACGG"), &p), 13);
    }

    #[test]
    fn identity_and_disjoint() {
        let p = AlignmentParams::default();
        assert_eq!(smith_waterman_score(&c("grand opening"), &c("grand opening"), &p), 26);
        let t = normalize_text("grand opening", true);
        assert_eq!(smith_waterman(&t, &t, &p).value, 1.0);
        let v = smith_waterman(&normalize_text("abc", true), &normalize_text("xyz", true), &p);
        assert_eq!(v.value, 0.0);
    }

    #[test]
    fn kitten_sitting_default() {
        let p = AlignmentParams::default();
        assert_eq!(smith_waterman_score(&c("kitten"), &c("sitting"), &p), 7);
    }
}
