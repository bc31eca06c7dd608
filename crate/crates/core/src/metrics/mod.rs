//! String similarity metrics between an instructed quote and extracted text.
//!
//! Every score is reported in similarity orientation: `1.0` means the two
//! normalized strings agree perfectly and `0.0` means they share nothing.
//! Two empty strings agree perfectly; an empty string against a nonempty one
//! scores `0.0` for every metric.

mod align;
mod bleu;
mod edit;
mod lcs;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use align::{smith_waterman, smith_waterman_score};
pub use bleu::{bleu1, char_bleu};
pub use edit::{levenshtein, ned, ned_distance};
pub use lcs::{lcs_len, nlcs};

use crate::text::NormalizedText;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("invalid alignment parameters: {0}")]
    InvalidParams(String),
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MetricKind {
    Ned,
    Bleu1,
    CharBleu,
    Nlcs,
    SmithWaterman,
    Ensemble,
}

impl MetricKind {
    pub const ALL: [MetricKind; 6] = [
        MetricKind::Ned,
        MetricKind::Bleu1,
        MetricKind::CharBleu,
        MetricKind::Nlcs,
        MetricKind::SmithWaterman,
        MetricKind::Ensemble,
    ];

    /// The metrics mean-pooled into [`MetricKind::Ensemble`].
    pub const ENSEMBLE_COMPONENTS: [MetricKind; 3] =
        [MetricKind::Ned, MetricKind::SmithWaterman, MetricKind::Nlcs];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Ned => "NED",
            MetricKind::Bleu1 => "BLEU1",
            MetricKind::CharBleu => "CHAR_BLEU",
            MetricKind::Nlcs => "NLCS",
            MetricKind::SmithWaterman => "SMITH_WATERMAN",
            MetricKind::Ensemble => "ENSEMBLE",
        }
    }

    /// Column header used in rendered scoreboards.
    pub fn label(self) -> &'static str {
        match self {
            MetricKind::Ned => "NED",
            MetricKind::Bleu1 => "BLEU",
            MetricKind::CharBleu => "BLEU-char",
            MetricKind::Nlcs => "NLCS",
            MetricKind::SmithWaterman => "Smith Waterman",
            MetricKind::Ensemble => "TypeScore",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| MetricsError::UnknownMetric(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub kind: MetricKind,
    pub value: f64,
}

impl MetricScore {
    pub(crate) fn new(kind: MetricKind, value: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&value), "{kind} out of range: {value}");
        MetricScore { kind, value }
    }
}

/// Scoring scheme for local alignment with a linear gap penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentParams {
    #[serde(rename = "match")]
    match_score: i32,
    mismatch: i32,
    gap: i32,
}

impl AlignmentParams {
    pub fn new(match_score: i32, mismatch: i32, gap: i32) -> Result<Self, MetricsError> {
        if match_score <= 0 {
            return Err(MetricsError::InvalidParams(format!(
                "match must be positive, got {match_score}"
            )));
        }
        if mismatch > 0 {
            return Err(MetricsError::InvalidParams(format!(
                "mismatch must be <= 0, got {mismatch}"
            )));
        }
        if gap > 0 {
            return Err(MetricsError::InvalidParams(format!("gap must be <= 0, got {gap}")));
        }
        Ok(AlignmentParams {
            match_score,
            mismatch,
            gap,
        })
    }

    pub fn match_score(&self) -> i32 {
        self.match_score
    }

    pub fn mismatch(&self) -> i32 {
        self.mismatch
    }

    pub fn gap(&self) -> i32 {
        self.gap
    }
}

impl Default for AlignmentParams {
    /// +2 match, -1 mismatch, -1 per gap position.
    fn default() -> Self {
        AlignmentParams {
            match_score: 2,
            mismatch: -1,
            gap: -1,
        }
    }
}

/// Mean of NED similarity, Smith-Waterman similarity and NLCS.
pub fn ensemble(a: &NormalizedText, b: &NormalizedText, params: &AlignmentParams) -> MetricScore {
    let parts = [
        ned(a, b).value,
        smith_waterman(a, b, params).value,
        nlcs(a, b).value,
    ];
    MetricScore::new(MetricKind::Ensemble, parts.iter().sum::<f64>() / parts.len() as f64)
}

/// Computes one metric. `a` plays the reference and `b` the candidate for the
/// two (asymmetric) BLEU variants.
pub fn score(
    kind: MetricKind,
    reference: &NormalizedText,
    candidate: &NormalizedText,
    params: &AlignmentParams,
) -> MetricScore {
    match kind {
        MetricKind::Ned => ned(reference, candidate),
        MetricKind::Bleu1 => bleu1(candidate, reference),
        MetricKind::CharBleu => char_bleu(candidate, reference),
        MetricKind::Nlcs => nlcs(reference, candidate),
        MetricKind::SmithWaterman => smith_waterman(reference, candidate, params),
        MetricKind::Ensemble => ensemble(reference, candidate, params),
    }
}

/// All six metrics for one (reference, candidate) pair, in [`MetricKind::ALL`] order.
pub fn score_all(
    reference: &NormalizedText,
    candidate: &NormalizedText,
    params: &AlignmentParams,
) -> Vec<MetricScore> {
    MetricKind::ALL
        .into_iter()
        .map(|k| score(k, reference, candidate, params))
        .collect()
}
