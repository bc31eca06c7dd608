//! How well does a metric agree with people? Pairwise human preferences,
//! their aggregation across judges, alignment accuracy, bootstrap error bars
//! and correlation helpers.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, JsonlError};
use crate::pipeline::MetricReport;
use crate::stats;

#[derive(Debug, Error)]
pub enum MetaEvalError {
    #[error(transparent)]
    Io(#[from] JsonlError),
    #[error("need at least 3 judgments, got {0}")]
    TooFewJudgments(usize),
    #[error("judgment by `{rater}` on `{pair}` does not answer {question}")]
    IncompleteJudgment { rater: String, pair: String, question: Question },
    #[error("no score for model `{model_id}` image `{image_id}`")]
    MissingScore { model_id: String, image_id: String },
    #[error("every pair was excluded (human tie or unresolved)")]
    NoUsablePairs,
    #[error("input is empty")]
    EmptyInput,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("duplicate score for model `{model_id}` image `{image_id}` metric `{metric}`")]
    DuplicateKey { model_id: String, image_id: String, metric: String },
    #[error("pair `{0}` compares a model with itself")]
    SameModel(String),
    #[error("resamples must be at least 1")]
    NoResamples,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Question {
    TextFidelity,
    StyleFidelity,
    Overall,
}

impl Question {
    pub const ALL: [Question; 3] = [Question::TextFidelity, Question::StyleFidelity, Question::Overall];

    pub fn label(self) -> &'static str {
        match self {
            Question::TextFidelity => "Text Fidelity",
            Question::StyleFidelity => "Style Fidelity",
            Question::Overall => "Overall Preference",
        }
    }
}

impl fmt::Display for Question {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Question::TextFidelity => "text_fidelity",
            Question::StyleFidelity => "style_fidelity",
            Question::Overall => "overall",
        })
    }
}

/// One judge's answer on the 3-point scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Answer {
    Left,
    Right,
    Tie,
}

impl Answer {
    pub fn flipped(self) -> Answer {
        match self {
            Answer::Left => Answer::Right,
            Answer::Right => Answer::Left,
            Answer::Tie => Answer::Tie,
        }
    }
}

/// Aggregated label of a pair on one question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Label {
    Left,
    Right,
    Tie,
    Unresolved,
}

impl From<Answer> for Label {
    fn from(a: Answer) -> Label {
        match a {
            Answer::Left => Label::Left,
            Answer::Right => Label::Right,
            Answer::Tie => Label::Tie,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PairStatus {
    Open,
    Resolved,
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Side {
    pub model_id: String,
    pub image_id: String,
}

/// A pairwise comparison with its aggregated human labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub pair_id: String,
    pub instruction_id: String,
    pub left: Side,
    pub right: Side,
    #[serde(default)]
    pub human_label: BTreeMap<Question, Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<PairStatus>,
    /// Number of judgments collected; more than 3 means extra judges were needed.
    #[serde(default)]
    pub judgments: usize,
}

impl PreferencePair {
    pub fn label(&self, q: Question) -> Label {
        self.human_label.get(&q).copied().unwrap_or(Label::Unresolved)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub pair_id: String,
    pub rater_id: String,
    pub answers: BTreeMap<Question, Answer>,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

/// State of one question's vote after the judgments so far.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Decided(Label),
    /// No agreement yet and fewer than five votes: ask another judge.
    Pending,
}

pub const MIN_JUDGES: usize = 3;
pub const MAX_JUDGES: usize = 5;

/// Applies the stopping rule to votes in arrival order. With three votes a
/// two-vote majority wins; at four and five votes an answer needs at least
/// 60% of the votes. No winner at five votes is [`Label::Unresolved`]. Votes
/// past the fifth are ignored.
pub fn aggregate_votes(votes: &[Answer]) -> Result<Aggregation, MetaEvalError> {
    if votes.len() < MIN_JUDGES {
        return Err(MetaEvalError::TooFewJudgments(votes.len()));
    }
    for k in MIN_JUDGES..=votes.len().min(MAX_JUDGES) {
        let window = &votes[..k];
        for candidate in [Answer::Left, Answer::Right, Answer::Tie] {
            let count = window.iter().filter(|&&v| v == candidate).count();
            let wins = if k == MIN_JUDGES {
                count >= 2
            } else {
                // count / k >= 0.6
                5 * count >= 3 * k
            };
            if wins {
                return Ok(Aggregation::Decided(candidate.into()));
            }
        }
    }
    if votes.len() >= MAX_JUDGES {
        Ok(Aggregation::Decided(Label::Unresolved))
    } else {
        Ok(Aggregation::Pending)
    }
}

/// Per-question aggregation of one pair's judgments (in arrival order).
pub fn aggregate_judgments(judgments: &[Judgment]) -> Result<BTreeMap<Question, Aggregation>, MetaEvalError> {
    if judgments.len() < MIN_JUDGES {
        return Err(MetaEvalError::TooFewJudgments(judgments.len()));
    }
    Question::ALL
        .into_iter()
        .map(|q| {
            let votes = judgments
                .iter()
                .map(|j| {
                    j.answers.get(&q).copied().ok_or_else(|| MetaEvalError::IncompleteJudgment {
                        rater: j.rater_id.clone(),
                        pair: j.pair_id.clone(),
                        question: q,
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok((q, aggregate_votes(&votes)?))
        })
        .collect()
}

/// Metric value per `(model_id, image_id)`.
pub type ScoreMap = HashMap<(String, String), f64>;

/// 1 when the higher-scored side is the side people preferred, 0.5 when the
/// metric scores both sides identically, 0 otherwise.
pub fn agreement(left_score: f64, right_score: f64, human: Answer) -> f64 {
    let metric = if left_score > right_score {
        Answer::Left
    } else if right_score > left_score {
        Answer::Right
    } else {
        return 0.5;
    };
    if metric == human {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions { resamples: 1000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentAccuracy {
    /// Mean agreement over all retained pairs.
    pub accuracy: f64,
    /// Bootstrap standard error of `accuracy`.
    pub sem: f64,
    pub n_pairs: usize,
    pub n_excluded: usize,
    /// Mean agreement per unordered model pair, keyed `"a vs b"` (sorted).
    pub per_model_pair: BTreeMap<String, f64>,
    /// Unweighted mean of `per_model_pair`.
    pub model_pair_mean: f64,
}

/// Agreement of a metric with the human labels on `question`. Pairs labelled
/// TIE or UNRESOLVED are excluded.
pub fn alignment_accuracy(
    pairs: &[PreferencePair],
    scores: &ScoreMap,
    question: Question,
    boot: &BootstrapOptions,
) -> Result<AlignmentAccuracy, MetaEvalError> {
    let lookup = |side: &Side| {
        scores
            .get(&(side.model_id.clone(), side.image_id.clone()))
            .copied()
            .ok_or_else(|| MetaEvalError::MissingScore {
                model_id: side.model_id.clone(),
                image_id: side.image_id.clone(),
            })
    };

    let mut values = Vec::new();
    let mut by_model_pair: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut excluded = 0;
    for p in pairs {
        let human = match p.label(question) {
            Label::Left => Answer::Left,
            Label::Right => Answer::Right,
            Label::Tie | Label::Unresolved => {
                excluded += 1;
                continue;
            }
        };
        let a = agreement(lookup(&p.left)?, lookup(&p.right)?, human);
        values.push(a);
        let mut models = [p.left.model_id.as_str(), p.right.model_id.as_str()];
        models.sort_unstable();
        by_model_pair
            .entry(format!("{} vs {}", models[0], models[1]))
            .or_default()
            .push(a);
    }
    if values.is_empty() {
        return Err(MetaEvalError::NoUsablePairs);
    }

    let per_model_pair: BTreeMap<String, f64> = by_model_pair
        .into_iter()
        .map(|(k, v)| (k, stats::mean(&v)))
        .collect();
    let model_pair_mean = per_model_pair.values().sum::<f64>() / per_model_pair.len() as f64;
    Ok(AlignmentAccuracy {
        accuracy: stats::mean(&values),
        sem: bootstrap_sem(&values, boot.resamples, boot.seed)?,
        n_pairs: values.len(),
        n_excluded: excluded,
        per_model_pair,
        model_pair_mean,
    })
}

/// Standard deviation of the means of `resamples` bootstrap resamples.
/// Resample `i` draws from its own stream derived from `(seed, i)`, so the
/// result is independent of scheduling.
pub fn bootstrap_sem(values: &[f64], resamples: usize, seed: u64) -> Result<f64, MetaEvalError> {
    if values.is_empty() {
        return Err(MetaEvalError::EmptyInput);
    }
    if resamples == 0 {
        return Err(MetaEvalError::NoResamples);
    }
    let n = values.len();
    let means: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64
        })
        .collect();
    // identical resample means (constant input) must give exactly 0, not rounding noise
    if resamples < 2 || means.iter().all(|&m| m == means[0]) {
        return Ok(0.0);
    }
    Ok(stats::sample_sd(&means, stats::mean(&means)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    /// One of the inputs had zero variance; `r` is reported as 0.
    pub degenerate: bool,
}

/// Product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation, MetaEvalError> {
    if x.len() != y.len() {
        return Err(MetaEvalError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetaEvalError::TooFewPoints(x.len()));
    }
    let (mx, my) = (stats::mean(x), stats::mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Correlation { r: 0.0, degenerate: true });
    }
    Ok(Correlation {
        r: (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// 1-based ranks; tied values share their average rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end) as f64 / 2.0 + 1.0;
        for &i in &order[start..=end] {
            out[i] = rank;
        }
        start = end + 1;
    }
    out
}

/// Rank correlation: Pearson on [`ranks`].
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation, MetaEvalError> {
    if x.len() != y.len() {
        return Err(MetaEvalError::LengthMismatch(x.len(), y.len()));
    }
    pearson(&ranks(x), &ranks(y))
}

/// One line of an external score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalScore {
    pub model_id: String,
    pub image_id: String,
    pub metric_name: String,
    pub value: f64,
}

/// Score maps keyed by metric name.
pub type ScoreSets = BTreeMap<String, ScoreMap>;

pub fn parse_external_scores(input: &str) -> Result<ScoreSets, MetaEvalError> {
    let records: Vec<ExternalScore> = jsonl::parse_str(input)?;
    let mut sets = ScoreSets::new();
    for r in records {
        let map = sets.entry(r.metric_name.clone()).or_default();
        if map.insert((r.model_id.clone(), r.image_id.clone()), r.value).is_some() {
            return Err(MetaEvalError::DuplicateKey {
                model_id: r.model_id,
                image_id: r.image_id,
                metric: r.metric_name,
            });
        }
    }
    Ok(sets)
}

/// Loads scores computed outside this crate (CLIPScore, for instance).
pub fn ingest_external_scores(path: &Path) -> Result<ScoreSets, MetaEvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| JsonlError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_external_scores(&text)
}

/// Turns pipeline reports into per-metric score maps. Later reports override
/// earlier ones on the same `(model, image)`.
pub fn scores_from_reports(reports: &[MetricReport]) -> ScoreSets {
    let mut sets = ScoreSets::new();
    for report in reports {
        for row in &report.rows {
            for (kind, value) in &row.scores {
                sets.entry(kind.name().to_owned())
                    .or_default()
                    .insert((report.model_id.clone(), row.image_id.clone()), *value);
            }
        }
    }
    sets
}

/// Reads an annotation export.
pub fn read_annotations(path: &Path) -> Result<Vec<PreferencePair>, MetaEvalError> {
    let pairs: Vec<PreferencePair> = jsonl::read_path(path)?;
    for p in &pairs {
        if p.left.model_id == p.right.model_id {
            return Err(MetaEvalError::SameModel(p.pair_id.clone()));
        }
    }
    Ok(pairs)
}

/// Metric × question alignment accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaEvalReport {
    pub bootstrap: BootstrapOptions,
    /// `None` where no pair was usable for that question.
    pub results: BTreeMap<String, BTreeMap<Question, Option<AlignmentAccuracy>>>,
}

pub fn meta_evaluate(
    pairs: &[PreferencePair],
    score_sets: &ScoreSets,
    boot: &BootstrapOptions,
) -> Result<MetaEvalReport, MetaEvalError> {
    let mut results = BTreeMap::new();
    for (metric, scores) in score_sets {
        let mut per_q = BTreeMap::new();
        for q in Question::ALL {
            let acc = match alignment_accuracy(pairs, scores, q, boot) {
                Ok(a) => Some(a),
                Err(MetaEvalError::NoUsablePairs) => None,
                Err(e) => return Err(e),
            };
            per_q.insert(q, acc);
        }
        results.insert(metric.clone(), per_q);
    }
    Ok(MetaEvalReport {
        bootstrap: *boot,
        results,
    })
}

impl MetaEvalReport {
    pub fn render_table(&self) -> String {
        let mut out = String::from("| Metric |");
        for q in Question::ALL {
            let _ = write!(out, " {} |", q.label());
        }
        out.push_str("\n|---|---|---|---|\n");
        for (metric, per_q) in &self.results {
            let _ = write!(out, "| {metric} |");
            for q in Question::ALL {
                match per_q.get(&q).and_then(|a| a.as_ref()) {
                    Some(a) => {
                        let _ = write!(out, " {:.1}% ± {:.1}% |", 100.0 * a.accuracy, 100.0 * a.sem);
                    }
                    None => out.push_str(" n/a |"),
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Answer::{Left as L, Right as R, Tie as T};

    #[test]
    fn vote_fixtures() {
        assert_eq!(aggregate_votes(&[L, L, R]).unwrap(), Aggregation::Decided(Label::Left));
        assert_eq!(aggregate_votes(&[L, R, T, L, L]).unwrap(), Aggregation::Decided(Label::Left));
        assert_eq!(aggregate_votes(&[L, R, T, L, R]).unwrap(), Aggregation::Decided(Label::Unresolved));
        assert_eq!(aggregate_votes(&[L, R, T]).unwrap(), Aggregation::Pending);
        assert_eq!(aggregate_votes(&[L, R, T, L]).unwrap(), Aggregation::Pending);
        assert_eq!(aggregate_votes(&[T, T, L]).unwrap(), Aggregation::Decided(Label::Tie));
        assert!(matches!(aggregate_votes(&[L, L]), Err(MetaEvalError::TooFewJudgments(2))));
    }

    #[test]
    fn votes_after_fifth_are_ignored() {
        assert_eq!(
            aggregate_votes(&[L, R, T, L, R, R, R]).unwrap(),
            Aggregation::Decided(Label::Unresolved)
        );
    }

    proptest! {
        #[test]
        fn first_three_votes_commute(v in prop::collection::vec(prop_oneof![Just(L), Just(R), Just(T)], 3..=5), perm in 0usize..6) {
            let orders = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let mut w = v.clone();
            for (dst, &src) in orders[perm].iter().enumerate() {
                w[dst] = v[src];
            }
            prop_assert_eq!(aggregate_votes(&v).unwrap(), aggregate_votes(&w).unwrap());
        }
    }

    fn judgment(rater: &str, a: Answer) -> Judgment {
        Judgment {
            pair_id: "p".into(),
            rater_id: rater.into(),
            answers: Question::ALL.into_iter().map(|q| (q, a)).collect(),
            timestamp: 0,
        }
    }

    #[test]
    fn judgments_per_question() {
        let mut js = vec![judgment("a", L), judgment("b", L), judgment("c", R)];
        js[2].answers.insert(Question::Overall, L);
        let agg = aggregate_judgments(&js).unwrap();
        assert_eq!(agg[&Question::TextFidelity], Aggregation::Decided(Label::Left));
        assert_eq!(agg[&Question::Overall], Aggregation::Decided(Label::Left));

        js[0].answers.remove(&Question::StyleFidelity);
        assert!(matches!(aggregate_judgments(&js), Err(MetaEvalError::IncompleteJudgment { .. })));
    }

    fn pair(id: &str, lm: &str, rm: &str, label: Label) -> PreferencePair {
        PreferencePair {
            pair_id: id.into(),
            instruction_id: "i".into(),
            left: Side { model_id: lm.into(), image_id: format!("{id}-l") },
            right: Side { model_id: rm.into(), image_id: format!("{id}-r") },
            human_label: BTreeMap::from([(Question::TextFidelity, label)]),
            status: None,
            judgments: 3,
        }
    }

    fn scores(entries: &[(&str, &str, f64)]) -> ScoreMap {
        entries
            .iter()
            .map(|(m, i, v)| ((m.to_string(), i.to_string()), *v))
            .collect()
    }

    #[test]
    fn accuracy_counts() {
        let pairs = vec![
            pair("1", "a", "b", Label::Left),
            pair("2", "a", "b", Label::Right),
            pair("3", "a", "c", Label::Left),
            pair("4", "b", "c", Label::Left),
        ];
        let s = scores(&[
            ("a", "1-l", 0.9), ("b", "1-r", 0.1),
            ("a", "2-l", 0.2), ("b", "2-r", 0.8),
            ("a", "3-l", 0.7), ("c", "3-r", 0.3),
            ("b", "4-l", 0.1), ("c", "4-r", 0.6),
        ]);
        let acc = alignment_accuracy(&pairs, &s, Question::TextFidelity, &BootstrapOptions::default()).unwrap();
        assert_eq!(acc.accuracy, 0.75);
        assert_eq!(acc.n_pairs, 4);
        assert_eq!(acc.per_model_pair["a vs b"], 1.0);
        assert_eq!(acc.per_model_pair["b vs c"], 0.0);
        assert!((acc.model_pair_mean - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn human_ties_are_excluded() {
        let pairs = vec![
            pair("1", "a", "b", Label::Left),
            pair("2", "a", "b", Label::Left),
            pair("3", "a", "b", Label::Tie),
        ];
        let s = scores(&[
            ("a", "1-l", 0.9), ("b", "1-r", 0.1),
            ("a", "2-l", 0.1), ("b", "2-r", 0.9),
            ("a", "3-l", 0.5), ("b", "3-r", 0.4),
        ]);
        let acc = alignment_accuracy(&pairs, &s, Question::TextFidelity, &BootstrapOptions::default()).unwrap();
        assert_eq!(acc.accuracy, 0.5);
        assert_eq!(acc.n_excluded, 1);

        let ties = vec![pair("3", "a", "b", Label::Tie), pair("4", "a", "b", Label::Unresolved)];
        assert!(matches!(
            alignment_accuracy(&ties, &s, Question::TextFidelity, &BootstrapOptions::default()),
            Err(MetaEvalError::NoUsablePairs)
        ));
    }

    #[test]
    fn metric_ties_and_missing_scores() {
        assert_eq!(agreement(0.4, 0.4, L), 0.5);
        let pairs = vec![pair("1", "a", "b", Label::Left)];
        let s = scores(&[("a", "1-l", 0.9)]);
        assert!(matches!(
            alignment_accuracy(&pairs, &s, Question::TextFidelity, &BootstrapOptions::default()),
            Err(MetaEvalError::MissingScore { .. })
        ));
    }

    proptest! {
        #[test]
        fn accuracy_depends_only_on_order(vals in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, any::<bool>()), 1..30)) {
            let mut pairs = Vec::new();
            let mut s = ScoreMap::new();
            let mut t = ScoreMap::new();
            for (i, (l, r, left_wins)) in vals.iter().enumerate() {
                let id = i.to_string();
                pairs.push(pair(&id, "a", "b", if *left_wins { Label::Left } else { Label::Right }));
                s.insert(("a".into(), format!("{id}-l")), *l);
                s.insert(("b".into(), format!("{id}-r")), *r);
                // strictly increasing transform
                t.insert(("a".into(), format!("{id}-l")), l.exp() * 3.0 + 1.0);
                t.insert(("b".into(), format!("{id}-r")), r.exp() * 3.0 + 1.0);
            }
            let b = BootstrapOptions { resamples: 10, seed: 1 };
            let x = alignment_accuracy(&pairs, &s, Question::TextFidelity, &b).unwrap();
            let y = alignment_accuracy(&pairs, &t, Question::TextFidelity, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&x.accuracy));
            prop_assert_eq!(x.accuracy, y.accuracy);
        }
    }

    #[test]
    fn bootstrap_basics() {
        assert_eq!(bootstrap_sem(&[0.7; 20], 200, 1).unwrap(), 0.0);
        let v: Vec<f64> = (0..50).map(|i| (i % 7) as f64).collect();
        assert_eq!(bootstrap_sem(&v, 300, 42).unwrap(), bootstrap_sem(&v, 300, 42).unwrap());
        assert_ne!(bootstrap_sem(&v, 300, 42).unwrap(), bootstrap_sem(&v, 300, 43).unwrap());
        assert!(matches!(bootstrap_sem(&[], 10, 0), Err(MetaEvalError::EmptyInput)));
    }

    #[test]
    fn bootstrap_matches_analytic_sem() {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let v: Vec<f64> = (0..1000).map(|_| normal.sample(&mut rng)).collect();
        let analytic = stats::MeanSem::of(&v).unwrap().sem;
        let boot = bootstrap_sem(&v, 1000, 7).unwrap();
        assert!((boot - analytic).abs() / analytic < 0.15, "boot {boot} analytic {analytic}");
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1., 2., 3.], &[2., 4., 6.]).unwrap().r - 1.0).abs() < 1e-12);
        assert!((pearson(&[1., 2., 3.], &[6., 4., 2.]).unwrap().r + 1.0).abs() < 1e-12);
        assert!((pearson(&[1., 2., 3., 4.], &[1., 3., 2., 4.]).unwrap().r - 0.8).abs() < 1e-12);
        let d = pearson(&[1., 1., 1.], &[1., 2., 3.]).unwrap();
        assert!(d.degenerate && d.r == 0.0);
        assert!(matches!(pearson(&[1.], &[1.]), Err(MetaEvalError::TooFewPoints(1))));
        assert!(matches!(pearson(&[1., 2.], &[1.]), Err(MetaEvalError::LengthMismatch(2, 1))));
    }

    proptest! {
        #[test]
        fn pearson_invariances(xy in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40), a in 0.01f64..50.0, b in -50.0f64..50.0) {
            let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
            let r = pearson(&x, &y).unwrap();
            prop_assume!(!r.degenerate);
            let sym = pearson(&y, &x).unwrap();
            prop_assert!((r.r - sym.r).abs() < 1e-12);
            let scaled: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let s = pearson(&scaled, &y).unwrap();
            prop_assume!(!s.degenerate);
            prop_assert!((r.r - s.r).abs() < 1e-9, "{} vs {}", r.r, s.r);
        }
    }

    #[test]
    fn rank_ties() {
        assert_eq!(ranks(&[10., 20., 20., 5.]), vec![2.0, 3.5, 3.5, 1.0]);
        assert!((spearman(&[1., 2., 3., 4.], &[10., 9., 3., 1.]).unwrap().r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn external_scores() {
        let two = "{\"model_id\":\"a\",\"image_id\":\"1\",\"metric_name\":\"CLIPScore\",\"value\":0.31}\n{\"model_id\":\"b\",\"image_id\":\"1\",\"metric_name\":\"CLIPScore\",\"value\":0.29}\n";
        let sets = parse_external_scores(two).unwrap();
        assert_eq!(sets["CLIPScore"].len(), 2);

        let dup = format!("{two}{}", two.lines().next().unwrap());
        assert!(matches!(parse_external_scores(&dup), Err(MetaEvalError::DuplicateKey { .. })));

        let bad = "{\"model_id\":\"a\",\"image_id\":\"1\",\"metric_name\":\"m\",\"value\":\"high\"}";
        assert!(matches!(
            parse_external_scores(bad),
            Err(MetaEvalError::Io(JsonlError::Parse { line: 1, .. }))
        ));
    }

    #[test]
    fn preference_pair_wire_names() {
        let p = pair("1", "a", "b", Label::Unresolved);
        let v = serde_json::to_value(&p).unwrap();
        assert_eq!(v["human_label"]["text_fidelity"], "UNRESOLVED");
        let back: PreferencePair = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn table_shape() {
        let pairs = vec![pair("1", "a", "b", Label::Left)];
        let sets = ScoreSets::from([("NED".to_string(), scores(&[("a", "1-l", 1.0), ("b", "1-r", 0.0)]))]);
        let report = meta_evaluate(&pairs, &sets, &BootstrapOptions { resamples: 10, seed: 0 }).unwrap();
        let t = report.render_table();
        assert!(t.starts_with("| Metric | Text Fidelity | Style Fidelity | Overall Preference |"));
        assert!(t.contains("| NED | 100.0% ± 0.0% | n/a | n/a |"), "{t}");
    }
}
