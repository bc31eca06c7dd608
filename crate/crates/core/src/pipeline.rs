//! End-to-end scoring of one model's generated images: extract the rendered
//! text, compare it with the instructed quote, aggregate per model.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Instruction;
use crate::extraction::{ExtractedText, Extractor, ImageRef};
use crate::jsonl::{self, JsonlError};
use crate::metrics::{self, AlignmentParams, MetricKind};
use crate::stats::MeanSem;
use crate::text::{normalize_text, NormalizedText};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Io(#[from] JsonlError),
    #[error("image `{image_id}` references unknown instruction `{instruction_id}`")]
    UnknownInstruction { image_id: String, instruction_id: String },
    #[error("no images to score")]
    EmptyRun,
    #[error("a run covers one model, found `{0}` and `{1}`")]
    MixedModels(String, String),
    #[error("image id `{0}` appears more than once")]
    DuplicateImage(String),
    #[error("metric {0} is missing from one of the reports")]
    MissingMetric(MetricKind),
}

/// One generated image in a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedImage {
    pub image_id: String,
    pub instruction_id: String,
    pub model_id: String,
    pub path: PathBuf,
}

/// Reads an image manifest. Relative paths are resolved against the
/// manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<GeneratedImage>, PipelineError> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut images: Vec<GeneratedImage> = jsonl::read_path(path)?;
    for img in &mut images {
        if img.path.is_relative() {
            img.path = base.join(&img.path);
        }
    }
    Ok(images)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreOptions {
    pub params: AlignmentParams,
    /// Applied to the quote; extracted text is folded by its backend.
    pub case_fold: bool,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            params: AlignmentParams::default(),
            case_fold: true,
        }
    }
}

/// All six metrics between the instruction's quote and the extracted text.
pub fn score_pair(
    instr: &Instruction,
    extracted: &ExtractedText,
    opts: &ScoreOptions,
) -> BTreeMap<MetricKind, f64> {
    score_texts(&normalize_text(&instr.quote, opts.case_fold), &extracted.text, opts)
}

fn score_texts(quote: &NormalizedText, extracted: &NormalizedText, opts: &ScoreOptions) -> BTreeMap<MetricKind, f64> {
    metrics::score_all(quote, extracted, &opts.params)
        .into_iter()
        .map(|s| (s.kind, s.value))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub instruction_id: String,
    pub image_id: String,
    pub extracted: ExtractedText,
    pub scores: BTreeMap<MetricKind, f64>,
    /// Set when extraction failed; such rows score 0 on every metric.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

pub const AGGREGATION_NOTE: &str =
    "per-instruction mean over images, then mean over instructions; sem = sample sd / sqrt(n instructions)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model_id: String,
    pub backend_id: String,
    pub aggregation: String,
    pub rows: Vec<ReportRow>,
    pub aggregates: BTreeMap<MetricKind, MeanSem>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.failure.is_some()).count()
    }
}

/// Extracts every image (concurrently, up to the extractor's bound) and
/// scores it. Individual extraction failures become zero-score rows.
pub async fn score_run(
    corpus: &[Instruction],
    images: &[GeneratedImage],
    extractor: &dyn Extractor,
    opts: &ScoreOptions,
) -> Result<MetricReport, PipelineError> {
    let first = images.first().ok_or(PipelineError::EmptyRun)?;
    let by_id: HashMap<&str, &Instruction> = corpus.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut seen = HashSet::new();
    for img in images {
        if img.model_id != first.model_id {
            return Err(PipelineError::MixedModels(first.model_id.clone(), img.model_id.clone()));
        }
        if !by_id.contains_key(img.instruction_id.as_str()) {
            return Err(PipelineError::UnknownInstruction {
                image_id: img.image_id.clone(),
                instruction_id: img.instruction_id.clone(),
            });
        }
        if !seen.insert(img.image_id.as_str()) {
            return Err(PipelineError::DuplicateImage(img.image_id.clone()));
        }
    }

    let mut results: Vec<(usize, _)> = stream::iter(images.iter().enumerate())
        .map(|(i, img)| async move {
            let image = ImageRef {
                image_id: img.image_id.clone(),
                path: img.path.clone(),
            };
            (i, extractor.extract(&image).await)
        })
        .buffer_unordered(extractor.max_concurrency().max(1))
        .collect()
        .await;
    results.sort_by_key(|(i, _)| *i);

    let rows: Vec<ReportRow> = results
        .into_iter()
        .map(|(i, result)| {
            let img = &images[i];
            let instr = by_id[img.instruction_id.as_str()];
            match result {
                Ok(extracted) => ReportRow {
                    instruction_id: img.instruction_id.clone(),
                    image_id: img.image_id.clone(),
                    scores: score_pair(instr, &extracted, opts),
                    extracted,
                    failure: None,
                },
                Err(e) => ReportRow {
                    instruction_id: img.instruction_id.clone(),
                    image_id: img.image_id.clone(),
                    extracted: ExtractedText {
                        image_id: img.image_id.clone(),
                        backend_id: extractor.backend_id().to_owned(),
                        raw_response: String::new(),
                        text: normalize_text("", opts.case_fold),
                        retries_used: 0,
                    },
                    scores: MetricKind::ALL.into_iter().map(|k| (k, 0.0)).collect(),
                    failure: Some(e.to_string()),
                },
            }
        })
        .collect();

    Ok(MetricReport {
        model_id: first.model_id.clone(),
        backend_id: extractor.backend_id().to_owned(),
        aggregation: AGGREGATION_NOTE.to_owned(),
        aggregates: aggregate(&rows),
        rows,
    })
}

/// Two-level mean: images of one instruction are averaged first. Grouping is
/// keyed and sorted, so the result does not depend on row order.
pub fn aggregate(rows: &[ReportRow]) -> BTreeMap<MetricKind, MeanSem> {
    let mut out = BTreeMap::new();
    for kind in MetricKind::ALL {
        let mut groups: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
        for r in rows {
            if let Some(&v) = r.scores.get(&kind) {
                groups
                    .entry(r.instruction_id.as_str())
                    .or_default()
                    .insert(r.image_id.as_str(), v);
            }
        }
        let per_instruction: Vec<f64> = groups
            .values()
            .map(|g| g.values().sum::<f64>() / g.len() as f64)
            .collect();
        if let Some(m) = MeanSem::of(&per_instruction) {
            out.insert(kind, m);
        }
    }
    out
}

/// Columns of the rendered scoreboard, in display order.
pub const TABLE_COLUMNS: [MetricKind; 6] = [
    MetricKind::Bleu1,
    MetricKind::CharBleu,
    MetricKind::Ned,
    MetricKind::Nlcs,
    MetricKind::SmithWaterman,
    MetricKind::Ensemble,
];

fn cell(m: Option<&MeanSem>) -> String {
    m.map(|m| format!("{:.3} ± {:.3}", m.mean, m.sem))
        .unwrap_or_else(|| "-".into())
}

/// Markdown scoreboard, one row per report.
pub fn render_table(reports: &[MetricReport]) -> String {
    let mut out = String::from("| Tested Model |");
    for k in TABLE_COLUMNS {
        let _ = write!(out, " {} |", k.label());
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(TABLE_COLUMNS.len()));
    out.push('\n');
    for r in reports {
        let _ = write!(out, "| {} |", r.model_id);
        for k in TABLE_COLUMNS {
            let _ = write!(out, " {} |", cell(r.aggregates.get(&k)));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDelta {
    pub kind: MetricKind,
    /// `a.mean - b.mean`.
    pub delta_mean: f64,
    pub a: MeanSem,
    pub b: MeanSem,
    /// The two `mean ± sem` intervals are disjoint.
    pub separated: bool,
}

pub fn compare_runs(a: &MetricReport, b: &MetricReport) -> Result<Vec<RunDelta>, PipelineError> {
    MetricKind::ALL
        .into_iter()
        .map(|kind| {
            let (x, y) = match (a.aggregates.get(&kind), b.aggregates.get(&kind)) {
                (Some(x), Some(y)) => (*x, *y),
                _ => return Err(PipelineError::MissingMetric(kind)),
            };
            Ok(RunDelta {
                kind,
                delta_mean: x.mean - y.mean,
                a: x,
                b: y,
                separated: !x.overlaps(&y),
            })
        })
        .collect()
}

pub fn render_comparison(a: &MetricReport, b: &MetricReport, deltas: &[RunDelta]) -> String {
    let mut out = format!("| Metric | {} | {} | Δ | separated |\n|---|---|---|---|---|\n", a.model_id, b.model_id);
    for d in deltas {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {:+.3} | {} |",
            d.kind.label(),
            cell(Some(&d.a)),
            cell(Some(&d.b)),
            d.delta_mean,
            if d.separated { "yes" } else { "no" }
        );
    }
    out
}
