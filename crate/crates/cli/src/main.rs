//! `typescore` command-line entry point.

mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "typescore",
    version,
    about = "Measure how faithfully generated images render the text they were asked to show"
)]
pub struct Cli {
    /// Standard output style. Structured documents always go to --out.
    #[arg(long, value_enum, default_value_t = Format::Table, global = true)]
    pub format: Format,
    /// Write the structured result here (atomically).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Environment variable holding the chat endpoint API key
    /// [default: TYPESCORE_API_KEY, or the backend file's setting].
    #[arg(long, global = true)]
    pub api_key_env: Option<String>,
    /// Seed for every randomized step (bootstrap, corruption, presentation order).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score one extracted text against its reference with every metric.
    Metrics(MetricsArgs),
    /// Extract the text in a model's images and score it against the dataset.
    Score(ScoreArgs),
    /// Produce corrupted copies of the dataset quotes.
    Corrupt(CorruptArgs),
    /// Alignment accuracy of metrics against human preference labels.
    MetaEval(MetaEvalArgs),
    /// Inspect or build instruction datasets.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Mean normalized edit distance of a candidate extractor to an oracle.
    CompareExtractors(CompareExtractorsArgs),
    /// Run or manage the human annotation service.
    #[command(subcommand)]
    Annotate(AnnotateCommand),
    /// Compare two score reports metric by metric.
    CompareRuns {
        /// First report (JSON written by `score --out`).
        a: PathBuf,
        /// Second report.
        b: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct AlignmentArgs {
    /// Smith-Waterman match reward.
    #[arg(long, default_value_t = 2, allow_negative_numbers = true)]
    pub sw_match: i32,
    /// Smith-Waterman mismatch penalty (zero or negative).
    #[arg(long, default_value_t = -1, allow_negative_numbers = true)]
    pub sw_mismatch: i32,
    /// Smith-Waterman gap penalty (zero or negative).
    #[arg(long, default_value_t = -1, allow_negative_numbers = true)]
    pub sw_gap: i32,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Reference text (the instructed quote).
    #[arg(long = "ref", allow_hyphen_values = true)]
    pub reference: String,
    /// Hypothesis text (what was read from the image).
    #[arg(long, allow_hyphen_values = true)]
    pub hyp: String,
    /// Compare case-sensitively.
    #[arg(long)]
    pub no_case_fold: bool,
    #[command(flatten)]
    pub alignment: AlignmentArgs,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Instruction dataset (line-delimited JSON). Defaults to the bundled sample.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Image manifest: one {image_id, instruction_id, model_id, path} per line.
    #[arg(long)]
    pub images: PathBuf,
    /// Extraction backend configuration (JSON).
    #[arg(long)]
    pub backend: PathBuf,
    /// Model whose images are scored.
    #[arg(long)]
    pub model_id: String,
    /// Compare case-sensitively.
    #[arg(long)]
    pub no_case_fold: bool,
    #[command(flatten)]
    pub alignment: AlignmentArgs,
}

#[derive(Debug, Args)]
#[group(id = "specs", required = true, multiple = false)]
pub struct CorruptArgs {
    /// Instruction dataset. Defaults to the bundled sample.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Corruption specs, one JSON object per line.
    #[arg(long, group = "specs")]
    pub spec: Option<PathBuf>,
    /// Shorthand for uniform character-level specs at these rates, seeded by --seed.
    #[arg(long, group = "specs", value_delimiter = ',')]
    pub rates: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct MetaEvalArgs {
    /// Annotation export (line-delimited preference pairs).
    #[arg(long)]
    pub annotations: PathBuf,
    /// Score files: `score` reports or line-delimited
    /// {model_id, image_id, metric_name, value} records.
    #[arg(long, num_args = 1.., required = true)]
    pub scores: Vec<PathBuf>,
    /// Bootstrap resamples for the standard errors.
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Counts, average lengths and the category histogram.
    Stats {
        /// Defaults to the bundled sample.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Enrich seed descriptions into full instructions with a chat model.
    Synth(SynthArgs),
    /// The bundled sample dataset.
    Sample,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Seeds: one {id, seed_text, quote, category, style} per line.
    #[arg(long)]
    pub seeds: PathBuf,
    /// Chat-completion endpoint URL.
    #[arg(long)]
    pub endpoint: String,
    /// Model name sent with each request.
    #[arg(long)]
    pub model: String,
    /// Enrichment rounds per instruction.
    #[arg(long, default_value_t = 3)]
    pub iterations: usize,
    /// Instructions enriched at the same time.
    #[arg(long, default_value_t = 4)]
    pub max_concurrency: usize,
}

#[derive(Debug, Args)]
pub struct CompareExtractorsArgs {
    /// Reference transcriptions: one {image_id, text} per line.
    #[arg(long)]
    pub oracle: PathBuf,
    /// Candidate extractions in the same format.
    #[arg(long)]
    pub candidate: PathBuf,
    /// Compare case-sensitively.
    #[arg(long)]
    pub no_case_fold: bool,
}

#[derive(Debug, Subcommand)]
pub enum AnnotateCommand {
    /// Serve tasks and the annotation UI over HTTP.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory the task image paths are relative to.
        #[arg(long)]
        images_dir: PathBuf,
        /// Store directory (see `annotate init`).
        #[arg(long)]
        store: PathBuf,
        /// Built UI bundle to serve at `/`.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
    /// Create a store from a task list and a gold set.
    Init {
        #[arg(long)]
        store: PathBuf,
        /// Pairs to annotate, one per line.
        #[arg(long)]
        tasks: PathBuf,
        /// Qualification questions, one per line.
        #[arg(long)]
        gold: Option<PathBuf>,
    },
    /// Aggregated labels of every pair, read from a store on disk.
    Export {
        #[arg(long)]
        store: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(run::Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(run::Failure::Runtime(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
