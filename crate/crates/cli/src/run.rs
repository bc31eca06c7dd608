use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::Path;

use anyhow::{anyhow, Context};
use futures::stream::{self, StreamExt, TryStreamExt};
use serde::Serialize;
use typescore::chat::{ChatClient, ChatConfig};
use typescore::corpus::{self, dataset_stats, synth_instruction, Instruction, InstructionSeed};
use typescore::corruption::{generate_pairs, CorruptionSpec};
use typescore::extraction::{compare_extractors, load_extractions, Backend, BackendConfig, DEFAULT_API_KEY_ENV};
use typescore::jsonl;
use typescore::meta_eval::{
    meta_evaluate, parse_external_scores, read_annotations, scores_from_reports, BootstrapOptions, PairStatus,
    ScoreSets,
};
use typescore::metrics;
use typescore::pipeline::{
    compare_runs, load_manifest, render_comparison, render_table, score_run, MetricReport, ScoreOptions,
};
use typescore::{normalize_text, AlignmentParams};
use typescore_annotate::store::{GoldItem, PairTask, EVENTS_FILE};
use typescore_annotate::{ServeConfig, Store};

use crate::{
    AlignmentArgs, AnnotateCommand, Cli, Command, CompareExtractorsArgs, CorruptArgs, DatasetCommand, Format,
    MetaEvalArgs, MetricsArgs, ScoreArgs, SynthArgs,
};

#[derive(Debug)]
pub enum Failure {
    /// Bad arguments; exit status 2.
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type Result<T, E = Failure> = std::result::Result<T, E>;

/// Human-readable text for stdout and the structured document for --out.
struct Output {
    table: String,
    document: String,
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

fn emit(cli: &Cli, out: Output) -> Result<()> {
    if let Some(path) = &cli.out {
        jsonl::write_atomic(path, out.document.as_bytes()).context("writing --out")?;
    }
    match cli.format {
        Format::Table => print!("{}", out.table),
        Format::Json => print!("{}", out.document),
    }
    Ok(())
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Runtime::new().context("starting async runtime")?)
}

fn params(a: &AlignmentArgs) -> Result<AlignmentParams> {
    AlignmentParams::new(a.sw_match, a.sw_mismatch, a.sw_gap).map_err(|e| Failure::Usage(e.to_string()))
}

fn load_corpus(path: Option<&Path>) -> Result<Vec<Instruction>> {
    match path {
        Some(p) => Ok(corpus::load_dataset(p).with_context(|| format!("loading dataset {}", p.display()))?),
        None => Ok(corpus::sample_corpus()),
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Metrics(a) => cmd_metrics(cli, a),
        Command::Score(a) => cmd_score(cli, a),
        Command::Corrupt(a) => cmd_corrupt(cli, a),
        Command::MetaEval(a) => cmd_meta_eval(cli, a),
        Command::Dataset(d) => cmd_dataset(cli, d),
        Command::CompareExtractors(a) => cmd_compare_extractors(cli, a),
        Command::Annotate(a) => cmd_annotate(cli, a),
        Command::CompareRuns { a, b } => cmd_compare_runs(cli, a, b),
    }
}

fn cmd_metrics(cli: &Cli, a: &MetricsArgs) -> Result<()> {
    let params = params(&a.alignment)?;
    let case_fold = !a.no_case_fold;
    let scores = metrics::score_all(
        &normalize_text(&a.reference, case_fold),
        &normalize_text(&a.hyp, case_fold),
        &params,
    );
    let mut table = String::new();
    for s in &scores {
        let _ = writeln!(table, "{:<16}{:.6}", s.kind.name(), s.value);
    }
    let doc: BTreeMap<&str, f64> = scores.iter().map(|s| (s.kind.name(), s.value)).collect();
    emit(
        cli,
        Output {
            table,
            document: pretty(&doc),
        },
    )
}

fn cmd_score(cli: &Cli, a: &ScoreArgs) -> Result<()> {
    let params = params(&a.alignment)?;
    let text = std::fs::read_to_string(&a.backend).with_context(|| format!("reading {}", a.backend.display()))?;
    let mut cfg: BackendConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing backend config {}", a.backend.display()))?;
    if let Some(env) = &cli.api_key_env {
        cfg.api_key_env = env.clone();
    }
    if a.no_case_fold {
        cfg.case_fold = false;
    }
    let corpus = load_corpus(a.dataset.as_deref())?;
    let images: Vec<_> = load_manifest(&a.images)
        .with_context(|| format!("loading manifest {}", a.images.display()))?
        .into_iter()
        .filter(|img| img.model_id == a.model_id)
        .collect();
    if images.is_empty() {
        return Err(anyhow!("manifest has no images for model `{}`", a.model_id).into());
    }
    let backend = Backend::from_config(&cfg).context("configuring backend")?;
    let opts = ScoreOptions {
        params,
        case_fold: cfg.case_fold,
    };
    let report = runtime()?
        .block_on(score_run(&corpus, &images, &backend, &opts))
        .context("scoring run")?;
    if report.failures() > 0 {
        eprintln!(
            "warning: {} of {} extractions failed and were scored 0",
            report.failures(),
            report.rows.len()
        );
    }
    emit(
        cli,
        Output {
            table: render_table(std::slice::from_ref(&report)),
            document: report.to_json(),
        },
    )
}

fn cmd_corrupt(cli: &Cli, a: &CorruptArgs) -> Result<()> {
    let specs: Vec<CorruptionSpec> = match (&a.spec, &a.rates) {
        (Some(path), _) => jsonl::read_path(path).with_context(|| format!("reading specs {}", path.display()))?,
        (None, Some(rates)) => rates
            .iter()
            .map(|&r| CorruptionSpec::uniform(r, cli.seed.unwrap_or(0)))
            .collect(),
        (None, None) => unreachable!("clap requires one of --spec or --rates"),
    };
    if specs.is_empty() {
        return Err(Failure::Usage("no corruption specs given".into()));
    }
    for s in &specs {
        s.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let corpus = load_corpus(a.dataset.as_deref())?;
    let pairs = generate_pairs(&corpus, &specs).context("generating pairs")?;

    let params = AlignmentParams::default();
    let mut sums = vec![0.0; specs.len()];
    for p in &pairs {
        sums[p.spec_index] += metrics::ensemble(
            &normalize_text(&p.quote, true),
            &normalize_text(&p.corrupted, true),
            &params,
        )
        .value;
    }
    let mut table = String::from("| Spec | Pairs | Mean TypeScore |\n|---|---|---|\n");
    for (i, sum) in sums.iter().enumerate() {
        let _ = writeln!(table, "| {i} | {} | {:.3} |", corpus.len(), sum / corpus.len() as f64);
    }
    emit(
        cli,
        Output {
            table,
            document: jsonl::to_string(&pairs),
        },
    )
}

/// A score file is either a report written by `score` or line-delimited
/// external scores.
fn read_score_file(path: &Path) -> anyhow::Result<ScoreSets> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(report) = MetricReport::from_json(&text) {
        return Ok(scores_from_reports(&[report]));
    }
    parse_external_scores(&text).with_context(|| format!("parsing scores {}", path.display()))
}

fn cmd_meta_eval(cli: &Cli, a: &MetaEvalArgs) -> Result<()> {
    if a.resamples == 0 {
        return Err(Failure::Usage("--resamples must be at least 1".into()));
    }
    let pairs = read_annotations(&a.annotations).with_context(|| format!("reading {}", a.annotations.display()))?;
    let mut sets = ScoreSets::new();
    for path in &a.scores {
        for (metric, scores) in read_score_file(path)? {
            let merged = sets.entry(metric.clone()).or_default();
            for (key, value) in scores {
                if merged.insert(key.clone(), value).is_some() {
                    return Err(anyhow!(
                        "{metric} score for ({}, {}) appears twice (last in {})",
                        key.0,
                        key.1,
                        path.display()
                    )
                    .into());
                }
            }
        }
    }
    let boot = BootstrapOptions {
        resamples: a.resamples,
        seed: cli.seed.unwrap_or(0),
    };
    let report = meta_evaluate(&pairs, &sets, &boot).context("meta-evaluation")?;
    emit(
        cli,
        Output {
            table: report.render_table(),
            document: pretty(&report),
        },
    )
}

fn cmd_dataset(cli: &Cli, d: &DatasetCommand) -> Result<()> {
    match d {
        DatasetCommand::Stats { dataset } => {
            let corpus = load_corpus(dataset.as_deref())?;
            let stats = dataset_stats(&corpus).context("computing statistics")?;
            let mut table = format!(
                "instructions          {}\navg words/instruction {:.1}\navg words/quote       {:.2}\n\n| Category | Count |\n|---|---|\n",
                stats.n_instructions, stats.avg_words_instruction, stats.avg_words_quote
            );
            for (category, n) in &stats.category_histogram {
                let _ = writeln!(table, "| {category} | {n} |");
            }
            emit(
                cli,
                Output {
                    table,
                    document: pretty(&stats),
                },
            )
        }
        DatasetCommand::Sample => {
            let corpus = corpus::sample_corpus();
            let stats = dataset_stats(&corpus).context("computing statistics")?;
            emit(
                cli,
                Output {
                    table: format!("sample dataset: {} instructions\n", stats.n_instructions),
                    document: jsonl::to_string(&corpus),
                },
            )
        }
        DatasetCommand::Synth(a) => cmd_synth(cli, a),
    }
}

fn cmd_synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    if a.iterations == 0 || a.max_concurrency == 0 {
        return Err(Failure::Usage("--iterations and --max-concurrency must be at least 1".into()));
    }
    let seeds: Vec<InstructionSeed> =
        jsonl::read_path(&a.seeds).with_context(|| format!("reading seeds {}", a.seeds.display()))?;
    let env = cli.api_key_env.as_deref().unwrap_or(DEFAULT_API_KEY_ENV);
    let key = std::env::var(env).map_err(|_| anyhow!("environment variable {env} is not set"))?;
    let mut cfg = ChatConfig::new(&a.endpoint, &a.model, key);
    cfg.max_concurrency = a.max_concurrency;
    let chat = ChatClient::new(cfg).context("configuring chat client")?;

    let rt = runtime()?;
    let instructions: Vec<Instruction> = rt.block_on(async {
        stream::iter(&seeds)
            .map(|s| {
                let chat = &chat;
                async move {
                    synth_instruction(s, chat, a.iterations)
                        .await
                        .with_context(|| format!("enriching `{}`", s.id))
                }
            })
            .buffered(a.max_concurrency)
            .try_collect()
            .await
    })?;
    emit(
        cli,
        Output {
            table: format!("enriched {} instructions\n", instructions.len()),
            document: jsonl::to_string(&instructions),
        },
    )
}

fn cmd_compare_extractors(cli: &Cli, a: &CompareExtractorsArgs) -> Result<()> {
    let case_fold = !a.no_case_fold;
    let oracle = load_extractions(&a.oracle, "oracle", case_fold).context("reading oracle")?;
    let candidate = load_extractions(&a.candidate, "candidate", case_fold).context("reading candidate")?;
    let ms = compare_extractors(&oracle, &candidate).context("comparing extractors")?;
    emit(
        cli,
        Output {
            table: format!(
                "mean NED distance to oracle: {:.4} ± {:.4} over {} images\n",
                ms.mean, ms.sem, ms.n
            ),
            document: pretty(&ms),
        },
    )
}

fn cmd_annotate(cli: &Cli, a: &AnnotateCommand) -> Result<()> {
    match a {
        AnnotateCommand::Serve {
            port,
            host,
            images_dir,
            store,
            ui_dir,
        } => {
            let ip = host
                .parse()
                .map_err(|_| Failure::Usage(format!("invalid --host `{host}`")))?;
            let cfg = ServeConfig {
                addr: SocketAddr::new(ip, *port),
                store_dir: store.clone(),
                images_dir: images_dir.clone(),
                ui_dir: ui_dir.clone(),
                seed: cli.seed.unwrap_or(0),
            };
            eprintln!("serving annotations on http://{}", cfg.addr);
            runtime()?
                .block_on(typescore_annotate::serve(cfg))
                .context("annotation service")?;
            Ok(())
        }
        AnnotateCommand::Init { store, tasks, gold } => {
            if store.join(EVENTS_FILE).exists() {
                return Err(anyhow!("{} already holds an annotation store", store.display()).into());
            }
            let tasks: Vec<PairTask> = jsonl::read_path(tasks).with_context(|| format!("reading {}", tasks.display()))?;
            let gold: Vec<GoldItem> = match gold {
                Some(p) => jsonl::read_path(p).with_context(|| format!("reading {}", p.display()))?,
                None => Vec::new(),
            };
            Store::create(store, &tasks, &gold).context("creating store")?;
            // open once so a bad task list is reported now, not at serve time
            Store::open(store, 0).context("validating store")?;
            eprintln!("created store with {} pairs and {} gold items", tasks.len(), gold.len());
            Ok(())
        }
        AnnotateCommand::Export { store } => {
            let store = Store::open(store, cli.seed.unwrap_or(0)).context("opening store")?;
            let pairs = store.export_annotations();
            let count = |s: PairStatus| pairs.iter().filter(|p| p.status == Some(s)).count();
            let extra = pairs.iter().filter(|p| p.judgments > 3).count();
            let table = format!(
                "pairs {}\nopen {}\nresolved {}\nunresolved {}\nneeded more than 3 judges {}\n",
                pairs.len(),
                count(PairStatus::Open),
                count(PairStatus::Resolved),
                count(PairStatus::Unresolved),
                extra
            );
            emit(
                cli,
                Output {
                    table,
                    document: jsonl::to_string(&pairs),
                },
            )
        }
    }
}

fn read_report(path: &Path) -> anyhow::Result<MetricReport> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    MetricReport::from_json(&text).with_context(|| format!("parsing report {}", path.display()))
}

fn cmd_compare_runs(cli: &Cli, a: &Path, b: &Path) -> Result<()> {
    let (ra, rb) = (read_report(a)?, read_report(b)?);
    let deltas = compare_runs(&ra, &rb).context("comparing reports")?;
    emit(
        cli,
        Output {
            table: render_comparison(&ra, &rb, &deltas),
            document: pretty(&deltas),
        },
    )
}
