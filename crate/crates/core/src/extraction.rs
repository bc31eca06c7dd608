//! Recovering rendered text from generated images.
//!
//! Four backend kinds share one [`Backend`] type: a vision-language model
//! prompted to transcribe the main text, an external OCR engine, OCR output
//! refined by a language model, and a file of human transcriptions.

use std::collections::HashMap;
use std::fmt;
use std::io::Write as _;
use std::num::NonZeroU32;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::chat::{BackendError, ChatBackend, ChatClient, ChatConfig, ChatMessage};
use crate::jsonl;
use crate::metrics::ned_distance;
use crate::prompts;
use crate::stats::MeanSem;
use crate::text::{normalize_text, NormalizedText};

pub const DEFAULT_API_KEY_ENV: &str = "TYPESCORE_API_KEY";

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error(transparent)]
    Io(#[from] jsonl::JsonlError),
    #[error("extraction sets differ on image ids: {0}")]
    IdMismatch(String),
    #[error("no extractions to compare")]
    Empty,
}

/// Text recovered from one image by one backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedText {
    pub image_id: String,
    pub backend_id: String,
    pub raw_response: String,
    pub text: NormalizedText,
    pub retries_used: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BackendKind {
    Vlm,
    Ocr,
    OcrRefine,
    OracleFile,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Vlm => "VLM",
            BackendKind::Ocr => "OCR",
            BackendKind::OcrRefine => "OCR_REFINE",
            BackendKind::OracleFile => "ORACLE_FILE",
        })
    }
}

fn default_api_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_owned()
}
fn default_max_retries() -> u32 {
    3
}
fn default_max_concurrency() -> usize {
    4
}
fn default_timeout_secs() -> f64 {
    60.0
}
fn default_backoff_ms() -> u64 {
    1000
}
fn default_temperature() -> Option<f32> {
    Some(0.0)
}
fn default_true() -> bool {
    true
}

/// Backend description, usually read from a JSON document.
///
/// ```json
/// {"kind": "VLM", "endpoint": "https://host/v1/chat/completions", "model_name": "gpt-4o"}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Defaults to `<kind>` or `<kind>:<model_name>`.
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model_name: Option<String>,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_concurrency")]
    pub max_concurrency: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
    #[serde(default = "default_temperature")]
    pub temperature: Option<f32>,
    /// OCR engine invocation; `{image}` is replaced by the image path, or the
    /// path is appended when no argument contains it.
    #[serde(default)]
    pub ocr_command: Option<Vec<String>>,
    #[serde(default)]
    pub oracle_path: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub case_fold: bool,
}

impl BackendConfig {
    pub fn new(kind: BackendKind) -> Self {
        BackendConfig {
            kind,
            id: None,
            endpoint: None,
            model_name: None,
            api_key_env: default_api_key_env(),
            max_retries: default_max_retries(),
            max_concurrency: default_max_concurrency(),
            timeout_secs: default_timeout_secs(),
            backoff_base_ms: default_backoff_ms(),
            requests_per_minute: None,
            temperature: default_temperature(),
            ocr_command: None,
            oracle_path: None,
            case_fold: true,
        }
    }

    pub fn backend_id(&self) -> String {
        self.id.clone().unwrap_or_else(|| match &self.model_name {
            Some(m) if matches!(self.kind, BackendKind::Vlm | BackendKind::OcrRefine) => {
                format!("{}:{m}", self.kind)
            }
            _ => self.kind.to_string(),
        })
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let needs_chat = matches!(self.kind, BackendKind::Vlm | BackendKind::OcrRefine);
        let needs_ocr = matches!(self.kind, BackendKind::Ocr | BackendKind::OcrRefine);
        if needs_chat && (self.endpoint.is_none() || self.model_name.is_none()) {
            return Err(BackendError::Config(format!(
                "{} backend requires `endpoint` and `model_name`",
                self.kind
            )));
        }
        if needs_ocr && self.ocr_command.as_ref().is_none_or(|c| c.is_empty()) {
            return Err(BackendError::Config(format!("{} backend requires `ocr_command`", self.kind)));
        }
        if self.kind == BackendKind::OracleFile && self.oracle_path.is_none() {
            return Err(BackendError::Config("ORACLE_FILE backend requires `oracle_path`".into()));
        }
        if self.max_concurrency == 0 {
            return Err(BackendError::Config("max_concurrency must be at least 1".into()));
        }
        Ok(())
    }

    /// Chat client settings, reading the API key from `api_key_env`.
    pub fn chat_config(&self) -> Result<ChatConfig, BackendError> {
        let key = std::env::var(&self.api_key_env).map_err(|_| {
            BackendError::Auth(format!("environment variable {} is not set", self.api_key_env))
        })?;
        let mut cfg = ChatConfig::new(
            self.endpoint.clone().unwrap_or_default(),
            self.model_name.clone().unwrap_or_default(),
            key,
        );
        cfg.max_retries = self.max_retries;
        cfg.max_concurrency = self.max_concurrency;
        cfg.timeout = Duration::from_secs_f64(self.timeout_secs);
        cfg.backoff_base = Duration::from_millis(self.backoff_base_ms);
        cfg.requests_per_minute = self.requests_per_minute.and_then(NonZeroU32::new);
        cfg.temperature = self.temperature;
        Ok(cfg)
    }
}

/// Encoded image plus its media type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageData {
    pub bytes: Vec<u8>,
    pub media_type: String,
    pub path: Option<PathBuf>,
}

impl ImageData {
    pub fn new(bytes: Vec<u8>, media_type: impl Into<String>) -> Self {
        ImageData {
            bytes,
            media_type: media_type.into(),
            path: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let bytes = std::fs::read(path).map_err(|source| BackendError::Image {
            path: path.display().to_string(),
            source,
        })?;
        Ok(ImageData {
            bytes,
            media_type: media_type_for(path).to_owned(),
            path: Some(path.to_owned()),
        })
    }

    pub fn data_url(&self) -> String {
        format!(
            "data:{};base64,{}",
            self.media_type,
            base64::engine::general_purpose::STANDARD.encode(&self.bytes)
        )
    }
}

/// Media type guessed from the file extension; PNG when unknown.
pub fn media_type_for(path: &Path) -> &'static str {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        _ => "image/png",
    }
}

/// Function form of an OCR engine: image in, text lines in reading order out.
pub type OcrFn = dyn Fn(&ImageData) -> Result<Vec<String>, String> + Send + Sync;

#[derive(Clone)]
pub enum OcrAdapter {
    /// External program; its non-empty stdout lines are the OCR lines.
    Command(Vec<String>),
    InProcess(Arc<OcrFn>),
}

impl fmt::Debug for OcrAdapter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OcrAdapter::Command(argv) => f.debug_tuple("Command").field(argv).finish(),
            OcrAdapter::InProcess(_) => f.write_str("InProcess(..)"),
        }
    }
}

impl OcrAdapter {
    pub fn in_process<F>(f: F) -> Self
    where
        F: Fn(&ImageData) -> Result<Vec<String>, String> + Send + Sync + 'static,
    {
        OcrAdapter::InProcess(Arc::new(f))
    }

    async fn lines(&self, image: &ImageData) -> Result<Vec<String>, BackendError> {
        match self {
            OcrAdapter::InProcess(f) => f(image).map_err(BackendError::Adapter),
            OcrAdapter::Command(argv) => run_ocr_command(argv, image).await,
        }
    }
}

async fn run_ocr_command(argv: &[String], image: &ImageData) -> Result<Vec<String>, BackendError> {
    let (program, args) = argv
        .split_first()
        .ok_or_else(|| BackendError::Config("empty ocr_command".into()))?;

    // engines want a file; spill in-memory images to a temporary one
    let _spill;
    let path = match &image.path {
        Some(p) => p.clone(),
        None => {
            let mut f = tempfile::Builder::new()
                .suffix(".img")
                .tempfile()
                .map_err(|e| BackendError::Adapter(e.to_string()))?;
            f.write_all(&image.bytes)
                .map_err(|e| BackendError::Adapter(e.to_string()))?;
            let p = f.path().to_owned();
            _spill = f;
            p
        }
    };
    let path_str = path.display().to_string();
    let mut args: Vec<String> = args.iter().map(|a| a.replace("{image}", &path_str)).collect();
    if !argv.iter().any(|a| a.contains("{image}")) {
        args.push(path_str);
    }

    let output = tokio::process::Command::new(program)
        .args(&args)
        .output()
        .await
        .map_err(|e| BackendError::Adapter(format!("spawning {program}: {e}")))?;
    if !output.status.success() {
        return Err(BackendError::Adapter(format!(
            "{program} exited with {}: {}",
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        )));
    }
    Ok(String::from_utf8_lossy(&output.stdout)
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

/// Text between the first and last `"` of a response, or the whole trimmed
/// response when it holds fewer than two quote characters.
pub fn parse_quoted_response(raw: &str) -> String {
    match (raw.find('"'), raw.rfind('"')) {
        (Some(first), Some(last)) if first < last => raw[first + 1..last].to_owned(),
        _ => raw.trim().to_owned(),
    }
}

/// Where a generated image lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRef {
    pub image_id: String,
    pub path: PathBuf,
}

#[async_trait]
pub trait Extractor: Send + Sync {
    fn backend_id(&self) -> &str;
    /// Upper bound on useful concurrent calls to [`Extractor::extract`].
    fn max_concurrency(&self) -> usize;
    async fn extract(&self, image: &ImageRef) -> Result<ExtractedText, BackendError>;
}

pub struct Backend {
    id: String,
    kind: BackendKind,
    case_fold: bool,
    chat: Option<Arc<dyn ChatBackend>>,
    ocr: Option<OcrAdapter>,
    oracle: HashMap<String, String>,
    ocr_slots: Arc<Semaphore>,
    max_concurrency: usize,
}

impl Backend {
    fn bare(id: impl Into<String>, kind: BackendKind, case_fold: bool, max_concurrency: usize) -> Self {
        let max_concurrency = max_concurrency.max(1);
        Backend {
            id: id.into(),
            kind,
            case_fold,
            chat: None,
            ocr: None,
            oracle: HashMap::new(),
            ocr_slots: Arc::new(Semaphore::new(max_concurrency)),
            max_concurrency,
        }
    }

    pub fn vlm(id: impl Into<String>, chat: Arc<dyn ChatBackend>, case_fold: bool) -> Self {
        let mut b = Backend::bare(id, BackendKind::Vlm, case_fold, default_max_concurrency());
        b.chat = Some(chat);
        b
    }

    pub fn ocr(id: impl Into<String>, adapter: OcrAdapter, case_fold: bool) -> Self {
        let mut b = Backend::bare(id, BackendKind::Ocr, case_fold, default_max_concurrency());
        b.ocr = Some(adapter);
        b
    }

    pub fn ocr_refine(
        id: impl Into<String>,
        adapter: OcrAdapter,
        chat: Arc<dyn ChatBackend>,
        case_fold: bool,
    ) -> Self {
        let mut b = Backend::bare(id, BackendKind::OcrRefine, case_fold, default_max_concurrency());
        b.ocr = Some(adapter);
        b.chat = Some(chat);
        b
    }

    /// Human transcriptions keyed by image id.
    pub fn oracle(id: impl Into<String>, texts: HashMap<String, String>, case_fold: bool) -> Self {
        let mut b = Backend::bare(id, BackendKind::OracleFile, case_fold, 64);
        b.oracle = texts;
        b
    }

    pub fn with_max_concurrency(mut self, n: usize) -> Self {
        self.max_concurrency = n.max(1);
        self.ocr_slots = Arc::new(Semaphore::new(self.max_concurrency));
        self
    }

    /// Builds a backend from its configuration. Fails with
    /// [`BackendError::Auth`] before any request when a chat backend's API
    /// key variable is unset.
    pub fn from_config(cfg: &BackendConfig) -> Result<Self, BackendError> {
        cfg.validate()?;
        let id = cfg.backend_id();
        let chat = || -> Result<Arc<dyn ChatBackend>, BackendError> {
            Ok(Arc::new(ChatClient::new(cfg.chat_config()?)?))
        };
        let ocr = || OcrAdapter::Command(cfg.ocr_command.clone().unwrap_or_default());
        let backend = match cfg.kind {
            BackendKind::Vlm => Backend::vlm(id, chat()?, cfg.case_fold),
            BackendKind::Ocr => Backend::ocr(id, ocr(), cfg.case_fold),
            BackendKind::OcrRefine => Backend::ocr_refine(id, ocr(), chat()?, cfg.case_fold),
            BackendKind::OracleFile => {
                let path = cfg.oracle_path.as_deref().expect("validated");
                let texts = read_oracle_file(path)
                    .map_err(|e| BackendError::Config(e.to_string()))?
                    .into_iter()
                    .map(|r| (r.image_id, r.text))
                    .collect();
                Backend::oracle(id, texts, cfg.case_fold)
            }
        };
        Ok(backend.with_max_concurrency(cfg.max_concurrency))
    }

    pub fn kind(&self) -> BackendKind {
        self.kind
    }

    fn chat(&self) -> Result<&Arc<dyn ChatBackend>, BackendError> {
        self.chat
            .as_ref()
            .ok_or_else(|| BackendError::Config(format!("{} backend has no chat endpoint", self.kind)))
    }

    fn ocr_adapter(&self) -> Result<&OcrAdapter, BackendError> {
        self.ocr
            .as_ref()
            .ok_or_else(|| BackendError::Config(format!("{} backend has no OCR adapter", self.kind)))
    }

    fn finish(&self, image_id: &str, raw: String, text: &str, retries_used: u32) -> ExtractedText {
        ExtractedText {
            image_id: image_id.to_owned(),
            backend_id: self.id.clone(),
            text: normalize_text(text, self.case_fold),
            raw_response: raw,
            retries_used,
        }
    }

    pub async fn extract_vlm(&self, image_id: &str, image: &ImageData) -> Result<ExtractedText, BackendError> {
        let message = ChatMessage::user_with_image(prompts::VLM_EXTRACT, image.data_url());
        let reply = self.chat()?.complete(vec![message]).await?;
        let parsed = parse_quoted_response(&reply.content);
        Ok(self.finish(image_id, reply.content, &parsed, reply.retries_used))
    }

    async fn ocr_text(&self, image: &ImageData) -> Result<String, BackendError> {
        let adapter = self.ocr_adapter()?;
        let _slot = self.ocr_slots.acquire().await.expect("semaphore never closed");
        Ok(adapter.lines(image).await?.join(" "))
    }

    /// OCR lines joined with single spaces. An engine that finds nothing
    /// yields empty text rather than an error.
    pub async fn extract_ocr(&self, image_id: &str, image: &ImageData) -> Result<ExtractedText, BackendError> {
        let joined = self.ocr_text(image).await?;
        Ok(self.finish(image_id, joined.clone(), &joined, 0))
    }

    /// OCR, then a text-only chat request asking for the main quote only.
    pub async fn extract_ocr_refine(
        &self,
        image_id: &str,
        image: &ImageData,
    ) -> Result<ExtractedText, BackendError> {
        let ocr = self.ocr_text(image).await?;
        let prompt = prompts::ocr_refine_prompt(&ocr);
        let reply = self.chat()?.complete(vec![ChatMessage::user(prompt)]).await?;
        let parsed = parse_quoted_response(&reply.content);
        Ok(self.finish(image_id, reply.content, &parsed, reply.retries_used))
    }

    pub fn extract_oracle(&self, image_id: &str) -> Result<ExtractedText, BackendError> {
        let text = self
            .oracle
            .get(image_id)
            .ok_or_else(|| BackendError::NotInOracle(image_id.to_owned()))?;
        Ok(self.finish(image_id, text.clone(), text, 0))
    }
}

#[async_trait]
impl Extractor for Backend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn max_concurrency(&self) -> usize {
        self.max_concurrency
    }

    async fn extract(&self, image: &ImageRef) -> Result<ExtractedText, BackendError> {
        match self.kind {
            BackendKind::OracleFile => self.extract_oracle(&image.image_id),
            kind => {
                let data = ImageData::load(&image.path)?;
                match kind {
                    BackendKind::Vlm => self.extract_vlm(&image.image_id, &data).await,
                    BackendKind::Ocr => self.extract_ocr(&image.image_id, &data).await,
                    _ => self.extract_ocr_refine(&image.image_id, &data).await,
                }
            }
        }
    }
}

/// One line of an oracle or candidate extraction file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub image_id: String,
    pub text: String,
}

pub fn read_oracle_file(path: &Path) -> Result<Vec<ExtractionRecord>, ExtractionError> {
    Ok(jsonl::read_path(path)?)
}

/// Reads an `{image_id, text}` file as extractions attributed to `backend_id`.
pub fn load_extractions(path: &Path, backend_id: &str, case_fold: bool) -> Result<Vec<ExtractedText>, ExtractionError> {
    Ok(read_oracle_file(path)?
        .into_iter()
        .map(|r| ExtractedText {
            backend_id: backend_id.to_owned(),
            text: normalize_text(&r.text, case_fold),
            raw_response: r.text,
            image_id: r.image_id,
            retries_used: 0,
        })
        .collect())
}

/// Mean normalized edit distance between oracle and candidate extractions of
/// the same images (lower is better), with its analytic SEM.
pub fn compare_extractors(oracle: &[ExtractedText], candidate: &[ExtractedText]) -> Result<MeanSem, ExtractionError> {
    let by_id: HashMap<&str, &ExtractedText> = candidate.iter().map(|e| (e.image_id.as_str(), e)).collect();
    if by_id.len() != candidate.len() {
        return Err(ExtractionError::IdMismatch("duplicate image id in candidate set".into()));
    }
    if oracle.len() != candidate.len() {
        return Err(ExtractionError::IdMismatch(format!(
            "{} oracle vs {} candidate extractions",
            oracle.len(),
            candidate.len()
        )));
    }
    let distances = oracle
        .iter()
        .map(|o| {
            by_id
                .get(o.image_id.as_str())
                .map(|c| ned_distance(&o.text, &c.text))
                .ok_or_else(|| ExtractionError::IdMismatch(format!("`{}` missing from candidate set", o.image_id)))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    MeanSem::of(&distances).ok_or(ExtractionError::Empty)
}
