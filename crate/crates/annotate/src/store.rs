//! Annotation state: task list, gold set and an append-only event log.
//!
//! `tasks.jsonl` and `gold.jsonl` are read once. Every state change
//! (qualification attempt, task serving, judgment) is appended to
//! `events.jsonl` before it is applied in memory, and the in-memory state is
//! rebuilt by replaying that log on open.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use typescore::jsonl::{self, JsonlError};
use typescore::meta_eval::{
    aggregate_judgments, Aggregation, Answer, Judgment, Label, PairStatus, PreferencePair, Question, Side,
    MAX_JUDGES, MIN_JUDGES,
};

pub const TASKS_FILE: &str = "tasks.jsonl";
pub const GOLD_FILE: &str = "gold.jsonl";
pub const EVENTS_FILE: &str = "events.jsonl";

/// Share of gold questions a rater must answer correctly.
pub const QUALIFICATION_THRESHOLD: f64 = 0.9;

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid store: {0}")]
    Invalid(String),
    #[error("no gold questions are configured")]
    GoldSetMissing,
    #[error("rater `{0}` has not passed qualification")]
    NotQualified(String),
    #[error("no tasks remaining for rater `{0}`")]
    NoTasksRemaining(String),
    #[error("unknown pair `{0}`")]
    UnknownPair(String),
    #[error("rater `{rater}` already judged pair `{pair}`")]
    DuplicateJudgment { rater: String, pair: String },
    #[error("pair `{pair}` is not open for rater `{rater}`")]
    StaleTask { rater: String, pair: String },
    #[error("judgment is missing an answer for {0}")]
    IncompleteAnswers(Question),
}

/// One side of a task as stored: the image to show and who made it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskImage {
    pub model_id: String,
    pub image_id: String,
    /// Relative to the image directory.
    pub path: String,
}

/// A pair to annotate. `a` and `b` are the canonical LEFT and RIGHT sides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairTask {
    pub pair_id: String,
    pub instruction_id: String,
    pub instruction: String,
    pub a: TaskImage,
    pub b: TaskImage,
}

/// A qualification question with a known answer (in canonical orientation).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldItem {
    pub gold_id: String,
    pub instruction: String,
    pub a: TaskImage,
    pub b: TaskImage,
    pub question: Question,
    pub answer: Answer,
}

/// A gold item as shown to raters, without its answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldQuestion {
    pub gold_id: String,
    pub instruction: String,
    pub left: ImageView,
    pub right: ImageView,
    pub question: Question,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaterRecord {
    pub rater_id: String,
    pub qualified: bool,
    pub gold_correct: usize,
    pub gold_total: usize,
}

impl RaterRecord {
    pub fn new(rater_id: impl Into<String>, gold_correct: usize, gold_total: usize) -> Self {
        RaterRecord {
            rater_id: rater_id.into(),
            qualified: gold_total > 0 && gold_correct as f64 / gold_total as f64 >= QUALIFICATION_THRESHOLD,
            gold_correct,
            gold_total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageView {
    pub image_id: String,
    pub url: String,
}

impl ImageView {
    fn of(img: &TaskImage) -> Self {
        ImageView {
            image_id: img.image_id.clone(),
            url: format!("/images/{}", img.image_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionView {
    pub id: Question,
    pub prompt: String,
}

/// What a rater sees: the images in presentation order. Model ids and file
/// paths are withheld; images are fetched by id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPayload {
    pub pair_id: String,
    pub instruction: String,
    pub left: ImageView,
    pub right: ImageView,
    pub questions: Vec<QuestionView>,
    pub presentation_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskState {
    pub pair_id: String,
    pub judgments_received: usize,
    pub status: PairStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Qualification { record: RaterRecord, timestamp: u64 },
    Served { rater_id: String, pair_id: String, presentation_seed: u64, timestamp: u64 },
    /// Answers are already in canonical orientation.
    Judged { judgment: Judgment },
}

fn question_prompt(q: Question) -> &'static str {
    match q {
        Question::TextFidelity => "Which image renders the quoted text more accurately?",
        Question::StyleFidelity => "Which image better follows the style described in the instruction?",
        Question::Overall => "Which image do you prefer overall?",
    }
}

fn questions() -> Vec<QuestionView> {
    Question::ALL
        .into_iter()
        .map(|q| QuestionView {
            id: q,
            prompt: question_prompt(q).to_owned(),
        })
        .collect()
}

/// Whether the canonical `a` side is shown on the right for this serving.
pub fn is_swapped(presentation_seed: u64) -> bool {
    presentation_seed & 1 == 1
}

/// Maps answers given on the shown layout back to the canonical sides.
pub fn derandomize(shown: &BTreeMap<Question, Answer>, presentation_seed: u64) -> BTreeMap<Question, Answer> {
    shown
        .iter()
        .map(|(&q, &a)| (q, if is_swapped(presentation_seed) { a.flipped() } else { a }))
        .collect()
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Default)]
struct State {
    raters: HashMap<String, RaterRecord>,
    /// Outstanding servings: (rater, pair) → presentation seed.
    served: HashMap<(String, String), u64>,
    serve_count: u64,
    judgments: HashMap<String, Vec<Judgment>>,
    judged: HashSet<(String, String)>,
}

impl State {
    fn apply(&mut self, event: Event) {
        match event {
            Event::Qualification { record, .. } => {
                self.raters.insert(record.rater_id.clone(), record);
            }
            Event::Served {
                rater_id,
                pair_id,
                presentation_seed,
                ..
            } => {
                self.serve_count += 1;
                self.served.insert((rater_id, pair_id), presentation_seed);
            }
            Event::Judged { judgment } => {
                let key = (judgment.rater_id.clone(), judgment.pair_id.clone());
                self.served.remove(&key);
                self.judged.insert(key);
                self.judgments.entry(judgment.pair_id.clone()).or_default().push(judgment);
            }
        }
    }

    fn judgments_of(&self, pair_id: &str) -> &[Judgment] {
        self.judgments.get(pair_id).map(Vec::as_slice).unwrap_or(&[])
    }

    fn labels(&self, pair_id: &str) -> (PairStatus, BTreeMap<Question, Label>) {
        let judgments = self.judgments_of(pair_id);
        if judgments.len() < MIN_JUDGES {
            return (PairStatus::Open, BTreeMap::new());
        }
        // answers were validated on submit, so aggregation cannot fail
        let agg = aggregate_judgments(judgments).expect("complete judgments");
        let labels: BTreeMap<Question, Label> = agg
            .iter()
            .filter_map(|(&q, a)| match a {
                Aggregation::Decided(l) => Some((q, *l)),
                Aggregation::Pending => None,
            })
            .collect();
        let status = if labels.len() < Question::ALL.len() {
            PairStatus::Open
        } else if labels.values().any(|&l| l == Label::Unresolved) {
            PairStatus::Unresolved
        } else {
            PairStatus::Resolved
        };
        (status, labels)
    }
}

pub struct Store {
    dir: PathBuf,
    tasks: Vec<PairTask>,
    task_index: HashMap<String, usize>,
    image_paths: HashMap<String, String>,
    gold: Vec<GoldItem>,
    seed: u64,
    state: RwLock<State>,
    log: Mutex<File>,
}

impl Store {
    /// Writes a fresh store directory with the given tasks and gold set and
    /// an empty event log.
    pub fn create(dir: &Path, tasks: &[PairTask], gold: &[GoldItem]) -> Result<(), AnnotateError> {
        std::fs::create_dir_all(dir).map_err(|source| AnnotateError::Io {
            path: dir.to_owned(),
            source,
        })?;
        jsonl::write_path(&dir.join(TASKS_FILE), tasks)?;
        jsonl::write_path(&dir.join(GOLD_FILE), gold)?;
        jsonl::write_atomic(&dir.join(EVENTS_FILE), b"")?;
        Ok(())
    }

    /// Opens a store and replays its event log. A missing gold file means
    /// an empty gold set. `seed` drives presentation order.
    pub fn open(dir: &Path, seed: u64) -> Result<Store, AnnotateError> {
        let tasks: Vec<PairTask> = jsonl::read_path(&dir.join(TASKS_FILE))?;
        let gold_path = dir.join(GOLD_FILE);
        let gold: Vec<GoldItem> = if gold_path.exists() {
            jsonl::read_path(&gold_path)?
        } else {
            Vec::new()
        };

        let mut task_index = HashMap::new();
        for (i, t) in tasks.iter().enumerate() {
            if t.a.model_id == t.b.model_id {
                return Err(AnnotateError::Invalid(format!(
                    "pair `{}` compares model `{}` with itself",
                    t.pair_id, t.a.model_id
                )));
            }
            if task_index.insert(t.pair_id.clone(), i).is_some() {
                return Err(AnnotateError::Invalid(format!("duplicate pair id `{}`", t.pair_id)));
            }
        }

        let mut image_paths: HashMap<String, String> = HashMap::new();
        let sides = tasks.iter().flat_map(|t| [&t.a, &t.b]);
        for img in sides.chain(gold.iter().flat_map(|g| [&g.a, &g.b])) {
            if img.image_id.is_empty() || img.image_id.contains('/') {
                return Err(AnnotateError::Invalid(format!("bad image id `{}`", img.image_id)));
            }
            if Path::new(&img.path)
                .components()
                .any(|c| !matches!(c, std::path::Component::Normal(_)))
            {
                return Err(AnnotateError::Invalid(format!("image path `{}` must be relative", img.path)));
            }
            match image_paths.get(&img.image_id) {
                Some(p) if *p != img.path => {
                    return Err(AnnotateError::Invalid(format!(
                        "image `{}` has two paths: `{p}` and `{}`",
                        img.image_id, img.path
                    )))
                }
                _ => {
                    image_paths.insert(img.image_id.clone(), img.path.clone());
                }
            }
        }

        let events_path = dir.join(EVENTS_FILE);
        let state = replay(&events_path)?;
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&events_path)
            .map_err(|source| AnnotateError::Io {
                path: events_path.clone(),
                source,
            })?;

        Ok(Store {
            dir: dir.to_owned(),
            tasks,
            task_index,
            image_paths,
            gold,
            seed,
            state: RwLock::new(state),
            log: Mutex::new(log),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn tasks(&self) -> &[PairTask] {
        &self.tasks
    }

    /// Appends `event` to the log, then applies it. Callers hold the log lock.
    fn commit(&self, log: &mut File, event: Event) -> Result<(), AnnotateError> {
        let mut line = serde_json::to_string(&event).expect("events serialize");
        line.push('\n');
        let path = self.dir.join(EVENTS_FILE);
        log.write_all(line.as_bytes())
            .and_then(|_| log.sync_data())
            .map_err(|source| AnnotateError::Io { path, source })?;
        self.state.write().expect("state lock").apply(event);
        Ok(())
    }

    /// File path of an image, relative to the image directory.
    pub fn image_path(&self, image_id: &str) -> Option<&str> {
        self.image_paths.get(image_id).map(String::as_str)
    }

    pub fn gold_questions(&self) -> Vec<GoldQuestion> {
        self.gold
            .iter()
            .map(|g| GoldQuestion {
                gold_id: g.gold_id.clone(),
                instruction: g.instruction.clone(),
                left: ImageView::of(&g.a),
                right: ImageView::of(&g.b),
                question: g.question,
                prompt: question_prompt(g.question).to_owned(),
            })
            .collect()
    }

    /// Scores `answers` (gold id → answer) against the gold set. Unanswered
    /// gold items count as wrong. Each attempt is logged and the latest one
    /// decides the rater's status.
    pub fn qualify_rater(&self, rater_id: &str, answers: &BTreeMap<String, Answer>) -> Result<RaterRecord, AnnotateError> {
        if self.gold.is_empty() {
            return Err(AnnotateError::GoldSetMissing);
        }
        let correct = self
            .gold
            .iter()
            .filter(|g| answers.get(&g.gold_id) == Some(&g.answer))
            .count();
        let record = RaterRecord::new(rater_id, correct, self.gold.len());
        let mut log = self.log.lock().expect("log lock");
        self.commit(
            &mut log,
            Event::Qualification {
                record: record.clone(),
                timestamp: now_ms(),
            },
        )?;
        Ok(record)
    }

    pub fn rater(&self, rater_id: &str) -> Option<RaterRecord> {
        self.state.read().expect("state lock").raters.get(rater_id).cloned()
    }

    fn require_qualified(state: &State, rater_id: &str) -> Result<(), AnnotateError> {
        match state.raters.get(rater_id) {
            Some(r) if r.qualified => Ok(()),
            _ => Err(AnnotateError::NotQualified(rater_id.to_owned())),
        }
    }

    fn payload(&self, task: &PairTask, presentation_seed: u64) -> TaskPayload {
        let (left, right) = if is_swapped(presentation_seed) {
            (&task.b, &task.a)
        } else {
            (&task.a, &task.b)
        };
        TaskPayload {
            pair_id: task.pair_id.clone(),
            instruction: task.instruction.clone(),
            left: ImageView::of(left),
            right: ImageView::of(right),
            questions: questions(),
            presentation_seed,
        }
    }

    /// The rater's outstanding task if it is still open, otherwise the first
    /// open pair (in task-file order) the rater has not judged.
    pub fn next_task(&self, rater_id: &str) -> Result<TaskPayload, AnnotateError> {
        let mut log = self.log.lock().expect("log lock");
        let (pick, seed) = {
            let state = self.state.read().expect("state lock");
            Self::require_qualified(&state, rater_id)?;
            let open = |t: &PairTask| state.labels(&t.pair_id).0 == PairStatus::Open;

            let outstanding = self.tasks.iter().find_map(|t| {
                state
                    .served
                    .get(&(rater_id.to_owned(), t.pair_id.clone()))
                    .filter(|_| open(t))
                    .map(|&s| (t, s))
            });
            if let Some((task, seed)) = outstanding {
                return Ok(self.payload(task, seed));
            }

            let task = self
                .tasks
                .iter()
                .find(|t| {
                    open(t)
                        && state.judgments_of(&t.pair_id).len() < MAX_JUDGES
                        && !state.judged.contains(&(rater_id.to_owned(), t.pair_id.clone()))
                })
                .ok_or_else(|| AnnotateError::NoTasksRemaining(rater_id.to_owned()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(state.serve_count);
            (task, rng.next_u64())
        };
        self.commit(
            &mut log,
            Event::Served {
                rater_id: rater_id.to_owned(),
                pair_id: pick.pair_id.clone(),
                presentation_seed: seed,
                timestamp: now_ms(),
            },
        )?;
        Ok(self.payload(pick, seed))
    }

    /// Records a judgment given on the layout the rater was shown.
    pub fn submit_judgment(
        &self,
        rater_id: &str,
        pair_id: &str,
        shown: &BTreeMap<Question, Answer>,
    ) -> Result<TaskState, AnnotateError> {
        if !self.task_index.contains_key(pair_id) {
            return Err(AnnotateError::UnknownPair(pair_id.to_owned()));
        }
        if let Some(q) = Question::ALL.into_iter().find(|q| !shown.contains_key(q)) {
            return Err(AnnotateError::IncompleteAnswers(q));
        }
        let mut log = self.log.lock().expect("log lock");
        let judgment = {
            let state = self.state.read().expect("state lock");
            Self::require_qualified(&state, rater_id)?;
            let key = (rater_id.to_owned(), pair_id.to_owned());
            if state.judged.contains(&key) {
                return Err(AnnotateError::DuplicateJudgment {
                    rater: rater_id.to_owned(),
                    pair: pair_id.to_owned(),
                });
            }
            let stale = || AnnotateError::StaleTask {
                rater: rater_id.to_owned(),
                pair: pair_id.to_owned(),
            };
            let &seed = state.served.get(&key).ok_or_else(stale)?;
            if state.labels(pair_id).0 != PairStatus::Open || state.judgments_of(pair_id).len() >= MAX_JUDGES {
                return Err(stale());
            }
            Judgment {
                pair_id: pair_id.to_owned(),
                rater_id: rater_id.to_owned(),
                answers: derandomize(shown, seed),
                timestamp: now_ms(),
            }
        };
        self.commit(&mut log, Event::Judged { judgment })?;
        Ok(self.task_state(pair_id).expect("known pair"))
    }

    pub fn task_state(&self, pair_id: &str) -> Option<TaskState> {
        self.task_index.get(pair_id)?;
        let state = self.state.read().expect("state lock");
        Some(TaskState {
            pair_id: pair_id.to_owned(),
            judgments_received: state.judgments_of(pair_id).len(),
            status: state.labels(pair_id).0,
        })
    }

    /// All judgments in log order.
    pub fn judgments(&self) -> Vec<Judgment> {
        let state = self.state.read().expect("state lock");
        let mut all: Vec<Judgment> = self
            .tasks
            .iter()
            .flat_map(|t| state.judgments_of(&t.pair_id).iter().cloned())
            .collect();
        all.sort_by_key(|j| j.timestamp);
        all
    }

    /// Every pair in task-file order with its status and decided labels.
    pub fn export_annotations(&self) -> Vec<PreferencePair> {
        let state = self.state.read().expect("state lock");
        self.tasks
            .iter()
            .map(|t| {
                let (status, human_label) = state.labels(&t.pair_id);
                PreferencePair {
                    pair_id: t.pair_id.clone(),
                    instruction_id: t.instruction_id.clone(),
                    left: Side {
                        model_id: t.a.model_id.clone(),
                        image_id: t.a.image_id.clone(),
                    },
                    right: Side {
                        model_id: t.b.model_id.clone(),
                        image_id: t.b.image_id.clone(),
                    },
                    human_label,
                    status: Some(status),
                    judgments: state.judgments_of(&t.pair_id).len(),
                }
            })
            .collect()
    }
}

/// Rebuilds state from the log. A final line without its newline was cut
/// short by a crash; it is dropped and trimmed from the file.
fn replay(path: &Path) -> Result<State, AnnotateError> {
    let mut state = State::default();
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(state),
        Err(source) => {
            return Err(AnnotateError::Io {
                path: path.to_owned(),
                source,
            })
        }
    };
    let mut valid_len = 0;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        // every event is written with its newline in one call
        if !line.ends_with('\n') {
            break;
        }
        if !line.trim().is_empty() {
            let event: Event = serde_json::from_str(line).map_err(|e| JsonlError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            state.apply(event);
        }
        valid_len += line.len();
    }
    if valid_len < text.len() {
        let file = OpenOptions::new()
            .write(true)
            .open(path)
            .and_then(|f| f.set_len(valid_len as u64).map(|_| f));
        file.map_err(|source| AnnotateError::Io {
            path: path.to_owned(),
            source,
        })?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qualification_threshold() {
        assert!(RaterRecord::new("r", 9, 10).qualified);
        assert!(!RaterRecord::new("r", 8, 10).qualified);
        assert!(!RaterRecord::new("r", 0, 0).qualified);
        assert!(RaterRecord::new("r", 1, 1).qualified);
    }

    #[test]
    fn derandomize_flips_only_when_swapped() {
        let shown = BTreeMap::from([(Question::TextFidelity, Answer::Left), (Question::Overall, Answer::Tie)]);
        assert_eq!(derandomize(&shown, 2), shown);
        let flipped = derandomize(&shown, 3);
        assert_eq!(flipped[&Question::TextFidelity], Answer::Right);
        assert_eq!(flipped[&Question::Overall], Answer::Tie);
    }

    #[test]
    fn event_wire_shape() {
        let e = Event::Served {
            rater_id: "r".into(),
            pair_id: "p".into(),
            presentation_seed: 7,
            timestamp: 1,
        };
        let v = serde_json::to_value(&e).unwrap();
        assert_eq!(v["event"], "served");
        assert_eq!(serde_json::from_value::<Event>(v).unwrap(), e);
    }
}
