//! Vote collection service.
//!
//! Votes are appended to a JSONL log and synced to disk before they are
//! acknowledged; on start the log is replayed to rebuild the in-memory
//! study state. All mutations go through one mutex, so the log order is the
//! acknowledgment order.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::sampling::{ordered, Pair, Trial};
use crate::votes::VoteRecord;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("no trial for set {set_id} pair {pair:?}")]
    UnknownTrial { set_id: String, pair: Pair },
    #[error("choice {choice} is not one of the pair {pair:?}")]
    InvalidChoice { choice: usize, pair: Pair },
    #[error("left item {left} does not match the served trial (left item {expected})")]
    LeftMismatch { left: usize, expected: usize },
    #[error("worker {worker_id} already voted on set {set_id} pair {pair:?}")]
    Duplicate {
        worker_id: String,
        set_id: String,
        pair: Pair,
    },
    #[error("worker id must not be empty")]
    EmptyWorker,
    #[error("study has a self-comparison in trial {0}")]
    SelfComparison(usize),
    #[error("study has duplicate trials for set {set_id} pair {pair:?}")]
    DuplicateTrial { set_id: String, pair: Pair },
    #[error("vote log line {line} is corrupt: {message}")]
    CorruptLog { line: usize, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("study file {path}: {message}")]
    BadStudy { path: PathBuf, message: String },
}

impl ServiceError {
    fn status(&self) -> StatusCode {
        match self {
            Self::Duplicate { .. } => StatusCode::CONFLICT,
            Self::UnknownTrial { .. } | Self::InvalidChoice { .. } | Self::LeftMismatch { .. } | Self::EmptyWorker => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.to_string() });
        (self.status(), Json(body)).into_response()
    }
}

/// Item labels of one set, in item-index order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudySet {
    pub set_id: String,
    pub n_items: usize,
    #[serde(default)]
    pub methods: Vec<String>,
}

/// The trials of a study, as written by `sample-pairs`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Study {
    pub votes_target: u32,
    pub sets: Vec<StudySet>,
    pub trials: Vec<Trial>,
}

impl Study {
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path).map_err(|source| ServiceError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ServiceError::BadStudy {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Stimulus URLs for one trial under the `/stimuli` prefix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialImages {
    pub ground_truth: String,
    pub ground_truth_zoom: String,
    pub left: String,
    pub left_zoom: String,
    pub right: String,
    pub right_zoom: String,
    pub rois: String,
}

impl TrialImages {
    pub fn for_trial(t: &Trial) -> Self {
        let base = format!("/stimuli/{}", t.set_id);
        let right = t.right_item();
        Self {
            ground_truth: format!("{base}/gt.png"),
            ground_truth_zoom: format!("{base}/gt_zoom.png"),
            left: format!("{base}/{}.png", t.left_item),
            left_zoom: format!("{base}/{}_zoom.png", t.left_item),
            right: format!("{base}/{right}.png"),
            right_zoom: format!("{base}/{right}_zoom.png"),
            rois: format!("{base}/rois.json"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialView {
    pub trial_id: usize,
    pub set_id: String,
    pub pair: Pair,
    pub left_item: usize,
    pub right_item: usize,
    pub images: TrialImages,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub answered: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum NextResponse {
    Trial { trial: TrialView, progress: Progress },
    Complete { progress: Progress },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub vote_id: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusReport {
    pub trials: usize,
    pub trials_complete: usize,
    pub votes_target: u32,
    pub votes_recorded: usize,
    pub votes_needed: u64,
    pub workers: usize,
    pub complete: bool,
}

/// In-memory view of the study, rebuilt from the log.
#[derive(Debug)]
pub struct StudyState {
    trials: Vec<Trial>,
    votes_target: u32,
    index: HashMap<(String, Pair), usize>,
    counts: Vec<u32>,
    answered: HashMap<String, HashSet<usize>>,
    assigned: HashMap<String, usize>,
    log: Vec<VoteRecord>,
}

impl StudyState {
    pub fn new(study: &Study) -> Result<Self, ServiceError> {
        let mut index = HashMap::new();
        for (k, t) in study.trials.iter().enumerate() {
            if t.pair.0 == t.pair.1 {
                return Err(ServiceError::SelfComparison(t.trial_id));
            }
            let key = (t.set_id.clone(), ordered(t.pair.0, t.pair.1));
            if index.insert(key, k).is_some() {
                return Err(ServiceError::DuplicateTrial {
                    set_id: t.set_id.clone(),
                    pair: t.pair,
                });
            }
        }
        Ok(Self {
            counts: vec![0; study.trials.len()],
            trials: study.trials.clone(),
            votes_target: study.votes_target,
            index,
            answered: HashMap::new(),
            assigned: HashMap::new(),
            log: Vec::new(),
        })
    }

    fn progress(&self, worker: &str) -> Progress {
        Progress {
            answered: self.answered.get(worker).map_or(0, HashSet::len),
            total: self.trials.len(),
        }
    }

    /// Serves the least-voted trial this worker has not answered, ties by
    /// trial id. Repeated calls return the same trial until it is answered.
    pub fn next_pair(&mut self, worker: &str) -> Result<NextResponse, ServiceError> {
        if worker.is_empty() {
            return Err(ServiceError::EmptyWorker);
        }
        let done = self.answered.get(worker);
        let is_open = |k: usize| done.is_none_or(|d| !d.contains(&k));
        let pick = match self.assigned.get(worker) {
            Some(&k) if is_open(k) && self.counts[k] < self.votes_target => Some(k),
            _ => (0..self.trials.len())
                .filter(|&k| self.counts[k] < self.votes_target && is_open(k))
                .min_by_key(|&k| (self.counts[k], self.trials[k].trial_id)),
        };
        let progress = self.progress(worker);
        let Some(k) = pick else {
            self.assigned.remove(worker);
            return Ok(NextResponse::Complete { progress });
        };
        self.assigned.insert(worker.to_string(), k);
        let t = &self.trials[k];
        debug_assert_ne!(t.pair.0, t.pair.1);
        Ok(NextResponse::Trial {
            trial: TrialView {
                trial_id: t.trial_id,
                set_id: t.set_id.clone(),
                pair: t.pair,
                left_item: t.left_item,
                right_item: t.right_item(),
                images: TrialImages::for_trial(t),
            },
            progress,
        })
    }

    /// Checks a vote and returns the index of its trial.
    pub fn validate(&self, v: &VoteRecord) -> Result<usize, ServiceError> {
        if v.worker_id.is_empty() {
            return Err(ServiceError::EmptyWorker);
        }
        let pair = ordered(v.pair.0, v.pair.1);
        let &k = self
            .index
            .get(&(v.set_id.clone(), pair))
            .ok_or_else(|| ServiceError::UnknownTrial {
                set_id: v.set_id.clone(),
                pair: v.pair,
            })?;
        if !v.choice_is_valid() {
            return Err(ServiceError::InvalidChoice {
                choice: v.choice,
                pair: v.pair,
            });
        }
        let expected = self.trials[k].left_item;
        if v.left_item != expected {
            return Err(ServiceError::LeftMismatch {
                left: v.left_item,
                expected,
            });
        }
        if self.answered.get(&v.worker_id).is_some_and(|d| d.contains(&k)) {
            return Err(ServiceError::Duplicate {
                worker_id: v.worker_id.clone(),
                set_id: v.set_id.clone(),
                pair: v.pair,
            });
        }
        Ok(k)
    }

    fn apply(&mut self, k: usize, v: VoteRecord) {
        self.counts[k] += 1;
        if self.assigned.get(&v.worker_id) == Some(&k) {
            self.assigned.remove(&v.worker_id);
        }
        self.answered.entry(v.worker_id.clone()).or_default().insert(k);
        self.log.push(v);
    }

    pub fn votes(&self) -> &[VoteRecord] {
        &self.log
    }

    pub fn status(&self) -> StatusReport {
        let target = self.votes_target;
        let trials_complete = self.counts.iter().filter(|&&c| c >= target).count();
        StatusReport {
            trials: self.trials.len(),
            trials_complete,
            votes_target: target,
            votes_recorded: self.log.len(),
            votes_needed: self.counts.iter().map(|&c| u64::from(target.saturating_sub(c))).sum(),
            workers: self.answered.len(),
            complete: trials_complete == self.trials.len(),
        }
    }
}

struct Inner {
    state: StudyState,
    file: File,
    path: PathBuf,
    /// Length of the log up to the last acknowledged record.
    len: u64,
}

/// Study state plus its durable log.
pub struct VoteService {
    inner: Mutex<Inner>,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

impl VoteService {
    /// Opens (or creates) the log at `log_path` and replays it. A torn final
    /// line left by a crash mid-write is cut off.
    pub fn open(study: &Study, log_path: &Path) -> Result<Self, ServiceError> {
        let io = |source| ServiceError::Io {
            path: log_path.to_path_buf(),
            source,
        };
        let mut state = StudyState::new(study)?;
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(log_path)
            .map_err(io)?;

        let mut good_len = 0u64;
        let mut reader = BufReader::new(&file);
        let mut line = String::new();
        let mut line_no = 0;
        loop {
            line.clear();
            let read = reader.read_line(&mut line).map_err(io)?;
            if read == 0 {
                break;
            }
            line_no += 1;
            let complete = line.ends_with('\n');
            let parsed = serde_json::from_str::<VoteRecord>(line.trim_end());
            match parsed {
                Ok(v) => {
                    if !complete {
                        // A record without its newline was never acknowledged.
                        break;
                    }
                    let k = state.validate(&v).map_err(|e| ServiceError::CorruptLog {
                        line: line_no,
                        message: e.to_string(),
                    })?;
                    state.apply(k, v);
                    good_len += read as u64;
                }
                Err(_) if !complete => break,
                Err(_) if line.trim().is_empty() => good_len += read as u64,
                Err(e) => {
                    return Err(ServiceError::CorruptLog {
                        line: line_no,
                        message: e.to_string(),
                    })
                }
            }
        }
        drop(reader);
        if file.metadata().map_err(io)?.len() > good_len {
            log::warn!("truncating torn record at the end of {}", log_path.display());
            file.set_len(good_len).map_err(io)?;
            file.sync_data().map_err(io)?;
        }
        file.seek(SeekFrom::End(0)).map_err(io)?;
        Ok(Self {
            inner: Mutex::new(Inner {
                state,
                file,
                path: log_path.to_path_buf(),
                len: good_len,
            }),
        })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn next_pair(&self, worker: &str) -> Result<NextResponse, ServiceError> {
        self.lock().state.next_pair(worker)
    }

    /// Validates, assigns id and timestamp, appends and syncs, then applies.
    pub fn record_vote(&self, mut v: VoteRecord) -> Result<Ack, ServiceError> {
        let mut inner = self.lock();
        let k = inner.state.validate(&v)?;
        v.vote_id = inner.state.log.len() as u64;
        if v.timestamp == 0 {
            v.timestamp = now_ms();
        }
        let mut line = serde_json::to_vec(&v).expect("vote serializes");
        line.push(b'\n');
        let path = inner.path.clone();
        let io = |source| ServiceError::Io { path, source };
        let written = inner.file.write_all(&line).and_then(|()| inner.file.flush()).and_then(|()| inner.file.sync_data());
        if let Err(e) = written {
            // Drop any partial write so the log and the state stay in step.
            let len = inner.len;
            if let Err(cut) = inner.file.set_len(len) {
                log::error!("could not truncate {} after a failed append: {cut}", inner.path.display());
            }
            return Err(io(e));
        }
        inner.len += line.len() as u64;
        let vote_id = v.vote_id;
        inner.state.apply(k, v);
        Ok(Ack { vote_id })
    }

    pub fn export(&self) -> Vec<VoteRecord> {
        self.lock().state.votes().to_vec()
    }

    pub fn status(&self) -> StatusReport {
        self.lock().state.status()
    }
}

#[derive(Deserialize)]
struct NextQuery {
    worker: String,
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> T {
    tokio::task::spawn_blocking(f).await.expect("worker thread panicked")
}

async fn next_handler(
    State(svc): State<Arc<VoteService>>,
    Query(q): Query<NextQuery>,
) -> Result<Json<NextResponse>, ServiceError> {
    blocking(move || svc.next_pair(&q.worker)).await.map(Json)
}

async fn vote_handler(
    State(svc): State<Arc<VoteService>>,
    Json(v): Json<VoteRecord>,
) -> Result<Json<Ack>, ServiceError> {
    blocking(move || svc.record_vote(v)).await.map(Json)
}

async fn export_handler(State(svc): State<Arc<VoteService>>) -> Response {
    let votes = svc.export();
    let mut body = Vec::new();
    crate::votes::write_jsonl(&mut body, &votes).expect("in-memory write");
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
}

async fn status_handler(State(svc): State<Arc<VoteService>>) -> Json<StatusReport> {
    Json(svc.status())
}

/// API routes, stimulus files under `/stimuli` and, when given, the rater UI
/// bundle at the root.
pub fn router(svc: Arc<VoteService>, stimuli_dir: Option<&Path>, ui_dir: Option<&Path>) -> Router {
    let mut app = Router::new()
        .route("/api/next", get(next_handler))
        .route("/api/vote", post(vote_handler))
        .route("/api/export", get(export_handler))
        .route("/api/status", get(status_handler))
        .with_state(svc);
    if let Some(dir) = stimuli_dir {
        app = app.nest_service("/stimuli", ServeDir::new(dir));
    }
    if let Some(dir) = ui_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    app
}

/// Serves on a bound listener until the process receives Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
