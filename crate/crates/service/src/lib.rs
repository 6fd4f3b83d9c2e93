//! HTTP front end for the linker.
//!
//! `POST /api/link` queues a job and answers 202 with its id; progress is
//! streamed as server-sent events from `GET /api/jobs/{id}/events`
//! (backlog first, closed after `done` or `error`); the final rows and the
//! full result come from `GET /api/jobs/{id}/result`. Jobs live in memory
//! and are evicted a fixed time after they finish.

mod jobs;

use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use kglink_core::pipeline::{LinkMode, ProgressSink, StageEvent};
use kglink_core::{LinkingResult, Pipeline};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{broadcast, Semaphore};
use tower_http::services::{ServeDir, ServeFile};

pub use jobs::{JobStore, ProgressEvent};
use jobs::{ResultLookup, Subscription};

/// Seconds a client is asked to wait after a 429.
pub const RETRY_AFTER_SECS: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    /// Jobs linked at the same time.
    pub workers: usize,
    /// Jobs allowed to wait for a worker before submissions get 429.
    pub queue_capacity: usize,
    pub job_ttl: Duration,
    /// Built web console; a placeholder page is served when absent.
    pub ui_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            workers: 2,
            queue_capacity: 16,
            job_ttl: Duration::from_secs(3600),
            ui_dir: None,
        }
    }
}

/// Runs one job. Implemented by [`Pipeline`]; tests substitute their own.
#[async_trait]
pub trait JobRunner: Send + Sync + 'static {
    async fn run(&self, text: &str, mode: LinkMode, progress: &dyn ProgressSink) -> LinkingResult;
}

#[async_trait]
impl JobRunner for Pipeline {
    async fn run(&self, text: &str, mode: LinkMode, progress: &dyn ProgressSink) -> LinkingResult {
        self.link_with_progress(text, mode, progress).await
    }
}

struct AppState {
    runner: Arc<dyn JobRunner>,
    jobs: Arc<JobStore>,
    workers: Arc<Semaphore>,
    waiting: AtomicUsize,
    config: ServiceConfig,
    public_config: Value,
}

#[derive(Clone)]
pub struct Service {
    state: Arc<AppState>,
}

#[derive(Debug, Deserialize)]
struct LinkRequest {
    text: String,
    #[serde(default)]
    mode: LinkMode,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

struct JobSink {
    jobs: Arc<JobStore>,
    id: String,
}

impl ProgressSink for JobSink {
    fn emit(&self, event: StageEvent) {
        self.jobs.push(&self.id, event);
    }
}

impl Service {
    /// `public_config` is returned verbatim by `/api/config`; secrets must
    /// already be redacted.
    pub fn new(runner: Arc<dyn JobRunner>, config: ServiceConfig, public_config: Value) -> Self {
        Self {
            state: Arc::new(AppState {
                runner,
                jobs: Arc::new(JobStore::new(config.job_ttl)),
                workers: Arc::new(Semaphore::new(config.workers.max(1))),
                waiting: AtomicUsize::new(0),
                config,
                public_config,
            }),
        }
    }

    pub fn jobs(&self) -> Arc<JobStore> {
        self.state.jobs.clone()
    }

    /// Periodically evicts expired jobs until the runtime shuts down.
    pub fn spawn_sweeper(&self) -> tokio::task::JoinHandle<()> {
        let jobs = self.state.jobs.clone();
        let every = (self.state.config.job_ttl / 4).clamp(Duration::from_secs(1), Duration::from_secs(60));
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(every);
            loop {
                tick.tick().await;
                let evicted = jobs.sweep(Instant::now());
                if evicted > 0 {
                    tracing::debug!(evicted, "evicted expired jobs");
                }
            }
        })
    }

    pub fn router(&self) -> Router {
        let api = Router::new()
            .route("/api/link", post(submit))
            .route("/api/jobs/{id}/events", get(events))
            .route("/api/jobs/{id}/result", get(result))
            .route("/api/health", get(health))
            .route("/api/config", get(config));
        let api = api.with_state(self.state.clone());
        match &self.state.config.ui_dir {
            Some(dir) if dir.join("index.html").is_file() => {
                api.fallback_service(ServeDir::new(dir).fallback(ServeFile::new(dir.join("index.html"))))
            }
            _ => api.route("/", get(placeholder_page)),
        }
    }
}

async fn submit(State(state): State<Arc<AppState>>, body: Result<Json<LinkRequest>, JsonRejection>) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
    };
    if req.text.trim().is_empty() {
        return error(StatusCode::BAD_REQUEST, "text must not be empty");
    }
    let capacity = state.config.queue_capacity;
    let admitted = state
        .waiting
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |w| (w < capacity).then_some(w + 1))
        .is_ok();
    if !admitted {
        return (
            StatusCode::TOO_MANY_REQUESTS,
            [(header::RETRY_AFTER, RETRY_AFTER_SECS.to_string())],
            Json(json!({ "error": "job queue is full", "retry_after": RETRY_AFTER_SECS })),
        )
            .into_response();
    }
    state.jobs.sweep(Instant::now());
    let id = state.jobs.create(format!("Received {} characters ({} mode)", req.text.chars().count(), req.mode));

    let job_state = state.clone();
    let job_id = id.clone();
    tokio::spawn(async move {
        let permit = job_state.workers.clone().acquire_owned().await;
        job_state.waiting.fetch_sub(1, Ordering::SeqCst);
        let _permit = match permit {
            Ok(p) => p,
            Err(_) => {
                job_state.jobs.finish(&job_id, None, Some("service shutting down".into()));
                return;
            }
        };
        let runner = job_state.runner.clone();
        let sink = JobSink {
            jobs: job_state.jobs.clone(),
            id: job_id.clone(),
        };
        let text = req.text;
        let run = tokio::spawn(async move {
            let out = runner.run(&text, req.mode, &sink).await;
            drop(sink);
            out
        })
        .await;
        match run {
            Ok(result) => job_state.jobs.finish(&job_id, Some(&result), None),
            Err(e) => job_state.jobs.finish(&job_id, None, Some(format!("job crashed: {e}"))),
        }
    });
    (StatusCode::ACCEPTED, Json(json!({ "job_id": id }))).into_response()
}

fn sse_event(ev: &ProgressEvent) -> Event {
    Event::default()
        .id(ev.seq.to_string())
        .event(ev.stage.as_str())
        .data(serde_json::to_string(ev).unwrap_or_default())
}

struct Feed {
    jobs: Arc<JobStore>,
    id: String,
    pending: std::collections::VecDeque<ProgressEvent>,
    live: Option<broadcast::Receiver<ProgressEvent>>,
    last_seq: u64,
    closed: bool,
}

fn feed_stream(feed: Feed) -> impl Stream<Item = Result<Event, Infallible>> {
    futures::stream::unfold(feed, |mut f| async move {
        loop {
            if f.closed {
                return None;
            }
            if let Some(ev) = f.pending.pop_front() {
                if ev.seq <= f.last_seq {
                    continue;
                }
                f.last_seq = ev.seq;
                f.closed = ev.stage.is_terminal();
                return Some((Ok(sse_event(&ev)), f));
            }
            let rx = f.live.as_mut()?;
            match rx.recv().await {
                Ok(ev) => f.pending.push_back(ev),
                Err(broadcast::error::RecvError::Lagged(_)) => {
                    let missed = f.jobs.events_after(&f.id, f.last_seq);
                    f.pending.extend(missed);
                }
                // the job was evicted mid-stream
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    })
}

async fn events(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    let Some(Subscription { backlog, live }) = state.jobs.subscribe(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown job {id}"));
    };
    let feed = Feed {
        jobs: state.jobs.clone(),
        id,
        pending: backlog.into(),
        live,
        last_seq: 0,
        closed: false,
    };
    Sse::new(feed_stream(feed)).keep_alive(KeepAlive::default()).into_response()
}

async fn result(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match state.jobs.result(&id) {
        ResultLookup::Missing => error(StatusCode::NOT_FOUND, format!("unknown job {id}")),
        ResultLookup::Pending => error(StatusCode::CONFLICT, "job is still running"),
        ResultLookup::Ready(body) => ([(header::CONTENT_TYPE, "application/json")], body).into_response(),
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "version": env!("CARGO_PKG_VERSION"),
        "jobs": state.jobs.len(),
    }))
}

async fn config(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(state.public_config.clone())
}

async fn placeholder_page() -> Html<&'static str> {
    Html(include_str!("placeholder.html"))
}
