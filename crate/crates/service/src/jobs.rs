//! In-memory job table: ordered progress log, live fan-out and results.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use kglink_core::pipeline::{result_rows, Stage, StageEvent};
use kglink_core::LinkingResult;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::broadcast;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressEvent {
    pub job_id: String,
    /// Starts at 1 and increases by one per event.
    pub seq: u64,
    pub stage: Stage,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
}

struct Job {
    events: Vec<ProgressEvent>,
    live: broadcast::Sender<ProgressEvent>,
    /// Serialized once so repeated reads are byte-identical.
    result_body: Option<String>,
    finished_at: Option<Instant>,
}

impl Job {
    fn is_terminal(&self) -> bool {
        self.finished_at.is_some()
    }
}

pub enum ResultLookup {
    Missing,
    Pending,
    Ready(String),
}

/// What a new subscriber gets: everything so far, plus a live feed when
/// the job has not finished yet.
pub struct Subscription {
    pub backlog: Vec<ProgressEvent>,
    pub live: Option<broadcast::Receiver<ProgressEvent>>,
}

pub struct JobStore {
    jobs: Mutex<HashMap<String, Job>>,
    ttl: Duration,
}

impl JobStore {
    pub fn new(ttl: Duration) -> Self {
        Self {
            jobs: Mutex::new(HashMap::new()),
            ttl,
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HashMap<String, Job>> {
        self.jobs.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Registers a job and logs its `received` event.
    pub fn create(&self, detail: String) -> String {
        let id = uuid::Uuid::new_v4().to_string();
        let (live, _) = broadcast::channel(64);
        self.lock().insert(
            id.clone(),
            Job {
                events: Vec::new(),
                live,
                result_body: None,
                finished_at: None,
            },
        );
        self.push(&id, StageEvent {
            stage: Stage::Received,
            detail,
            payload: None,
        });
        id
    }

    pub fn remove(&self, id: &str) {
        self.lock().remove(id);
    }

    /// Appends an event; ignored once the job is terminal.
    pub fn push(&self, id: &str, event: StageEvent) {
        let mut jobs = self.lock();
        let Some(job) = jobs.get_mut(id) else {
            return;
        };
        if job.is_terminal() {
            return;
        }
        let ev = ProgressEvent {
            job_id: id.to_string(),
            seq: job.events.len() as u64 + 1,
            stage: event.stage,
            detail: event.detail,
            payload: event.payload,
        };
        if ev.stage.is_terminal() {
            job.finished_at = Some(Instant::now());
        }
        job.events.push(ev.clone());
        // no receivers is fine: late subscribers read the backlog
        let _ = job.live.send(ev);
    }

    /// Stores the result and emits the terminal event.
    pub fn finish(&self, id: &str, result: Option<&LinkingResult>, failure: Option<String>) {
        let body = json!({
            "rows": result.map(result_rows).unwrap_or_default(),
            "result": result,
        })
        .to_string();
        if let Some(job) = self.lock().get_mut(id) {
            job.result_body = Some(body);
        }
        let errors: Vec<String> = result
            .map(|r| r.errors.iter().map(|e| format!("{}: {}", e.stage.as_str(), e.message)).collect())
            .unwrap_or_default();
        let event = match (failure, errors.is_empty()) {
            (Some(msg), _) => StageEvent {
                stage: Stage::Error,
                detail: msg,
                payload: None,
            },
            (None, false) => StageEvent {
                stage: Stage::Error,
                detail: errors.join("; "),
                payload: Some(json!({ "errors": errors })),
            },
            (None, true) => StageEvent {
                stage: Stage::Done,
                detail: "Linking finished".into(),
                payload: None,
            },
        };
        self.push(id, event);
    }

    pub fn subscribe(&self, id: &str) -> Option<Subscription> {
        let jobs = self.lock();
        let job = jobs.get(id)?;
        Some(Subscription {
            backlog: job.events.clone(),
            live: (!job.is_terminal()).then(|| job.live.subscribe()),
        })
    }

    pub fn events_after(&self, id: &str, seq: u64) -> Vec<ProgressEvent> {
        self.lock()
            .get(id)
            .map(|j| j.events.iter().filter(|e| e.seq > seq).cloned().collect())
            .unwrap_or_default()
    }

    pub fn result(&self, id: &str) -> ResultLookup {
        match self.lock().get(id) {
            None => ResultLookup::Missing,
            Some(job) => match (&job.result_body, job.is_terminal()) {
                (Some(body), true) => ResultLookup::Ready(body.clone()),
                _ => ResultLookup::Pending,
            },
        }
    }

    /// Drops finished jobs older than the TTL; returns how many went.
    pub fn sweep(&self, now: Instant) -> usize {
        let mut jobs = self.lock();
        let before = jobs.len();
        jobs.retain(|_, j| j.finished_at.is_none_or(|t| now.duration_since(t) < self.ttl));
        before - jobs.len()
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(stage: Stage) -> StageEvent {
        StageEvent {
            stage,
            detail: String::new(),
            payload: None,
        }
    }

    #[test]
    fn seq_is_gapless_and_stops_at_terminal() {
        let store = JobStore::new(Duration::from_secs(60));
        let id = store.create("queued".into());
        store.push(&id, ev(Stage::Extracting));
        store.finish(&id, None, Some("boom".into()));
        store.push(&id, ev(Stage::Ranked));
        let sub = store.subscribe(&id).unwrap();
        let seqs: Vec<u64> = sub.backlog.iter().map(|e| e.seq).collect();
        assert_eq!(seqs, [1, 2, 3]);
        assert_eq!(sub.backlog[2].stage, Stage::Error);
        assert!(sub.live.is_none());
    }

    #[test]
    fn result_is_pending_until_terminal() {
        let store = JobStore::new(Duration::from_secs(60));
        let id = store.create(String::new());
        assert!(matches!(store.result(&id), ResultLookup::Pending));
        assert!(matches!(store.result("nope"), ResultLookup::Missing));
        store.finish(&id, None, None);
        let ResultLookup::Ready(a) = store.result(&id) else { panic!() };
        let ResultLookup::Ready(b) = store.result(&id) else { panic!() };
        assert_eq!(a, b);
    }

    #[test]
    fn sweep_only_evicts_old_finished_jobs() {
        let store = JobStore::new(Duration::from_secs(10));
        let done = store.create(String::new());
        let running = store.create(String::new());
        store.finish(&done, None, None);
        assert_eq!(store.sweep(Instant::now()), 0);
        assert_eq!(store.sweep(Instant::now() + Duration::from_secs(11)), 1);
        assert!(store.subscribe(&running).is_some());
        assert!(store.subscribe(&done).is_none());
    }
}
