//! Bounded-concurrency job execution. Records are persisted before each state
//! becomes visible; a job found running at startup is queued again once.

use std::any::Any;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use tokio::sync::{mpsc, Mutex};
use tokio::task::JoinHandle;
use tracing::{error, info, warn};

use crate::error::{Cause, ServiceError, ServiceResult};
use crate::jobs::{now_ms, JobKind, JobRecord, JobState, JobStore};

pub const DEFAULT_WORKERS: usize = 2;

/// Runs one job. Implementations write their outputs under `dir`.
pub trait Executor: Send + Sync + 'static {
    fn execute(&self, record: &JobRecord, dir: &Path) -> Result<Vec<String>, Cause>;
}

fn panic_cause(payload: Box<dyn Any + Send>) -> Cause {
    let msg = payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into());
    Cause::new("panic", msg)
}

fn settle(store: &JobStore, record: &mut JobRecord, outcome: Result<Vec<String>, Cause>) -> ServiceResult<()> {
    let now = now_ms();
    let moved = match outcome {
        Ok(results) => record.succeed(results, now),
        Err(cause) => {
            warn!(job = %record.id, code = %cause.code, "job failed: {}", cause.message);
            record.fail(cause, now)
        }
    };
    moved.map_err(|e| ServiceError::Internal(e.to_string()))?;
    store.save(record)
}

/// Move a queued job to running and persist it. `None` when someone else got there first.
fn claim(store: &JobStore, id: &str) -> ServiceResult<Option<JobRecord>> {
    let mut record = store.get(id)?;
    if record.state != JobState::Queued {
        return Ok(None);
    }
    record.start(now_ms()).map_err(|e| ServiceError::Internal(e.to_string()))?;
    store.save(&record)?;
    Ok(Some(record))
}

async fn run_one(store: &JobStore, executor: &Arc<dyn Executor>, id: String) -> ServiceResult<()> {
    let Some(mut record) = claim(store, &id)? else {
        return Ok(());
    };
    let exec = executor.clone();
    let snapshot = record.clone();
    let dir = store.dir(&id);
    let outcome = match tokio::task::spawn_blocking(move || exec.execute(&snapshot, &dir)).await {
        Ok(r) => r,
        Err(e) if e.is_panic() => Err(panic_cause(e.into_panic())),
        Err(e) => Err(Cause::new("cancelled", e.to_string())),
    };
    settle(store, &mut record, outcome)
}

/// Handle to a running queue.
#[derive(Clone)]
pub struct JobQueue {
    store: JobStore,
    tx: mpsc::UnboundedSender<String>,
}

impl JobQueue {
    /// Recover jobs left by an earlier process, then start `workers` workers.
    pub fn start(store: JobStore, executor: Arc<dyn Executor>, workers: usize) -> ServiceResult<(Self, Vec<JoinHandle<()>>)> {
        let (tx, rx) = mpsc::unbounded_channel::<String>();
        for mut record in store.list()? {
            let before = record.state;
            let enqueue = record.recover(now_ms());
            if record.state != before {
                store.save(&record)?;
                info!(job = %record.id, from = before.as_str(), to = record.state.as_str(), "recovered job");
            }
            if enqueue {
                tx.send(record.id).expect("receiver is alive");
            }
        }
        let rx = Arc::new(Mutex::new(rx));
        let handles = (0..workers.max(1))
            .map(|w| {
                let (rx, store, executor) = (rx.clone(), store.clone(), executor.clone());
                tokio::spawn(async move {
                    loop {
                        let next = rx.lock().await.recv().await;
                        let Some(id) = next else { break };
                        if let Err(e) = run_one(&store, &executor, id.clone()).await {
                            error!(worker = w, job = %id, "could not run job: {e}");
                        }
                    }
                })
            })
            .collect();
        Ok((Self { store, tx }, handles))
    }

    pub fn store(&self) -> &JobStore {
        &self.store
    }

    /// Persist a new queued job and hand it to the workers.
    pub fn submit(&self, kind: JobKind, request: serde_json::Value) -> ServiceResult<JobRecord> {
        let record = JobRecord::new(uuid::Uuid::new_v4().to_string(), kind, request, now_ms());
        self.store.create(&record)?;
        self.tx.send(record.id.clone()).map_err(|_| ServiceError::Internal("job queue has shut down".into()))?;
        Ok(record)
    }

    /// Poll until the job reaches a terminal state or `timeout` passes.
    pub async fn wait(&self, id: &str, timeout: Duration) -> ServiceResult<JobRecord> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let r = self.store.get(id)?;
            if r.state.is_terminal() {
                return Ok(r);
            }
            if tokio::time::Instant::now() >= deadline {
                return Err(ServiceError::Internal(format!("job {id} still {} after {timeout:?}", r.state.as_str())));
            }
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }
}

/// Create, run and settle a job on the calling thread, through the same
/// state machine the queue uses.
pub fn run_inline(store: &JobStore, executor: &dyn Executor, kind: JobKind, request: serde_json::Value) -> ServiceResult<JobRecord> {
    let record = JobRecord::new(uuid::Uuid::new_v4().to_string(), kind, request, now_ms());
    store.create(&record)?;
    let mut record = claim(store, &record.id)?.expect("fresh job is queued");
    let dir = store.dir(&record.id);
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| executor.execute(&record, &dir)))
        .unwrap_or_else(|p| Err(panic_cause(p)));
    settle(store, &mut record, outcome)?;
    Ok(record)
}
