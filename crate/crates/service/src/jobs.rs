//! Job records, their state machine, and their on-disk store.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Cause, ServiceError, ServiceResult};
use crate::workspace::write_json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Train,
    Generate,
    Inpaint,
    Tryon,
    Talkinghead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Succeeded,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Succeeded | JobState::Failed)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JobState::Queued => "queued",
            JobState::Running => "running",
            JobState::Succeeded => "succeeded",
            JobState::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("job {id}: cannot {action} from {from:?}")]
pub struct TransitionError {
    pub id: String,
    pub from: JobState,
    pub action: &'static str,
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: String,
    pub kind: JobKind,
    pub state: JobState,
    pub created_ms: u64,
    pub started_ms: Option<u64>,
    pub finished_ms: Option<u64>,
    pub request: serde_json::Value,
    #[serde(default)]
    pub results: Vec<String>,
    #[serde(default)]
    pub error: Option<Cause>,
    /// Times the job was found running after a restart and put back in the queue.
    #[serde(default)]
    pub recoveries: u32,
}

impl JobRecord {
    pub fn new(id: impl Into<String>, kind: JobKind, request: serde_json::Value, now: u64) -> Self {
        Self {
            id: id.into(),
            kind,
            state: JobState::Queued,
            created_ms: now,
            started_ms: None,
            finished_ms: None,
            request,
            results: Vec::new(),
            error: None,
            recoveries: 0,
        }
    }

    fn refuse(&self, action: &'static str) -> TransitionError {
        TransitionError { id: self.id.clone(), from: self.state, action }
    }

    pub fn start(&mut self, now: u64) -> Result<(), TransitionError> {
        if self.state != JobState::Queued {
            return Err(self.refuse("start"));
        }
        self.state = JobState::Running;
        self.started_ms = Some(now.max(self.created_ms));
        Ok(())
    }

    fn finish(&mut self, state: JobState, now: u64, action: &'static str) -> Result<(), TransitionError> {
        if self.state != JobState::Running {
            return Err(self.refuse(action));
        }
        self.state = state;
        self.finished_ms = Some(now.max(self.started_ms.unwrap_or(self.created_ms)));
        Ok(())
    }

    pub fn succeed(&mut self, results: Vec<String>, now: u64) -> Result<(), TransitionError> {
        self.finish(JobState::Succeeded, now, "succeed")?;
        self.results = results;
        Ok(())
    }

    pub fn fail(&mut self, cause: Cause, now: u64) -> Result<(), TransitionError> {
        self.finish(JobState::Failed, now, "fail")?;
        self.error = Some(cause);
        Ok(())
    }

    /// Handle a job left running by a previous process. The first time it is
    /// queued again; a job interrupted twice is failed instead. Returns whether
    /// the job should be enqueued.
    pub fn recover(&mut self, now: u64) -> bool {
        match self.state {
            JobState::Queued => true,
            JobState::Running if self.recoveries == 0 => {
                self.state = JobState::Queued;
                self.started_ms = None;
                self.recoveries += 1;
                true
            }
            JobState::Running => {
                self.state = JobState::Failed;
                self.finished_ms = Some(now.max(self.started_ms.unwrap_or(self.created_ms)));
                self.error = Some(Cause::new("interrupted", "job was interrupted by a restart twice"));
                false
            }
            JobState::Succeeded | JobState::Failed => false,
        }
    }

    /// Timestamps never run backwards and match the state.
    pub fn is_consistent(&self) -> bool {
        let ordered = match (self.started_ms, self.finished_ms) {
            (Some(s), Some(f)) => self.created_ms <= s && s <= f,
            (Some(s), None) => self.created_ms <= s,
            (None, Some(f)) => self.created_ms <= f,
            (None, None) => true,
        };
        let shaped = match self.state {
            JobState::Queued => self.started_ms.is_none() && self.finished_ms.is_none(),
            JobState::Running => self.started_ms.is_some() && self.finished_ms.is_none(),
            JobState::Succeeded => self.started_ms.is_some() && self.finished_ms.is_some() && self.error.is_none(),
            JobState::Failed => self.finished_ms.is_some() && self.error.is_some(),
        };
        ordered && shaped
    }
}

/// One directory per job under `jobs/`, holding `job.json` and the job's outputs.
#[derive(Debug, Clone)]
pub struct JobStore {
    root: PathBuf,
}

impl JobStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    fn record_path(&self, id: &str) -> PathBuf {
        self.dir(id).join("job.json")
    }

    pub fn create(&self, record: &JobRecord) -> ServiceResult<()> {
        let dir = self.dir(&record.id);
        std::fs::create_dir_all(&self.root)?;
        match std::fs::create_dir(&dir) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(ServiceError::Conflict(format!("job {} already exists", record.id)))
            }
            Err(e) => return Err(e.into()),
        }
        self.save(record)
    }

    /// Atomically replace the persisted record.
    pub fn save(&self, record: &JobRecord) -> ServiceResult<()> {
        write_json(&self.record_path(&record.id), record)
    }

    pub fn get(&self, id: &str) -> ServiceResult<JobRecord> {
        if !valid_job_id(id) {
            return Err(ServiceError::NotFound(format!("unknown job `{id}`")));
        }
        match std::fs::read(self.record_path(id)) {
            Ok(bytes) => Ok(serde_json::from_slice(&bytes)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(ServiceError::NotFound(format!("unknown job `{id}`"))),
            Err(e) => Err(e.into()),
        }
    }

    /// Every job, oldest first.
    pub fn list(&self) -> ServiceResult<Vec<JobRecord>> {
        let mut out = Vec::new();
        let entries = match std::fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(e.into()),
        };
        for entry in entries {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if entry.path().join("job.json").is_file() {
                out.push(self.get(&name)?);
            }
        }
        out.sort_by(|a, b| (a.created_ms, &a.id).cmp(&(b.created_ms, &b.id)));
        Ok(out)
    }

    pub fn result_path(&self, id: &str) -> PathBuf {
        self.dir(id).join("result.json")
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

fn valid_job_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
}
