//! Asynchronous job bookkeeping.
//!
//! A job moves `queued → running → {done, failed, partial}` and nowhere
//! else. Progress only ever increases. The registry is a plain `RwLock` so
//! blocking worker threads can report progress directly.

use std::collections::HashMap;
use std::sync::RwLock;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Generate,
    Biastest,
    Quality,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
    Partial,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed | JobState::Partial)
    }

    fn can_become(self, next: JobState) -> bool {
        matches!(
            (self, next),
            (JobState::Queued, JobState::Running)
                | (JobState::Running, JobState::Done)
                | (JobState::Running, JobState::Failed)
                | (JobState::Running, JobState::Partial)
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub done: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub kind: JobKind,
    pub state: JobState,
    pub progress: Progress,
    /// Where the output lives: `datasets/<spec>/<run>` or `results/<id>`.
    pub result_ref: Option<String>,
    pub error_message: Option<String>,
    /// Small inline summary (generation report, quality report, scores).
    pub output: Option<Value>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum JobError {
    #[error("no job {0}")]
    Unknown(String),
    #[error("job {id} cannot go from {from:?} to {to:?}")]
    InvalidTransition { id: String, from: JobState, to: JobState },
    #[error("result_ref is required for done and partial jobs")]
    MissingResultRef,
}

/// How a job ended.
#[derive(Debug, Clone, Default)]
pub struct Completion {
    pub result_ref: Option<String>,
    pub output: Option<Value>,
    pub error_message: Option<String>,
}

#[derive(Debug, Default)]
pub struct JobRegistry {
    jobs: RwLock<HashMap<String, Job>>,
}

impl JobRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create(&self, kind: JobKind) -> Job {
        let now = Utc::now();
        let job = Job {
            id: uuid::Uuid::new_v4().simple().to_string(),
            kind,
            state: JobState::Queued,
            progress: Progress::default(),
            result_ref: None,
            error_message: None,
            output: None,
            created_at: now,
            updated_at: now,
        };
        self.jobs.write().unwrap().insert(job.id.clone(), job.clone());
        job
    }

    pub fn get(&self, id: &str) -> Option<Job> {
        self.jobs.read().unwrap().get(id).cloned()
    }

    fn update<T>(&self, id: &str, f: impl FnOnce(&mut Job) -> Result<T, JobError>) -> Result<T, JobError> {
        let mut jobs = self.jobs.write().unwrap();
        let job = jobs.get_mut(id).ok_or_else(|| JobError::Unknown(id.to_string()))?;
        let out = f(job)?;
        job.updated_at = Utc::now();
        Ok(out)
    }

    fn transition(job: &mut Job, to: JobState) -> Result<(), JobError> {
        if !job.state.can_become(to) {
            return Err(JobError::InvalidTransition {
                id: job.id.clone(),
                from: job.state,
                to,
            });
        }
        job.state = to;
        Ok(())
    }

    pub fn start(&self, id: &str, total: usize) -> Result<(), JobError> {
        self.update(id, |j| {
            Self::transition(j, JobState::Running)?;
            j.progress = Progress { done: 0, total };
            Ok(())
        })
    }

    /// Raises progress; lower values are ignored.
    pub fn advance(&self, id: &str, done: usize) -> Result<(), JobError> {
        self.update(id, |j| {
            j.progress.done = j.progress.done.max(done);
            Ok(())
        })
    }

    pub fn finish(&self, id: &str, state: JobState, completion: Completion) -> Result<(), JobError> {
        if matches!(state, JobState::Done | JobState::Partial) && completion.result_ref.is_none() {
            return Err(JobError::MissingResultRef);
        }
        self.update(id, |j| {
            Self::transition(j, state)?;
            if state == JobState::Done {
                j.progress.done = j.progress.total;
            }
            j.result_ref = completion.result_ref;
            j.output = completion.output;
            j.error_message = completion.error_message;
            Ok(())
        })
    }

    /// Marks an unfinished job failed. A queued job counts as having
    /// started, so a crash is never left looking queued.
    pub fn fail(&self, id: &str, message: impl Into<String>) {
        let message = message.into();
        let _ = self.update(id, |j| {
            if !j.state.is_terminal() {
                j.state = JobState::Failed;
                j.result_ref = None;
                j.error_message = Some(message);
            }
            Ok(())
        });
    }
}
