//! Service layer around the portrait pipelines: a filesystem workspace, a job
//! queue with crash recovery, the HTTP API, and the pieces the CLI shares.

pub mod api;
pub mod app;
pub mod engine;
pub mod error;
pub mod jobs;
pub mod queue;
pub mod workspace;

pub use app::{build_registry, App};
pub use engine::{Engine, JobRequest};
pub use error::{Cause, ServiceError, ServiceResult};
