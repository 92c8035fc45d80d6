use std::path::Path;
use std::sync::Arc;

use portrait_core::backends::BackendRegistry;
use tokio::task::JoinHandle;

use crate::engine::{Engine, JobRequest};
use crate::error::ServiceResult;
use crate::jobs::JobRecord;
use crate::queue::JobQueue;

pub const WORKSPACE_ENV: &str = "PORTRAIT_WORKSPACE";
pub const PORT_ENV: &str = "PORTRAIT_PORT";
pub use portrait_core::backends::MANIFEST_ENV;

/// Stubs for every role, plus whatever the manifest at `manifest` declares.
pub fn build_registry(manifest: Option<&Path>) -> ServiceResult<BackendRegistry> {
    let mut registry = BackendRegistry::with_stubs();
    if let Some(path) = manifest {
        registry.load_manifest(path)?;
    }
    Ok(registry)
}

/// The engine together with its running queue.
pub struct App {
    pub engine: Arc<Engine>,
    pub queue: JobQueue,
}

impl App {
    /// Must be called inside a tokio runtime.
    pub fn start(engine: Engine, workers: usize) -> ServiceResult<(Arc<App>, Vec<JoinHandle<()>>)> {
        let engine = Arc::new(engine);
        let (queue, handles) = JobQueue::start(engine.workspace.jobs(), engine.clone(), workers)?;
        Ok((Arc::new(App { engine, queue }), handles))
    }

    /// Validate synchronously, then persist and enqueue.
    pub fn submit(&self, request: JobRequest) -> ServiceResult<JobRecord> {
        self.engine.validate(&request)?;
        self.queue.submit(request.kind(), request.to_value())
    }
}
