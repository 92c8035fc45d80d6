#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use portrait_service::jobs::JobRecord;
use portrait_service::workspace::Workspace;
use portrait_service::{api, build_registry, App, Engine};
use serde_json::Value;
use tower::ServiceExt;

pub struct TestApp {
    pub app: Arc<App>,
    pub router: Router,
    pub corpus: tempfile::TempDir,
    _workspace: tempfile::TempDir,
}

pub fn start(workers: usize) -> TestApp {
    let ws = tempfile::tempdir().unwrap();
    start_in(ws, workers)
}

pub fn start_in(ws: tempfile::TempDir, workers: usize) -> TestApp {
    let corpus = tempfile::tempdir().unwrap();
    portrait_core::fixtures::write_corpus(corpus.path()).unwrap();
    let engine = Engine::new(Workspace::open(ws.path()).unwrap(), build_registry(None).unwrap(), 0).unwrap();
    let (app, _) = App::start(engine, workers).unwrap();
    TestApp { router: api::router(app.clone()), app, corpus, _workspace: ws }
}

pub struct Part {
    pub name: String,
    pub filename: Option<String>,
    pub bytes: Vec<u8>,
}

pub fn text_part(name: &str, value: &str) -> Part {
    Part { name: name.into(), filename: None, bytes: value.as_bytes().to_vec() }
}

pub fn file_part(name: &str, filename: &str, bytes: Vec<u8>) -> Part {
    Part { name: name.into(), filename: Some(filename.into()), bytes }
}

/// Every file of `dir` as a `files` part.
pub fn dir_parts(dir: &Path) -> Vec<Part> {
    let mut names: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    names
        .into_iter()
        .map(|p| file_part("files", &p.file_name().unwrap().to_string_lossy(), std::fs::read(&p).unwrap()))
        .collect()
}

const BOUNDARY: &str = "portrait-test-boundary";

fn multipart_body(parts: &[Part]) -> Vec<u8> {
    let mut body = Vec::new();
    for p in parts {
        body.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        match &p.filename {
            Some(f) => body.extend_from_slice(
                format!("Content-Disposition: form-data; name=\"{}\"; filename=\"{f}\"\r\nContent-Type: application/octet-stream\r\n\r\n", p.name).as_bytes(),
            ),
            None => body.extend_from_slice(format!("Content-Disposition: form-data; name=\"{}\"\r\n\r\n", p.name).as_bytes()),
        }
        body.extend_from_slice(&p.bytes);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

impl TestApp {
    async fn send(&self, req: Request<Body>) -> (StatusCode, Value) {
        let resp = self.router.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into_owned()));
        (status, value)
    }

    pub async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.send(Request::get(uri).body(Body::empty()).unwrap()).await
    }

    pub async fn post_json(&self, uri: &str, body: &Value) -> (StatusCode, Value) {
        self.post_raw(uri, serde_json::to_vec(body).unwrap()).await
    }

    pub async fn post_raw(&self, uri: &str, body: Vec<u8>) -> (StatusCode, Value) {
        let req = Request::builder().method(Method::POST).uri(uri).header("content-type", "application/json").body(Body::from(body)).unwrap();
        self.send(req).await
    }

    pub async fn post_multipart(&self, uri: &str, parts: &[Part]) -> (StatusCode, Value) {
        let req = Request::builder()
            .method(Method::POST)
            .uri(uri)
            .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
            .body(Body::from(multipart_body(parts)))
            .unwrap();
        self.send(req).await
    }

    pub async fn wait(&self, job: &Value) -> JobRecord {
        let id = job["id"].as_str().expect("job id");
        self.app.queue.wait(id, Duration::from_secs(60)).await.unwrap()
    }

    /// Train `id` from the corpus uploads and wait for it.
    pub async fn train(&self, id: &str) -> JobRecord {
        let mut parts = vec![text_part("id", id)];
        parts.extend(dir_parts(&self.corpus.path().join("uploads")));
        let (status, job) = self.post_multipart("/identities", &parts).await;
        assert_eq!(status, StatusCode::ACCEPTED, "{job}");
        self.wait(&job).await
    }

    /// Upload one file and return its asset id.
    pub async fn upload(&self, field: &str, path: &Path, with_sidecars: bool) -> String {
        let mut parts = vec![file_part(field, &path.file_name().unwrap().to_string_lossy(), std::fs::read(path).unwrap())];
        if with_sidecars {
            let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
            for suffix in portrait_core::picture::SIDECAR_SUFFIXES {
                let side = path.with_file_name(format!("{stem}{suffix}"));
                if side.is_file() {
                    parts.push(file_part("files", &side.file_name().unwrap().to_string_lossy(), std::fs::read(&side).unwrap()));
                }
            }
        }
        let (status, metas) = self.post_multipart("/assets", &parts).await;
        assert_eq!(status, StatusCode::CREATED, "{metas}");
        metas[0]["id"].as_str().unwrap().to_string()
    }
}
