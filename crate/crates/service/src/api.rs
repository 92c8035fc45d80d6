//! HTTP routes. Long-running work is answered with 202 and a job record;
//! everything checkable up front fails synchronously with a 4xx.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use portrait_core::applications::StyleSpec;
use portrait_core::backends::BackendDescriptor;
use portrait_core::generation::GenerationRequest;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::app::App;
use crate::engine::{JobRequest, JobResult, TrainJob};
use crate::error::{ServiceError, ServiceResult};
use crate::jobs::{JobRecord, JobState};
use crate::workspace::{assemble_pictures, read_json, AssetKind, AssetMeta};

const MAX_UPLOAD_BYTES: usize = 64 * 1024 * 1024;

type Shared = State<Arc<App>>;

pub fn router(app: Arc<App>) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/assets", post(upload_assets))
        .route("/assets/{id}", get(get_asset))
        .route("/assets/{id}/content", get(get_asset_content))
        .route("/identities", post(create_identity).get(list_identities))
        .route("/identities/{id}", get(get_identity))
        .route("/generations", post(create_generation))
        .route("/inpaint", post(create_inpaint))
        .route("/tryon", post(create_tryon))
        .route("/talkinghead", post(create_talking_head))
        .route("/jobs", get(list_jobs))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/results", get(get_results))
        .route("/styles", get(list_styles).post(add_style))
        .route("/backends", get(list_backends))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(app)
}

/// JSON body parsing that reports malformed input as our own 400.
fn parse<T: DeserializeOwned>(body: &Bytes) -> ServiceResult<T> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(format!("malformed request body: {e}")))
}

fn accepted(record: JobRecord) -> Response {
    let location = format!("/jobs/{}", record.id);
    (StatusCode::ACCEPTED, [(header::LOCATION, location)], Json(record)).into_response()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ServiceResult<T> + Send + 'static) -> ServiceResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ServiceError::Internal(e.to_string()))?
}

async fn submit(app: Arc<App>, request: JobRequest) -> ServiceResult<Response> {
    blocking(move || app.submit(request)).await.map(accepted)
}

struct Upload {
    field: String,
    filename: Option<String>,
    bytes: Vec<u8>,
}

async fn read_multipart(mut multipart: Multipart) -> ServiceResult<Vec<Upload>> {
    let mut out = Vec::new();
    while let Some(field) = multipart.next_field().await.map_err(|e| ServiceError::BadRequest(e.body_text()))? {
        let name = field.name().unwrap_or_default().to_string();
        let filename = field.file_name().map(str::to_string);
        let bytes = field.bytes().await.map_err(|e| ServiceError::BadRequest(e.body_text()))?.to_vec();
        out.push(Upload { field: name, filename, bytes });
    }
    Ok(out)
}

/// Split uploads into images (grouped with their sidecars), masks and audio,
/// and store them all.
fn store_uploads(app: &App, uploads: Vec<Upload>) -> ServiceResult<Vec<AssetMeta>> {
    let ws = &app.engine.workspace;
    let mut metas = Vec::new();
    let mut picture_files = Vec::new();
    for u in uploads {
        let Some(filename) = u.filename else { continue };
        let lower = filename.to_ascii_lowercase();
        if u.field == "mask" {
            metas.push(ws.put_mask_bytes(&filename, &u.bytes).map_err(as_bad_request)?);
        } else if u.field == "audio" || lower.ends_with(".wav") {
            metas.push(ws.put_audio(&filename, &u.bytes).map_err(as_bad_request)?);
        } else {
            picture_files.push((filename, u.bytes));
        }
    }
    for p in assemble_pictures(picture_files)? {
        metas.push(ws.put_image(&p)?);
    }
    Ok(metas)
}

/// Undecodable uploads are the client's fault.
fn as_bad_request(e: ServiceError) -> ServiceError {
    match e {
        ServiceError::Core(portrait_core::Error::Io(_)) => e,
        ServiceError::Core(c) => ServiceError::BadRequest(c.to_string()),
        e => e,
    }
}

async fn upload_assets(State(app): Shared, multipart: Multipart) -> ServiceResult<Response> {
    let uploads = read_multipart(multipart).await?;
    if uploads.iter().all(|u| u.filename.is_none()) {
        return Err(ServiceError::BadRequest("no files uploaded".into()));
    }
    let metas = blocking(move || store_uploads(&app, uploads)).await?;
    Ok((StatusCode::CREATED, Json(metas)).into_response())
}

async fn get_asset(State(app): Shared, Path(id): Path<String>) -> ServiceResult<Json<AssetMeta>> {
    Ok(Json(app.engine.workspace.asset(&id)?))
}

async fn get_asset_content(State(app): Shared, Path(id): Path<String>) -> ServiceResult<Response> {
    let meta = app.engine.workspace.asset(&id)?;
    let bytes = std::fs::read(app.engine.workspace.asset_path(&meta))?;
    let mime = match meta.kind {
        AssetKind::Image | AssetKind::Mask => "image/png",
        AssetKind::Audio => "audio/wav",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

/// Multipart: a text field `id` plus image files with optional sidecars.
async fn create_identity(State(app): Shared, multipart: Multipart) -> ServiceResult<Response> {
    let uploads = read_multipart(multipart).await?;
    let id = uploads
        .iter()
        .find(|u| u.field == "id" && u.filename.is_none())
        .map(|u| String::from_utf8_lossy(&u.bytes).trim().to_string())
        .ok_or_else(|| ServiceError::BadRequest("missing `id` field".into()))?;
    crate::workspace::validate_slug("identity", &id)?;
    if app.engine.workspace.has_identity(&id) {
        return Err(ServiceError::Conflict(format!("identity `{id}` already exists")));
    }
    let files: Vec<Upload> = uploads.into_iter().filter(|u| u.filename.is_some()).collect();
    if files.is_empty() {
        return Err(ServiceError::BadRequest("no images uploaded".into()));
    }
    let record = blocking(move || {
        let metas = store_uploads(&app, files)?;
        let uploads = metas.into_iter().filter(|m| m.kind == AssetKind::Image).map(|m| m.id).collect();
        app.submit(JobRequest::Train(TrainJob { identity: id, uploads }))
    })
    .await?;
    Ok(accepted(record))
}

async fn list_identities(State(app): Shared) -> ServiceResult<Response> {
    Ok(Json(app.engine.workspace.list_identities()?).into_response())
}

async fn get_identity(State(app): Shared, Path(id): Path<String>) -> ServiceResult<Response> {
    Ok(Json(app.engine.workspace.identity_record(&id)?).into_response())
}

async fn create_generation(State(app): Shared, body: Bytes) -> ServiceResult<Response> {
    let request: GenerationRequest = parse(&body)?;
    submit(app, JobRequest::Generate(request)).await
}

async fn create_inpaint(State(app): Shared, body: Bytes) -> ServiceResult<Response> {
    submit(app, JobRequest::Inpaint(parse(&body)?)).await
}

async fn create_tryon(State(app): Shared, body: Bytes) -> ServiceResult<Response> {
    submit(app, JobRequest::Tryon(parse(&body)?)).await
}

async fn create_talking_head(State(app): Shared, body: Bytes) -> ServiceResult<Response> {
    submit(app, JobRequest::Talkinghead(parse(&body)?)).await
}

async fn list_jobs(State(app): Shared) -> ServiceResult<Json<Vec<JobRecord>>> {
    Ok(Json(app.queue.store().list()?))
}

async fn get_job(State(app): Shared, Path(id): Path<String>) -> ServiceResult<Json<JobRecord>> {
    Ok(Json(app.queue.store().get(&id)?))
}

async fn get_results(State(app): Shared, Path(id): Path<String>) -> ServiceResult<Json<JobResult>> {
    let store = app.queue.store();
    let record = store.get(&id)?;
    if record.state != JobState::Succeeded {
        return Err(ServiceError::NotReady { id, state: record.state.as_str().into(), cause: record.error });
    }
    Ok(Json(read_json(&store.result_path(&id))?))
}

async fn list_styles(State(app): Shared) -> Json<Vec<StyleSpec>> {
    Json(app.engine.styles().list().cloned().collect())
}

async fn add_style(State(app): Shared, body: Bytes) -> ServiceResult<Response> {
    let spec: StyleSpec = parse(&body)?;
    let echo = spec.clone();
    blocking(move || app.engine.add_style(spec)).await?;
    Ok((StatusCode::CREATED, Json(echo)).into_response())
}

#[derive(Serialize)]
struct BackendEntry {
    #[serde(flatten)]
    descriptor: BackendDescriptor,
    default: bool,
}

async fn list_backends(State(app): Shared) -> Json<Vec<BackendEntry>> {
    let registry = &app.engine.registry;
    let entries = registry
        .descriptors()
        .map(|d| BackendEntry {
            default: registry.default_id(d.role) == Some(d.id.as_str()),
            descriptor: d.clone(),
        })
        .collect();
    Json(entries)
}

