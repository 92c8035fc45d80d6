//! Job requests, their synchronous validation, and their execution against
//! the core pipelines.

use std::path::Path;
use std::sync::{RwLock, RwLockReadGuard};

use portrait_core::applications::{make_talking_head, virtual_tryon, AudioSource, StyleRegistry, StyleSpec, TalkingHeadOptions};
use portrait_core::backends::{BackendRegistry, Backends};
use portrait_core::generation::{generate_portraits, prepare_model, GenerationRequest, Identity, IdentityTrainConfig, PreparedModel};
use portrait_core::inpaint::{multi_id_inpaint, FaceAssignment, InpaintOptions};
use portrait_core::lora::{toy_base_model, WeightSet, FACE_LORA_WEIGHT, STYLE_LORA_WEIGHT};
use portrait_core::Error;
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::error::{Cause, ServiceError, ServiceResult};
use crate::jobs::{JobKind, JobRecord};
use crate::queue::Executor;
use crate::workspace::{validate_slug, write_json, Workspace};

fn face_weight() -> f64 {
    FACE_LORA_WEIGHT
}
fn style_weight() -> f64 {
    STYLE_LORA_WEIGHT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainJob {
    pub identity: String,
    /// Image asset ids.
    pub uploads: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceJob {
    pub face_index: usize,
    pub identity: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintJob {
    pub template: String,
    pub faces: Vec<FaceJob>,
    #[serde(default)]
    pub style: Option<String>,
    #[serde(default)]
    pub prompt_extra: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "face_weight")]
    pub face_weight: f64,
    #[serde(default = "style_weight")]
    pub style_weight: f64,
    #[serde(default)]
    pub options: InpaintOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TryOnJob {
    pub template: String,
    /// Mask asset marking the garment pixels to keep.
    pub garment: String,
    pub identity: String,
    #[serde(default)]
    pub style: Option<String>,
    #[serde(default)]
    pub prompt: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub refine: bool,
    #[serde(default = "face_weight")]
    pub face_weight: f64,
    #[serde(default = "style_weight")]
    pub style_weight: f64,
}

fn narrator() -> String {
    "narrator".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AudioJob {
    Tts {
        text: String,
        #[serde(default = "narrator")]
        voice: String,
    },
    /// Audio asset id.
    Asset(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TalkJob {
    /// Image asset id.
    pub portrait: String,
    pub audio: AudioJob,
    #[serde(default)]
    pub options: TalkingHeadOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub enum JobRequest {
    Train(TrainJob),
    Generate(GenerationRequest),
    Inpaint(InpaintJob),
    Tryon(TryOnJob),
    Talkinghead(TalkJob),
}

impl JobRequest {
    pub fn kind(&self) -> JobKind {
        match self {
            JobRequest::Train(_) => JobKind::Train,
            JobRequest::Generate(_) => JobKind::Generate,
            JobRequest::Inpaint(_) => JobKind::Inpaint,
            JobRequest::Tryon(_) => JobKind::Tryon,
            JobRequest::Talkinghead(_) => JobKind::Talkinghead,
        }
    }

    pub fn to_value(&self) -> serde_json::Value {
        let v = match self {
            JobRequest::Train(r) => serde_json::to_value(r),
            JobRequest::Generate(r) => serde_json::to_value(r),
            JobRequest::Inpaint(r) => serde_json::to_value(r),
            JobRequest::Tryon(r) => serde_json::to_value(r),
            JobRequest::Talkinghead(r) => serde_json::to_value(r),
        };
        v.expect("request types serialize")
    }

    pub fn from_parts(kind: JobKind, value: &serde_json::Value) -> serde_json::Result<Self> {
        let v = value.clone();
        Ok(match kind {
            JobKind::Train => JobRequest::Train(serde_json::from_value(v)?),
            JobKind::Generate => JobRequest::Generate(serde_json::from_value(v)?),
            JobKind::Inpaint => JobRequest::Inpaint(serde_json::from_value(v)?),
            JobKind::Tryon => JobRequest::Tryon(serde_json::from_value(v)?),
            JobKind::Talkinghead => JobRequest::Talkinghead(serde_json::from_value(v)?),
        })
    }
}

/// What `GET /jobs/{id}/results` returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    pub kind: JobKind,
    /// Assets produced, in rank order for generations.
    pub assets: Vec<String>,
    pub manifest: serde_json::Value,
}

/// Shared state for validating and running jobs.
pub struct Engine {
    pub workspace: Workspace,
    pub registry: BackendRegistry,
    backends: Backends,
    base: WeightSet,
    styles: RwLock<StyleRegistry>,
    pub train_config: IdentityTrainConfig,
}

impl Engine {
    pub fn new(workspace: Workspace, registry: BackendRegistry, base_seed: u64) -> ServiceResult<Self> {
        let backends = registry.backends(&Default::default())?;
        let styles = workspace.styles()?;
        for s in &styles.skipped {
            tracing::warn!(file = %s.file, reason = %s.reason, "style descriptor skipped");
        }
        Ok(Self {
            workspace,
            registry,
            backends,
            base: toy_base_model(base_seed),
            styles: RwLock::new(styles),
            train_config: IdentityTrainConfig::default(),
        })
    }

    pub fn backends(&self) -> &Backends {
        &self.backends
    }

    pub fn styles(&self) -> RwLockReadGuard<'_, StyleRegistry> {
        self.styles.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn add_style(&self, spec: StyleSpec) -> ServiceResult<()> {
        validate_slug("style", &spec.id)?;
        let mut styles = self.styles.write().unwrap_or_else(|e| e.into_inner());
        spec.validate()?;
        // a descriptor whose adapter cannot be resolved is never registered
        styles.adapter(&spec, &self.base)?;
        styles.add(spec)?;
        Ok(())
    }

    fn style(&self, id: &str) -> ServiceResult<StyleSpec> {
        Ok(self.styles().get(id)?.clone())
    }

    fn require_identity(&self, id: &str) -> ServiceResult<()> {
        if self.workspace.has_identity(id) {
            Ok(())
        } else {
            Err(ServiceError::NotFound(format!("unknown identity `{id}`")))
        }
    }

    fn check_weights(face: f64, style: f64) -> ServiceResult<()> {
        if face.is_finite() && style.is_finite() {
            Ok(())
        } else {
            Err(ServiceError::BadRequest("fusion weights must be finite".into()))
        }
    }

    /// Check everything that can be checked before the job is queued.
    pub fn validate(&self, request: &JobRequest) -> ServiceResult<()> {
        match request {
            JobRequest::Train(t) => {
                validate_slug("identity", &t.identity)?;
                if self.workspace.has_identity(&t.identity) {
                    return Err(ServiceError::Conflict(format!("identity `{}` already exists", t.identity)));
                }
                if t.uploads.is_empty() {
                    return Err(ServiceError::BadRequest("no images uploaded".into()));
                }
                let mut with_face = 0;
                for id in &t.uploads {
                    let p = self.workspace.load_image(id)?;
                    with_face += usize::from(self.backends.face_detector.detect(&p).is_ok());
                }
                if with_face == 0 {
                    return Err(Error::EmptyTrainingSet { skipped: t.uploads.len() }.into());
                }
            }
            JobRequest::Generate(g) => {
                g.validate()?;
                Self::check_weights(g.face_weight, g.style_weight)?;
                self.require_identity(&g.identity)?;
                self.style(&g.style)?;
            }
            JobRequest::Inpaint(r) => {
                r.options.validate()?;
                Self::check_weights(r.face_weight, r.style_weight)?;
                if r.faces.is_empty() {
                    return Err(ServiceError::BadRequest("no faces to inpaint".into()));
                }
                let mut seen = std::collections::BTreeSet::new();
                for f in &r.faces {
                    if !seen.insert(f.face_index) {
                        return Err(ServiceError::BadRequest(format!("face {} assigned twice", f.face_index)));
                    }
                    self.require_identity(&f.identity)?;
                }
                if let Some(s) = &r.style {
                    self.style(s)?;
                }
                self.workspace.load_image(&r.template)?;
            }
            JobRequest::Tryon(r) => {
                Self::check_weights(r.face_weight, r.style_weight)?;
                self.require_identity(&r.identity)?;
                if let Some(s) = &r.style {
                    self.style(s)?;
                }
                let t = self.workspace.load_image(&r.template)?;
                let m = self.workspace.load_mask(&r.garment)?;
                if m.dimensions() != t.dims() {
                    return Err(Error::InvalidInput("garment mask does not match the template".into()).into());
                }
            }
            JobRequest::Talkinghead(r) => {
                r.options.validate()?;
                self.workspace.load_image(&r.portrait)?;
                match &r.audio {
                    AudioJob::Tts { text, .. } if text.trim().is_empty() => {
                        return Err(ServiceError::BadRequest("text to speak is empty".into()))
                    }
                    AudioJob::Tts { .. } => {}
                    AudioJob::Asset(id) => {
                        self.workspace.load_audio(id)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn model(&self, identity: &Identity, style: Option<&str>, face: f64, style_w: f64, extra: &str) -> ServiceResult<PreparedModel> {
        let spec = style.map(|s| self.style(s)).transpose()?;
        let adapter = spec.as_ref().map(|s| self.styles().adapter(s, &self.base)).transpose()?;
        let pair = spec.as_ref().zip(adapter.as_ref());
        Ok(prepare_model(identity, pair, &self.base, face, style_w, extra)?)
    }

    /// Run a job to completion, writing `result.json` into `dir`.
    pub fn run(&self, record: &JobRecord, dir: &Path) -> ServiceResult<Vec<String>> {
        let request = JobRequest::from_parts(record.kind, &record.request)?;
        let ws = &self.workspace;
        let (assets, manifest) = match &request {
            JobRequest::Train(t) => {
                let uploads = t.uploads.iter().map(|id| ws.load_image(id)).collect::<ServiceResult<Vec<_>>>()?;
                let trained = portrait_core::generation::train_identity(
                    &t.identity,
                    &uploads,
                    &self.backends,
                    &self.base,
                    &self.train_config,
                    record.created_ms / 1000,
                )?;
                let saved = ws.save_identity(&trained, Some(&record.id))?;
                (vec![t.identity.clone()], serde_json::to_value(saved)?)
            }
            JobRequest::Generate(g) => {
                let identity = ws.load_identity(&g.identity)?;
                let spec = self.style(&g.style)?;
                let adapter = self.styles().adapter(&spec, &self.base)?;
                let out = generate_portraits(g, &identity, &spec, &adapter, &self.base, &self.backends)?;
                let assets = out.images.iter().map(|p| ws.put_image(p).map(|m| m.id)).collect::<ServiceResult<Vec<_>>>()?;
                (assets, serde_json::to_value(out.manifest)?)
            }
            JobRequest::Inpaint(r) => {
                let template = ws.load_image(&r.template)?;
                let mut loaded = Vec::with_capacity(r.faces.len());
                for f in &r.faces {
                    let identity = ws.load_identity(&f.identity)?;
                    let model = self.model(&identity, r.style.as_deref(), r.face_weight, r.style_weight, &r.prompt_extra)?;
                    loaded.push((f.face_index, identity, model));
                }
                let assignments: Vec<FaceAssignment<'_>> =
                    loaded.iter().map(|(i, identity, model)| FaceAssignment { face_index: *i, identity, model }).collect();
                let out = multi_id_inpaint(&template, &assignments, &self.backends, r.seed, &r.options)?;
                (vec![ws.put_image(&out.portrait)?.id], serde_json::to_value(out.manifest)?)
            }
            JobRequest::Tryon(r) => {
                let template = ws.load_image(&r.template)?;
                let garment = ws.load_mask(&r.garment)?;
                let identity = ws.load_identity(&r.identity)?;
                let model = self.model(&identity, r.style.as_deref(), r.face_weight, r.style_weight, "")?;
                let out = virtual_tryon(&template, &garment, &r.prompt, r.seed, (&identity, &model), r.refine, &self.backends)?;
                (vec![ws.put_image(&out.image)?.id], serde_json::to_value(out.manifest)?)
            }
            JobRequest::Talkinghead(r) => {
                let portrait = ws.load_image(&r.portrait)?;
                let audio = match &r.audio {
                    AudioJob::Tts { text, voice } => AudioSource::Tts { text: text.clone(), voice: voice.clone() },
                    AudioJob::Asset(id) => AudioSource::Recording(ws.load_audio(id)?),
                };
                let out = make_talking_head(&portrait, &audio, &r.options, &self.backends)?;
                let wav = ws.put_audio(&format!("{}-audio", record.id), &out.audio.to_wav_bytes()?)?;
                (vec![wav.id], serde_json::to_value(out.manifest)?)
            }
        };
        write_json(&dir.join("result.json"), &JobResult { kind: record.kind, assets: assets.clone(), manifest })?;
        info!(job = %record.id, kind = ?record.kind, outputs = assets.len(), "job finished");
        Ok(assets)
    }
}

impl Executor for Engine {
    fn execute(&self, record: &JobRecord, dir: &Path) -> Result<Vec<String>, Cause> {
        self.run(record, dir).map_err(|e| e.cause())
    }
}
