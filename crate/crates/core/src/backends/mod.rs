//! Model roles, the backend registry, and the per-run resolved backend set.
//!
//! Every external model the pipelines consume sits behind one trait per role.
//! Backends are described by [`BackendDescriptor`]s (loadable from a JSON
//! manifest) and come in two kinds: deterministic stubs, which need no weights,
//! and hub adapters, which point at a hosted model.

mod hub;
mod stubs;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::controls::{ControlStack, PoseFixture};
use crate::error::{Error, Result};
use crate::geometry::CropRect;
use crate::labeling::{AttributePrediction, TagSet};
use crate::landmarks::{LandmarkSet5, LandmarkSet68};
use crate::picture::{Mask, Picture};

pub use hub::{default_hub_uri, HubBackend};
pub use stubs::{
    StubAttributePredictor, StubAutoencoder, StubDepthEstimator, StubFaceDetector, StubFaceEmbedder, StubFaceFusion,
    StubHumanParser, StubInpainter, StubPoseEstimator, StubQualityAssessor, StubRetoucher, StubRotationClassifier,
    StubTagger, StubTalkingHeadDriver, StubTextToImage, StubTts, StubUpscaler, EMBEDDING_DIM, FACE_BOX_SCALE,
    TTS_SECONDS_PER_CHAR,
};

/// Environment variable naming the backend manifest file.
pub const MANIFEST_ENV: &str = "PORTRAIT_BACKEND_MANIFEST";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceDetection {
    pub bbox: CropRect,
    pub landmarks: LandmarkSet5,
}

/// Unit-length face embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalize `v` to unit length.
    pub fn unit(v: Vec<f64>) -> Result<Self> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::InvalidInput("cannot normalize a zero or non-finite embedding".into()));
        }
        Ok(Self(v.into_iter().map(|x| x / n).collect()))
    }

    /// Wrap an already unit-length vector (checked to 1e-6).
    pub fn from_unit(v: Vec<f64>) -> Result<Self> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!("embedding norm {n} is not 1")));
        }
        Ok(Self(v))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &Embedding) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::InvalidInput(format!("embedding dimensions differ: {} vs {}", self.dim(), other.dim())));
        }
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }
}

#[derive(Debug, Clone)]
pub struct GenerationCall {
    /// Name given to the produced picture.
    pub name: String,
    pub prompt: String,
    pub negative_prompt: String,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    /// Digest of the (adapter-merged) model weights used for this call.
    pub weights_digest: String,
    pub controls: Option<ControlStack>,
}

#[derive(Debug, Clone, Copy)]
pub struct InpaintCall<'a> {
    pub image: &'a Picture,
    /// Pixels to regenerate.
    pub mask: &'a Mask,
    pub controls: &'a ControlStack,
    pub prompt: &'a str,
    pub negative_prompt: &'a str,
    pub seed: u64,
    pub weights_digest: &'a str,
}

/// Opaque latent produced by an autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

/// Mono 16-bit PCM.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub sample_rate: u32,
    pub samples: Vec<i16>,
}

impl Waveform {
    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn to_wav_bytes(&self) -> Result<Vec<u8>> {
        let spec = hound::WavSpec { channels: 1, sample_rate: self.sample_rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
        let mut cursor = std::io::Cursor::new(Vec::new());
        {
            let mut w = hound::WavWriter::new(&mut cursor, spec).map_err(|e| Error::AudioDecode(e.to_string()))?;
            for s in &self.samples {
                w.write_sample(*s).map_err(|e| Error::AudioDecode(e.to_string()))?;
            }
            w.finalize().map_err(|e| Error::AudioDecode(e.to_string()))?;
        }
        Ok(cursor.into_inner())
    }

    /// Decode mono 16-bit PCM WAV.
    pub fn from_wav_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = hound::WavReader::new(std::io::Cursor::new(bytes)).map_err(|e| Error::AudioDecode(e.to_string()))?;
        let spec = r.spec();
        if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
            return Err(Error::AudioDecode(format!(
                "expected mono 16-bit PCM, got {} channel(s) at {} bits",
                spec.channels, spec.bits_per_sample
            )));
        }
        let samples = r.samples::<i16>().collect::<std::result::Result<Vec<_>, _>>().map_err(|e| Error::AudioDecode(e.to_string()))?;
        Ok(Self { sample_rate: spec.sample_rate, samples })
    }
}

/// Video as produced by a talking-head driver; frames stay with the driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoClip {
    pub width: u32,
    pub height: u32,
    pub fps: u32,
    pub duration_secs: f64,
    pub frame_count: u64,
    pub digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveOptions {
    pub resolution: u32,
    pub pose_index: u8,
    pub expression_scale: f64,
    pub blink_rate: f64,
}

pub trait RotationClassifier: Send + Sync {
    /// Probability that turning the image by 0°, 90°, 180°, 270° makes it upright.
    fn rotation_probs(&self, picture: &Picture) -> Result<[f64; 4]>;
}

pub trait FaceDetector: Send + Sync {
    /// The primary face; `Error::NoFace` when there is none.
    fn detect(&self, picture: &Picture) -> Result<FaceDetection>;
    /// Every face, in a stable order.
    fn detect_all(&self, picture: &Picture) -> Result<Vec<FaceDetection>>;
    /// 68 landmarks of the face inside `near` closest to its center, or of the
    /// primary face.
    fn landmarks68(&self, picture: &Picture, near: Option<&CropRect>) -> Result<LandmarkSet68>;
}

pub trait HumanParser: Send + Sync {
    fn head_mask(&self, picture: &Picture, face: &CropRect) -> Result<Mask>;
    fn face_mask(&self, picture: &Picture, face: &CropRect) -> Result<Mask>;
}

pub trait SkinRetoucher: Send + Sync {
    fn retouch(&self, picture: &Picture, region: &Mask) -> Result<Picture>;
}

pub trait Tagger: Send + Sync {
    fn tags(&self, picture: &Picture) -> Result<TagSet>;
}

pub trait AttributePredictor: Send + Sync {
    fn predict(&self, picture: &Picture) -> Result<AttributePrediction>;
}

pub trait QualityAssessor: Send + Sync {
    fn score(&self, picture: &Picture, head_mask: &Mask) -> Result<f64>;
}

pub trait FaceEmbedder: Send + Sync {
    fn embed(&self, picture: &Picture) -> Result<Embedding>;
}

pub trait FaceFusion: Send + Sync {
    /// Blend `template` into `target`, restricted to `region` when given.
    fn fuse(&self, template: &Picture, target: &Picture, region: Option<&Mask>) -> Result<Picture>;
}

pub trait TextToImage: Send + Sync {
    fn generate(&self, call: &GenerationCall) -> Result<Picture>;
}

pub trait Inpainter: Send + Sync {
    fn inpaint(&self, call: &InpaintCall<'_>) -> Result<Picture>;
}

pub trait PoseEstimator: Send + Sync {
    fn pose(&self, picture: &Picture) -> Result<PoseFixture>;
}

pub trait DepthEstimator: Send + Sync {
    fn depth(&self, picture: &Picture) -> Result<GrayImage>;
}

pub trait Autoencoder: Send + Sync {
    fn encode(&self, image: &RgbImage) -> Result<Latent>;
    fn decode(&self, latent: &Latent) -> Result<RgbImage>;

    fn round_trip(&self, image: &RgbImage) -> Result<RgbImage> {
        self.decode(&self.encode(image)?)
    }
}

pub trait TalkingHeadDriver: Send + Sync {
    fn drive(&self, portrait: &Picture, audio: &Waveform, options: &DriveOptions) -> Result<VideoClip>;
}

pub trait Upscaler: Send + Sync {
    fn upscale(&self, clip: &VideoClip) -> Result<VideoClip>;
}

pub trait Tts: Send + Sync {
    fn synthesize(&self, text: &str, voice: &str) -> Result<Waveform>;
}

macro_rules! backend_roles {
    ($($variant:ident => $field:ident : $tr:ident = $name:literal, $stub:expr;)*) => {
        /// Every external model role the pipelines use.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum BackendRole {
            $(#[serde(rename = $name)] $variant,)*
        }

        impl BackendRole {
            pub const ALL: &'static [BackendRole] = &[$(BackendRole::$variant,)*];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(BackendRole::$variant => $name,)*
                }
            }
        }

        /// A live backend of some role.
        #[derive(Clone)]
        pub enum BackendHandle {
            $($variant(Arc<dyn $tr>),)*
        }

        impl BackendHandle {
            pub fn role(&self) -> BackendRole {
                match self {
                    $(BackendHandle::$variant(_) => BackendRole::$variant,)*
                }
            }

            fn hub(role: BackendRole, uri: &str) -> Self {
                match role {
                    $(BackendRole::$variant => BackendHandle::$variant(Arc::new(HubBackend::new(role, uri)) as Arc<dyn $tr>),)*
                }
            }

            fn stub(role: BackendRole, config: &BTreeMap<String, String>) -> Result<Self> {
                Ok(match role {
                    $(BackendRole::$variant => {
                        let make: fn(&BTreeMap<String, String>) -> Result<Arc<dyn $tr>> = $stub;
                        BackendHandle::$variant(make(config)?)
                    })*
                })
            }
        }

        /// One resolved backend per role, plus the ids they were resolved from.
        #[derive(Clone)]
        pub struct Backends {
            $(pub $field: Arc<dyn $tr>,)*
            pub ids: BTreeMap<BackendRole, String>,
        }

        impl BackendRegistry {
            /// Resolve every role, using `selection` where it names an id and the
            /// role default otherwise.
            pub fn backends(&self, selection: &BTreeMap<BackendRole, String>) -> Result<Backends> {
                let mut ids = BTreeMap::new();
                $(
                    let $field = {
                        let entry = self.resolve_entry(BackendRole::$variant, selection.get(&BackendRole::$variant).map(String::as_str))?;
                        ids.insert(BackendRole::$variant, entry.descriptor.id.clone());
                        match &entry.handle {
                            BackendHandle::$variant(h) => h.clone(),
                            _ => unreachable!("registry entries are stored under their own role"),
                        }
                    };
                )*
                Ok(Backends { $($field,)* ids })
            }
        }
    };
}

backend_roles! {
    RotationClassifier => rotation_classifier: RotationClassifier = "rotation-classifier", |_| Ok(Arc::new(StubRotationClassifier));
    FaceDetector => face_detector: FaceDetector = "face-detector", |_| Ok(Arc::new(StubFaceDetector));
    HumanParser => human_parser: HumanParser = "human-parser", |_| Ok(Arc::new(StubHumanParser));
    SkinRetoucher => skin_retoucher: SkinRetoucher = "skin-retoucher", |_| Ok(Arc::new(StubRetoucher));
    Tagger => tagger: Tagger = "tagger", |_| Ok(Arc::new(StubTagger));
    AttributePredictor => attribute_predictor: AttributePredictor = "attribute-predictor", |_| Ok(Arc::new(StubAttributePredictor));
    QualityAssessor => quality_assessor: QualityAssessor = "quality-assessor", |_| Ok(Arc::new(StubQualityAssessor));
    FaceEmbedder => face_embedder: FaceEmbedder = "face-embedder", |_| Ok(Arc::new(StubFaceEmbedder));
    FaceFusion => face_fusion: FaceFusion = "face-fusion", |_| Ok(Arc::new(StubFaceFusion));
    TextToImage => text_to_image: TextToImage = "text-to-image", |_| Ok(Arc::new(StubTextToImage));
    Inpainter => inpainter: Inpainter = "inpainter", |_| Ok(Arc::new(StubInpainter));
    PoseEstimator => pose_estimator: PoseEstimator = "pose-estimator", |_| Ok(Arc::new(StubPoseEstimator));
    DepthEstimator => depth_estimator: DepthEstimator = "depth-estimator", |_| Ok(Arc::new(StubDepthEstimator));
    Autoencoder => autoencoder: Autoencoder = "autoencoder", |c| Ok(Arc::new(StubAutoencoder::from_config(c)?));
    TalkingHeadDriver => talking_head_driver: TalkingHeadDriver = "talking-head-driver", |_| Ok(Arc::new(StubTalkingHeadDriver));
    Upscaler => upscaler: Upscaler = "upscaler", |_| Ok(Arc::new(StubUpscaler));
    Tts => tts: Tts = "tts", |_| Ok(Arc::new(StubTts));
}

impl fmt::Display for BackendRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BackendRole::ALL
            .iter()
            .copied()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown backend role `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Stub,
    Hub,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub role: BackendRole,
    pub id: String,
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hub_uri: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub config: BTreeMap<String, String>,
}

impl BackendDescriptor {
    pub fn stub(role: BackendRole, id: impl Into<String>) -> Self {
        Self { role, id: id.into(), kind: BackendKind::Stub, hub_uri: None, config: BTreeMap::new() }
    }

    /// Hub descriptor; `uri` falls back to the role's shipped default.
    pub fn hub(role: BackendRole, id: impl Into<String>, uri: Option<&str>) -> Self {
        Self {
            role,
            id: id.into(),
            kind: BackendKind::Hub,
            hub_uri: uri.map(str::to_string).or_else(|| default_hub_uri(role).map(str::to_string)),
            config: BTreeMap::new(),
        }
    }

    pub fn with_config(mut self, key: &str, value: &str) -> Self {
        self.config.insert(key.to_string(), value.to_string());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(Error::InvalidInput("backend id must not be empty".into()));
        }
        if self.kind == BackendKind::Hub && self.hub_uri.as_deref().map_or(true, str::is_empty) {
            return Err(Error::InvalidInput(format!("hub backend `{}` needs a hub_uri", self.id)));
        }
        Ok(())
    }

    fn marked_default(&self) -> bool {
        self.config.get("default").is_some_and(|v| v == "true")
    }
}

#[derive(Clone)]
pub struct RegistryEntry {
    pub descriptor: BackendDescriptor,
    pub handle: BackendHandle,
}

/// Maps (role, id) to live backends. Insertion order is preserved; the first
/// backend registered for a role is its default unless another is marked.
#[derive(Clone, Default)]
pub struct BackendRegistry {
    entries: Vec<RegistryEntry>,
    defaults: BTreeMap<BackendRole, String>,
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// One stub per role under id `stub`, plus a lossless autoencoder `stub-lossless`.
    pub fn with_stubs() -> Self {
        let mut r = Self::new();
        for &role in BackendRole::ALL {
            r.register(BackendDescriptor::stub(role, "stub")).expect("stub ids are unique");
        }
        r.register(BackendDescriptor::stub(BackendRole::Autoencoder, "stub-lossless").with_config("quantum", "1"))
            .expect("stub ids are unique");
        r
    }

    /// Instantiate and register a backend from its descriptor.
    pub fn register(&mut self, descriptor: BackendDescriptor) -> Result<()> {
        descriptor.validate()?;
        let handle = match descriptor.kind {
            BackendKind::Stub => BackendHandle::stub(descriptor.role, &descriptor.config)?,
            BackendKind::Hub => BackendHandle::hub(descriptor.role, descriptor.hub_uri.as_deref().unwrap_or_default()),
        };
        self.register_with(descriptor, handle)
    }

    /// Register a caller-constructed backend under `descriptor`.
    pub fn register_with(&mut self, descriptor: BackendDescriptor, handle: BackendHandle) -> Result<()> {
        descriptor.validate()?;
        if handle.role() != descriptor.role {
            return Err(Error::InvalidInput(format!(
                "handle role {} does not match descriptor role {}",
                handle.role(),
                descriptor.role
            )));
        }
        if self.entries.iter().any(|e| e.descriptor.role == descriptor.role && e.descriptor.id == descriptor.id) {
            return Err(Error::Conflict(format!("backend `{}` already registered for {}", descriptor.id, descriptor.role)));
        }
        if descriptor.marked_default() || !self.defaults.contains_key(&descriptor.role) {
            self.defaults.insert(descriptor.role, descriptor.id.clone());
        }
        self.entries.push(RegistryEntry { descriptor, handle });
        Ok(())
    }

    pub fn set_default(&mut self, role: BackendRole, id: &str) -> Result<()> {
        self.find(role, id).ok_or_else(|| Error::Resolution(format!("no {role} backend `{id}`")))?;
        self.defaults.insert(role, id.to_string());
        Ok(())
    }

    pub fn default_id(&self, role: BackendRole) -> Option<&str> {
        self.defaults.get(&role).map(String::as_str)
    }

    fn find(&self, role: BackendRole, id: &str) -> Option<&RegistryEntry> {
        self.entries.iter().find(|e| e.descriptor.role == role && e.descriptor.id == id)
    }

    fn resolve_entry(&self, role: BackendRole, id: Option<&str>) -> Result<&RegistryEntry> {
        let id = match id {
            Some(id) => id,
            None => self.default_id(role).ok_or_else(|| Error::Resolution(format!("no default {role} backend")))?,
        };
        self.find(role, id).ok_or_else(|| Error::Resolution(format!("no {role} backend `{id}`")))
    }

    /// The named backend, or the role default when `id` is `None`.
    pub fn resolve(&self, role: BackendRole, id: Option<&str>) -> Result<&BackendHandle> {
        self.resolve_entry(role, id).map(|e| &e.handle)
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &BackendDescriptor> {
        self.entries.iter().map(|e| &e.descriptor)
    }

    /// Register every descriptor of a JSON manifest (an array of descriptors).
    pub fn extend_from_manifest(&mut self, json: &str) -> Result<()> {
        let descriptors: Vec<BackendDescriptor> = serde_json::from_str(json)?;
        for d in descriptors {
            self.register(d)?;
        }
        Ok(())
    }

    pub fn load_manifest(&mut self, path: &Path) -> Result<()> {
        self.extend_from_manifest(&std::fs::read_to_string(path)?)
    }

    pub fn manifest_json(&self) -> Result<String> {
        let d: Vec<&BackendDescriptor> = self.descriptors().collect();
        Ok(serde_json::to_string_pretty(&d)? + "\n")
    }
}

impl Backends {
    /// All roles resolved to their stub defaults.
    pub fn stubs() -> Self {
        BackendRegistry::with_stubs().backends(&BTreeMap::new()).expect("every role has a stub")
    }

    pub fn id(&self, role: BackendRole) -> &str {
        self.ids.get(&role).map(String::as_str).unwrap_or("custom")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_and_resolve() {
        let mut r = BackendRegistry::new();
        r.register(BackendDescriptor::stub(BackendRole::FaceDetector, "stub-det")).unwrap();
        assert_eq!(r.resolve(BackendRole::FaceDetector, None).unwrap().role(), BackendRole::FaceDetector);
        assert!(r.resolve(BackendRole::FaceDetector, Some("stub-det")).is_ok());
        assert!(matches!(r.resolve(BackendRole::FaceDetector, Some("missing")), Err(Error::Resolution(_))));
        assert!(matches!(r.resolve(BackendRole::Tagger, None), Err(Error::Resolution(_))));
        assert!(matches!(
            r.register(BackendDescriptor::stub(BackendRole::FaceDetector, "stub-det")),
            Err(Error::Conflict(_))
        ));
        // same id under another role is fine
        r.register(BackendDescriptor::stub(BackendRole::Tagger, "stub-det")).unwrap();
    }

    #[test]
    fn hub_descriptor_round_trips_through_manifest() {
        let d = BackendDescriptor::hub(BackendRole::FaceDetector, "damofd", None);
        assert_eq!(d.hub_uri.as_deref(), Some("https://modelscope.cn/models/damo/cv_ddsar_face-detection_iclr23-damofd"));
        let mut r = BackendRegistry::new();
        r.register(d.clone()).unwrap();
        let json = r.manifest_json().unwrap();
        let mut again = BackendRegistry::new();
        again.extend_from_manifest(&json).unwrap();
        assert_eq!(again.descriptors().cloned().collect::<Vec<_>>(), vec![d]);
        assert_eq!(again.manifest_json().unwrap(), json);
    }

    #[test]
    fn hub_requires_uri() {
        let d = BackendDescriptor::hub(BackendRole::TextToImage, "sd", None);
        assert!(d.hub_uri.is_none());
        assert!(BackendRegistry::new().register(d).is_err());
    }

    #[test]
    fn hub_backend_reports_unavailable() {
        let mut r = BackendRegistry::new();
        r.register(BackendDescriptor::hub(BackendRole::Tagger, "danbooru", None)).unwrap();
        let BackendHandle::Tagger(t) = r.resolve(BackendRole::Tagger, None).unwrap() else { panic!() };
        let err = t.tags(&Picture::new("x", RgbImage::new(2, 2))).unwrap_err();
        assert_eq!(err.code(), "backend");
    }

    #[test]
    fn default_switch_via_config_and_call() {
        let mut r = BackendRegistry::new();
        r.register(BackendDescriptor::stub(BackendRole::Autoencoder, "a")).unwrap();
        r.register(BackendDescriptor::stub(BackendRole::Autoencoder, "b").with_config("default", "true")).unwrap();
        assert_eq!(r.default_id(BackendRole::Autoencoder), Some("b"));
        let json = r.manifest_json().unwrap();
        let mut again = BackendRegistry::new();
        again.extend_from_manifest(&json).unwrap();
        assert_eq!(again.default_id(BackendRole::Autoencoder), Some("b"));
        again.set_default(BackendRole::Autoencoder, "a").unwrap();
        assert_eq!(again.default_id(BackendRole::Autoencoder), Some("a"));
        assert!(again.set_default(BackendRole::Autoencoder, "zzz").is_err());
    }

    #[test]
    fn resolution_is_order_independent() {
        let ds = [
            BackendDescriptor::stub(BackendRole::Tagger, "x"),
            BackendDescriptor::stub(BackendRole::FaceDetector, "y"),
            BackendDescriptor::stub(BackendRole::Tagger, "z"),
        ];
        let mut fwd = BackendRegistry::new();
        let mut rev = BackendRegistry::new();
        for d in &ds {
            fwd.register(d.clone()).unwrap();
        }
        for d in ds.iter().rev() {
            rev.register(d.clone()).unwrap();
        }
        for d in &ds {
            assert_eq!(fwd.resolve(d.role, Some(&d.id)).unwrap().role(), rev.resolve(d.role, Some(&d.id)).unwrap().role());
        }
    }

    #[test]
    fn full_stub_set_resolves() {
        let b = Backends::stubs();
        assert_eq!(b.ids.len(), BackendRole::ALL.len());
        let mut sel = BTreeMap::new();
        sel.insert(BackendRole::Autoencoder, "stub-lossless".to_string());
        let b = BackendRegistry::with_stubs().backends(&sel).unwrap();
        assert_eq!(b.id(BackendRole::Autoencoder), "stub-lossless");
    }

    #[test]
    fn role_names_parse() {
        for &r in BackendRole::ALL {
            assert_eq!(r.as_str().parse::<BackendRole>().unwrap(), r);
            assert_eq!(serde_json::to_string(&r).unwrap(), format!("\"{}\"", r.as_str()));
        }
        assert_eq!(BackendRole::ALL.len(), 17);
    }

    #[test]
    fn wav_round_trip_and_bad_input() {
        let w = Waveform { sample_rate: 16000, samples: vec![0, 100, -100, 32767] };
        assert_eq!(Waveform::from_wav_bytes(&w.to_wav_bytes().unwrap()).unwrap(), w);
        assert!(matches!(Waveform::from_wav_bytes(b"not a wav"), Err(Error::AudioDecode(_))));
    }
}
