//! Adapters for hosted models. Running them requires the hub runtime, which is
//! not part of this build, so every call reports the backend as unavailable.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use image::{GrayImage, RgbImage};

use super::*;

static DEFAULTS: OnceLock<BTreeMap<BackendRole, String>> = OnceLock::new();

/// Shipped default model URI for `role`, if one exists.
pub fn default_hub_uri(role: BackendRole) -> Option<&'static str> {
    DEFAULTS
        .get_or_init(|| serde_json::from_str(include_str!("../data/hub_models.json")).expect("hub_models.json is valid"))
        .get(&role)
        .map(String::as_str)
}

#[derive(Debug, Clone)]
pub struct HubBackend {
    role: BackendRole,
    uri: String,
}

impl HubBackend {
    pub fn new(role: BackendRole, uri: &str) -> Self {
        Self { role, uri: uri.to_string() }
    }

    pub fn uri(&self) -> &str {
        &self.uri
    }

    fn unavailable<T>(&self) -> Result<T> {
        Err(Error::Backend(format!("{} model at {} is not available in this build", self.role, self.uri)))
    }
}

impl RotationClassifier for HubBackend {
    fn rotation_probs(&self, _: &Picture) -> Result<[f64; 4]> {
        self.unavailable()
    }
}

impl FaceDetector for HubBackend {
    fn detect(&self, _: &Picture) -> Result<FaceDetection> {
        self.unavailable()
    }
    fn detect_all(&self, _: &Picture) -> Result<Vec<FaceDetection>> {
        self.unavailable()
    }
    fn landmarks68(&self, _: &Picture, _: Option<&CropRect>) -> Result<LandmarkSet68> {
        self.unavailable()
    }
}

impl HumanParser for HubBackend {
    fn head_mask(&self, _: &Picture, _: &CropRect) -> Result<Mask> {
        self.unavailable()
    }
    fn face_mask(&self, _: &Picture, _: &CropRect) -> Result<Mask> {
        self.unavailable()
    }
}

impl SkinRetoucher for HubBackend {
    fn retouch(&self, _: &Picture, _: &Mask) -> Result<Picture> {
        self.unavailable()
    }
}

impl Tagger for HubBackend {
    fn tags(&self, _: &Picture) -> Result<TagSet> {
        self.unavailable()
    }
}

impl AttributePredictor for HubBackend {
    fn predict(&self, _: &Picture) -> Result<AttributePrediction> {
        self.unavailable()
    }
}

impl QualityAssessor for HubBackend {
    fn score(&self, _: &Picture, _: &Mask) -> Result<f64> {
        self.unavailable()
    }
}

impl FaceEmbedder for HubBackend {
    fn embed(&self, _: &Picture) -> Result<Embedding> {
        self.unavailable()
    }
}

impl FaceFusion for HubBackend {
    fn fuse(&self, _: &Picture, _: &Picture, _: Option<&Mask>) -> Result<Picture> {
        self.unavailable()
    }
}

impl TextToImage for HubBackend {
    fn generate(&self, _: &GenerationCall) -> Result<Picture> {
        self.unavailable()
    }
}

impl Inpainter for HubBackend {
    fn inpaint(&self, _: &InpaintCall<'_>) -> Result<Picture> {
        self.unavailable()
    }
}

impl PoseEstimator for HubBackend {
    fn pose(&self, _: &Picture) -> Result<PoseFixture> {
        self.unavailable()
    }
}

impl DepthEstimator for HubBackend {
    fn depth(&self, _: &Picture) -> Result<GrayImage> {
        self.unavailable()
    }
}

impl Autoencoder for HubBackend {
    fn encode(&self, _: &RgbImage) -> Result<Latent> {
        self.unavailable()
    }
    fn decode(&self, _: &Latent) -> Result<RgbImage> {
        self.unavailable()
    }
}

impl TalkingHeadDriver for HubBackend {
    fn drive(&self, _: &Picture, _: &Waveform, _: &DriveOptions) -> Result<VideoClip> {
        self.unavailable()
    }
}

impl Upscaler for HubBackend {
    fn upscale(&self, _: &VideoClip) -> Result<VideoClip> {
        self.unavailable()
    }
}

impl Tts for HubBackend {
    fn synthesize(&self, _: &str, _: &str) -> Result<Waveform> {
        self.unavailable()
    }
}
