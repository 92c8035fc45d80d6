//! Style registry, virtual try-on and talking-head orchestration.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use image::imageops::grayscale;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::warn;

use crate::backends::{BackendRole, Backends, DriveOptions, InpaintCall, VideoClip, Waveform};
use crate::controls::{edges_in_region, ControlStack, PoseControl, PoseFixture, RegionMap};
use crate::error::{Error, Result};
use crate::generation::{Identity, PreparedModel};
use crate::inpaint::{expand_face_mask, multi_id_inpaint, FaceAssignment, InpaintManifest, InpaintOptions};
use crate::lora::{read_adapter_file, AdapterKind, AdapterMetadata, LoraAdapter, LoraFactors, WeightSet};
use crate::picture::{mask, Mask, Picture};

/// Inpainting strength for try-on: everything outside the garment is regenerated.
pub const TRYON_STRENGTH: f64 = 1.0;
/// Body area for edge guidance: the garment mask expanded by this fraction of
/// the garment's bounding-box diagonal.
pub const BODY_EXPANSION_FRACTION: f64 = 0.05;
pub const TALKING_HEAD_RESOLUTIONS: [u32; 2] = [256, 512];
pub const POSE_EMBEDDING_COUNT: u8 = 46;
pub const UPSCALE_FACTOR: u32 = 2;
/// Adapter references of this form name a generated adapter instead of a file.
pub const SYNTHETIC_PREFIX: &str = "synthetic:";
const SYNTHETIC_RANK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StyleSource {
    Builtin,
    #[default]
    Local,
    Contributed,
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleSpec {
    pub id: String,
    pub name: String,
    /// Adapter file relative to the styles directory, or `synthetic:<name>`.
    #[serde(rename = "adapter")]
    pub adapter_ref: String,
    #[serde(default)]
    pub prompt_additions: String,
    #[serde(default)]
    pub negative_prompt: String,
    #[serde(default = "default_weight")]
    pub recommended_weight: f64,
    #[serde(default)]
    pub source: StyleSource,
}

impl StyleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || !self.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(Error::InvalidInput(format!("style id `{}` must be non-empty [A-Za-z0-9_-]", self.id)));
        }
        if self.adapter_ref.trim().is_empty() {
            return Err(Error::InvalidInput(format!("style `{}` names no adapter", self.id)));
        }
        if !self.recommended_weight.is_finite() {
            return Err(Error::InvalidInput(format!("style `{}` has a non-finite weight", self.id)));
        }
        Ok(())
    }
}

pub fn builtin_styles() -> Vec<StyleSpec> {
    let style = |id: &str, name: &str, prompt: &str, negative: &str| StyleSpec {
        id: id.into(),
        name: name.into(),
        adapter_ref: format!("{SYNTHETIC_PREFIX}{id}"),
        prompt_additions: prompt.into(),
        negative_prompt: negative.into(),
        recommended_weight: 1.0,
        source: StyleSource::Builtin,
    };
    vec![
        style("business-suit", "Business suit", "wearing a business suit, office, upper body", "lowres, blurry"),
        style("oil-painting", "Oil painting", "oil painting, brush strokes, classical portrait", "photo, lowres"),
        style("studio-headshot", "Studio headshot", "studio lighting, plain background, headshot", "lowres, watermark"),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleSkip {
    pub file: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StyleScan {
    pub styles: Vec<StyleSpec>,
    pub skipped: Vec<StyleSkip>,
}

/// Load every `*.json` descriptor in `dir`. Malformed descriptors and repeated
/// ids are skipped with a reason. Styles come back ordered by id.
pub fn scan_styles(dir: &Path) -> Result<StyleScan> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    let mut scan = StyleScan::default();
    let mut seen = BTreeSet::new();
    for path in files {
        let file = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
        let parsed = std::fs::read(&path)
            .map_err(Error::from)
            .and_then(|b| serde_json::from_slice::<StyleSpec>(&b).map_err(|e| Error::Format(e.to_string())))
            .and_then(|s| s.validate().map(|_| s));
        match parsed {
            Ok(s) if !seen.insert(s.id.clone()) => scan.skipped.push(StyleSkip { file, reason: format!("duplicate id `{}`", s.id) }),
            Ok(s) => scan.styles.push(s),
            Err(e) => {
                warn!(%file, cause = %e, "skipping style descriptor");
                scan.skipped.push(StyleSkip { file, reason: e.to_string() });
            }
        }
    }
    scan.styles.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(scan)
}

/// Builtin styles plus those scanned from a directory; directory styles may
/// not reuse a builtin id.
#[derive(Debug, Clone)]
pub struct StyleRegistry {
    dir: Option<PathBuf>,
    styles: BTreeMap<String, StyleSpec>,
    pub skipped: Vec<StyleSkip>,
}

impl StyleRegistry {
    pub fn builtin() -> Self {
        Self { dir: None, styles: builtin_styles().into_iter().map(|s| (s.id.clone(), s)).collect(), skipped: Vec::new() }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut r = Self::builtin();
        r.dir = Some(dir.to_path_buf());
        let scan = scan_styles(dir)?;
        r.skipped = scan.skipped;
        for s in scan.styles {
            if r.styles.contains_key(&s.id) {
                r.skipped.push(StyleSkip { file: format!("{}.json", s.id), reason: format!("id `{}` is builtin", s.id) });
            } else {
                r.styles.insert(s.id.clone(), s);
            }
        }
        Ok(r)
    }

    pub fn list(&self) -> impl Iterator<Item = &StyleSpec> {
        self.styles.values()
    }

    pub fn get(&self, id: &str) -> Result<&StyleSpec> {
        self.styles.get(id).ok_or_else(|| Error::Resolution(format!("unknown style `{id}`")))
    }

    /// Write a new descriptor into the registry directory.
    pub fn add(&mut self, spec: StyleSpec) -> Result<()> {
        spec.validate()?;
        let dir = self.dir.clone().ok_or_else(|| Error::InvalidConfig("style registry has no directory".into()))?;
        if self.styles.contains_key(&spec.id) {
            return Err(Error::Conflict(format!("style `{}` already exists", spec.id)));
        }
        let path = dir.join(format!("{}.json", spec.id));
        if path.exists() {
            return Err(Error::Conflict(format!("{} already exists", path.display())));
        }
        std::fs::write(&path, serde_json::to_vec_pretty(&spec)?)?;
        self.styles.insert(spec.id.clone(), spec);
        Ok(())
    }

    pub fn adapter(&self, spec: &StyleSpec, base: &WeightSet) -> Result<LoraAdapter> {
        resolve_style_adapter(spec, self.dir.as_deref(), base)
    }
}

/// Deterministic small-rank adapter over every base tensor, seeded by `name`.
pub fn synthetic_style_adapter(name: &str, base: &WeightSet) -> Result<LoraAdapter> {
    let seed: [u8; 32] = Sha256::digest(format!("style:{name}").as_bytes()).into();
    let mut rng = ChaCha8Rng::from_seed(seed);
    let tensors = base
        .iter()
        .map(|(t, w)| {
            let a = DMatrix::from_fn(SYNTHETIC_RANK, w.ncols(), |_, _| rng.gen_range(-0.05..0.05));
            let b = DMatrix::from_fn(w.nrows(), SYNTHETIC_RANK, |_, _| rng.gen_range(-0.05..0.05));
            (t.clone(), LoraFactors { a, b })
        })
        .collect();
    LoraAdapter::new(
        format!("style-{name}"),
        SYNTHETIC_RANK,
        1.0,
        tensors,
        AdapterMetadata { kind: AdapterKind::Style, trigger_word: None, created_unix: 0 },
    )
}

pub fn resolve_style_adapter(spec: &StyleSpec, styles_dir: Option<&Path>, base: &WeightSet) -> Result<LoraAdapter> {
    let adapter = match spec.adapter_ref.strip_prefix(SYNTHETIC_PREFIX) {
        Some(name) => synthetic_style_adapter(name, base)?,
        None => {
            let dir = styles_dir.ok_or_else(|| Error::Resolution(format!("style `{}` adapter has no directory to load from", spec.id)))?;
            let path = dir.join(&spec.adapter_ref);
            if !path.is_file() {
                return Err(Error::Resolution(format!("adapter file {} for style `{}` not found", path.display(), spec.id)));
            }
            read_adapter_file(&path)?
        }
    };
    adapter.check_compatible(base)?;
    Ok(adapter)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TryOnManifest {
    pub strength: f64,
    pub controls: Vec<String>,
    pub controls_digest: String,
    pub seed: u64,
    pub refinement: Option<InpaintManifest>,
    pub output_id: String,
}

#[derive(Debug, Clone)]
pub struct TryOnOutput {
    pub image: Picture,
    pub manifest: TryOnManifest,
}

/// Controls for regenerating everything around a garment: bone and hand pose
/// (never facial landmarks), depth over the hands when there are any, and
/// Canny edges of the body area.
pub fn tryon_controls(template: &Picture, garment: &Mask, backends: &Backends) -> Result<ControlStack> {
    let (w, h) = template.dims();
    let pose = backends.pose_estimator.pose(template)?;
    let hands = pose.hands.clone();
    let pose = PoseControl::Body(PoseFixture { face: None, ..pose });
    let depth = if hands.is_empty() {
        None
    } else {
        let mut region = mask::empty(w, h);
        for r in &hands {
            if let Some(r) = r.clamp_to(w, h) {
                region = mask::union(&region, &mask::rect(w, h, &r));
            }
        }
        let map = backends.depth_estimator.depth(template)?;
        let map = image::GrayImage::from_fn(w, h, |x, y| if mask::is_set(&region, x, y) { *map.get_pixel(x, y) } else { image::Luma([0]) });
        Some(RegionMap { region, map })
    };
    let radius = mask::bounds(garment).map_or(0, |b| (BODY_EXPANSION_FRACTION * b.diagonal()).round() as u32);
    let body = expand_face_mask(garment, radius);
    let canny = RegionMap { map: edges_in_region(&grayscale(&template.pixels), &body), region: body };
    ControlStack::new(Some(pose), Some(canny), depth, TRYON_STRENGTH)
}

/// Keep the garment, regenerate the rest. With `refine`, the identity's face
/// is then inpainted into the result; garment pixels are restored afterwards.
pub fn virtual_tryon(
    template: &Picture,
    garment: &Mask,
    prompt: &str,
    seed: u64,
    identity: (&Identity, &PreparedModel),
    refine: bool,
    backends: &Backends,
) -> Result<TryOnOutput> {
    if garment.dimensions() != template.dims() {
        return Err(Error::InvalidInput("garment mask does not match the template".into()));
    }
    if mask::is_empty(garment) {
        return Err(Error::InvalidInput("garment mask is empty".into()));
    }
    let (_, model) = identity;
    let controls = tryon_controls(template, garment, backends)?;
    let full_prompt = [model.prompt.as_str(), prompt.trim()].into_iter().filter(|s| !s.is_empty()).collect::<Vec<_>>().join(", ");
    let outside = mask::invert(garment);
    let mut image = backends.inpainter.inpaint(&InpaintCall {
        image: template,
        mask: &outside,
        controls: &controls,
        prompt: &full_prompt,
        negative_prompt: &model.negative_prompt,
        seed,
        weights_digest: &model.weights_digest,
    })?;
    let mut refinement = None;
    if refine {
        let out = multi_id_inpaint(
            &image,
            &[FaceAssignment { face_index: 0, identity: identity.0, model }],
            backends,
            seed,
            &InpaintOptions::default(),
        )?;
        let mut refined = out.portrait;
        for (x, y, p) in template.pixels.enumerate_pixels() {
            if mask::is_set(garment, x, y) {
                refined.pixels.put_pixel(x, y, *p);
            }
        }
        image = refined;
        refinement = Some(out.manifest);
    }
    image.name = format!("{}-tryon", template.name);
    let manifest = TryOnManifest {
        strength: controls.strength,
        controls: controls.kinds().into_iter().map(String::from).collect(),
        controls_digest: controls.digest(),
        seed,
        refinement,
        output_id: image.content_id(),
    };
    Ok(TryOnOutput { image, manifest })
}

#[derive(Debug, Clone, PartialEq)]
pub enum AudioSource {
    Tts { text: String, voice: String },
    File(PathBuf),
    Recording(Vec<u8>),
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TalkingHeadOptions {
    pub resolution: u32,
    #[serde(default)]
    pub pose_index: u8,
    #[serde(default = "default_scale")]
    pub expression_scale: f64,
    #[serde(default = "default_scale")]
    pub blink_rate: f64,
    #[serde(default)]
    pub upscale: bool,
}

impl Default for TalkingHeadOptions {
    fn default() -> Self {
        Self { resolution: 256, pose_index: 0, expression_scale: 1.0, blink_rate: 1.0, upscale: false }
    }
}

impl TalkingHeadOptions {
    pub fn validate(&self) -> Result<()> {
        if !TALKING_HEAD_RESOLUTIONS.contains(&self.resolution) {
            return Err(Error::InvalidInput(format!("resolution {} unsupported; use 256 or 512", self.resolution)));
        }
        if self.pose_index >= POSE_EMBEDDING_COUNT {
            return Err(Error::OutOfRange(format!("pose index {} outside 0..={}", self.pose_index, POSE_EMBEDDING_COUNT - 1)));
        }
        for (name, v) in [("expression scale", self.expression_scale), ("blink rate", self.blink_rate)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoManifest {
    pub width: u32,
    pub height: u32,
    pub fps: u32,
    pub duration_secs: f64,
    pub frame_count: u64,
    pub audio_duration_secs: f64,
    pub upscaled: bool,
    pub options: TalkingHeadOptions,
    pub digest: String,
    pub backends: BTreeMap<BackendRole, String>,
}

#[derive(Debug, Clone)]
pub struct TalkingHeadOutput {
    pub clip: VideoClip,
    pub audio: Waveform,
    pub manifest: VideoManifest,
}

pub fn resolve_audio(source: &AudioSource, backends: &Backends) -> Result<Waveform> {
    match source {
        AudioSource::Tts { text, voice } => backends.tts.synthesize(text, voice),
        AudioSource::File(path) => Waveform::from_wav_bytes(&std::fs::read(path)?),
        AudioSource::Recording(bytes) => Waveform::from_wav_bytes(bytes),
    }
}

pub fn make_talking_head(portrait: &Picture, audio: &AudioSource, options: &TalkingHeadOptions, backends: &Backends) -> Result<TalkingHeadOutput> {
    options.validate()?;
    let audio = resolve_audio(audio, backends)?;
    let drive = DriveOptions {
        resolution: options.resolution,
        pose_index: options.pose_index,
        expression_scale: options.expression_scale,
        blink_rate: options.blink_rate,
    };
    let mut clip = backends.talking_head_driver.drive(portrait, &audio, &drive)?;
    if options.upscale {
        let up = backends.upscaler.upscale(&clip)?;
        if (up.width, up.height) != (clip.width * UPSCALE_FACTOR, clip.height * UPSCALE_FACTOR) {
            return Err(Error::Backend(format!("upscaler returned {}x{} for {}x{}", up.width, up.height, clip.width, clip.height)));
        }
        clip = up;
    }
    let roles = [BackendRole::TalkingHeadDriver, BackendRole::Upscaler, BackendRole::Tts];
    let manifest = VideoManifest {
        width: clip.width,
        height: clip.height,
        fps: clip.fps,
        duration_secs: clip.duration_secs,
        frame_count: clip.frame_count,
        audio_duration_secs: audio.duration_secs(),
        upscaled: options.upscale,
        options: *options,
        digest: clip.digest.clone(),
        backends: backends.ids.iter().filter(|(r, _)| roles.contains(r)).map(|(r, id)| (*r, id.clone())).collect(),
    };
    Ok(TalkingHeadOutput { clip, audio, manifest })
}
