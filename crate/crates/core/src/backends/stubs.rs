//! Deterministic stand-ins for every model role.
//!
//! Each stub is a pure function of its inputs (including the seed where one is
//! passed). Perception stubs read the picture's annotations, which come from
//! per-image sidecar files and follow every geometric transform.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use image::imageops::FilterType;
use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::*;
use crate::controls::PoseControl;
use crate::geometry::{centroid, Point};
use crate::picture::{mask, FaceAnnotation};

/// Face box side relative to the larger extent of the five landmarks.
pub const FACE_BOX_SCALE: f64 = 2.0;
pub const EMBEDDING_DIM: usize = 64;
pub const TTS_SECONDS_PER_CHAR: f64 = 0.08;
const TTS_SAMPLE_RATE: u32 = 16_000;
const VIDEO_FPS: u32 = 25;

fn face_box(l: &LandmarkSet5, width: u32, height: u32) -> Option<CropRect> {
    let pts = l.points();
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in pts {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    let side = FACE_BOX_SCALE * (x1 - x0).max(y1 - y0);
    let c = Point::new((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let rect = CropRect {
        left: (c.x - side / 2.0).round() as i64,
        top: (c.y - side / 2.0).round() as i64,
        right: (c.x + side / 2.0).round() as i64,
        bottom: (c.y + side / 2.0).round() as i64,
    };
    rect.clamp_to(width, height)
}

fn extent(l: &LandmarkSet5) -> f64 {
    CropRect::bounding(l.points()).map_or(0.0, |r| r.width().max(r.height()) as f64)
}

/// Faces whose landmark centroid lies inside the picture, in annotation order.
fn visible_faces(p: &Picture) -> Vec<(usize, LandmarkSet5, &FaceAnnotation)> {
    let (w, h) = p.dims();
    p.notes
        .faces
        .iter()
        .enumerate()
        .filter_map(|(i, f)| f.five().map(|l| (i, l, f)))
        .filter(|(_, l, _)| {
            let c = centroid(l.points());
            c.x >= 0.0 && c.y >= 0.0 && c.x <= w as f64 - 1.0 && c.y <= h as f64 - 1.0
        })
        .collect()
}

/// Largest visible face; ties go to the lower annotation index.
fn primary_face(p: &Picture) -> Option<(usize, LandmarkSet5, &FaceAnnotation)> {
    visible_faces(p).into_iter().fold(None, |best, cur| match best {
        Some(b) if extent(&b.1) >= extent(&cur.1) => Some(b),
        _ => Some(cur),
    })
}

fn seeded_rng(parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Smooth random canvas: a coarse random color grid upsampled bilinearly.
fn canvas(rng: &mut ChaCha8Rng, width: u32, height: u32) -> RgbImage {
    let grid = RgbImage::from_fn(6, 6, |_, _| Rgb([rng.gen(), rng.gen(), rng.gen()]));
    image::imageops::resize(&grid, width, height, FilterType::Triangle)
}

/// Reads `rotation_probs` when annotated; otherwise infers orientation from the
/// eyes→mouth direction of the primary face; otherwise uniform.
pub struct StubRotationClassifier;

impl RotationClassifier for StubRotationClassifier {
    fn rotation_probs(&self, picture: &Picture) -> Result<[f64; 4]> {
        if let Some(p) = picture.notes.rotation_probs {
            return Ok(p);
        }
        let Some((_, l, _)) = primary_face(picture) else {
            return Ok([0.25; 4]);
        };
        let p = l.points();
        let eyes = centroid(&p[0..2]);
        let mouth = centroid(&p[3..5]);
        let a = (mouth.y - eyes.y).atan2(mouth.x - eyes.x);
        let scores: [f64; 4] = std::array::from_fn(|k| (4.0 * (a + k as f64 * PI / 2.0 - PI / 2.0).cos()).exp());
        let total: f64 = scores.iter().sum();
        Ok(scores.map(|s| s / total))
    }
}

/// Faces come from landmark annotations; the box is centered on the five
/// landmarks with side [`FACE_BOX_SCALE`] × their larger extent.
pub struct StubFaceDetector;

impl FaceDetector for StubFaceDetector {
    fn detect(&self, picture: &Picture) -> Result<FaceDetection> {
        let (_, landmarks, _) = primary_face(picture).ok_or_else(|| Error::NoFace(picture.name.clone()))?;
        let bbox = face_box(&landmarks, picture.width(), picture.height()).ok_or_else(|| Error::NoFace(picture.name.clone()))?;
        Ok(FaceDetection { bbox, landmarks })
    }

    fn detect_all(&self, picture: &Picture) -> Result<Vec<FaceDetection>> {
        Ok(visible_faces(picture)
            .into_iter()
            .filter_map(|(_, l, _)| face_box(&l, picture.width(), picture.height()).map(|bbox| FaceDetection { bbox, landmarks: l }))
            .collect())
    }

    fn landmarks68(&self, picture: &Picture, near: Option<&CropRect>) -> Result<LandmarkSet68> {
        let face = match near {
            None => primary_face(picture).map(|f| f.2),
            Some(rect) => {
                let c = rect.center();
                visible_faces(picture)
                    .into_iter()
                    .map(|(_, l, f)| (centroid(l.points()), f))
                    .filter(|(p, _)| rect.contains(p))
                    .min_by(|a, b| a.0.distance(&c).total_cmp(&b.0.distance(&c)))
                    .map(|(_, f)| f)
            }
        };
        face.and_then(FaceAnnotation::sixty_eight).ok_or_else(|| Error::NoFace(picture.name.clone()))
    }
}

/// Elliptical masks derived from the face box.
pub struct StubHumanParser;

impl HumanParser for StubHumanParser {
    fn head_mask(&self, picture: &Picture, face: &CropRect) -> Result<Mask> {
        let c = face.center();
        let (w, h) = (face.width() as f64, face.height() as f64);
        Ok(mask::ellipse(picture.width(), picture.height(), Point::new(c.x, c.y - 0.1 * h), 0.6 * w, 0.75 * h))
    }

    fn face_mask(&self, picture: &Picture, face: &CropRect) -> Result<Mask> {
        Ok(mask::ellipse(picture.width(), picture.height(), face.center(), face.width() as f64 / 2.0, face.height() as f64 / 2.0))
    }
}

/// Returns its input unchanged.
pub struct StubRetoucher;

impl SkinRetoucher for StubRetoucher {
    fn retouch(&self, picture: &Picture, region: &Mask) -> Result<Picture> {
        if region.dimensions() != picture.dims() {
            return Err(Error::InvalidInput("retouch region does not match the image".into()));
        }
        Ok(picture.clone())
    }
}

pub struct StubTagger;

impl Tagger for StubTagger {
    fn tags(&self, picture: &Picture) -> Result<TagSet> {
        picture
            .notes
            .tags
            .as_ref()
            .map(TagSet::new)
            .ok_or_else(|| Error::FixtureMissing(format!("{}.tags.txt", picture.name)))
    }
}

pub struct StubAttributePredictor;

impl AttributePredictor for StubAttributePredictor {
    fn predict(&self, picture: &Picture) -> Result<AttributePrediction> {
        picture.notes.attributes.clone().ok_or_else(|| Error::FixtureMissing(format!("{}.attr.json", picture.name)))
    }
}

/// Fraction of the crop covered by the head mask.
pub struct StubQualityAssessor;

impl QualityAssessor for StubQualityAssessor {
    fn score(&self, picture: &Picture, head_mask: &Mask) -> Result<f64> {
        if head_mask.dimensions() != picture.dims() {
            return Err(Error::InvalidInput("mask does not match the image".into()));
        }
        let total = head_mask.width() as f64 * head_mask.height() as f64;
        Ok(if total == 0.0 { 0.0 } else { mask::count(head_mask) as f64 / total })
    }
}

/// Mean-centered 8×8 grayscale thumbnail, unit-normalized. A flat image maps to
/// the first basis vector.
pub struct StubFaceEmbedder;

impl FaceEmbedder for StubFaceEmbedder {
    fn embed(&self, picture: &Picture) -> Result<Embedding> {
        let gray = image::imageops::grayscale(&picture.pixels);
        let thumb = image::imageops::resize(&gray, 8, 8, FilterType::Triangle);
        let v: Vec<f64> = thumb.as_raw().iter().map(|&p| p as f64).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let centered: Vec<f64> = v.iter().map(|p| p - mean).collect();
        Embedding::unit(centered).or_else(|_| {
            let mut e = vec![0.0; EMBEDDING_DIM];
            e[0] = 1.0;
            Embedding::from_unit(e)
        })
    }
}

/// Averages the template (resized to the target) into the target.
pub struct StubFaceFusion;

impl FaceFusion for StubFaceFusion {
    fn fuse(&self, template: &Picture, target: &Picture, region: Option<&Mask>) -> Result<Picture> {
        let (w, h) = target.dims();
        if let Some(r) = region {
            if r.dimensions() != (w, h) {
                return Err(Error::InvalidInput("fusion region does not match the target".into()));
            }
        }
        let resized = image::imageops::resize(&template.pixels, w, h, FilterType::Triangle);
        let mut out = target.clone();
        for (x, y, px) in out.pixels.enumerate_pixels_mut() {
            if region.map_or(true, |r| mask::is_set(r, x, y)) {
                let t = resized.get_pixel(x, y);
                *px = Rgb(std::array::from_fn(|k| ((px[k] as u16 + t[k] as u16) / 2) as u8));
            }
        }
        Ok(out)
    }
}

/// Pixels are a function of (prompt, negative prompt, seed, weights digest,
/// control digest, size). A body pose with facial keypoints yields a face whose
/// landmarks are those keypoints with a seeded jitter of at most 1.5 px.
pub struct StubTextToImage;

impl TextToImage for StubTextToImage {
    fn generate(&self, call: &GenerationCall) -> Result<Picture> {
        if call.width == 0 || call.height == 0 {
            return Err(Error::InvalidInput("generation size must be positive".into()));
        }
        let control_digest = call.controls.as_ref().map(|c| c.digest()).unwrap_or_default();
        if let Some(c) = &call.controls {
            c.validate()?;
        }
        let mut rng = seeded_rng(&[
            b"text-to-image",
            call.prompt.as_bytes(),
            call.negative_prompt.as_bytes(),
            &call.seed.to_le_bytes(),
            call.weights_digest.as_bytes(),
            control_digest.as_bytes(),
            &call.width.to_le_bytes(),
            &call.height.to_le_bytes(),
        ]);
        let pixels = canvas(&mut rng, call.width, call.height);
        let mut out = Picture::new(call.name.clone(), pixels);
        match call.controls.as_ref().and_then(|c| c.pose.as_ref()) {
            Some(PoseControl::FaceLandmarks(l)) => {
                out.notes.faces.push(FaceAnnotation { landmarks5: None, landmarks68: Some(l.clone()) });
            }
            Some(PoseControl::Body(p)) => {
                out.notes.pose = Some(p.bones.clone());
                out.notes.hands = p.hands.clone();
                if let Some(face) = &p.face {
                    let jittered = face.map(|q| Point::new(q.x + rng.gen_range(-1.5..=1.5), q.y + rng.gen_range(-1.5..=1.5)));
                    out.notes.faces.push(FaceAnnotation { landmarks5: None, landmarks68: Some(jittered) });
                }
            }
            None => {}
        }
        Ok(out)
    }
}

/// Masked pixels move toward a seeded canvas by `strength`; unmasked pixels are
/// copied bit for bit.
pub struct StubInpainter;

impl Inpainter for StubInpainter {
    fn inpaint(&self, call: &InpaintCall<'_>) -> Result<Picture> {
        let (w, h) = call.image.dims();
        if call.mask.dimensions() != (w, h) {
            return Err(Error::InvalidInput("inpaint mask does not match the image".into()));
        }
        call.controls.validate()?;
        let mut rng = seeded_rng(&[
            b"inpaint",
            call.prompt.as_bytes(),
            call.negative_prompt.as_bytes(),
            &call.seed.to_le_bytes(),
            call.weights_digest.as_bytes(),
            call.controls.digest().as_bytes(),
            call.image.digest().as_bytes(),
            crate::picture::mask_digest(call.mask).as_bytes(),
        ]);
        let generated = canvas(&mut rng, w, h);
        let s = call.controls.strength;
        let mut out = call.image.clone();
        for (x, y, px) in out.pixels.enumerate_pixels_mut() {
            if mask::is_set(call.mask, x, y) {
                let g = generated.get_pixel(x, y);
                *px = Rgb(std::array::from_fn(|k| {
                    let o = px[k] as f64;
                    (o + s * (g[k] as f64 - o)).round().clamp(0.0, 255.0) as u8
                }));
            }
        }
        if let Some(PoseControl::FaceLandmarks(l)) = &call.controls.pose {
            let c = centroid(l.points());
            let nearest = out
                .notes
                .faces
                .iter()
                .enumerate()
                .filter_map(|(i, f)| f.five().map(|five| (i, centroid(five.points()).distance(&c))))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| i);
            let face = FaceAnnotation { landmarks5: None, landmarks68: Some(l.clone()) };
            match nearest {
                Some(i) => out.notes.faces[i] = face,
                None => out.notes.faces.push(face),
            }
        }
        Ok(out)
    }
}

/// Bones and hands from annotations; facial keypoints from the primary face.
pub struct StubPoseEstimator;

impl PoseEstimator for StubPoseEstimator {
    fn pose(&self, picture: &Picture) -> Result<PoseFixture> {
        let fixture = PoseFixture {
            bones: picture.notes.pose.clone().unwrap_or_default(),
            hands: picture.notes.hands.clone(),
            face: primary_face(picture).and_then(|(_, _, f)| f.sixty_eight()),
        };
        if fixture.bones.is_empty() && fixture.hands.is_empty() && fixture.face.is_none() {
            return Err(Error::FixtureMissing(format!("{}.pose.txt", picture.name)));
        }
        Ok(fixture)
    }
}

/// Depth only over annotated hand regions.
pub struct StubDepthEstimator;

impl DepthEstimator for StubDepthEstimator {
    fn depth(&self, picture: &Picture) -> Result<GrayImage> {
        if picture.notes.hands.is_empty() {
            return Err(Error::FixtureMissing(format!("{}.hands.txt", picture.name)));
        }
        let hands = &picture.notes.hands;
        Ok(GrayImage::from_fn(picture.width(), picture.height(), |x, y| {
            let p = Point::new(x as f64, y as f64);
            Luma([if hands.iter().any(|r| r.contains(&p)) { 128 + ((x + 2 * y) % 64) as u8 } else { 0 }])
        }))
    }
}

/// Quantizes each channel down to a multiple of `quantum` (`quantum = 1` is lossless).
pub struct StubAutoencoder {
    quantum: u8,
}

impl StubAutoencoder {
    pub fn new(quantum: u8) -> Result<Self> {
        if quantum == 0 {
            return Err(Error::InvalidConfig("autoencoder quantum must be at least 1".into()));
        }
        Ok(Self { quantum })
    }

    pub fn from_config(config: &BTreeMap<String, String>) -> Result<Self> {
        let q = match config.get("quantum") {
            Some(v) => v.parse().map_err(|_| Error::InvalidConfig(format!("bad quantum `{v}`")))?,
            None => 4,
        };
        Self::new(q)
    }
}

impl Autoencoder for StubAutoencoder {
    fn encode(&self, image: &RgbImage) -> Result<Latent> {
        Ok(Latent { width: image.width(), height: image.height(), data: image.as_raw().iter().map(|v| v / self.quantum).collect() })
    }

    fn decode(&self, latent: &Latent) -> Result<RgbImage> {
        let data = latent.data.iter().map(|v| v.saturating_mul(self.quantum)).collect();
        RgbImage::from_raw(latent.width, latent.height, data).ok_or_else(|| Error::InvalidInput("latent size mismatch".into()))
    }
}

/// 25 fps clip whose duration equals the audio duration.
pub struct StubTalkingHeadDriver;

impl TalkingHeadDriver for StubTalkingHeadDriver {
    fn drive(&self, portrait: &Picture, audio: &Waveform, options: &DriveOptions) -> Result<VideoClip> {
        if ![256, 512].contains(&options.resolution) {
            return Err(Error::InvalidInput(format!("driver resolution {} unsupported", options.resolution)));
        }
        let duration = audio.duration_secs();
        let mut h = Sha256::new();
        h.update(portrait.digest());
        for s in &audio.samples {
            h.update(s.to_le_bytes());
        }
        h.update(serde_json::to_vec(options)?);
        Ok(VideoClip {
            width: options.resolution,
            height: options.resolution,
            fps: VIDEO_FPS,
            duration_secs: duration,
            frame_count: (duration * VIDEO_FPS as f64).round() as u64,
            digest: hex::encode(h.finalize()),
        })
    }
}

/// Doubles both dimensions.
pub struct StubUpscaler;

impl Upscaler for StubUpscaler {
    fn upscale(&self, clip: &VideoClip) -> Result<VideoClip> {
        let mut h = Sha256::new();
        h.update(b"upscale-2x");
        h.update(clip.digest.as_bytes());
        Ok(VideoClip { width: clip.width * 2, height: clip.height * 2, digest: hex::encode(h.finalize()), ..clip.clone() })
    }
}

/// 16 kHz mono tone, [`TTS_SECONDS_PER_CHAR`] seconds per character.
pub struct StubTts;

impl Tts for StubTts {
    fn synthesize(&self, text: &str, voice: &str) -> Result<Waveform> {
        let chars: Vec<char> = text.chars().collect();
        if chars.is_empty() {
            return Err(Error::InvalidInput("nothing to synthesize".into()));
        }
        let per_char = (TTS_SECONDS_PER_CHAR * TTS_SAMPLE_RATE as f64).round() as usize;
        let base = 180.0 + (voice.bytes().map(u32::from).sum::<u32>() % 100) as f64;
        let mut samples = Vec::with_capacity(per_char * chars.len());
        for (i, c) in chars.iter().enumerate() {
            let f = base + (*c as u32 % 64) as f64 * 4.0;
            for n in 0..per_char {
                let t = (i * per_char + n) as f64 / TTS_SAMPLE_RATE as f64;
                samples.push((8000.0 * (2.0 * PI * f * t).sin()).round() as i16);
            }
        }
        Ok(Waveform { sample_rate: TTS_SAMPLE_RATE, samples })
    }
}
