//! In-memory images with their annotations, and the per-image sidecar files
//! those annotations are loaded from.
//!
//! Sidecars live next to the image and share its stem:
//!
//! | suffix        | content                                            |
//! |---------------|----------------------------------------------------|
//! | `.lm5.txt`    | five `x y` lines per face                          |
//! | `.lm68.txt`   | sixty-eight `x y` lines per face                   |
//! | `.tags.txt`   | one tag per line                                   |
//! | `.attr.json`  | an [`AttributePrediction`]                         |
//! | `.rot.txt`    | four probabilities for 0°, 90°, 180°, 270°         |
//! | `.pose.txt`   | bone-pose keypoints, `x y` per line                |
//! | `.hands.txt`  | hand regions, `left top right bottom` per line     |

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{CropRect, Point};
use crate::labeling::AttributePrediction;
use crate::landmarks::{format_points, format_rects, parse_points, parse_rects, LandmarkSet5, LandmarkSet68};

/// Binary mask, 0 or 255 per pixel.
pub type Mask = GrayImage;

pub const SIDECAR_SUFFIXES: [&str; 7] =
    [".lm5.txt", ".lm68.txt", ".tags.txt", ".attr.json", ".rot.txt", ".pose.txt", ".hands.txt"];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FaceAnnotation {
    pub landmarks5: Option<LandmarkSet5>,
    pub landmarks68: Option<LandmarkSet68>,
}

impl FaceAnnotation {
    pub fn five(&self) -> Option<LandmarkSet5> {
        self.landmarks5.or_else(|| self.landmarks68.as_ref().map(LandmarkSet68::to_five))
    }

    pub fn sixty_eight(&self) -> Option<LandmarkSet68> {
        self.landmarks68.clone().or_else(|| self.landmarks5.as_ref().map(LandmarkSet68::fit_to))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Annotations {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub faces: Vec<FaceAnnotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<AttributePrediction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_probs: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<Vec<Point>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hands: Vec<CropRect>,
}

impl Annotations {
    /// Apply a geometric point mapping to every spatial annotation.
    pub fn map_points(&self, f: impl Fn(Point) -> Point) -> Self {
        let faces = self
            .faces
            .iter()
            .map(|fa| FaceAnnotation {
                landmarks5: fa.landmarks5.map(|l| l.map(&f)),
                landmarks68: fa.landmarks68.as_ref().map(|l| l.map(&f)),
            })
            .collect();
        let hands = self
            .hands
            .iter()
            .filter_map(|r| CropRect::bounding(&r.corners().map(&f)))
            .collect();
        Self {
            faces,
            tags: self.tags.clone(),
            attributes: self.attributes.clone(),
            rotation_probs: self.rotation_probs,
            pose: self.pose.as_ref().map(|p| p.iter().copied().map(&f).collect()),
            hands,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Picture {
    pub name: String,
    pub pixels: RgbImage,
    pub notes: Annotations,
}

impl Picture {
    pub fn new(name: impl Into<String>, pixels: RgbImage) -> Self {
        Self { name: name.into(), pixels, notes: Annotations::default() }
    }

    pub fn with_notes(mut self, notes: Annotations) -> Self {
        self.notes = notes;
        self
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn dims(&self) -> (u32, u32) {
        self.pixels.dimensions()
    }

    /// Load an image file and every sidecar that shares its stem.
    pub fn load(path: &Path) -> Result<Self> {
        let pixels = image::open(path)?.to_rgb8();
        let stem = file_stem(path)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let mut sidecars = BTreeMap::new();
        for suffix in SIDECAR_SUFFIXES {
            let p = dir.join(format!("{stem}{suffix}"));
            if p.is_file() {
                sidecars.insert(suffix.to_string(), std::fs::read_to_string(&p)?);
            }
        }
        Ok(Self { name: stem, pixels, notes: parse_sidecars(&sidecars)? })
    }

    /// Decode from encoded bytes plus sidecar texts keyed by suffix (e.g. `.lm5.txt`).
    pub fn decode(name: impl Into<String>, bytes: &[u8], sidecars: &BTreeMap<String, String>) -> Result<Self> {
        let pixels = image::load_from_memory(bytes)?.to_rgb8();
        Ok(Self { name: name.into(), pixels, notes: parse_sidecars(sidecars)? })
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        encode_png_rgb(&self.pixels)
    }

    /// Write `<dir>/<name>.png` together with sidecars for every present annotation.
    pub fn save_with_sidecars(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{}.png", self.name)), self.encode_png()?)?;
        for (suffix, text) in render_sidecars(&self.notes)? {
            std::fs::write(dir.join(format!("{}{}", self.name, suffix)), text)?;
        }
        Ok(())
    }

    /// Sha-256 over dimensions and raw pixels.
    pub fn digest(&self) -> String {
        image_digest(&self.pixels)
    }

    /// Short content-addressed identifier.
    pub fn content_id(&self) -> String {
        self.digest()[..16].to_string()
    }

    /// Copy out `rect`, which must lie within the image. Annotations move with it.
    pub fn crop(&self, rect: &CropRect) -> Result<Self> {
        if !rect.within(self.width(), self.height()) {
            return Err(Error::InvalidInput(format!(
                "crop {rect:?} outside {}x{} image",
                self.width(),
                self.height()
            )));
        }
        let pixels = image::imageops::crop_imm(
            &self.pixels,
            rect.left as u32,
            rect.top as u32,
            rect.width() as u32,
            rect.height() as u32,
        )
        .to_image();
        let (dx, dy) = (rect.left as f64, rect.top as f64);
        Ok(Self {
            name: self.name.clone(),
            pixels,
            notes: self.notes.map_points(|p| Point::new(p.x - dx, p.y - dy)),
        })
    }

    /// Grow the canvas by `pad` pixels on every side, filled with `fill`.
    pub fn pad(&self, pad: u32, fill: Rgb<u8>) -> Self {
        let (w, h) = self.dims();
        let mut out = RgbImage::from_pixel(w + 2 * pad, h + 2 * pad, fill);
        image::imageops::replace(&mut out, &self.pixels, pad as i64, pad as i64);
        Self {
            name: self.name.clone(),
            pixels: out,
            notes: self.notes.map_points(|p| Point::new(p.x + pad as f64, p.y + pad as f64)),
        }
    }
}

fn file_stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| Error::InvalidInput(format!("bad image path {}", path.display())))
}

pub fn image_digest(img: &RgbImage) -> String {
    let mut h = Sha256::new();
    h.update(img.width().to_le_bytes());
    h.update(img.height().to_le_bytes());
    h.update(img.as_raw());
    hex::encode(h.finalize())
}

pub fn mask_digest(mask: &Mask) -> String {
    let mut h = Sha256::new();
    h.update(mask.width().to_le_bytes());
    h.update(mask.height().to_le_bytes());
    h.update(mask.as_raw());
    hex::encode(h.finalize())
}

pub fn encode_png_rgb(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn encode_png_mask(mask: &Mask) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    mask.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

/// Load a single-channel mask PNG; any nonzero value counts as set.
pub fn load_mask(path: &Path) -> Result<Mask> {
    Ok(binarize(&image::open(path)?.to_luma8()))
}

pub fn decode_mask(bytes: &[u8]) -> Result<Mask> {
    Ok(binarize(&image::load_from_memory(bytes)?.to_luma8()))
}

fn binarize(m: &GrayImage) -> Mask {
    GrayImage::from_fn(m.width(), m.height(), |x, y| Luma([if m.get_pixel(x, y)[0] > 0 { 255 } else { 0 }]))
}

pub fn parse_sidecars(sidecars: &BTreeMap<String, String>) -> Result<Annotations> {
    let mut notes = Annotations::default();
    let five = sidecars.get(".lm5.txt").map(|t| parse_points(t)).transpose()?;
    let sixty_eight = sidecars.get(".lm68.txt").map(|t| parse_points(t)).transpose()?;
    if let Some(p) = &five {
        if p.is_empty() || p.len() % 5 != 0 {
            return Err(Error::InvalidInput(format!("five-point sidecar has {} points", p.len())));
        }
    }
    if let Some(p) = &sixty_eight {
        if p.is_empty() || p.len() % 68 != 0 {
            return Err(Error::InvalidInput(format!("68-point sidecar has {} points", p.len())));
        }
    }
    let n_faces = match (&five, &sixty_eight) {
        (Some(a), Some(b)) if a.len() / 5 != b.len() / 68 => {
            return Err(Error::InvalidInput("landmark sidecars disagree on face count".into()))
        }
        (Some(a), _) => a.len() / 5,
        (None, Some(b)) => b.len() / 68,
        (None, None) => 0,
    };
    for i in 0..n_faces {
        notes.faces.push(FaceAnnotation {
            landmarks5: five.as_ref().map(|p| LandmarkSet5::from_slice(&p[i * 5..i * 5 + 5])).transpose()?,
            landmarks68: sixty_eight
                .as_ref()
                .map(|p| LandmarkSet68::new(p[i * 68..i * 68 + 68].to_vec()))
                .transpose()?,
        });
    }
    if let Some(t) = sidecars.get(".tags.txt") {
        notes.tags = Some(t.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect());
    }
    if let Some(t) = sidecars.get(".attr.json") {
        notes.attributes = Some(serde_json::from_str(t)?);
    }
    if let Some(t) = sidecars.get(".rot.txt") {
        let v: Vec<f64> = t
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidInput("malformed rotation sidecar".into()))?;
        notes.rotation_probs =
            Some(v.try_into().map_err(|_| Error::InvalidInput("rotation sidecar needs 4 values".into()))?);
    }
    if let Some(t) = sidecars.get(".pose.txt") {
        notes.pose = Some(parse_points(t)?);
    }
    if let Some(t) = sidecars.get(".hands.txt") {
        notes.hands = parse_rects(t)?;
    }
    Ok(notes)
}

pub fn render_sidecars(notes: &Annotations) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let fives: Vec<_> = notes.faces.iter().filter_map(|f| f.landmarks5).collect();
    if !fives.is_empty() && fives.len() == notes.faces.len() {
        let pts: Vec<Point> = fives.iter().flat_map(|l| l.points().iter().copied()).collect();
        out.insert(".lm5.txt".into(), format_points(&pts));
    }
    let sixty: Vec<_> = notes.faces.iter().filter_map(|f| f.landmarks68.clone()).collect();
    if !sixty.is_empty() && sixty.len() == notes.faces.len() {
        let pts: Vec<Point> = sixty.iter().flat_map(|l| l.points().to_vec()).collect();
        out.insert(".lm68.txt".into(), format_points(&pts));
    }
    if let Some(tags) = &notes.tags {
        out.insert(".tags.txt".into(), tags.iter().map(|t| format!("{t}\n")).collect());
    }
    if let Some(a) = &notes.attributes {
        out.insert(".attr.json".into(), serde_json::to_string_pretty(a)? + "\n");
    }
    if let Some(r) = notes.rotation_probs {
        out.insert(".rot.txt".into(), format!("{} {} {} {}\n", r[0], r[1], r[2], r[3]));
    }
    if let Some(p) = &notes.pose {
        out.insert(".pose.txt".into(), format_points(p));
    }
    if !notes.hands.is_empty() {
        out.insert(".hands.txt".into(), format_rects(&notes.hands));
    }
    Ok(out)
}

pub mod mask {
    //! Helpers over binary masks.

    use super::*;

    pub fn empty(width: u32, height: u32) -> Mask {
        GrayImage::new(width, height)
    }

    pub fn is_set(m: &Mask, x: u32, y: u32) -> bool {
        m.get_pixel(x, y)[0] > 0
    }

    pub fn count(m: &Mask) -> usize {
        m.as_raw().iter().filter(|&&v| v > 0).count()
    }

    pub fn is_empty(m: &Mask) -> bool {
        m.as_raw().iter().all(|&v| v == 0)
    }

    pub fn invert(m: &Mask) -> Mask {
        GrayImage::from_fn(m.width(), m.height(), |x, y| Luma([if is_set(m, x, y) { 0 } else { 255 }]))
    }

    pub fn and_not(a: &Mask, b: &Mask) -> Mask {
        GrayImage::from_fn(a.width(), a.height(), |x, y| {
            Luma([if is_set(a, x, y) && !is_set(b, x, y) { 255 } else { 0 }])
        })
    }

    pub fn union(a: &Mask, b: &Mask) -> Mask {
        GrayImage::from_fn(a.width(), a.height(), |x, y| Luma([if is_set(a, x, y) || is_set(b, x, y) { 255 } else { 0 }]))
    }

    pub fn overlaps(a: &Mask, b: &Mask) -> bool {
        a.as_raw().iter().zip(b.as_raw()).any(|(&p, &q)| p > 0 && q > 0)
    }

    /// Filled axis-aligned ellipse.
    pub fn ellipse(width: u32, height: u32, center: Point, rx: f64, ry: f64) -> Mask {
        GrayImage::from_fn(width, height, |x, y| {
            let dx = (x as f64 - center.x) / rx;
            let dy = (y as f64 - center.y) / ry;
            Luma([if dx * dx + dy * dy <= 1.0 { 255 } else { 0 }])
        })
    }

    pub fn rect(width: u32, height: u32, r: &CropRect) -> Mask {
        GrayImage::from_fn(width, height, |x, y| {
            Luma([if r.contains(&Point::new(x as f64, y as f64)) { 255 } else { 0 }])
        })
    }

    pub fn crop(m: &Mask, r: &CropRect) -> Mask {
        image::imageops::crop_imm(m, r.left as u32, r.top as u32, r.width() as u32, r.height() as u32).to_image()
    }

    /// Place `small` into a zero mask of the given size at `(left, top)`.
    pub fn embed(small: &Mask, width: u32, height: u32, left: i64, top: i64) -> Mask {
        let mut out = GrayImage::new(width, height);
        image::imageops::replace(&mut out, small, left, top);
        out
    }

    /// Tight bounding box of set pixels.
    pub fn bounds(m: &Mask) -> Option<CropRect> {
        let (mut l, mut t, mut r, mut b) = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
        for (x, y, p) in m.enumerate_pixels() {
            if p[0] > 0 {
                l = l.min(x as i64);
                t = t.min(y as i64);
                r = r.max(x as i64 + 1);
                b = b.max(y as i64 + 1);
            }
        }
        (l < r).then_some(CropRect { left: l, top: t, right: r, bottom: b })
    }
}
