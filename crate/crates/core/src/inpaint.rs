//! Two-stage identity inpainting into a template photo.
//!
//! Stage 1 generates a face of the identity guided only by the template's bone
//! pose. Its 68 landmarks are warped onto the template face by a least-squares
//! affine map. Stage 2 inpaints the (expanded) template face region, guided
//! by the warped landmarks and by Canny edges outside the face. For several
//! faces, each face is processed inside a context window and merged back with
//! the autoencoder's reconstruction error added outside the face mask.

use image::imageops::grayscale;
use image::{Rgb, RgbImage};
use imageproc::distance_transform::Norm;
use nalgebra::{DMatrix, SVD};
use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::backends::{Backends, FaceDetection, GenerationCall, InpaintCall};
use crate::controls::{edges_in_region, ControlStack, PoseControl, PoseFixture, RegionMap};
use crate::error::{Error, Result};
use crate::generation::{Identity, PreparedModel};
use crate::geometry::{CropRect, Point};
use crate::landmarks::LandmarkSet68;
use crate::picture::{mask, Mask, Picture};

/// Inpainting strength for the identity pass.
pub const DEFAULT_INPAINT_STRENGTH: f64 = 0.65;
/// Seeds tried in stage 1 before giving up.
pub const DEFAULT_STAGE1_ATTEMPTS: u32 = 3;
/// Default mask expansion as a fraction of the face box diagonal.
pub const DEFAULT_EXPANSION_FRACTION: f64 = 0.05;
/// Context window side relative to the face box, for multi-face templates.
pub const MULTI_ID_WINDOW_SCALE: f64 = 2.5;

/// `[[a, b, tx], [c, d, ty]]` acting on `(x, y, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap(pub [[f64; 3]; 2]);

impl AffineMap {
    pub const IDENTITY: AffineMap = AffineMap([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn apply(&self, p: Point) -> Point {
        let m = &self.0;
        Point::new(m[0][0] * p.x + m[0][1] * p.y + m[0][2], m[1][0] * p.x + m[1][1] * p.y + m[1][2])
    }

    pub fn inverse(&self) -> Result<AffineMap> {
        let d = self.det();
        if d.abs() <= 1e-9 {
            return Err(Error::DegenerateLandmarks("affine map is singular".into()));
        }
        let [[a, b, tx], [c, e, ty]] = self.0;
        let (ia, ib, ic, ie) = (e / d, -b / d, -c / d, a / d);
        Ok(AffineMap([[ia, ib, -(ia * tx + ib * ty)], [ic, ie, -(ic * tx + ie * ty)]]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineFit {
    pub map: AffineMap,
    /// Root-mean-square distance between mapped source and destination points.
    pub residual: f64,
}

/// Least-squares affine map taking `src` onto `dst`.
pub fn fit_affine(src: &[Point], dst: &[Point]) -> Result<AffineFit> {
    if src.len() != dst.len() || src.len() < 3 {
        return Err(Error::DegenerateLandmarks("need at least three point pairs".into()));
    }
    if src.iter().chain(dst).any(|p| !p.is_finite()) {
        return Err(Error::DegenerateLandmarks("non-finite landmark".into()));
    }
    // Center the source for conditioning; the translation is restored below.
    let n = src.len();
    let c = crate::geometry::centroid(src);
    let x = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => src[i].x - c.x,
        1 => src[i].y - c.y,
        _ => 1.0,
    });
    let y = DMatrix::from_fn(n, 2, |i, j| if j == 0 { dst[i].x } else { dst[i].y });
    let svd = SVD::new(x, true, true);
    let (max, min) = svd.singular_values.iter().fold((0.0f64, f64::MAX), |(hi, lo), s| (hi.max(*s), lo.min(*s)));
    if !(min > 1e-9 * max) {
        return Err(Error::DegenerateLandmarks("landmarks are collinear".into()));
    }
    let coef = svd.solve(&y, 0.0).map_err(|e| Error::DegenerateLandmarks(e.to_string()))?;
    let (a, b, c0) = (coef[(0, 0)], coef[(1, 0)], coef[(2, 0)]);
    let (d, e, f0) = (coef[(0, 1)], coef[(1, 1)], coef[(2, 1)]);
    let map = AffineMap([[a, b, c0 - a * c.x - b * c.y], [d, e, f0 - d * c.x - e * c.y]]);
    if map.det().abs() <= 1e-9 {
        return Err(Error::DegenerateLandmarks("fitted map is singular".into()));
    }
    let residual = (src.iter().zip(dst).map(|(s, t)| map.apply(*s).distance(t).powi(2)).sum::<f64>() / n as f64).sqrt();
    Ok(AffineFit { map, residual })
}

pub fn compute_alignment_affine(src: &LandmarkSet68, dst: &LandmarkSet68) -> Result<AffineFit> {
    fit_affine(src.points(), dst.points())
}

pub fn warp_landmarks(map: &AffineMap, l: &LandmarkSet68) -> LandmarkSet68 {
    l.map(|p| map.apply(p))
}

/// Dilation by a Euclidean disc of radius `k` (capped at 255).
pub fn expand_face_mask(m: &Mask, k: u32) -> Mask {
    if k == 0 {
        return m.clone();
    }
    imageproc::morphology::dilate(m, Norm::L2, k.min(255) as u8)
}

pub fn default_expansion_radius(face: &CropRect) -> u32 {
    (DEFAULT_EXPANSION_FRACTION * face.diagonal()).round() as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InpaintOptions {
    pub strength: f64,
    /// Mask expansion radius in pixels; derived from each face box when unset.
    pub expansion_radius: Option<u32>,
    pub stage1_attempts: u32,
    /// Add the autoencoder reconstruction error back outside the face masks.
    pub compensate: bool,
}

impl Default for InpaintOptions {
    fn default() -> Self {
        Self { strength: DEFAULT_INPAINT_STRENGTH, expansion_radius: None, stage1_attempts: DEFAULT_STAGE1_ATTEMPTS, compensate: true }
    }
}

impl InpaintOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(Error::InvalidInput(format!("strength {} outside [0, 1]", self.strength)));
        }
        if self.stage1_attempts == 0 {
            return Err(Error::InvalidConfig("stage 1 needs at least one attempt".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Stage1Output {
    pub face: Picture,
    pub landmarks: LandmarkSet68,
    pub seed: u64,
    pub attempts: u32,
}

/// Generate an identity face guided by bone pose only, fuse the template face
/// into it, and read its landmarks. A seed whose result shows no face is
/// retried with the next seed, up to `max_attempts` seeds.
pub fn stage1_generate_face(
    pose: &PoseFixture,
    size: (u32, u32),
    identity: &Identity,
    model: &PreparedModel,
    backends: &Backends,
    seed: u64,
    max_attempts: u32,
) -> Result<Stage1Output> {
    let controls = ControlStack::pose_only(PoseControl::Body(PoseFixture { hands: Vec::new(), ..pose.clone() }));
    for attempt in 0..max_attempts {
        let s = seed.wrapping_add(attempt as u64);
        let call = GenerationCall {
            name: format!("stage1-{s}"),
            prompt: model.prompt.clone(),
            negative_prompt: model.negative_prompt.clone(),
            seed: s,
            width: size.0,
            height: size.1,
            weights_digest: model.weights_digest.clone(),
            controls: Some(controls.clone()),
        };
        let generated = backends.text_to_image.generate(&call)?;
        let fused = backends.face_fusion.fuse(&identity.template, &generated, None)?;
        match backends.face_detector.landmarks68(&fused, None) {
            Ok(landmarks) => return Ok(Stage1Output { face: fused, landmarks, seed: s, attempts: attempt + 1 }),
            Err(Error::NoFace(_)) => debug!(seed = s, "stage 1 produced no detectable face"),
            Err(e) => return Err(e),
        }
    }
    Err(Error::Stage1Failure { attempts: max_attempts })
}

#[derive(Debug, Clone)]
pub struct Stage2Output {
    pub portrait: Picture,
    pub controls: ControlStack,
}

/// Inpaint `region` of `template` guided by the warped landmarks and by Canny
/// edges outside the region, then fuse the template face inside the region.
#[allow(clippy::too_many_arguments)]
pub fn stage2_inpaint(
    template: &Picture,
    warped: &LandmarkSet68,
    region: &Mask,
    identity: &Identity,
    model: &PreparedModel,
    backends: &Backends,
    seed: u64,
    strength: f64,
) -> Result<Stage2Output> {
    if region.dimensions() != template.dims() {
        return Err(Error::InvalidInput("face mask does not match the template".into()));
    }
    if mask::is_empty(region) {
        return Err(Error::InvalidInput("face mask is empty".into()));
    }
    let (w, h) = template.dims();
    let clamped = warped.map(|p| Point::new(p.x.clamp(0.0, w as f64 - 1.0), p.y.clamp(0.0, h as f64 - 1.0)));
    let outside = mask::invert(region);
    let edges = edges_in_region(&grayscale(&template.pixels), &outside);
    let controls = ControlStack::new(Some(PoseControl::FaceLandmarks(clamped)), Some(RegionMap { region: outside, map: edges }), None, strength)?;
    let inpainted = backends.inpainter.inpaint(&InpaintCall {
        image: template,
        mask: region,
        controls: &controls,
        prompt: &model.prompt,
        negative_prompt: &model.negative_prompt,
        seed,
        weights_digest: &model.weights_digest,
    })?;
    let portrait = backends.face_fusion.fuse(&identity.template, &inpainted, Some(region))?;
    Ok(Stage2Output { portrait, controls })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceReport {
    pub face_index: usize,
    pub identity: String,
    pub face_box: CropRect,
    pub window: CropRect,
    pub expansion_radius: u32,
    pub stage1_seed: u64,
    pub stage1_attempts: u32,
    pub affine: AffineFit,
    pub controls_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintManifest {
    pub strength: f64,
    pub compensate: bool,
    pub seed: u64,
    pub faces: Vec<FaceReport>,
    pub output_id: String,
}

#[derive(Debug, Clone)]
pub struct InpaintOutput {
    pub portrait: Picture,
    pub manifest: InpaintManifest,
}

/// One face of the template to replace, by index in the detector's order.
#[derive(Debug, Clone, Copy)]
pub struct FaceAssignment<'a> {
    pub face_index: usize,
    pub identity: &'a Identity,
    pub model: &'a PreparedModel,
}

/// Scale `face` by `factor` about its center and clamp to the image.
pub fn context_window(face: &CropRect, factor: f64, width: u32, height: u32) -> Result<CropRect> {
    let c = face.center();
    let (hw, hh) = (face.width() as f64 * factor / 2.0, face.height() as f64 * factor / 2.0);
    CropRect { left: (c.x - hw).floor() as i64, top: (c.y - hh).floor() as i64, right: (c.x + hw).ceil() as i64, bottom: (c.y + hh).ceil() as i64 }
        .clamp_to(width, height)
        .ok_or_else(|| Error::InvalidInput("face box lies outside the template".into()))
}

struct Planned<'a> {
    assignment: FaceAssignment<'a>,
    detection: FaceDetection,
    window: CropRect,
    radius: u32,
    mask: Mask,
}

/// Replace each assigned face of `template` with its identity. Faces are
/// processed independently inside their context windows; the result does not
/// depend on the order of `assignments`.
pub fn multi_id_inpaint(
    template: &Picture,
    assignments: &[FaceAssignment<'_>],
    backends: &Backends,
    seed: u64,
    options: &InpaintOptions,
) -> Result<InpaintOutput> {
    options.validate()?;
    if assignments.is_empty() {
        return Err(Error::InvalidInput("no faces to inpaint".into()));
    }
    let detections = backends.face_detector.detect_all(template)?;
    let (w, h) = template.dims();
    let mut sorted: Vec<FaceAssignment<'_>> = assignments.to_vec();
    sorted.sort_by_key(|a| a.face_index);
    if sorted.windows(2).any(|p| p[0].face_index == p[1].face_index) {
        return Err(Error::InvalidInput("a face is assigned twice".into()));
    }

    let mut plans = Vec::with_capacity(sorted.len());
    for a in sorted {
        let detection = detections
            .get(a.face_index)
            .cloned()
            .ok_or_else(|| Error::InvalidInput(format!("template has no face {} ({} detected)", a.face_index, detections.len())))?;
        let radius = options.expansion_radius.unwrap_or_else(|| default_expansion_radius(&detection.bbox));
        let face_mask = backends.human_parser.face_mask(template, &detection.bbox)?;
        let window = context_window(&detection.bbox, MULTI_ID_WINDOW_SCALE, w, h)?;
        // keep the expanded mask inside the window it is processed in
        let expanded = expand_face_mask(&face_mask, radius);
        let inside = mask::rect(w, h, &window);
        let mask = mask::and_not(&expanded, &mask::invert(&inside));
        plans.push(Planned { assignment: a, detection, window, radius, mask });
    }
    for (i, p) in plans.iter().enumerate() {
        for q in &plans[i + 1..] {
            if mask::overlaps(&p.mask, &q.mask) {
                return Err(Error::Overlap(format!(
                    "expanded masks of faces {} and {} overlap",
                    p.assignment.face_index, q.assignment.face_index
                )));
            }
        }
    }

    let mut reports = Vec::with_capacity(plans.len());
    let mut pieces = Vec::with_capacity(plans.len());
    for p in &plans {
        let (piece, report) = process_face(template, p, backends, seed, options)?;
        pieces.push(piece);
        reports.push(report);
    }

    // Window context first (lowest face index wins overlaps), then face regions.
    let mut out = template.pixels.clone();
    for (p, piece) in plans.iter().zip(&pieces).rev() {
        paste(&mut out, piece, &p.window, |x, y| plans.iter().all(|q| !mask::is_set(&q.mask, x, y)));
    }
    for (p, piece) in plans.iter().zip(&pieces) {
        paste(&mut out, piece, &p.window, |x, y| mask::is_set(&p.mask, x, y));
    }
    let portrait = Picture { name: format!("{}-inpainted", template.name), pixels: out, notes: template.notes.clone() };
    let manifest = InpaintManifest { strength: options.strength, compensate: options.compensate, seed, faces: reports, output_id: portrait.content_id() };
    Ok(InpaintOutput { portrait, manifest })
}

fn paste(out: &mut RgbImage, piece: &RgbImage, window: &CropRect, keep: impl Fn(u32, u32) -> bool) {
    for (x, y, px) in piece.enumerate_pixels() {
        let (gx, gy) = (x + window.left as u32, y + window.top as u32);
        if keep(gx, gy) {
            out.put_pixel(gx, gy, *px);
        }
    }
}

/// Run both stages on one face's window and return the merged window pixels.
fn process_face(template: &Picture, plan: &Planned<'_>, backends: &Backends, seed: u64, options: &InpaintOptions) -> Result<(RgbImage, FaceReport)> {
    let a = &plan.assignment;
    let crop = template.crop(&plan.window)?;
    let local_box = plan.detection.bbox.translate(-plan.window.left, -plan.window.top);
    let local_mask = mask::crop(&plan.mask, &plan.window);
    let face_seed = seed.wrapping_add(1000 * a.face_index as u64);

    let l_template = backends.face_detector.landmarks68(&crop, Some(&local_box))?;
    let pose = backends.pose_estimator.pose(&crop)?;
    let pose = PoseFixture { face: Some(l_template.clone()), ..pose };
    let stage1 = stage1_generate_face(&pose, crop.dims(), a.identity, a.model, backends, face_seed, options.stage1_attempts)?;
    let affine = compute_alignment_affine(&stage1.landmarks, &l_template)?;
    let warped = warp_landmarks(&affine.map, &stage1.landmarks);
    let stage2 = stage2_inpaint(&crop, &warped, &local_mask, a.identity, a.model, backends, face_seed, options.strength)?;

    // Decoding the processed crop touches every pixel of the window; the
    // reconstruction error of the original crop cancels that outside the mask.
    let decoded = backends.autoencoder.round_trip(&stage2.portrait.pixels)?;
    let merged = if options.compensate {
        let recon = backends.autoencoder.round_trip(&crop.pixels)?;
        RgbImage::from_fn(crop.width(), crop.height(), |x, y| {
            let d = decoded.get_pixel(x, y);
            if mask::is_set(&local_mask, x, y) {
                return *d;
            }
            let (o, r) = (crop.pixels.get_pixel(x, y), recon.get_pixel(x, y));
            Rgb(std::array::from_fn(|k| (d[k] as i16 + (o[k] as i16 - r[k] as i16)).clamp(0, 255) as u8))
        })
    } else {
        decoded
    };
    let report = FaceReport {
        face_index: a.face_index,
        identity: a.identity.profile.id.clone(),
        face_box: plan.detection.bbox,
        window: plan.window,
        expansion_radius: plan.radius,
        stage1_seed: stage1.seed,
        stage1_attempts: stage1.attempts,
        affine,
        controls_digest: stage2.controls.digest(),
    };
    Ok((merged, report))
}
