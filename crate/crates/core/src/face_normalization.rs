//! Geometric normalization of uploaded photos into training-ready face crops:
//! coarse right-angle rotation, landmark-based face rotation, square crop around
//! the face, head-mask segmentation and skin retouching.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::backends::Backends;
use crate::error::{Error, Result};
use crate::geometry::{CropRect, Point};
use crate::landmarks::{FaceTemplate5, LandmarkSet5};
use crate::picture::{mask_digest, Mask, Picture};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QuarterTurn {
    #[serde(rename = "0")]
    Deg0,
    #[serde(rename = "90")]
    Deg90,
    #[serde(rename = "180")]
    Deg180,
    #[serde(rename = "270")]
    Deg270,
}

impl QuarterTurn {
    pub const ALL: [QuarterTurn; 4] = [QuarterTurn::Deg0, QuarterTurn::Deg90, QuarterTurn::Deg180, QuarterTurn::Deg270];

    pub fn degrees(self) -> u32 {
        match self {
            QuarterTurn::Deg0 => 0,
            QuarterTurn::Deg90 => 90,
            QuarterTurn::Deg180 => 180,
            QuarterTurn::Deg270 => 270,
        }
    }

    pub fn inverse(self) -> Self {
        match self {
            QuarterTurn::Deg0 => QuarterTurn::Deg0,
            QuarterTurn::Deg90 => QuarterTurn::Deg270,
            QuarterTurn::Deg180 => QuarterTurn::Deg180,
            QuarterTurn::Deg270 => QuarterTurn::Deg90,
        }
    }
}

/// Pick the right-angle rotation with the largest probability. Ties go to the
/// smaller angle.
pub fn select_image_rotation(probs: &[f64; 4]) -> Result<QuarterTurn> {
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidInput(format!("rotation probabilities must be finite and non-negative: {probs:?}")));
    }
    if probs.iter().all(|&p| p == 0.0) {
        return Err(Error::InvalidInput("rotation probabilities are all zero".into()));
    }
    let mut best = 0;
    for i in 1..4 {
        if probs[i] > probs[best] {
            best = i;
        }
    }
    Ok(QuarterTurn::ALL[best])
}

/// Subtract the centroid and divide by the scalar RMS of all centered coordinates.
pub fn normalize_landmarks(points: &[Point]) -> Result<Vec<Point>> {
    if points.is_empty() || points.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidInput("landmarks must be non-empty and finite".into()));
    }
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = points.iter().map(|p| p.y).sum::<f64>() / n;
    let centered: Vec<Point> = points.iter().map(|p| Point::new(p.x - cx, p.y - cy)).collect();
    let ms = centered.iter().map(|p| p.x * p.x + p.y * p.y).sum::<f64>() / (2.0 * n);
    let rms = ms.sqrt();
    if !(rms > f64::EPSILON * (cx.abs() + cy.abs()).max(1.0)) {
        return Err(Error::DegenerateLandmarks("landmarks have zero spread".into()));
    }
    Ok(centered.into_iter().map(|p| Point::new(p.x / rms, p.y / rms)).collect())
}

/// The 2×2 linear map `R` minimizing `‖R·P1ᵀ − P2ᵀ‖²` over all linear maps,
/// `R = ((P1ᵀP1)⁻¹ P1ᵀ P2)ᵀ`. Row-major.
pub fn least_squares_linear_map(p1: &[Point], p2: &[Point]) -> Result<[[f64; 2]; 2]> {
    // gram = P1ᵀP1, cross = P1ᵀP2
    let (mut gxx, mut gxy, mut gyy) = (0.0, 0.0, 0.0);
    let (mut cxx, mut cxy, mut cyx, mut cyy) = (0.0, 0.0, 0.0, 0.0);
    for (a, b) in p1.iter().zip(p2) {
        gxx += a.x * a.x;
        gxy += a.x * a.y;
        gyy += a.y * a.y;
        cxx += a.x * b.x;
        cxy += a.x * b.y;
        cyx += a.y * b.x;
        cyy += a.y * b.y;
    }
    let det = gxx * gyy - gxy * gxy;
    let scale = (gxx + gyy).powi(2);
    if !(det > 1e-12 * scale) {
        return Err(Error::DegenerateLandmarks("landmarks are collinear; P1ᵀP1 is singular".into()));
    }
    let (ixx, ixy, iyy) = (gyy / det, -gxy / det, gxx / det);
    // m = (P1ᵀP1)⁻¹ P1ᵀP2, then R = mᵀ
    let m00 = ixx * cxx + ixy * cyx;
    let m01 = ixx * cxy + ixy * cyy;
    let m10 = ixy * cxx + iyy * cyx;
    let m11 = ixy * cxy + iyy * cyy;
    Ok([[m00, m10], [m01, m11]])
}

/// Residual `‖R·P1ᵀ − P2ᵀ‖²`.
pub fn alignment_residual(r: &[[f64; 2]; 2], p1: &[Point], p2: &[Point]) -> f64 {
    p1.iter()
        .zip(p2)
        .map(|(a, b)| {
            let x = r[0][0] * a.x + r[0][1] * a.y - b.x;
            let y = r[1][0] * a.x + r[1][1] * a.y - b.y;
            x * x + y * y
        })
        .sum()
}

/// Rotation angle θ ∈ (−π, π] bringing the detected landmarks onto the template.
pub fn estimate_face_rotation(detected: &LandmarkSet5, template: &FaceTemplate5) -> Result<f64> {
    let p1 = normalize_landmarks(detected.points())?;
    let p2 = normalize_landmarks(template.points())?;
    let r = least_squares_linear_map(&p1, &p2)?;
    let theta = r[1][0].atan2(r[1][1]);
    Ok(if theta <= -std::f64::consts::PI { std::f64::consts::PI } else { theta })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rotation {
    Quarter(QuarterTurn),
    /// Radians; positive turns +x toward +y (clockwise on screen).
    Angle(f64),
}

/// Rotate about the image center. Right angles permute pixels onto a swapped
/// canvas; other angles keep the canvas size, resample bilinearly and fill
/// uncovered pixels with `fill`. Annotations follow the same mapping.
pub fn rotate_image(picture: &Picture, rotation: Rotation, fill: Rgb<u8>) -> Picture {
    let (w, h) = picture.dims();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    match rotation {
        Rotation::Quarter(q) => {
            let (pixels, map): (RgbImage, Box<dyn Fn(Point) -> Point>) = match q {
                QuarterTurn::Deg0 => (picture.pixels.clone(), Box::new(|p| p)),
                QuarterTurn::Deg90 => (
                    image::imageops::rotate90(&picture.pixels),
                    Box::new(move |p: Point| Point::new(h as f64 - 1.0 - p.y, p.x)),
                ),
                QuarterTurn::Deg180 => (
                    image::imageops::rotate180(&picture.pixels),
                    Box::new(move |p: Point| Point::new(w as f64 - 1.0 - p.x, h as f64 - 1.0 - p.y)),
                ),
                QuarterTurn::Deg270 => (
                    image::imageops::rotate270(&picture.pixels),
                    Box::new(move |p: Point| Point::new(p.y, w as f64 - 1.0 - p.x)),
                ),
            };
            Picture { name: picture.name.clone(), pixels, notes: picture.notes.map_points(map) }
        }
        Rotation::Angle(theta) => {
            let (s, c) = theta.sin_cos();
            let forward = move |p: Point| {
                let (dx, dy) = (p.x - cx, p.y - cy);
                Point::new(c * dx - s * dy + cx, s * dx + c * dy + cy)
            };
            let src = &picture.pixels;
            let pixels = RgbImage::from_fn(w, h, |x, y| {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                // inverse rotation
                let sx = c * dx + s * dy + cx;
                let sy = -s * dx + c * dy + cy;
                bilinear(src, sx, sy).unwrap_or(fill)
            });
            Picture { name: picture.name.clone(), pixels, notes: picture.notes.map_points(forward) }
        }
    }
}

fn bilinear(img: &RgbImage, x: f64, y: f64) -> Option<Rgb<u8>> {
    const EPS: f64 = 1e-6;
    let (w, h) = (img.width() as f64, img.height() as f64);
    if x < -EPS || y < -EPS || x > w - 1.0 + EPS || y > h - 1.0 + EPS {
        return None;
    }
    let x = x.clamp(0.0, w - 1.0);
    let y = y.clamp(0.0, h - 1.0);
    let (x0, y0) = (x.floor() as u32, y.floor() as u32);
    let (x1, y1) = ((x0 + 1).min(img.width() - 1), (y0 + 1).min(img.height() - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let (p00, p10, p01, p11) = (img.get_pixel(x0, y0), img.get_pixel(x1, y0), img.get_pixel(x0, y1), img.get_pixel(x1, y1));
    let mut out = [0u8; 3];
    for k in 0..3 {
        let top = p00[k] as f64 * (1.0 - fx) + p10[k] as f64 * fx;
        let bot = p01[k] as f64 * (1.0 - fx) + p11[k] as f64 * fx;
        out[k] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
    }
    Some(Rgb(out))
}

/// Face-size band and placement for the training crop. The face "size" is the
/// larger side of its bounding box relative to the square crop side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropPolicy {
    pub target_ratio: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// Face center sits this fraction of the crop side below the crop center.
    pub vertical_offset: f64,
}

impl Default for CropPolicy {
    fn default() -> Self {
        Self { target_ratio: 0.40, min_ratio: 0.35, max_ratio: 0.45, vertical_offset: 0.0 }
    }
}

/// Square crop around `face` with the face at `target_ratio` of the crop side,
/// horizontally centered. When the centered crop would leave the image, the side
/// shrinks toward `max_ratio` to keep the face centered; when even that fails the
/// crop is shifted back inside the image. Vertical placement is clamped freely.
pub fn crop_face_region(image_dims: (u32, u32), face: &CropRect, policy: &CropPolicy) -> Result<CropRect> {
    let (w, h) = image_dims;
    if !face.within(w, h) {
        return Err(Error::InvalidInput(format!("face box {face:?} lies outside {w}x{h} image")));
    }
    let m = face.width().max(face.height()) as f64;
    let s_min = (m / policy.max_ratio - 1e-9).ceil() as i64;
    let s_max = (m / policy.min_ratio + 1e-9).floor() as i64;
    let limit = w.min(h) as i64;
    if s_min > s_max || s_min > limit {
        return Err(Error::ConstraintInfeasible(format!(
            "face of size {m} needs a crop side of at least {s_min}, image allows {limit}"
        )));
    }
    let mut side = ((m / policy.target_ratio).round() as i64).clamp(s_min, s_max).min(limit);

    let center = face.center();
    let centered_limit = (2.0 * center.x.min(w as f64 - center.x)).floor() as i64;
    if side > centered_limit && centered_limit >= s_min {
        side = centered_limit;
    }
    let half = side as f64 / 2.0;
    let left = ((center.x - half).round() as i64).clamp(0, w as i64 - side);
    let top = ((center.y - policy.vertical_offset * side as f64 - half).round() as i64).clamp(0, h as i64 - side);
    CropRect::new(left, top, left + side, top + side)
}

/// One normalized training face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceRecord {
    /// Content id of the normalized crop.
    pub image_ref: String,
    /// Landmarks in crop coordinates.
    pub landmarks: LandmarkSet5,
    /// Content digest of the head mask.
    pub head_mask: String,
    /// Face box in crop coordinates.
    pub bbox: CropRect,
    pub retouched: bool,
}

#[derive(Debug, Clone)]
pub struct NormalizedFace {
    pub record: FaceRecord,
    pub picture: Picture,
    pub head_mask: Mask,
    pub source_index: usize,
    pub coarse_rotation: QuarterTurn,
    pub face_angle: f64,
    /// Crop window in the rotated (and possibly padded) source.
    pub crop: CropRect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub index: usize,
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct PreprocessOutput {
    pub faces: Vec<NormalizedFace>,
    pub skipped: Vec<SkipRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessConfig {
    pub template: FaceTemplate5,
    pub crop: CropPolicy,
    pub fill: Rgb<u8>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { template: FaceTemplate5::STANDARD, crop: CropPolicy::default(), fill: Rgb([0, 0, 0]) }
    }
}

/// Run the full normalization chain over every upload. Images in which no face
/// is found (or whose landmarks are degenerate) are skipped with a reason; any
/// other backend failure aborts.
pub fn run_preprocess_chain(images: &[Picture], backends: &Backends, config: &PreprocessConfig) -> Result<PreprocessOutput> {
    let mut faces = Vec::new();
    let mut skipped = Vec::new();
    for (index, image) in images.iter().enumerate() {
        match normalize_one(index, image, backends, config) {
            Ok(face) => faces.push(face),
            Err(e @ (Error::NoFace(_) | Error::DegenerateLandmarks(_))) => {
                debug!(image = %image.name, cause = %e, "skipping upload");
                skipped.push(SkipRecord { index, name: image.name.clone(), reason: e.code().to_string() });
            }
            Err(e) => return Err(e),
        }
    }
    if faces.is_empty() {
        return Err(Error::EmptyTrainingSet { skipped: skipped.len() });
    }
    Ok(PreprocessOutput { faces, skipped })
}

fn normalize_one(index: usize, image: &Picture, backends: &Backends, config: &PreprocessConfig) -> Result<NormalizedFace> {
    let probs = backends.rotation_classifier.rotation_probs(image)?;
    let coarse = select_image_rotation(&probs)?;
    let upright = rotate_image(image, Rotation::Quarter(coarse), config.fill);

    let first = backends.face_detector.detect(&upright)?;
    let face_angle = estimate_face_rotation(&first.landmarks, &config.template)?;
    let aligned = rotate_image(&upright, Rotation::Angle(face_angle), config.fill);

    let mut source = aligned;
    let mut detection = backends.face_detector.detect(&source)?;
    let crop = match crop_face_region(source.dims(), &detection.bbox, &config.crop) {
        Ok(c) => c,
        Err(Error::ConstraintInfeasible(_)) => {
            let m = detection.bbox.width().max(detection.bbox.height()) as f64;
            let pad = (m / config.crop.target_ratio).ceil() as u32;
            source = source.pad(pad, config.fill);
            detection.bbox = detection.bbox.translate(pad as i64, pad as i64);
            crop_face_region(source.dims(), &detection.bbox, &config.crop)?
        }
        Err(e) => return Err(e),
    };
    let cropped = source.crop(&crop)?;
    let bbox = detection
        .bbox
        .translate(-crop.left, -crop.top)
        .clamp_to(cropped.width(), cropped.height())
        .ok_or_else(|| Error::NoFace(image.name.clone()))?;
    let landmarks = detection.landmarks.map(|p| Point::new(p.x - crop.left as f64, p.y - crop.top as f64));

    let head_mask = backends.human_parser.head_mask(&cropped, &bbox)?;
    let retouched = backends.skin_retoucher.retouch(&cropped, &head_mask)?;
    Ok(NormalizedFace {
        record: FaceRecord {
            image_ref: retouched.content_id(),
            landmarks,
            head_mask: mask_digest(&head_mask)[..16].to_string(),
            bbox,
            retouched: true,
        },
        picture: retouched,
        head_mask,
        source_index: index,
        coarse_rotation: coarse,
        face_angle,
        crop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmarks::Similarity;
    use std::f64::consts::PI;

    fn template() -> FaceTemplate5 {
        FaceTemplate5::STANDARD
    }

    fn rotated_template(phi: f64) -> LandmarkSet5 {
        let t = template().as_landmarks();
        let c = crate::geometry::centroid(t.points());
        t.map(|p| {
            let (dx, dy) = (p.x - c.x, p.y - c.y);
            Point::new(c.x + dx * phi.cos() - dy * phi.sin(), c.y + dx * phi.sin() + dy * phi.cos())
        })
    }

    /// Brute force over rotations on a 0.1° grid.
    fn grid_best(p1: &[Point], p2: &[Point]) -> (f64, f64) {
        (0..3600)
            .map(|i| {
                let t = (i as f64 * 0.1 - 180.0).to_radians();
                let r = [[t.cos(), -t.sin()], [t.sin(), t.cos()]];
                (t, alignment_residual(&r, p1, p2))
            })
            .fold((0.0, f64::MAX), |best, cur| if cur.1 < best.1 { cur } else { best })
    }

    #[test]
    fn rotation_selection_examples() {
        assert_eq!(select_image_rotation(&[0.7, 0.1, 0.1, 0.1]).unwrap(), QuarterTurn::Deg0);
        assert_eq!(select_image_rotation(&[0.1, 0.2, 0.6, 0.1]).unwrap(), QuarterTurn::Deg180);
        assert_eq!(select_image_rotation(&[0.4, 0.4, 0.1, 0.1]).unwrap(), QuarterTurn::Deg0);
        assert!(select_image_rotation(&[0.0; 4]).is_err());
        assert!(select_image_rotation(&[f64::NAN, 0.1, 0.1, 0.1]).is_err());
        assert!(select_image_rotation(&[-0.1, 0.1, 0.1, 0.1]).is_err());
    }

    #[test]
    fn rotation_tie_break_decision_table() {
        // every 0/1 pattern with at least one maximum: winner is the first maximal index
        for bits in 1u32..16 {
            let probs: [f64; 4] = std::array::from_fn(|i| ((bits >> i) & 1) as f64);
            let first = (0..4).find(|&i| probs[i] == 1.0).unwrap();
            assert_eq!(select_image_rotation(&probs).unwrap(), QuarterTurn::ALL[first], "{probs:?}");
        }
    }

    #[test]
    fn normalization_examples() {
        let sq = [(-1.0, -1.0), (1.0, -1.0), (0.0, 0.0), (-1.0, 1.0), (1.0, 1.0)].map(|(x, y)| Point::new(x, y));
        // centroid is (0,0); mean square of the 10 coordinates is 8/10
        let s = (0.8f64).sqrt();
        let n = normalize_landmarks(&sq).unwrap();
        for (a, b) in n.iter().zip(&sq) {
            assert!((a.x - b.x / s).abs() < 1e-12 && (a.y - b.y / s).abs() < 1e-12);
        }
        let moved: Vec<Point> = sq.iter().map(|p| Point::new(3.0 * p.x + 100.0, 3.0 * p.y + 50.0)).collect();
        let m = normalize_landmarks(&moved).unwrap();
        for (a, b) in n.iter().zip(&m) {
            assert!(a.distance(b) < 1e-12);
        }
        assert!(matches!(normalize_landmarks(&[Point::new(2.0, 2.0); 5]), Err(Error::DegenerateLandmarks(_))));
    }

    #[test]
    fn identity_alignment_is_zero() {
        assert!(estimate_face_rotation(&template().as_landmarks(), &template()).unwrap().abs() < 1e-12);
    }

    #[test]
    fn recovers_thirty_degrees_and_matches_grid_oracle() {
        let p1 = rotated_template(PI / 6.0);
        let theta = estimate_face_rotation(&p1, &template()).unwrap();
        assert!((theta + PI / 6.0).abs() < 1e-9, "{theta}");
        let a = normalize_landmarks(p1.points()).unwrap();
        let b = normalize_landmarks(template().points()).unwrap();
        let (grid_theta, _) = grid_best(&a, &b);
        assert!((grid_theta - theta).abs() < 0.1f64.to_radians());
    }

    #[test]
    fn half_turn_uses_full_quadrant() {
        let theta = estimate_face_rotation(&rotated_template(PI), &template()).unwrap();
        assert!((theta - PI).abs() < 1e-9, "{theta}");
    }

    #[test]
    fn collinear_landmarks_are_degenerate() {
        let line = LandmarkSet5::new(std::array::from_fn(|i| Point::new(i as f64, 2.0 * i as f64))).unwrap();
        assert!(matches!(estimate_face_rotation(&line, &template()), Err(Error::DegenerateLandmarks(_))));
    }

    #[test]
    fn right_angle_rotations() {
        let img = RgbImage::from_fn(5, 3, |x, y| Rgb([x as u8, y as u8, (x * y) as u8]));
        let pic = Picture::new("p", img);
        let fill = Rgb([0, 0, 0]);
        let back = rotate_image(&rotate_image(&pic, Rotation::Quarter(QuarterTurn::Deg90), fill), Rotation::Quarter(QuarterTurn::Deg270), fill);
        assert_eq!(back.pixels, pic.pixels);
        assert_eq!(rotate_image(&pic, Rotation::Quarter(QuarterTurn::Deg0), fill).pixels, pic.pixels);
        let mut four = pic.clone();
        for _ in 0..4 {
            four = rotate_image(&four, Rotation::Quarter(QuarterTurn::Deg90), fill);
        }
        assert_eq!(four.pixels, pic.pixels);

        let (a, b) = (Rgb([1, 2, 3]), Rgb([4, 5, 6]));
        let two = Picture::new("t", RgbImage::from_fn(2, 1, |x, _| if x == 0 { a } else { b }));
        let r = rotate_image(&two, Rotation::Quarter(QuarterTurn::Deg180), fill);
        assert_eq!(r.pixels.get_pixel(0, 0), &b);
        assert_eq!(r.pixels.get_pixel(1, 0), &a);
    }

    #[test]
    fn quarter_turn_moves_annotations_with_pixels() {
        let mut img = RgbImage::new(7, 4);
        img.put_pixel(5, 1, Rgb([255, 0, 0]));
        let mut pic = Picture::new("p", img);
        pic.notes.pose = Some(vec![Point::new(5.0, 1.0)]);
        for q in QuarterTurn::ALL {
            let r = rotate_image(&pic, Rotation::Quarter(q), Rgb([0, 0, 0]));
            let p = r.notes.pose.as_ref().unwrap()[0];
            assert_eq!(r.pixels.get_pixel(p.x as u32, p.y as u32), &Rgb([255, 0, 0]), "{q:?}");
        }
    }

    #[test]
    fn small_angle_rotation_keeps_size_and_is_near_identity() {
        let img = RgbImage::from_fn(9, 9, |x, y| Rgb([(10 * x) as u8, (10 * y) as u8, 7]));
        let pic = Picture::new("p", img);
        let r = rotate_image(&pic, Rotation::Angle(1e-15), Rgb([0, 0, 0]));
        assert_eq!(r.pixels, pic.pixels);
        let r = rotate_image(&pic, Rotation::Angle(0.3), Rgb([0, 0, 0]));
        assert_eq!(r.dims(), (9, 9));
        assert_eq!(r.pixels.get_pixel(4, 4), pic.pixels.get_pixel(4, 4));
    }

    #[test]
    fn angle_rotation_aligns_landmarks() {
        let sim = Similarity::from_parts(2.0, 0.4, 100.0, 80.0);
        let lm = template().as_landmarks().map(|p| sim.apply(p));
        let theta = estimate_face_rotation(&lm, &template()).unwrap();
        assert!((theta + 0.4).abs() < 1e-9);
        let mut pic = Picture::new("p", RgbImage::new(300, 300));
        pic.notes.faces.push(crate::picture::FaceAnnotation { landmarks5: Some(lm), landmarks68: None });
        let r = rotate_image(&pic, Rotation::Angle(theta), Rgb([0, 0, 0]));
        let again = estimate_face_rotation(&r.notes.faces[0].landmarks5.unwrap(), &template()).unwrap();
        assert!(again.abs() < 1e-9);
    }

    #[test]
    fn crop_examples() {
        let p = CropPolicy::default();
        let face = CropRect::new(400, 400, 600, 600).unwrap();
        assert_eq!(crop_face_region((1000, 1000), &face, &p).unwrap(), CropRect::new(250, 250, 750, 750).unwrap());
        let face = CropRect::new(150, 150, 350, 350).unwrap();
        assert_eq!(crop_face_region((500, 500), &face, &p).unwrap(), CropRect::new(0, 0, 500, 500).unwrap());
        let face = CropRect::new(100, 100, 300, 300).unwrap();
        assert_eq!(crop_face_region((1000, 1000), &face, &p).unwrap(), CropRect::new(0, 0, 500, 500).unwrap());
    }

    #[test]
    fn crop_relaxes_ratio_to_stay_centered() {
        // centered crop at 0.40 (side 250) would cross the left edge; 0.45 fits
        let face = CropRect::new(65, 400, 165, 500).unwrap();
        let r = crop_face_region((1000, 1000), &face, &CropPolicy::default()).unwrap();
        let ratio = 100.0 / r.width() as f64;
        assert!((0.35..=0.45).contains(&ratio), "{ratio}");
        assert!((r.center().x - face.center().x).abs() <= 1.0);
    }

    #[test]
    fn crop_infeasible_when_face_too_large() {
        let face = CropRect::new(0, 0, 300, 300).unwrap();
        assert!(matches!(
            crop_face_region((500, 500), &face, &CropPolicy::default()),
            Err(Error::ConstraintInfeasible(_))
        ));
        let outside = CropRect::new(400, 400, 600, 600).unwrap();
        assert!(matches!(crop_face_region((500, 500), &outside, &CropPolicy::default()), Err(Error::InvalidInput(_))));
    }
}
