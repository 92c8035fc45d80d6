//! Five- and sixty-eight-point facial landmark sets and their text sidecar format.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{centroid, CropRect, Point};

/// Detected five-point landmarks: left eye, right eye, nose tip, left mouth corner,
/// right mouth corner ("left" meaning image-left).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet5 {
    points: [Point; 5],
}

impl LandmarkSet5 {
    pub fn new(points: [Point; 5]) -> Result<Self> {
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("landmark coordinates must be finite".into()));
        }
        if points.iter().all(|p| *p == points[0]) {
            return Err(Error::DegenerateLandmarks("all five landmarks coincide".into()));
        }
        Ok(Self { points })
    }

    pub fn from_slice(points: &[Point]) -> Result<Self> {
        let arr: [Point; 5] = points
            .try_into()
            .map_err(|_| Error::InvalidInput(format!("expected 5 landmarks, got {}", points.len())))?;
        Self::new(arr)
    }

    pub fn points(&self) -> &[Point; 5] {
        &self.points
    }

    pub fn map(&self, f: impl FnMut(Point) -> Point) -> Self {
        Self { points: self.points.map(f) }
    }
}

/// The fixed alignment template for five-point landmarks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceTemplate5 {
    points: [Point; 5],
}

impl FaceTemplate5 {
    /// Reference positions on a 112×112 aligned face crop.
    pub const STANDARD: FaceTemplate5 = FaceTemplate5 {
        points: [
            Point::new(38.2946, 51.6963),
            Point::new(73.5318, 51.5014),
            Point::new(56.0252, 71.7366),
            Point::new(41.5493, 92.3655),
            Point::new(70.7299, 92.2041),
        ],
    };

    pub fn points(&self) -> &[Point; 5] {
        &self.points
    }

    pub fn as_landmarks(&self) -> LandmarkSet5 {
        LandmarkSet5 { points: self.points }
    }
}

impl Default for FaceTemplate5 {
    fn default() -> Self {
        Self::STANDARD
    }
}

pub const LANDMARKS_68: usize = 68;

/// Sixty-eight facial landmarks in the usual ordering: jaw 0–16, brows 17–26,
/// nose 27–35, eyes 36–47, mouth 48–67.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct LandmarkSet68 {
    points: Vec<Point>,
}

impl TryFrom<Vec<Point>> for LandmarkSet68 {
    type Error = Error;

    fn try_from(points: Vec<Point>) -> Result<Self> {
        Self::new(points)
    }
}

impl From<LandmarkSet68> for Vec<Point> {
    fn from(l: LandmarkSet68) -> Self {
        l.points
    }
}

impl LandmarkSet68 {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() != LANDMARKS_68 {
            return Err(Error::InvalidInput(format!("expected 68 landmarks, got {}", points.len())));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("landmark coordinates must be finite".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn map(&self, f: impl FnMut(Point) -> Point) -> Self {
        Self { points: self.points.iter().copied().map(f).collect() }
    }

    /// Collapse to the five-point convention (eye centers, nose tip, mouth corners).
    pub fn to_five(&self) -> LandmarkSet5 {
        let p = &self.points;
        LandmarkSet5 {
            points: [centroid(&p[36..42]), centroid(&p[42..48]), p[30], p[48], p[54]],
        }
    }

    /// The mean face shape in the 112×112 template frame. Its five-point
    /// collapse reproduces [`FaceTemplate5::STANDARD`] exactly.
    pub fn mean_shape() -> Self {
        let t = FaceTemplate5::STANDARD.points;
        let mut pts = Vec::with_capacity(LANDMARKS_68);
        // jaw: lower half-ellipse from image-left temple to image-right temple
        for i in 0..17 {
            let a = std::f64::consts::PI * i as f64 / 16.0;
            pts.push(Point::new(56.0 - 31.0 * a.cos(), 50.0 + 50.0 * a.sin()));
        }
        for i in 0..5 {
            let f = i as f64 / 4.0;
            pts.push(Point::new(28.0 + 22.0 * f, 41.0 - 5.0 * (std::f64::consts::PI * f).sin()));
        }
        for i in 0..5 {
            let f = i as f64 / 4.0;
            pts.push(Point::new(62.0 + 22.0 * f, 41.0 - 5.0 * (std::f64::consts::PI * f).sin()));
        }
        for y in [50.0, 57.0, 64.5] {
            pts.push(Point::new(56.0, y));
        }
        pts.push(t[2]);
        for i in 0..5 {
            pts.push(Point::new(48.0 + 4.0 * i as f64, 77.5 + if i == 2 { 1.5 } else { 0.0 }));
        }
        // eyes: six points evenly spaced on an ellipse so their mean is the eye center
        for c in [t[0], t[1]] {
            for k in 0..6 {
                let a = std::f64::consts::PI - std::f64::consts::PI * k as f64 / 3.0;
                pts.push(Point::new(c.x + 7.0 * a.cos(), c.y - 3.0 * a.sin()));
            }
        }
        // outer lip 48–59 starting at the left corner, clockwise through the upper lip
        let (ml, mr) = (t[3], t[4]);
        let mc = Point::new((ml.x + mr.x) / 2.0, (ml.y + mr.y) / 2.0);
        let half = (mr.x - ml.x) / 2.0;
        for k in 0..12 {
            let a = std::f64::consts::PI - std::f64::consts::PI * k as f64 / 6.0;
            let (dx, dy) = (half * a.cos(), -6.0 * a.sin());
            pts.push(Point::new(mc.x + dx, mc.y + dy + (mr.y - ml.y) * dx / (2.0 * half)));
        }
        pts[48] = ml;
        pts[54] = mr;
        for k in 0..8 {
            let a = std::f64::consts::PI - std::f64::consts::PI * k as f64 / 4.0;
            pts.push(Point::new(mc.x + 0.7 * half * a.cos(), mc.y - 2.5 * a.sin()));
        }
        Self { points: pts }
    }

    /// Least-squares similarity transform of the mean shape onto a five-point set.
    pub fn fit_to(five: &LandmarkSet5) -> Self {
        let src = Self::mean_shape();
        let sim = Similarity::estimate(FaceTemplate5::STANDARD.points(), five.points());
        src.map(|p| sim.apply(p))
    }
}

/// `p ↦ a·p + t` with `a` a complex scale-rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub re: f64,
    pub im: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Similarity {
    pub fn estimate(src: &[Point], dst: &[Point]) -> Self {
        let cs = centroid(src);
        let cd = centroid(dst);
        let (mut num_re, mut num_im, mut den) = (0.0, 0.0, 0.0);
        for (s, d) in src.iter().zip(dst) {
            let (sx, sy) = (s.x - cs.x, s.y - cs.y);
            let (dx, dy) = (d.x - cd.x, d.y - cd.y);
            // conj(s) * d
            num_re += sx * dx + sy * dy;
            num_im += sx * dy - sy * dx;
            den += sx * sx + sy * sy;
        }
        let (re, im) = if den > 0.0 { (num_re / den, num_im / den) } else { (1.0, 0.0) };
        Self {
            re,
            im,
            tx: cd.x - (re * cs.x - im * cs.y),
            ty: cd.y - (im * cs.x + re * cs.y),
        }
    }

    /// Rotation by `angle` radians and uniform `scale`, then translation.
    pub fn from_parts(scale: f64, angle: f64, tx: f64, ty: f64) -> Self {
        Self { re: scale * angle.cos(), im: scale * angle.sin(), tx, ty }
    }

    pub fn apply(&self, p: Point) -> Point {
        Point::new(self.re * p.x - self.im * p.y + self.tx, self.im * p.x + self.re * p.y + self.ty)
    }
}

/// Parse a landmark sidecar: one `x y` pair per non-empty line.
pub fn parse_points(text: &str) -> Result<Vec<Point>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|line| {
            let mut it = line.split_whitespace().map(str::parse::<f64>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(x)), Some(Ok(y)), None) => Ok(Point::new(x, y)),
                _ => Err(Error::InvalidInput(format!("malformed landmark line `{line}`"))),
            }
        })
        .collect()
}

pub fn format_points(points: &[Point]) -> String {
    let mut out = String::new();
    for p in points {
        let _ = writeln!(out, "{} {}", p.x, p.y);
    }
    out
}

/// Parse a rectangle sidecar: one `left top right bottom` per line.
pub fn parse_rects(text: &str) -> Result<Vec<CropRect>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|line| {
            let v: Vec<i64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::InvalidInput(format!("malformed rectangle line `{line}`")))?;
            match v[..] {
                [l, t, r, b] => CropRect::new(l, t, r, b),
                _ => Err(Error::InvalidInput(format!("malformed rectangle line `{line}`"))),
            }
        })
        .collect()
}

pub fn format_rects(rects: &[CropRect]) -> String {
    let mut out = String::new();
    for r in rects {
        let _ = writeln!(out, "{} {} {} {}", r.left, r.top, r.right, r.bottom);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_shape_collapses_to_template() {
        let five = LandmarkSet68::mean_shape().to_five();
        for (a, b) in five.points().iter().zip(FaceTemplate5::STANDARD.points()) {
            assert!(a.distance(b) < 1e-9, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn fit_recovers_similarity() {
        let sim = Similarity::from_parts(1.7, 0.3, 40.0, -12.0);
        let target = FaceTemplate5::STANDARD.as_landmarks().map(|p| sim.apply(p));
        let fitted = LandmarkSet68::fit_to(&target);
        let expected = LandmarkSet68::mean_shape().map(|p| sim.apply(p));
        for (a, b) in fitted.points().iter().zip(expected.points()) {
            assert!(a.distance(b) < 1e-9);
        }
    }

    #[test]
    fn sidecar_round_trip() {
        let pts = FaceTemplate5::STANDARD.points().to_vec();
        assert_eq!(parse_points(&format_points(&pts)).unwrap(), pts);
        assert!(parse_points("1 2 3\n").is_err());
        assert!(parse_points("1 x\n").is_err());
    }

    #[test]
    fn rejects_wrong_counts_and_degenerate() {
        assert!(LandmarkSet68::new(vec![Point::default(); 67]).is_err());
        assert!(matches!(
            LandmarkSet5::new([Point::new(1.0, 1.0); 5]),
            Err(Error::DegenerateLandmarks(_))
        ));
        assert!(LandmarkSet5::new([Point::new(f64::NAN, 1.0); 5]).is_err());
    }
}
