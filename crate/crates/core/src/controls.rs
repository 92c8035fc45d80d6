//! Spatial conditioning passed to a single diffusion call.

use image::GrayImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{CropRect, Point};
use crate::landmarks::LandmarkSet68;
use crate::picture::{mask, Mask};

/// Bone pose plus hand regions, as produced by the pose estimator. `face`
/// carries facial keypoints when the estimator saw a face.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseFixture {
    pub bones: Vec<Point>,
    pub hands: Vec<CropRect>,
    pub face: Option<LandmarkSet68>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PoseControl {
    /// Warped facial landmarks.
    FaceLandmarks(LandmarkSet68),
    /// Skeleton (and optionally hands) without facial landmarks.
    Body(PoseFixture),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMap {
    pub region: Mask,
    pub map: GrayImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlStack {
    pub pose: Option<PoseControl>,
    pub canny: Option<RegionMap>,
    pub depth: Option<RegionMap>,
    pub strength: f64,
}

impl ControlStack {
    pub fn new(pose: Option<PoseControl>, canny: Option<RegionMap>, depth: Option<RegionMap>, strength: f64) -> Result<Self> {
        let s = Self { pose, canny, depth, strength };
        s.validate()?;
        Ok(s)
    }

    pub fn pose_only(pose: PoseControl) -> Self {
        Self { pose: Some(pose), canny: None, depth: None, strength: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(Error::InvalidInput(format!("strength {} outside [0, 1]", self.strength)));
        }
        if self.pose.is_none() && self.canny.is_none() && self.depth.is_none() && self.strength != 1.0 {
            return Err(Error::InvalidInput("a control stack without controls must use strength 1.0".into()));
        }
        for m in [&self.canny, &self.depth].into_iter().flatten() {
            if m.region.dimensions() != m.map.dimensions() {
                return Err(Error::InvalidInput("control region and map differ in size".into()));
            }
        }
        Ok(())
    }

    /// Names of the controls present, in a fixed order.
    pub fn kinds(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        match &self.pose {
            Some(PoseControl::FaceLandmarks(_)) => v.push("pose-face-landmarks"),
            Some(PoseControl::Body(p)) if p.hands.is_empty() => v.push("pose-bones"),
            Some(PoseControl::Body(_)) => v.push("pose-bones-hands"),
            None => {}
        }
        if self.canny.is_some() {
            v.push("canny");
        }
        if self.depth.is_some() {
            v.push("depth");
        }
        v
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.strength.to_bits().to_le_bytes());
        let pts = |h: &mut Sha256, pts: &[Point]| {
            h.update((pts.len() as u64).to_le_bytes());
            for p in pts {
                h.update(p.x.to_bits().to_le_bytes());
                h.update(p.y.to_bits().to_le_bytes());
            }
        };
        match &self.pose {
            None => h.update([0u8]),
            Some(PoseControl::FaceLandmarks(l)) => {
                h.update([1u8]);
                pts(&mut h, l.points());
            }
            Some(PoseControl::Body(p)) => {
                h.update([2u8]);
                pts(&mut h, &p.bones);
                for r in &p.hands {
                    for v in [r.left, r.top, r.right, r.bottom] {
                        h.update(v.to_le_bytes());
                    }
                }
                if let Some(f) = &p.face {
                    pts(&mut h, f.points());
                }
            }
        }
        for (tag, m) in [(3u8, &self.canny), (4u8, &self.depth)] {
            if let Some(m) = m {
                h.update([tag]);
                h.update(m.region.width().to_le_bytes());
                h.update(m.region.height().to_le_bytes());
                h.update(m.region.as_raw());
                h.update(m.map.as_raw());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Canny edge map of `gray`, zeroed outside `region`.
pub fn edges_in_region(gray: &GrayImage, region: &Mask) -> GrayImage {
    let edges = imageproc::edges::canny(gray, 20.0, 60.0);
    GrayImage::from_fn(gray.width(), gray.height(), |x, y| {
        if mask::is_set(region, x, y) {
            *edges.get_pixel(x, y)
        } else {
            image::Luma([0])
        }
    })
}
