//! Small geometric primitives shared by the pipelines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in continuous pixel coordinates. Pixel `(i, j)` has its center at `(i, j)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

pub fn centroid(points: &[Point]) -> Point {
    let n = points.len().max(1) as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    Point::new(sx / n, sy / n)
}

/// Axis-aligned integer rectangle, `left..right` × `top..bottom` (exclusive upper bounds).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropRect {
    pub left: i64,
    pub top: i64,
    pub right: i64,
    pub bottom: i64,
}

impl CropRect {
    pub fn new(left: i64, top: i64, right: i64, bottom: i64) -> Result<Self> {
        if left >= right || top >= bottom {
            return Err(Error::InvalidInput(format!(
                "empty rectangle ({left}, {top}, {right}, {bottom})"
            )));
        }
        Ok(Self { left, top, right, bottom })
    }

    pub fn width(&self) -> i64 {
        self.right - self.left
    }

    pub fn height(&self) -> i64 {
        self.bottom - self.top
    }

    pub fn center(&self) -> Point {
        Point::new(
            (self.left + self.right) as f64 / 2.0,
            (self.top + self.bottom) as f64 / 2.0,
        )
    }

    pub fn diagonal(&self) -> f64 {
        (self.width() as f64).hypot(self.height() as f64)
    }

    pub fn within(&self, width: u32, height: u32) -> bool {
        self.left >= 0 && self.top >= 0 && self.right <= width as i64 && self.bottom <= height as i64
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.left as f64 && p.x < self.right as f64 && p.y >= self.top as f64 && p.y < self.bottom as f64
    }

    pub fn intersects(&self, other: &CropRect) -> bool {
        self.left < other.right && other.left < self.right && self.top < other.bottom && other.top < self.bottom
    }

    pub fn translate(&self, dx: i64, dy: i64) -> Self {
        Self {
            left: self.left + dx,
            top: self.top + dy,
            right: self.right + dx,
            bottom: self.bottom + dy,
        }
    }

    /// Clip to `0..width` × `0..height`; `None` when nothing remains.
    pub fn clamp_to(&self, width: u32, height: u32) -> Option<Self> {
        let r = Self {
            left: self.left.max(0),
            top: self.top.max(0),
            right: self.right.min(width as i64),
            bottom: self.bottom.min(height as i64),
        };
        (r.left < r.right && r.top < r.bottom).then_some(r)
    }

    /// Smallest integer rectangle covering all points.
    pub fn bounding(points: &[Point]) -> Option<Self> {
        if points.is_empty() {
            return None;
        }
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for p in points {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        let r = Self {
            left: x0.floor() as i64,
            top: y0.floor() as i64,
            right: x1.floor() as i64 + 1,
            bottom: y1.floor() as i64 + 1,
        };
        Some(r)
    }

    /// Centers of the four corner pixels.
    pub fn corners(&self) -> [Point; 4] {
        let (l, t) = (self.left as f64, self.top as f64);
        let (r, b) = ((self.right - 1) as f64, (self.bottom - 1) as f64);
        [Point::new(l, t), Point::new(r, t), Point::new(l, b), Point::new(r, b)]
    }
}
