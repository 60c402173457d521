use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::MatchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CropId {
    Full,
    Left,
    Right,
}

impl CropId {
    pub const ALL: [CropId; 3] = [CropId::Full, CropId::Left, CropId::Right];

    pub fn as_str(&self) -> &'static str {
        match self {
            CropId::Full => "FULL",
            CropId::Left => "LEFT",
            CropId::Right => "RIGHT",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "FULL" => Some(CropId::Full),
            "LEFT" => Some(CropId::Left),
            "RIGHT" => Some(CropId::Right),
            _ => None,
        }
    }
}

/// Axis-aligned crop of a frame, in full-image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub frame: usize,
    pub crop_id: CropId,
}

impl CropRect {
    pub fn full(frame: usize, x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h, frame, crop_id: CropId::Full }
    }

    /// Derives the requested crop from a FULL crop; the halves split it
    /// horizontally.
    pub fn sub_crop(&self, id: CropId) -> Self {
        let half = self.w / 2;
        match id {
            CropId::Full => Self { crop_id: CropId::Full, ..*self },
            CropId::Left => Self { w: half, crop_id: CropId::Left, ..*self },
            CropId::Right => Self { x: self.x + half, w: self.w - half, crop_id: CropId::Right, ..*self },
        }
    }

    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        self.w > 0 && self.h > 0 && self.x + self.w <= width && self.y + self.h <= height
    }

    pub fn offset(&self) -> Vector2<f64> {
        Vector2::new(self.x as f64, self.y as f64)
    }

    pub fn size(&self) -> Vector2<f64> {
        Vector2::new(self.w as f64, self.h as f64)
    }

    /// Whether a full-image point lies inside the crop (closed, tolerance 1e-9).
    pub fn contains_image_point(&self, p: Vector2<f64>) -> bool {
        let local = p - self.offset();
        within(local, self.size())
    }
}

fn within(p: Vector2<f64>, size: Vector2<f64>) -> bool {
    const TOL: f64 = 1e-9;
    p.x >= -TOL && p.y >= -TOL && p.x <= size.x + TOL && p.y <= size.y + TOL
}

/// Coordinate systems a point can be expressed in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoordSpace {
    /// Full-image pixels.
    Image { width: u32, height: u32 },
    /// Pixels relative to the crop's top-left corner.
    CropPixels(CropRect),
    /// `[0,1]²` over the crop.
    CropNormalized(CropRect),
}

impl CoordSpace {
    fn contains(&self, p: Vector2<f64>) -> bool {
        match self {
            CoordSpace::Image { width, height } => within(p, Vector2::new(*width as f64, *height as f64)),
            CoordSpace::CropPixels(c) => within(p, c.size()),
            CoordSpace::CropNormalized(_) => within(p, Vector2::new(1.0, 1.0)),
        }
    }

    fn to_image(&self, p: Vector2<f64>) -> Vector2<f64> {
        match self {
            CoordSpace::Image { .. } => p,
            CoordSpace::CropPixels(c) => p + c.offset(),
            CoordSpace::CropNormalized(c) => p.component_mul(&c.size()) + c.offset(),
        }
    }

    fn from_image(&self, p: Vector2<f64>) -> Vector2<f64> {
        match self {
            CoordSpace::Image { .. } => p,
            CoordSpace::CropPixels(c) => p - c.offset(),
            CoordSpace::CropNormalized(c) => (p - c.offset()).component_div(&c.size()),
        }
    }
}

/// Converts `p` between full-image, crop-pixel and normalized-crop
/// coordinates. The source point must lie in its domain.
pub fn crop_transform(p: Vector2<f64>, from: &CoordSpace, to: &CoordSpace) -> Result<Vector2<f64>, MatchError> {
    if !p.iter().all(|v| v.is_finite()) || !from.contains(p) {
        return Err(MatchError::OutOfDomain(p.x, p.y));
    }
    Ok(to.from_image(from.to_image(p)))
}
