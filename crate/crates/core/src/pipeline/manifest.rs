use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::geom::CameraIntrinsics;
use crate::matching::{CropId, CropRect};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub image_id: String,
    /// Capture time in seconds.
    pub timestamp: f64,
    pub width: u32,
    pub height: u32,
    pub intrinsics: CameraIntrinsics,
    /// Region of the image that excludes the ego vehicle.
    pub full_crop: CropRect,
}

/// Ordered frame records; serialized as a bare JSON array.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FrameManifest {
    pub frames: Vec<FrameRecord>,
}

impl FrameManifest {
    pub fn new(frames: Vec<FrameRecord>) -> Result<Self, PipelineError> {
        let m = Self { frames };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        for (k, r) in self.frames.iter().enumerate() {
            if r.frame != k {
                return Err(PipelineError::InvalidManifest(format!("record {k} has frame index {}", r.frame)));
            }
            if !r.timestamp.is_finite() {
                return Err(PipelineError::InvalidManifest(format!("frame {k} has a non-finite timestamp")));
            }
            if k > 0 && r.timestamp < self.frames[k - 1].timestamp {
                return Err(PipelineError::InvalidManifest(format!("timestamps decrease at frame {k}")));
            }
            r.intrinsics.validate().map_err(|e| PipelineError::InvalidManifest(format!("frame {k}: {e}")))?;
            if r.intrinsics.width != r.width || r.intrinsics.height != r.height {
                return Err(PipelineError::InvalidManifest(format!("frame {k}: intrinsics image size differs from the record")));
            }
            if r.full_crop.frame != k || r.full_crop.crop_id != CropId::Full || !r.full_crop.fits_in(r.width, r.height) {
                return Err(PipelineError::InvalidManifest(format!("frame {k}: invalid full crop {:?}", r.full_crop)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn intrinsics(&self) -> Vec<CameraIntrinsics> {
        self.frames.iter().map(|r| r.intrinsics).collect()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.frames.iter().map(|r| r.timestamp).collect()
    }

    pub fn record(&self, frame: usize) -> Result<&FrameRecord, PipelineError> {
        self.frames.get(frame).ok_or(PipelineError::UnknownFrame(frame))
    }

    pub fn crop(&self, frame: usize, id: CropId) -> Result<CropRect, PipelineError> {
        Ok(self.record(frame)?.full_crop.sub_crop(id))
    }

    /// All pairs `(i, i + 1)`.
    pub fn consecutive_pairs(&self) -> Vec<(usize, usize)> {
        (1..self.frames.len()).map(|j| (j - 1, j)).collect()
    }
}
