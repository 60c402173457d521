//! Keypoint matching through dense warps.
//!
//! A [`DenseWarp`] predicts, for every position of a source crop, where it
//! lands in a destination crop together with a certainty. Keypoints of both
//! frames are pushed through the warps in both directions and paired when
//! they are mutual nearest neighbours close to each other's predictions.

mod crop;
mod index;
mod matcher;
mod warp;

pub use crop::{crop_transform, CoordSpace, CropId, CropRect};
pub use index::PointIndex;
pub use matcher::{match_crop_combinations, match_multicrop, match_single_crop, CropPairWarps, Match, MatchConfig, MatchSet};
pub use warp::{mean_certainty, sample_warp, DenseWarp};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatchError {
    #[error("point ({0}, {1}) lies outside its coordinate domain")]
    OutOfDomain(f64, f64),
    #[error("point ({0}, {1}) lies outside the warp's source crop")]
    OutOfCrop(f64, f64),
    #[error("missing warp for crop combination {0:?} x {1:?}")]
    MissingCropCombination(CropId, CropId),
    #[error("forward and backward warps do not reference the same crops")]
    MismatchedWarps,
    #[error("invalid warp: {0}")]
    InvalidWarp(String),
    #[error("invalid match configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

/// Detected keypoints of one frame, in full-image pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    pub frame: usize,
    pub width: u32,
    pub height: u32,
    pub points: Vec<Keypoint>,
}

impl KeypointSet {
    pub fn new(frame: usize, width: u32, height: u32, points: Vec<Keypoint>) -> Self {
        Self { frame, width, height, points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}
