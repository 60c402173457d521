//! Relative camera motion for sparse image sequences.
//!
//! Dense warps and keypoints produced by external matchers are turned into
//! per-pair relative motions ([`robust`]), keypoint matches
//! ([`matching`]), fragment reconstructions ([`sfm`]) and finally a full
//! sequence of consecutive motions ([`pipeline`]). [`synth`] generates a
//! complete synthetic drive with exact ground truth for every stage.

pub mod geom;
pub mod io;
pub mod matching;
pub mod pipeline;
pub mod retrieval;
pub mod robust;
pub mod sfm;
pub mod synth;

pub use geom::{CameraIntrinsics, Correspondence, EssentialMatrix, Pose, RelativeMotion};
pub use matching::{CropId, CropRect, DenseWarp, KeypointSet, MatchSet};
pub use pipeline::{MotionRecord, MotionSource};
pub use retrieval::{Embedding, FramePair, PairSource};
pub use sfm::{Fragment, Track};
