use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::IoError;
use super::stored_quaternion;
use crate::geom::{canonical_quaternion, quaternion_wxyz, Pose};
use crate::matching::{CropId, CropRect};
use crate::pipeline::FrameManifest;
use crate::retrieval::FramePair;
use crate::sfm::Fragment;

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json { path: path.to_path_buf(), source })
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| IoError::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<FrameManifest, IoError> {
    let manifest: FrameManifest = read_json(path)?;
    manifest.validate().map_err(|e| IoError::malformed(path, e.to_string()))?;
    Ok(manifest)
}

pub fn write_manifest(path: &Path, manifest: &FrameManifest) -> Result<(), IoError> {
    write_json(path, manifest)
}

/// One warp file and the crops its grid is expressed in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarpIndexEntry {
    pub frame_i: usize,
    pub frame_j: usize,
    pub crop_i: CropId,
    pub crop_j: CropId,
    pub file: String,
    pub src_crop: CropRect,
    pub dst_crop: CropRect,
}

pub fn read_warp_index(path: &Path) -> Result<Vec<WarpIndexEntry>, IoError> {
    read_json(path)
}

pub fn write_warp_index(path: &Path, entries: &[WarpIndexEntry]) -> Result<(), IoError> {
    write_json(path, entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FragmentFrame {
    pub frame: usize,
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
}

impl FragmentFrame {
    pub fn pose(&self) -> Pose {
        Pose::new(stored_quaternion(self.qw, self.qx, self.qy, self.qz), nalgebra::Vector3::new(self.tx, self.ty, self.tz))
    }
}

/// Serialized fragment: poses in registration order and the point count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragmentRecord {
    pub fragment_id: usize,
    pub frames: Vec<FragmentFrame>,
    pub point_count: usize,
}

impl From<&Fragment> for FragmentRecord {
    fn from(f: &Fragment) -> Self {
        let mut order: Vec<usize> = f.registration_order.iter().copied().filter(|k| f.poses.contains_key(k)).collect();
        order.extend(f.poses.keys().filter(|k| !f.registration_order.contains(k)));
        let frames = order
            .into_iter()
            .map(|frame| {
                let p = &f.poses[&frame];
                let [qw, qx, qy, qz] = quaternion_wxyz(&canonical_quaternion(p.rotation));
                FragmentFrame { frame, qw, qx, qy, qz, tx: p.translation.x, ty: p.translation.y, tz: p.translation.z }
            })
            .collect();
        Self { fragment_id: f.fragment_id, frames, point_count: f.points.len() }
    }
}

impl FragmentRecord {
    /// Fragment with the stored poses; points are not part of the file.
    pub fn to_fragment(&self) -> Fragment {
        Fragment {
            fragment_id: self.fragment_id,
            poses: self.frames.iter().map(|f| (f.frame, f.pose())).collect(),
            registration_order: self.frames.iter().map(|f| f.frame).collect(),
            ..Default::default()
        }
    }
}

pub fn read_fragments(path: &Path) -> Result<Vec<FragmentRecord>, IoError> {
    read_json(path)
}

pub fn write_fragments(path: &Path, fragments: &[Fragment]) -> Result<(), IoError> {
    let records: Vec<FragmentRecord> = fragments.iter().map(FragmentRecord::from).collect();
    write_json(path, &records)
}

/// Reads a pair list such as the proposed or matched pairs.
pub fn read_pairs(path: &Path) -> Result<Vec<FramePair>, IoError> {
    let pairs: Vec<FramePair> = read_json(path)?;
    if let Some(p) = pairs.iter().find(|p| p.frame_i >= p.frame_j) {
        return Err(IoError::malformed(path, format!("pair ({}, {}) needs frame_i < frame_j", p.frame_i, p.frame_j)));
    }
    Ok(pairs)
}

pub fn write_pairs(path: &Path, pairs: &[FramePair]) -> Result<(), IoError> {
    write_json(path, pairs)
}
