use std::collections::HashMap;
use std::path::{Path, PathBuf};

use super::{FrameManifest, FrameRecord, PipelineError};
use crate::io::{self, WarpIndexEntry};
use crate::matching::{CropId, DenseWarp, KeypointSet};
use crate::retrieval::Embedding;
use crate::synth::Scene;

/// Inputs of a run: the stand-ins for dense-matcher, keypoint-detector and
/// retrieval-network outputs.
pub trait Dataset: Sync {
    fn manifest(&self) -> &FrameManifest;

    /// Warp from crop `crop_i` of frame `i` to crop `crop_j` of frame `j`.
    fn warp(&self, i: usize, j: usize, crop_i: CropId, crop_j: CropId) -> Result<DenseWarp, PipelineError>;

    fn keypoints(&self, frame: usize) -> Result<KeypointSet, PipelineError>;

    fn embedding(&self, frame: usize) -> Result<Embedding, PipelineError>;

    fn embeddings(&self) -> Result<Vec<Embedding>, PipelineError> {
        (0..self.manifest().len()).map(|f| self.embedding(f)).collect()
    }
}

/// Files of a data directory, as written by `synth` or an external matcher.
#[derive(Debug, Clone)]
pub struct DataDir {
    root: PathBuf,
    manifest: FrameManifest,
    warps: HashMap<(usize, usize, CropId, CropId), WarpIndexEntry>,
}

impl DataDir {
    /// Reads the manifest and, when present, the warp index.
    pub fn open(root: &Path) -> Result<Self, PipelineError> {
        let manifest = io::read_manifest(&root.join(io::MANIFEST_FILE))?;
        let index_path = root.join(io::WARP_INDEX_FILE);
        let entries = if index_path.exists() { io::read_warp_index(&index_path)? } else { Vec::new() };
        let warps = entries.into_iter().map(|e| ((e.frame_i, e.frame_j, e.crop_i, e.crop_j), e)).collect();
        Ok(Self { root: root.to_path_buf(), manifest, warps })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn has_warp(&self, i: usize, j: usize, crop_i: CropId, crop_j: CropId) -> bool {
        self.warps.contains_key(&(i, j, crop_i, crop_j))
    }
}

impl Dataset for DataDir {
    fn manifest(&self) -> &FrameManifest {
        &self.manifest
    }

    fn warp(&self, i: usize, j: usize, crop_i: CropId, crop_j: CropId) -> Result<DenseWarp, PipelineError> {
        let entry = self.warps.get(&(i, j, crop_i, crop_j)).ok_or(PipelineError::MissingWarp { frame_i: i, frame_j: j, crop_i, crop_j })?;
        Ok(io::read_warp(&self.root.join(&entry.file), entry.src_crop, entry.dst_crop)?)
    }

    fn keypoints(&self, frame: usize) -> Result<KeypointSet, PipelineError> {
        let r = self.manifest.record(frame)?;
        Ok(io::read_keypoints(&self.root.join(io::keypoints_file_name(frame)), frame, r.width, r.height)?)
    }

    fn embedding(&self, frame: usize) -> Result<Embedding, PipelineError> {
        self.manifest.record(frame)?;
        Ok(io::read_embedding(&self.root.join(io::embedding_file_name(frame)), frame)?)
    }
}

/// Renders inputs on demand from a synthetic scene; every warp exists.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub scene: Scene,
    manifest: FrameManifest,
}

impl SynthDataset {
    pub fn new(scene: Scene) -> Self {
        let manifest = manifest_of_scene(&scene);
        Self { scene, manifest }
    }
}

impl Dataset for SynthDataset {
    fn manifest(&self) -> &FrameManifest {
        &self.manifest
    }

    fn warp(&self, i: usize, j: usize, crop_i: CropId, crop_j: CropId) -> Result<DenseWarp, PipelineError> {
        let n = self.manifest.len();
        if i >= n || j >= n {
            return Err(PipelineError::UnknownFrame(i.max(j)));
        }
        Ok(self.scene.warp(i, j, crop_i, crop_j))
    }

    fn keypoints(&self, frame: usize) -> Result<KeypointSet, PipelineError> {
        self.manifest.record(frame)?;
        Ok(self.scene.keypoints(frame).keypoints)
    }

    fn embedding(&self, frame: usize) -> Result<Embedding, PipelineError> {
        self.manifest.record(frame)?;
        Ok(self.scene.embedding(frame))
    }
}

pub fn manifest_of_scene(scene: &Scene) -> FrameManifest {
    let k = scene.intrinsics;
    let frames = scene
        .frames
        .iter()
        .enumerate()
        .map(|(f, truth)| FrameRecord {
            frame: f,
            image_id: format!("synth_{f:05}"),
            timestamp: truth.timestamp,
            width: k.width,
            height: k.height,
            intrinsics: k,
            full_crop: scene.full_crop(f),
        })
        .collect();
    FrameManifest::new(frames).expect("synthetic manifest is valid")
}

