use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::Scene;
use crate::io::{self, IoError, WarpIndexEntry};
use crate::matching::CropId;
use crate::pipeline::{ground_truth_records, manifest_of_scene, PipelineError};
use crate::retrieval::{propose_pairs, RetrievalConfig};

pub const SCENE_CONFIG_FILE: &str = "scene.toml";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProductSummary {
    pub frames: usize,
    /// Frame pairs with warps in both directions for all crop combinations.
    pub warp_pairs: Vec<(usize, usize)>,
    pub warp_files: usize,
}

/// Writes a complete data directory for `scene`: manifest, keypoints,
/// embeddings, ground-truth motions, the scene configuration, and warps for
/// consecutive pairs, retrieval proposals under `retrieval` and the scene's
/// revisit pairs.
pub fn write_products(scene: &Scene, dir: &Path, retrieval: &RetrievalConfig) -> Result<ProductSummary, PipelineError> {
    fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    let manifest = manifest_of_scene(scene);
    let n = manifest.len();
    io::write_manifest(&dir.join(io::MANIFEST_FILE), &manifest)?;
    io::write_motions(&dir.join(io::GROUND_TRUTH_FILE), &ground_truth_records(scene))?;
    let toml = toml::to_string(&scene.config).expect("scene config serializes");
    fs::write(dir.join(SCENE_CONFIG_FILE), toml).map_err(|e| IoError::io(dir, e))?;

    let embeddings: Vec<_> = (0..n).into_par_iter().map(|f| scene.embedding(f)).collect();
    (0..n).into_par_iter().try_for_each(|f| -> Result<(), IoError> {
        io::write_keypoints(&dir.join(io::keypoints_file_name(f)), &scene.keypoints(f).keypoints)?;
        io::write_embedding(&dir.join(io::embedding_file_name(f)), &embeddings[f])
    })?;

    let mut pairs: BTreeSet<(usize, usize)> = (1..n).map(|j| (j - 1, j)).collect();
    pairs.extend(propose_pairs(&embeddings, retrieval)?.iter().map(|p| p.key()));
    pairs.extend(scene.revisit_pairs());
    let pairs: Vec<(usize, usize)> = pairs.into_iter().collect();
    let directed: Vec<(usize, usize, CropId, CropId)> = pairs
        .iter()
        .flat_map(|&(i, j)| CropId::ALL.into_iter().flat_map(move |a| CropId::ALL.into_iter().flat_map(move |b| [(i, j, a, b), (j, i, b, a)])))
        .collect();
    let index: Vec<WarpIndexEntry> = directed
        .par_iter()
        .map(|&(i, j, a, b)| {
            let warp = scene.warp(i, j, a, b);
            let file = io::warp_file_name(i, j, a, b);
            io::write_warp(&dir.join(&file), &warp)?;
            Ok(WarpIndexEntry { frame_i: i, frame_j: j, crop_i: a, crop_j: b, file, src_crop: warp.src_crop, dst_crop: warp.dst_crop })
        })
        .collect::<Result<_, IoError>>()?;
    io::write_warp_index(&dir.join(io::WARP_INDEX_FILE), &index)?;
    log::info!("wrote {} frames and {} warps for {} pairs to {}", n, index.len(), pairs.len(), dir.display());
    Ok(ProductSummary { frames: n, warp_files: index.len(), warp_pairs: pairs })
}
