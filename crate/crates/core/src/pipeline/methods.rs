use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector2;
use rayon::prelude::*;

use super::{assemble, forward_sign, Dataset, FrameManifest, MotionRecord, MotionSource, PipelineConfig, PipelineError};
use crate::geom::{CameraIntrinsics, Correspondence, RelativeMotion};
use crate::io::ManualPair;
use crate::matching::{match_crop_combinations, mean_certainty, sample_warp, CropId, CropPairWarps, DenseWarp, MatchSet};
use crate::retrieval::{filter_pairs_by, propose_pairs, FramePair, PairSource};
use crate::robust::{estimate_relative_pose, RobustError, RobustEstimate};
use crate::sfm::{reconstruct, Fragment, PairGeometry, SfmInput};

/// Correspondences (full-image pixels) sampled from a warp on a uniform grid
/// over its source crop with about `target_samples` nodes; samples below
/// `certainty_floor` are dropped.
pub fn dense_correspondences(warp: &DenseWarp, target_samples: usize, certainty_floor: f64) -> Vec<Correspondence> {
    let (src, dst) = (warp.src_crop, warp.dst_crop);
    let (w, h) = (src.w as f64, src.h as f64);
    let stride = (w * h / target_samples.max(1) as f64).sqrt();
    let nx = ((w / stride).round() as usize).max(1);
    let ny = ((h / stride).round() as usize).max(1);
    let mut out = Vec::with_capacity(nx * ny);
    for r in 0..ny {
        for c in 0..nx {
            let p = Vector2::new((c as f64 + 0.5) * w / nx as f64, (r as f64 + 0.5) * h / ny as f64);
            if let Ok((q, certainty)) = sample_warp(warp, p) {
                if certainty >= certainty_floor {
                    out.push(Correspondence { p1: p + src.offset(), p2: q + dst.offset() });
                }
            }
        }
    }
    out
}

/// Robust two-view estimate (unit translation) from the correspondences of
/// a dense warp.
pub fn estimate_from_warp(warp: &DenseWarp, ki: &CameraIntrinsics, kj: &CameraIntrinsics, cfg: &PipelineConfig) -> Result<RobustEstimate, RobustError> {
    let corrs = dense_correspondences(warp, cfg.method_one.target_samples, cfg.method_one.certainty_floor);
    estimate_relative_pose(&corrs, ki, kj, &cfg.ransac().for_pair(warp.src_crop.frame, warp.dst_crop.frame))
}

fn full_warp_estimate(ds: &dyn Dataset, i: usize, j: usize, cfg: &PipelineConfig) -> Result<Result<RobustEstimate, RobustError>, PipelineError> {
    let m = ds.manifest();
    let warp = ds.warp(i, j, CropId::Full, CropId::Full)?;
    let est = estimate_from_warp(&warp, &m.record(i)?.intrinsics, &m.record(j)?.intrinsics, cfg);
    Ok(est.map(|e| RobustEstimate { motion: RelativeMotion { frame_i: i, frame_j: j, ..e.motion }, ..e }))
}

/// Sequential matching: every consecutive pair gets its dense two-view
/// estimate, oriented forward and scaled to the target length.
pub fn run_method_one(ds: &dyn Dataset, cfg: &PipelineConfig) -> Result<Vec<MotionRecord>, PipelineError> {
    cfg.validate()?;
    let axis = cfg.assembly.forward_axis();
    let target = cfg.assembly.target_median_translation_m;
    ds.manifest()
        .consecutive_pairs()
        .into_par_iter()
        .map(|(i, j)| match full_warp_estimate(ds, i, j, cfg)? {
            Ok(est) => {
                let (m, _) = forward_sign(&est.motion, &axis);
                Ok(MotionRecord::new(m.with_translation_norm(target), MotionSource::TwoView, None))
            }
            Err(e) if cfg.method_one.identity_on_failure => {
                log::info!("pair ({i}, {j}): {e}; using zero motion");
                Ok(MotionRecord::zero(i, j, MotionSource::FailedZero))
            }
            Err(source) => Err(PipelineError::EstimationFailed { frame_i: i, frame_j: j, source }),
        })
        .collect()
}

/// Dense two-view estimates of the given pairs; `None` marks a failed
/// estimation.
pub fn two_view_estimates(ds: &dyn Dataset, pairs: &[(usize, usize)], cfg: &PipelineConfig) -> Result<BTreeMap<(usize, usize), Option<RelativeMotion>>, PipelineError> {
    let results: Vec<((usize, usize), Option<RelativeMotion>)> = pairs
        .par_iter()
        .map(|&(i, j)| Ok(((i, j), full_warp_estimate(ds, i, j, cfg)?.ok().map(|e| e.motion))))
        .collect::<Result<_, PipelineError>>()?;
    Ok(results.into_iter().collect())
}

/// Certainty used by the retrieval filter: mean certainty of the `i -> j`
/// warp between the pair's crops, FULL where unrestricted.
fn pair_certainty(ds: &dyn Dataset, p: &FramePair) -> Result<f64, PipelineError> {
    let warp = ds.warp(p.frame_i, p.frame_j, p.crop_i.unwrap_or(CropId::Full), p.crop_j.unwrap_or(CropId::Full))?;
    Ok(mean_certainty(&warp))
}

/// Drops pairs whose warp certainty is not above the floor. Pairs without
/// warps are skipped with a warning.
fn certainty_filter(ds: &dyn Dataset, pairs: &[FramePair], cfg: &PipelineConfig) -> Result<Vec<FramePair>, PipelineError> {
    let certainties: Vec<Option<f64>> = pairs
        .par_iter()
        .map(|p| match pair_certainty(ds, p) {
            Ok(c) => Ok(Some(c)),
            Err(PipelineError::MissingWarp { .. }) => {
                log::warn!("no warp for {:?} pair ({}, {}); skipped", p.source, p.frame_i, p.frame_j);
                Ok(None)
            }
            Err(e) => Err(e),
        })
        .collect::<Result<_, PipelineError>>()?;
    let available: Vec<FramePair> = pairs.iter().zip(&certainties).filter(|(_, c)| c.is_some()).map(|(p, _)| *p).collect();
    let lookup: BTreeMap<(usize, usize), f64> = pairs.iter().zip(certainties).filter_map(|(p, c)| Some((p.key(), c?))).collect();
    Ok(filter_pairs_by(&available, &cfg.retrieval, |p| lookup.get(&p.key()).copied())?)
}

/// Retrieval: embedding proposals that pass the warp-certainty filter.
pub fn propose_and_filter(ds: &dyn Dataset, cfg: &PipelineConfig) -> Result<Vec<FramePair>, PipelineError> {
    let proposed = propose_pairs(&ds.embeddings()?, &cfg.retrieval)?;
    let kept = certainty_filter(ds, &proposed, cfg)?;
    log::info!("retrieval: {} proposed, {} kept", proposed.len(), kept.len());
    Ok(kept)
}

/// Consecutive pairs, retrieved pairs (when enabled) and manual pairs. Manual
/// pairs skip the embedding-distance gate but not the certainty filter. A
/// pair listed more than once keeps its first occurrence in that order.
pub fn build_pair_list(ds: &dyn Dataset, manual: &[ManualPair], cfg: &PipelineConfig) -> Result<Vec<FramePair>, PipelineError> {
    let retrieved = if cfg.method_two.use_retrieval { propose_and_filter(ds, cfg)? } else { Vec::new() };
    combine_pairs(ds, &retrieved, manual, cfg)
}

/// [`build_pair_list`] with the retrieval result supplied by the caller.
pub fn combine_pairs(ds: &dyn Dataset, retrieved: &[FramePair], manual: &[ManualPair], cfg: &PipelineConfig) -> Result<Vec<FramePair>, PipelineError> {
    let n = ds.manifest().len();
    if let Some(p) = manual.iter().find(|p| p.frame_i >= p.frame_j || p.frame_j >= n) {
        return Err(PipelineError::InvalidConfig(format!("manual pair ({}, {}) is not a valid frame pair", p.frame_i, p.frame_j)));
    }
    if let Some(p) = retrieved.iter().find(|p| p.frame_i >= p.frame_j || p.frame_j >= n) {
        return Err(PipelineError::InvalidConfig(format!("retrieved pair ({}, {}) is not a valid frame pair", p.frame_i, p.frame_j)));
    }
    let mut pairs: Vec<FramePair> = ds.manifest().consecutive_pairs().into_iter().map(|(i, j)| FramePair::new(i, j, PairSource::Sequential)).collect();
    pairs.extend_from_slice(retrieved);
    let manual: Vec<FramePair> = manual.iter().map(ManualPair::to_frame_pair).collect();
    pairs.extend(certainty_filter(ds, &manual, cfg)?);
    let mut seen = BTreeSet::new();
    pairs.retain(|p| seen.insert(p.key()));
    pairs.sort_by_key(|p| p.key());
    Ok(pairs)
}

/// Keypoint matches of a pair through its allowed crop combinations.
pub fn match_pair(ds: &dyn Dataset, pair: &FramePair, cfg: &PipelineConfig) -> Result<MatchSet, PipelineError> {
    let (i, j) = pair.key();
    let mut warps = CropPairWarps::new();
    for (a, b) in pair.crop_combinations() {
        warps.insert(ds.warp(i, j, a, b)?, ds.warp(j, i, b, a)?)?;
    }
    Ok(match_crop_combinations(&warps, &ds.keypoints(i)?, &ds.keypoints(j)?, &cfg.matching)?)
}

/// Matches every candidate pair in parallel. Non-sequential pairs without
/// warps are skipped with a warning; the kept pairs stay in input order.
pub fn match_pairs(ds: &dyn Dataset, candidates: &[FramePair], cfg: &PipelineConfig) -> Result<(Vec<FramePair>, Vec<MatchSet>), PipelineError> {
    let matched: Vec<Option<(FramePair, MatchSet)>> = candidates
        .par_iter()
        .map(|p| match match_pair(ds, p, cfg) {
            Ok(set) => Ok(Some((*p, set))),
            Err(PipelineError::MissingWarp { .. }) if p.source != PairSource::Sequential => {
                log::warn!("pair ({}, {}) lacks warps; skipped", p.frame_i, p.frame_j);
                Ok(None)
            }
            Err(e) => Err(e),
        })
        .collect::<Result<_, PipelineError>>()?;
    Ok(matched.into_iter().flatten().unzip())
}

/// Geometric verification: the matches consistent with a robust essential
/// matrix, or `None` when estimation fails or too few survive.
pub fn verify_matches(set: &MatchSet, manifest: &FrameManifest, cfg: &PipelineConfig) -> Result<Option<PairGeometry>, PipelineError> {
    let (i, j) = (set.frame_i, set.frame_j);
    let (ki, kj) = (manifest.record(i)?.intrinsics, manifest.record(j)?.intrinsics);
    let corrs: Vec<Correspondence> = set.matches.iter().map(|m| Correspondence { p1: m.point_i(), p2: m.point_j() }).collect();
    let Ok(est) = estimate_relative_pose(&corrs, &ki, &kj, &cfg.ransac().for_pair(i, j)) else {
        return Ok(None);
    };
    if est.inlier_count < cfg.method_two.min_verified_matches {
        return Ok(None);
    }
    let matches = set.matches.iter().zip(&est.inlier_mask).filter(|(_, keep)| **keep).map(|(m, _)| *m).collect();
    Ok(Some(PairGeometry { motion: est.motion, inliers: MatchSet { frame_i: i, frame_j: j, matches } }))
}

/// Verifies every match set and reconstructs fragments from the survivors.
pub fn reconstruct_matches(manifest: &FrameManifest, sets: &[MatchSet], cfg: &PipelineConfig) -> Result<(Vec<PairGeometry>, Vec<Fragment>), PipelineError> {
    let verified: Vec<Option<PairGeometry>> = sets.par_iter().map(|s| verify_matches(s, manifest, cfg)).collect::<Result<_, _>>()?;
    let geometries: Vec<PairGeometry> = verified.into_iter().flatten().collect();
    log::info!("{} of {} pairs passed geometric verification", geometries.len(), sets.len());
    let input = SfmInput { intrinsics: manifest.intrinsics(), pairs: geometries };
    let fragments = reconstruct(&input, &cfg.sfm())?;
    Ok((input.pairs, fragments))
}

/// Consecutive pairs that no fragment covers and that do not span a time
/// jump: the ones assembly takes from two-view estimates.
pub fn uncovered_pairs(manifest: &FrameManifest, fragments: &[Fragment], cfg: &PipelineConfig) -> Vec<(usize, usize)> {
    manifest
        .consecutive_pairs()
        .into_iter()
        .filter(|&(i, j)| !fragments.iter().any(|f| f.contains(i) && f.contains(j)))
        .filter(|&(i, j)| manifest.frames[j].timestamp - manifest.frames[i].timestamp <= cfg.assembly.time_jump_s)
        .collect()
}

#[derive(Debug, Clone)]
pub struct MethodTwoOutput {
    pub pairs: Vec<FramePair>,
    /// Raw keypoint matches, aligned with `pairs`.
    pub matches: Vec<MatchSet>,
    pub geometries: Vec<PairGeometry>,
    pub fragments: Vec<Fragment>,
    pub motions: Vec<MotionRecord>,
}

/// Reconstruction-based run: match all pairs, verify, reconstruct fragments
/// and assemble the sequence.
pub fn run_method_two(ds: &dyn Dataset, manual: &[ManualPair], cfg: &PipelineConfig) -> Result<MethodTwoOutput, PipelineError> {
    cfg.validate()?;
    let manifest = ds.manifest();
    let candidates = build_pair_list(ds, manual, cfg)?;
    let (pairs, matches) = match_pairs(ds, &candidates, cfg)?;
    let (geometries, fragments) = reconstruct_matches(manifest, &matches, cfg)?;
    let two_view = two_view_estimates(ds, &uncovered_pairs(manifest, &fragments, cfg), cfg)?;
    let motions = assemble(manifest, &fragments, &two_view, &cfg.assembly)?;
    Ok(MethodTwoOutput { pairs, matches, geometries, fragments, motions })
}
