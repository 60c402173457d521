use std::collections::BTreeMap;

use serde::Serialize;

use super::{MotionRecord, MotionSource, PipelineError};
use crate::geom::pose_errors;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairError {
    pub frame_i: usize,
    pub frame_j: usize,
    pub source: MotionSource,
    pub rotation_mrad: f64,
    pub translation_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub mean_rotation_mrad: f64,
    pub mean_translation_m: f64,
    /// Sorted by pair.
    pub pairs: Vec<PairError>,
}

impl Evaluation {
    /// Mean rotation error over pairs with the given source, if any.
    pub fn mean_rotation_mrad_of(&self, source: MotionSource) -> Option<f64> {
        let v: Vec<f64> = self.pairs.iter().filter(|p| p.source == source).map(|p| p.rotation_mrad).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn keyed(records: &[MotionRecord], what: &str) -> Result<BTreeMap<(usize, usize), MotionRecord>, PipelineError> {
    let mut map = BTreeMap::new();
    for r in records {
        if map.insert(r.key(), *r).is_some() {
            return Err(PipelineError::CoverageMismatch(format!("{what} lists pair {:?} twice", r.key())));
        }
    }
    Ok(map)
}

/// Mean rotation (mrad) and translation (m) errors over all pairs. Pairs
/// are processed in sorted order, so the result does not depend on the
/// order of the input records.
pub fn evaluate(estimate: &[MotionRecord], ground_truth: &[MotionRecord]) -> Result<Evaluation, PipelineError> {
    let est = keyed(estimate, "estimate")?;
    let gt = keyed(ground_truth, "ground truth")?;
    if let Some(k) = est.keys().find(|k| !gt.contains_key(k)).or_else(|| gt.keys().find(|k| !est.contains_key(k))) {
        return Err(PipelineError::CoverageMismatch(format!("pair {k:?} is missing on one side")));
    }
    if est.is_empty() {
        return Err(PipelineError::CoverageMismatch("no pairs".into()));
    }
    let pairs: Vec<PairError> = est
        .iter()
        .map(|(k, e)| {
            let err = pose_errors(&e.motion, &gt[k].motion);
            PairError { frame_i: k.0, frame_j: k.1, source: e.source, rotation_mrad: err.rotation_mrad, translation_m: err.translation_m }
        })
        .collect();
    let n = pairs.len() as f64;
    Ok(Evaluation {
        mean_rotation_mrad: pairs.iter().map(|p| p.rotation_mrad).sum::<f64>() / n,
        mean_translation_m: pairs.iter().map(|p| p.translation_m).sum::<f64>() / n,
        pairs,
    })
}
