//! Non-consecutive pair proposal from global image embeddings.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matching::{mean_certainty, CropId, DenseWarp};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RetrievalError {
    #[error("embedding of frame {frame} has dimension {got}, expected {expected}")]
    DimensionMismatch { frame: usize, expected: usize, got: usize },
    #[error("embedding of frame {0} has non-finite or zero-norm components")]
    InvalidEmbedding(usize),
    #[error("no warp available for pair ({0}, {1})")]
    MissingWarp(usize, usize),
    #[error("invalid retrieval configuration: {0}")]
    InvalidConfig(&'static str),
}

/// Global descriptor of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub frame: usize,
    pub vector: Vec<f32>,
}

impl Embedding {
    pub fn new(frame: usize, vector: Vec<f32>) -> Self {
        Self { frame, vector }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    /// Euclidean distance between L2-normalized vectors, `sqrt(2 - 2 cos)`.
    #[default]
    Normalized,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub max_distance: f64,
    /// Pairs must satisfy `j - i > min_separation`.
    pub min_separation: usize,
    /// Pairs are kept when the mean warp certainty is strictly above this.
    pub mean_certainty_floor: f64,
    pub metric: DistanceMetric,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self { max_distance: 0.35, min_separation: 20, mean_certainty_floor: 0.05, metric: DistanceMetric::Normalized }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(self.max_distance > 0.0) {
            return Err(RetrievalError::InvalidConfig("max_distance must be positive"));
        }
        if self.min_separation < 1 {
            return Err(RetrievalError::InvalidConfig("min_separation must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.mean_certainty_floor) {
            return Err(RetrievalError::InvalidConfig("mean_certainty_floor must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PairSource {
    Sequential,
    Retrieved,
    Manual,
}

impl PairSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            PairSource::Sequential => "SEQUENTIAL",
            PairSource::Retrieved => "RETRIEVED",
            PairSource::Manual => "MANUAL",
        }
    }
}

/// A frame pair to be matched, `frame_i < frame_j`. A crop restriction of
/// `None` means any crop of that frame may be used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FramePair {
    pub frame_i: usize,
    pub frame_j: usize,
    pub source: PairSource,
    pub crop_i: Option<CropId>,
    pub crop_j: Option<CropId>,
}

impl FramePair {
    pub fn new(frame_i: usize, frame_j: usize, source: PairSource) -> Self {
        Self { frame_i, frame_j, source, crop_i: None, crop_j: None }
    }

    pub fn key(&self) -> (usize, usize) {
        (self.frame_i, self.frame_j)
    }

    /// Crop combinations this pair may be matched through.
    pub fn crop_combinations(&self) -> Vec<(CropId, CropId)> {
        let side = |c: Option<CropId>| c.map(|c| vec![c]).unwrap_or_else(|| CropId::ALL.to_vec());
        let (a, b) = (side(self.crop_i), side(self.crop_j));
        a.iter().flat_map(|&x| b.iter().map(move |&y| (x, y))).collect()
    }
}

fn prepared(embeddings: &[Embedding], metric: DistanceMetric) -> Result<Vec<(usize, Vec<f64>)>, RetrievalError> {
    let dim = embeddings.first().map_or(0, |e| e.vector.len());
    let mut out = Vec::with_capacity(embeddings.len());
    for e in embeddings {
        if e.vector.len() != dim {
            return Err(RetrievalError::DimensionMismatch { frame: e.frame, expected: dim, got: e.vector.len() });
        }
        let mut v: Vec<f64> = e.vector.iter().map(|&x| x as f64).collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(RetrievalError::InvalidEmbedding(e.frame));
        }
        if metric == DistanceMetric::Normalized {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(RetrievalError::InvalidEmbedding(e.frame));
            }
            v.iter_mut().for_each(|x| *x /= norm);
        }
        out.push((e.frame, v));
    }
    out.sort_by_key(|(f, _)| *f);
    Ok(out)
}

/// Distance between two embeddings under `metric`.
pub fn embedding_distance(a: &Embedding, b: &Embedding, metric: DistanceMetric) -> Result<f64, RetrievalError> {
    let p = prepared(&[a.clone(), b.clone()], metric)?;
    Ok(euclidean(&p[0].1, &p[1].1))
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// All pairs with `j - i > min_separation` whose embedding distance is at
/// most `max_distance`, sorted by `(i, j)`. Exhaustive scan.
pub fn propose_pairs(embeddings: &[Embedding], cfg: &RetrievalConfig) -> Result<Vec<FramePair>, RetrievalError> {
    cfg.validate()?;
    let vecs = prepared(embeddings, cfg.metric)?;
    let pairs: Vec<Vec<FramePair>> = vecs
        .par_iter()
        .enumerate()
        .map(|(a, (fi, vi))| {
            vecs[a + 1..]
                .iter()
                .filter(|(fj, _)| fj - fi > cfg.min_separation)
                .filter(|(_, vj)| euclidean(vi, vj) <= cfg.max_distance)
                .map(|(fj, _)| FramePair::new(*fi, *fj, PairSource::Retrieved))
                .collect()
        })
        .collect();
    let out: Vec<FramePair> = pairs.into_iter().flatten().collect();
    log::debug!("retrieval proposed {} pairs from {} embeddings", out.len(), embeddings.len());
    Ok(out)
}

/// Keeps the pairs whose certainty, as reported by `certainty_of`, is
/// strictly above the floor; order is preserved.
pub fn filter_pairs_by<F>(pairs: &[FramePair], cfg: &RetrievalConfig, mut certainty_of: F) -> Result<Vec<FramePair>, RetrievalError>
where
    F: FnMut(&FramePair) -> Option<f64>,
{
    cfg.validate()?;
    let mut kept = Vec::with_capacity(pairs.len());
    for p in pairs {
        let c = certainty_of(p).ok_or(RetrievalError::MissingWarp(p.frame_i, p.frame_j))?;
        if c > cfg.mean_certainty_floor {
            kept.push(*p);
        }
    }
    Ok(kept)
}

/// [`filter_pairs_by`] using the mean certainty of each pair's `i -> j` warp.
pub fn filter_pairs(pairs: &[FramePair], warps: &HashMap<(usize, usize), DenseWarp>, cfg: &RetrievalConfig) -> Result<Vec<FramePair>, RetrievalError> {
    filter_pairs_by(pairs, cfg, |p| warps.get(&p.key()).map(mean_certainty))
}
