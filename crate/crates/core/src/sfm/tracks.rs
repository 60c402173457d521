use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::matching::MatchSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub frame: usize,
    pub keypoint: usize,
    pub x: f64,
    pub y: f64,
}

impl Observation {
    pub fn pixel(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }
}

/// Keypoints of several frames believed to see one landmark; at most one
/// observation per frame, sorted by frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub observations: Vec<Observation>,
}

impl Track {
    pub fn observation_in(&self, frame: usize) -> Option<&Observation> {
        self.observations.binary_search_by_key(&frame, |o| o.frame).ok().map(|k| &self.observations[k])
    }
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), rank: vec![0; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Connected components of the keypoint graph. Components holding two
/// keypoints of one frame are inconsistent and dropped entirely. Tracks are
/// ordered by their smallest `(frame, keypoint)`.
pub fn build_tracks(match_sets: &[MatchSet]) -> Vec<Track> {
    let mut nodes: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
    for set in match_sets {
        for m in &set.matches {
            nodes.insert((set.frame_i, m.kp_i), (m.x_i, m.y_i));
            nodes.insert((set.frame_j, m.kp_j), (m.x_j, m.y_j));
        }
    }
    let ids: BTreeMap<(usize, usize), usize> = nodes.keys().enumerate().map(|(k, key)| (*key, k)).collect();
    let keys: Vec<(usize, usize)> = nodes.keys().copied().collect();
    let mut uf = UnionFind::new(keys.len());
    for set in match_sets {
        for m in &set.matches {
            uf.union(ids[&(set.frame_i, m.kp_i)], ids[&(set.frame_j, m.kp_j)]);
        }
    }
    // Keys are visited in sorted order, so each component's members come out
    // sorted and components are ordered by their smallest member.
    let mut components: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut order: Vec<usize> = Vec::new();
    for k in 0..keys.len() {
        let root = uf.find(k);
        let members = components.entry(root).or_default();
        if members.is_empty() {
            order.push(root);
        }
        members.push(k);
    }
    let mut tracks = Vec::new();
    for root in order {
        let members = &components[&root];
        if members.len() < 2 {
            continue;
        }
        let frames: BTreeSet<usize> = members.iter().map(|&k| keys[k].0).collect();
        if frames.len() != members.len() {
            continue;
        }
        let mut observations: Vec<Observation> = members
            .iter()
            .map(|&k| {
                let (frame, keypoint) = keys[k];
                let (x, y) = nodes[&keys[k]];
                Observation { frame, keypoint, x, y }
            })
            .collect();
        observations.sort_by_key(|o| o.frame);
        tracks.push(Track { observations });
    }
    tracks
}
