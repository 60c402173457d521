use std::collections::{BTreeMap, HashMap, HashSet};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::{sample_warp, CropId, DenseWarp, KeypointSet, MatchError, PointIndex};

/// Gates applied when turning warps into keypoint matches.
///
/// The distance gate is `nn_distance_fraction * max(width, height)` of the
/// image in which the distance is measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub certainty_floor: f64,
    pub nn_distance_fraction: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self { certainty_floor: 0.1, nn_distance_fraction: 0.005 }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), MatchError> {
        if !(0.0..=1.0).contains(&self.certainty_floor) {
            return Err(MatchError::InvalidConfig("certainty_floor must lie in [0, 1]"));
        }
        if !(self.nn_distance_fraction > 0.0 && self.nn_distance_fraction < 1.0) {
            return Err(MatchError::InvalidConfig("nn_distance_fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub kp_i: usize,
    pub kp_j: usize,
    pub x_i: f64,
    pub y_i: f64,
    pub x_j: f64,
    pub y_j: f64,
    pub certainty: f64,
}

impl Match {
    pub fn point_i(&self) -> Vector2<f64> {
        Vector2::new(self.x_i, self.y_i)
    }

    pub fn point_j(&self) -> Vector2<f64> {
        Vector2::new(self.x_j, self.y_j)
    }

    pub fn swapped(&self) -> Self {
        Self {
            kp_i: self.kp_j,
            kp_j: self.kp_i,
            x_i: self.x_j,
            y_i: self.y_j,
            x_j: self.x_i,
            y_j: self.y_i,
            certainty: self.certainty,
        }
    }
}

/// One-to-one keypoint matches between two frames, sorted by `(kp_i, kp_j)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchSet {
    pub frame_i: usize,
    pub frame_j: usize,
    pub matches: Vec<Match>,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    pub fn swapped(&self) -> Self {
        let mut matches: Vec<Match> = self.matches.iter().map(Match::swapped).collect();
        matches.sort_by_key(|m| (m.kp_i, m.kp_j));
        Self { frame_i: self.frame_j, frame_j: self.frame_i, matches }
    }

    /// Whether no keypoint index repeats on either side.
    pub fn is_one_to_one(&self) -> bool {
        let mut seen_i = HashSet::new();
        let mut seen_j = HashSet::new();
        self.matches.iter().all(|m| seen_i.insert(m.kp_i) && seen_j.insert(m.kp_j))
    }
}

/// Forward (`a -> b`) and backward (`b -> a`) warps per crop combination.
#[derive(Debug, Clone, Default)]
pub struct CropPairWarps {
    entries: BTreeMap<(CropId, CropId), (DenseWarp, DenseWarp)>,
}

impl CropPairWarps {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, forward: DenseWarp, backward: DenseWarp) -> Result<(), MatchError> {
        check_pair(&forward, &backward)?;
        self.entries.insert((forward.src_crop.crop_id, forward.dst_crop.crop_id), (forward, backward));
        Ok(())
    }

    pub fn get(&self, a: CropId, b: CropId) -> Option<&(DenseWarp, DenseWarp)> {
        self.entries.get(&(a, b))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(CropId, CropId), &(DenseWarp, DenseWarp))> {
        self.entries.iter()
    }
}

fn check_pair(forward: &DenseWarp, backward: &DenseWarp) -> Result<(), MatchError> {
    if forward.src_crop != backward.dst_crop || forward.dst_crop != backward.src_crop {
        return Err(MatchError::MismatchedWarps);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    partner: usize,
    distance: f64,
    certainty: f64,
}

/// Pushes every keypoint of `src` inside the warp's source crop through the
/// warp and records its strict nearest neighbour among the `dst` keypoints
/// inside the destination crop.
fn directional_hits(warp: &DenseWarp, src: &KeypointSet, dst: &KeypointSet, floor: f64) -> HashMap<usize, Hit> {
    let (src_crop, dst_crop) = (warp.src_crop, warp.dst_crop);
    let gate_hint = dst.width.max(dst.height) as f64 * 0.01;
    let index = PointIndex::new(
        dst.points
            .iter()
            .enumerate()
            .map(|(k, kp)| (k, Vector2::new(kp.x, kp.y)))
            .filter(|(_, p)| dst_crop.contains_image_point(*p)),
        gate_hint.max(4.0),
    );
    let mut hits = HashMap::new();
    if index.is_empty() {
        return hits;
    }
    for (k, kp) in src.points.iter().enumerate() {
        let p = Vector2::new(kp.x, kp.y);
        if !src_crop.contains_image_point(p) {
            continue;
        }
        let Ok((pred, certainty)) = sample_warp(warp, p - src_crop.offset()) else {
            continue;
        };
        if certainty < floor {
            continue;
        }
        let Some(nearest) = index.nearest(pred + dst_crop.offset()) else {
            continue;
        };
        if !nearest.tied {
            hits.insert(k, Hit { partner: nearest.id, distance: nearest.distance, certainty });
        }
    }
    hits
}

/// Mutual-nearest-neighbour matching through one pair of warps.
pub fn match_single_crop(
    warp_ab: &DenseWarp,
    warp_ba: &DenseWarp,
    kps_a: &KeypointSet,
    kps_b: &KeypointSet,
    cfg: &MatchConfig,
) -> Result<MatchSet, MatchError> {
    cfg.validate()?;
    check_pair(warp_ab, warp_ba)?;
    let forward = directional_hits(warp_ab, kps_a, kps_b, cfg.certainty_floor);
    let backward = directional_hits(warp_ba, kps_b, kps_a, cfg.certainty_floor);
    let gate_b = cfg.nn_distance_fraction * kps_b.width.max(kps_b.height) as f64;
    let gate_a = cfg.nn_distance_fraction * kps_a.width.max(kps_a.height) as f64;

    let mut matches: Vec<Match> = forward
        .iter()
        .filter_map(|(&a, fw)| {
            let bw = backward.get(&fw.partner)?;
            if bw.partner != a || fw.distance >= gate_b || bw.distance >= gate_a {
                return None;
            }
            let (pa, pb) = (&kps_a.points[a], &kps_b.points[fw.partner]);
            Some(Match {
                kp_i: a,
                kp_j: fw.partner,
                x_i: pa.x,
                y_i: pa.y,
                x_j: pb.x,
                y_j: pb.y,
                certainty: 0.5 * (fw.certainty + bw.certainty),
            })
        })
        .collect();
    matches.sort_by_key(|m| (m.kp_i, m.kp_j));
    Ok(MatchSet { frame_i: kps_a.frame, frame_j: kps_b.frame, matches })
}

/// Matches through all nine crop combinations and merges the results.
pub fn match_multicrop(warps: &CropPairWarps, kps_a: &KeypointSet, kps_b: &KeypointSet, cfg: &MatchConfig) -> Result<MatchSet, MatchError> {
    for a in CropId::ALL {
        for b in CropId::ALL {
            if warps.get(a, b).is_none() {
                return Err(MatchError::MissingCropCombination(a, b));
            }
        }
    }
    match_crop_combinations(warps, kps_a, kps_b, cfg)
}

/// Matches through whichever crop combinations are present and merges:
/// duplicates keep their highest certainty, conflicts are resolved greedily
/// by descending certainty while keeping the set one-to-one.
pub fn match_crop_combinations(
    warps: &CropPairWarps,
    kps_a: &KeypointSet,
    kps_b: &KeypointSet,
    cfg: &MatchConfig,
) -> Result<MatchSet, MatchError> {
    let mut best: BTreeMap<(usize, usize), Match> = BTreeMap::new();
    for (_, (forward, backward)) in warps.iter() {
        for m in match_single_crop(forward, backward, kps_a, kps_b, cfg)?.matches {
            best.entry((m.kp_i, m.kp_j))
                .and_modify(|cur| {
                    if m.certainty > cur.certainty {
                        *cur = m;
                    }
                })
                .or_insert(m);
        }
    }
    let mut candidates: Vec<Match> = best.into_values().collect();
    candidates.sort_by(|x, y| y.certainty.total_cmp(&x.certainty).then((x.kp_i, x.kp_j).cmp(&(y.kp_i, y.kp_j))));
    let mut used_i = HashSet::new();
    let mut used_j = HashSet::new();
    let mut matches: Vec<Match> = candidates
        .into_iter()
        .filter(|m| {
            if used_i.contains(&m.kp_i) || used_j.contains(&m.kp_j) {
                return false;
            }
            used_i.insert(m.kp_i);
            used_j.insert(m.kp_j);
            true
        })
        .collect();
    matches.sort_by_key(|m| (m.kp_i, m.kp_j));
    Ok(MatchSet { frame_i: kps_a.frame, frame_j: kps_b.frame, matches })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::{CropRect, Keypoint};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const W: u32 = 400;
    const H: u32 = 300;

    fn full(frame: usize) -> CropRect {
        CropRect::full(frame, 0, 0, W, H)
    }

    /// Exact warps between two frames related by a pixel shift `d`
    /// (`x_b = x_a + d`), restricted to the given crops.
    fn shift_warps(src: CropRect, dst: CropRect, d: Vector2<f64>, cert: impl Fn(Vector2<f64>) -> f32 + Copy) -> (DenseWarp, DenseWarp) {
        let make = |s: CropRect, t: CropRect, shift: Vector2<f64>| {
            DenseWarp::from_fn(s, t, 60, 80, |p| {
                let img = p + s.offset();
                let q = img + shift - t.offset();
                [(q.x / t.w as f64) as f32, (q.y / t.h as f64) as f32, cert(img)]
            })
            .unwrap()
        };
        (make(src, dst, d), make(dst, src, -d))
    }

    fn scattered(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector2<f64>> {
        (0..n).map(|_| Vector2::new(rng.random_range(0.0..W as f64), rng.random_range(0.0..H as f64))).collect()
    }

    fn kps(frame: usize, pts: &[Vector2<f64>]) -> KeypointSet {
        KeypointSet::new(frame, W, H, pts.iter().map(|p| Keypoint { x: p.x, y: p.y, score: 1.0 }).collect())
    }

    /// Landmarks seen in both frames with a shift; frame b lists them in a
    /// permuted order so that index identity is not trivially preserved.
    fn shifted_scene(seed: u64, n: usize, d: Vector2<f64>) -> (KeypointSet, KeypointSet, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pa = scattered(&mut rng, n);
        let mut order: Vec<usize> = (0..n).collect();
        for k in (1..n).rev() {
            order.swap(k, rng.random_range(0..=k));
        }
        // `landmark_of_b[k]` is the landmark index behind keypoint k of b.
        let landmark_of_b = order.clone();
        let pb: Vec<Vector2<f64>> = order.iter().map(|&l| pa[l] + d).collect();
        (kps(0, &pa), kps(1, &pb), landmark_of_b)
    }

    fn all_warps(d: Vector2<f64>, cert: impl Fn(CropId, CropId, Vector2<f64>) -> f32 + Copy) -> CropPairWarps {
        let mut warps = CropPairWarps::new();
        for a in CropId::ALL {
            for b in CropId::ALL {
                let (f, bw) = shift_warps(full(0).sub_crop(a), full(1).sub_crop(b), d, move |p| cert(a, b, p));
                warps.insert(f, bw).unwrap();
            }
        }
        warps
    }

    #[test]
    fn exact_warps_match_only_true_partners() {
        let d = Vector2::new(7.5, -3.25);
        let (a, b, landmark_of_b) = shifted_scene(1, 300, d);
        let (f, bw) = shift_warps(full(0), full(1), d, |_| 1.0);
        let set = match_single_crop(&f, &bw, &a, &b, &MatchConfig::default()).unwrap();
        assert!(set.len() > 150, "{}", set.len());
        assert!(set.is_one_to_one());
        for m in &set.matches {
            assert_eq!(landmark_of_b[m.kp_j], m.kp_i);
            assert_eq!(m.x_i, a.points[m.kp_i].x);
            assert_eq!(m.y_j, b.points[m.kp_j].y);
            assert!((m.certainty - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn low_certainty_yields_empty_set() {
        let d = Vector2::new(2.0, 1.0);
        let (a, b, _) = shifted_scene(2, 100, d);
        let (f, bw) = shift_warps(full(0), full(1), d, |_| 0.05);
        let set = match_single_crop(&f, &bw, &a, &b, &MatchConfig::default()).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn equidistant_neighbours_are_rejected() {
        let (f, bw) = shift_warps(full(0), full(1), Vector2::zeros(), |_| 1.0);
        let a = kps(0, &[Vector2::new(100.0, 100.0)]);
        let b = kps(1, &[Vector2::new(99.5, 100.0), Vector2::new(100.5, 100.0)]);
        let cfg = MatchConfig { nn_distance_fraction: 0.01, ..Default::default() };
        assert!(match_single_crop(&f, &bw, &a, &b, &cfg).unwrap().is_empty());
        let b = kps(1, &[Vector2::new(99.5, 100.0), Vector2::new(100.6, 100.0)]);
        assert_eq!(match_single_crop(&f, &bw, &a, &b, &cfg).unwrap().len(), 1);
    }

    #[test]
    fn distance_gate_uses_larger_image_side() {
        // 0.5% of max(400, 300) = 2 px.
        let (f, bw) = shift_warps(full(0), full(1), Vector2::zeros(), |_| 1.0);
        let a = kps(0, &[Vector2::new(100.0, 100.0)]);
        let near = kps(1, &[Vector2::new(101.9, 100.0)]);
        let far = kps(1, &[Vector2::new(102.1, 100.0)]);
        assert_eq!(match_single_crop(&f, &bw, &a, &near, &MatchConfig::default()).unwrap().len(), 1);
        assert!(match_single_crop(&f, &bw, &a, &far, &MatchConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn mismatched_warps_and_bad_config_fail() {
        let (f, _) = shift_warps(full(0), full(1), Vector2::zeros(), |_| 1.0);
        let (a, b, _) = shifted_scene(3, 10, Vector2::zeros());
        assert_eq!(match_single_crop(&f, &f, &a, &b, &MatchConfig::default()), Err(MatchError::MismatchedWarps));
        let (f, bw) = shift_warps(full(0), full(1), Vector2::zeros(), |_| 1.0);
        let bad = MatchConfig { nn_distance_fraction: 0.0, ..Default::default() };
        assert!(matches!(match_single_crop(&f, &bw, &a, &b, &bad), Err(MatchError::InvalidConfig(_))));
    }

    #[test]
    fn identical_crop_warps_merge_to_single_crop_result() {
        let d = Vector2::new(3.0, 2.0);
        let (a, b, _) = shifted_scene(4, 200, d);
        let (f, bw) = shift_warps(full(0), full(1), d, |_| 0.8);
        let mut warps = CropPairWarps::new();
        for ca in CropId::ALL {
            for cb in CropId::ALL {
                let mut f2 = f.clone();
                let mut b2 = bw.clone();
                f2.src_crop.crop_id = ca;
                f2.dst_crop.crop_id = cb;
                b2.src_crop.crop_id = cb;
                b2.dst_crop.crop_id = ca;
                warps.insert(f2, b2).unwrap();
            }
        }
        let merged = match_multicrop(&warps, &a, &b, &MatchConfig::default()).unwrap();
        let single = match_single_crop(&f, &bw, &a, &b, &MatchConfig::default()).unwrap();
        assert_eq!(merged, single);
    }

    #[test]
    fn left_only_landmark_is_recovered_by_multicrop() {
        let d = Vector2::new(4.0, 0.0);
        let target = Vector2::new(60.0, 150.0);
        let a = kps(0, &[target, Vector2::new(300.0, 80.0)]);
        let b = kps(1, &[target + d, Vector2::new(304.0, 80.0)]);
        // The full-frame warp is blind around the target; the left halves see it.
        let occluded = move |p: Vector2<f64>| if (p - target).norm() < 30.0 || (p - target - d).norm() < 30.0 { 0.0 } else { 1.0 };
        let warps = all_warps(d, move |ca, cb, p| if ca == CropId::Left && cb == CropId::Left { 1.0 } else { occluded(p) });
        let (f, bw) = warps.get(CropId::Full, CropId::Full).unwrap();
        let full_only = match_single_crop(f, bw, &a, &b, &MatchConfig::default()).unwrap();
        assert!(full_only.matches.iter().all(|m| m.kp_i != 0));
        let merged = match_multicrop(&warps, &a, &b, &MatchConfig::default()).unwrap();
        assert!(merged.matches.iter().any(|m| m.kp_i == 0 && m.kp_j == 0));
        assert_eq!(merged.len(), 2);
    }

    #[test]
    fn missing_combination_is_reported() {
        let mut warps = all_warps(Vector2::zeros(), |_, _, _| 1.0);
        warps.entries.remove(&(CropId::Right, CropId::Left));
        let (a, b, _) = shifted_scene(5, 10, Vector2::zeros());
        assert_eq!(
            match_multicrop(&warps, &a, &b, &MatchConfig::default()),
            Err(MatchError::MissingCropCombination(CropId::Right, CropId::Left))
        );
    }

    #[test]
    fn conflicts_keep_highest_certainty() {
        // Keypoint 0 of a lands on b[0] through FULL x FULL (certainty 0.4)
        // and on b[1] through LEFT x LEFT (certainty 0.9).
        let a = kps(0, &[Vector2::new(50.0, 50.0)]);
        let b = kps(1, &[Vector2::new(50.0, 50.0), Vector2::new(80.0, 50.0)]);
        let mut warps = CropPairWarps::new();
        let (f, bw) = shift_warps(full(0), full(1), Vector2::zeros(), |_| 0.4);
        warps.insert(f, bw).unwrap();
        let (f, bw) = shift_warps(full(0).sub_crop(CropId::Left), full(1).sub_crop(CropId::Left), Vector2::new(30.0, 0.0), |_| 0.9);
        warps.insert(f, bw).unwrap();
        let merged = match_crop_combinations(&warps, &a, &b, &MatchConfig::default()).unwrap();
        assert_eq!(merged.len(), 1);
        assert_eq!(merged.matches[0].kp_j, 1);
        assert!((merged.matches[0].certainty - 0.9).abs() < 1e-6);
    }

    fn noisy_case(seed: u64) -> (CropPairWarps, KeypointSet, KeypointSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Vector2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let pa = scattered(&mut rng, 120);
        // Jittered partners plus clutter keep the gates and conflicts busy.
        let mut pb: Vec<Vector2<f64>> = pa.iter().map(|p| p + d + Vector2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))).collect();
        pb.extend(scattered(&mut rng, 60));
        let phase: f64 = rng.random_range(0.0..6.0);
        let warps = all_warps(d, move |ca, cb, p| {
            let base = 0.5 + 0.5 * ((p.x * 0.03 + phase).sin() * (p.y * 0.02).cos());
            let bias = (ca as u8 as f64 * 0.07 + cb as u8 as f64 * 0.05).fract();
            (base * (1.0 - bias)).clamp(0.0, 1.0) as f32
        });
        (warps, kps(0, &pa), kps(1, &pb))
    }

    fn transpose(warps: &CropPairWarps) -> CropPairWarps {
        let mut out = CropPairWarps::new();
        for (_, (f, b)) in warps.iter() {
            out.insert(b.clone(), f.clone()).unwrap();
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn matching_is_one_to_one_and_symmetric(seed in 0u64..10_000) {
            let (warps, a, b) = noisy_case(seed);
            let cfg = MatchConfig { nn_distance_fraction: 0.01, ..Default::default() };
            let ab = match_multicrop(&warps, &a, &b, &cfg).unwrap();
            prop_assert!(ab.is_one_to_one());
            let ba = match_multicrop(&transpose(&warps), &b, &a, &cfg).unwrap();
            prop_assert_eq!(ab.swapped(), ba);

            let (f, bw) = warps.get(CropId::Full, CropId::Full).unwrap();
            let single = match_single_crop(f, bw, &a, &b, &cfg).unwrap();
            prop_assert!(single.is_one_to_one());
            prop_assert_eq!(single.swapped(), match_single_crop(bw, f, &b, &a, &cfg).unwrap());
        }

        #[test]
        fn tighter_gates_never_add_matches(seed in 0u64..10_000, floor in 0.0f64..0.9, frac in 0.001f64..0.02, df in 0.0f64..0.1, dd in 0.0f64..0.5) {
            let (warps, a, b) = noisy_case(seed);
            let (f, bw) = warps.get(CropId::Left, CropId::Full).unwrap();
            let loose = MatchConfig { certainty_floor: floor, nn_distance_fraction: frac };
            let tight = MatchConfig { certainty_floor: floor + df, nn_distance_fraction: frac * (1.0 - dd) };
            let l = match_single_crop(f, bw, &a, &b, &loose).unwrap();
            let t = match_single_crop(f, bw, &a, &b, &tight).unwrap();
            let loose_pairs: HashSet<(usize, usize)> = l.matches.iter().map(|m| (m.kp_i, m.kp_j)).collect();
            prop_assert!(t.matches.iter().all(|m| loose_pairs.contains(&(m.kp_i, m.kp_j))));
        }

        #[test]
        fn merge_ignores_combination_order(seed in 0u64..10_000, rot in 0usize..9) {
            let (warps, a, b) = noisy_case(seed);
            let cfg = MatchConfig { nn_distance_fraction: 0.01, ..Default::default() };
            let reference = match_multicrop(&warps, &a, &b, &cfg).unwrap();
            // Rebuild from a rotated insertion order.
            let mut keys: Vec<(CropId, CropId)> = warps.iter().map(|(k, _)| *k).collect();
            keys.rotate_left(rot);
            keys.reverse();
            let mut reordered = CropPairWarps::new();
            for k in keys {
                let (f, bw) = warps.get(k.0, k.1).unwrap();
                reordered.insert(f.clone(), bw.clone()).unwrap();
            }
            prop_assert_eq!(reference, match_multicrop(&reordered, &a, &b, &cfg).unwrap());
        }
    }
}
