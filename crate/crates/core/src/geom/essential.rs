use nalgebra::{DMatrix, Matrix3, SMatrix, Vector2, Vector3};

use super::{skew, triangulate, GeomError, RelativeMotion};

/// Ratio of the two smallest design-matrix singular values above which the
/// eight-point nullspace is considered unstable.
pub const DEGENERACY_RATIO: f64 = 0.95;

/// Point pair `(p1, p2)`; pixel or normalized coordinates depending on context.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub p1: Vector2<f64>,
    pub p2: Vector2<f64>,
}

impl Correspondence {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { p1: Vector2::new(x1, y1), p2: Vector2::new(x2, y2) }
    }

    pub fn swapped(&self) -> Self {
        Self { p1: self.p2, p2: self.p1 }
    }

    fn h1(&self) -> Vector3<f64> {
        self.p1.push(1.0)
    }

    fn h2(&self) -> Vector3<f64> {
        self.p2.push(1.0)
    }
}

/// Essential matrix normalized to Frobenius norm √2 (singular values 1, 1, 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix(Matrix3<f64>);

impl EssentialMatrix {
    /// Projects an arbitrary 3×3 matrix onto the essential manifold by
    /// replacing its singular values with `(σ̄, σ̄, 0)` and rescaling.
    pub fn project(m: &Matrix3<f64>) -> Option<Self> {
        let svd = m.svd(true, true);
        let (u, v_t) = (svd.u?, svd.v_t?);
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let s = &svd.singular_values;
        let mean = 0.5 * (s[idx[0]] + s[idx[1]]);
        if !(mean > 0.0) || !mean.is_finite() {
            return None;
        }
        let mut diag = Matrix3::zeros();
        diag[(idx[0], idx[0])] = mean;
        diag[(idx[1], idx[1])] = mean;
        let e = u * diag * v_t;
        let norm = e.norm();
        Some(Self(e * (2f64.sqrt() / norm)))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Algebraic epipolar residual `x̂2ᵀ E x̂1`.
    pub fn residual(&self, c: &Correspondence) -> f64 {
        c.h2().dot(&(self.0 * c.h1()))
    }

    /// Frobenius distance to `other`, minimised over the sign ambiguity.
    pub fn distance_up_to_sign(&self, other: &EssentialMatrix) -> f64 {
        (self.0 - other.0).norm().min((self.0 + other.0).norm())
    }
}

/// `E = [t]× R`, normalized.
pub fn essential_from_motion(rel: &RelativeMotion) -> Result<EssentialMatrix, GeomError> {
    let tn = rel.translation.norm();
    if tn <= 1e-12 {
        return Err(GeomError::DegenerateTranslation);
    }
    let e = skew(&(rel.translation / tn)) * rel.rotation_matrix();
    Ok(EssentialMatrix(e * (2f64.sqrt() / e.norm())))
}

/// Similarity moving the centroid to the origin with mean distance √2.
fn hartley_transform(points: impl Iterator<Item = Vector2<f64>> + Clone) -> Matrix3<f64> {
    let n = points.clone().count() as f64;
    let centroid = points.clone().fold(Vector2::zeros(), |acc, p| acc + p) / n;
    let mean_dist = points.map(|p| (p - centroid).norm()).sum::<f64>() / n;
    let s = if mean_dist > 0.0 { 2f64.sqrt() / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * centroid.x, 0.0, s, -s * centroid.y, 0.0, 0.0, 1.0)
}

/// Normalized eight-point algorithm on correspondences in normalized
/// camera coordinates, followed by projection onto the essential manifold.
pub fn eight_point(corrs: &[Correspondence]) -> Result<EssentialMatrix, GeomError> {
    eight_point_weighted(corrs, None)
}

fn eight_point_weighted(corrs: &[Correspondence], weights: Option<&[f64]>) -> Result<EssentialMatrix, GeomError> {
    let n = corrs.len();
    if n < 8 {
        return Err(GeomError::InsufficientCorrespondences { needed: 8, got: n });
    }
    let t1 = hartley_transform(corrs.iter().map(|c| c.p1));
    let t2 = hartley_transform(corrs.iter().map(|c| c.p2));

    let rows = n.max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (r, c) in corrs.iter().enumerate() {
        let p1 = t1 * c.h1();
        let p2 = t2 * c.h2();
        let (x1, y1, x2, y2) = (p1.x, p1.y, p2.x, p2.y);
        let row = [x2 * x1, x2 * y1, x2, y2 * x1, y2 * y1, y2, x1, y1, 1.0];
        let w = weights.map_or(1.0, |w| w[r]);
        for (k, v) in row.iter().enumerate() {
            a[(r, k)] = *v * w;
        }
    }
    // Reduce tall systems to a 9×9 triangle with identical singular values.
    let square: SMatrix<f64, 9, 9> = if rows > 9 {
        let r = a.qr().r();
        SMatrix::from_fn(|i, j| r[(i, j)])
    } else {
        SMatrix::from_fn(|i, j| a[(i, j)])
    };
    let svd = square.svd(false, true);
    let v_t = svd.v_t.ok_or(GeomError::DegenerateConfiguration)?;
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    let s = |k: usize| svd.singular_values[order[k]];
    if s(7) <= 1e-10 * s(0) || s(8) / s(7) > DEGENERACY_RATIO {
        return Err(GeomError::DegenerateConfiguration);
    }
    let null = v_t.row(order[8]);
    let e_hat = Matrix3::new(null[0], null[1], null[2], null[3], null[4], null[5], null[6], null[7], null[8]);
    let e = t2.transpose() * e_hat * t1;
    EssentialMatrix::project(&e).ok_or(GeomError::DegenerateConfiguration)
}

/// First-order geometric error of `c` (normalized coordinates) w.r.t. `e`,
/// in squared normalized units.
pub fn sampson_distance(e: &EssentialMatrix, c: &Correspondence) -> Result<f64, GeomError> {
    let m = e.matrix();
    let x1 = c.h1();
    let x2 = c.h2();
    let ex1 = m * x1;
    let etx2 = m.transpose() * x2;
    let r = x2.dot(&ex1);
    let den = ex1.x * ex1.x + ex1.y * ex1.y + etx2.x * etx2.x + etx2.y * etx2.y;
    if den < 1e-18 {
        return Err(GeomError::ZeroGradient);
    }
    Ok(r * r / den)
}

/// The four `(R, ±t)` factorizations of `e`, each with `det(R) = +1` and
/// `‖t‖ = 1`.
pub fn motion_candidates(e: &EssentialMatrix) -> [RelativeMotion; 4] {
    let svd = e.matrix().svd(true, true);
    let mut u = svd.u.expect("u requested");
    let mut v_t = svd.v_t.expect("v_t requested");
    // Order so the null singular direction is last.
    let s = svd.singular_values;
    let null = (0..3).min_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
    if null != 2 {
        u.swap_columns(null, 2);
        v_t.swap_rows(null, 2);
    }
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v_t.determinant() < 0.0 {
        v_t = -v_t;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t: Vector3<f64> = u.column(2).into_owned().normalize();
    let mk = |r: &Matrix3<f64>, t: Vector3<f64>| super::Pose::from_matrix(r, t);
    let c = [mk(&r1, t), mk(&r1, -t), mk(&r2, t), mk(&r2, -t)];
    c.map(|p| RelativeMotion::new(p.rotation, p.translation, 0, 0))
}

/// Chooses the factorization of `e` that places the most correspondences
/// (normalized coordinates) in front of both cameras.
pub fn decompose_essential(e: &EssentialMatrix, corrs: &[Correspondence]) -> Result<RelativeMotion, GeomError> {
    if corrs.is_empty() {
        return Err(GeomError::InsufficientCorrespondences { needed: 1, got: 0 });
    }
    let candidates = motion_candidates(e);
    let votes: Vec<usize> = candidates
        .iter()
        .map(|cand| {
            corrs
                .iter()
                .filter(|c| matches!(triangulate(cand, c), Ok(t) if t.depth_i > 0.0 && t.depth_j > 0.0))
                .count()
        })
        .collect();
    let mut ranked: Vec<usize> = (0..4).collect();
    ranked.sort_by(|&a, &b| votes[b].cmp(&votes[a]));
    if votes[ranked[0]] == votes[ranked[1]] {
        return Err(GeomError::CheiralityAmbiguity);
    }
    Ok(candidates[ranked[0]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{relative_motion, Pose};
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Scene {
        rel: RelativeMotion,
        corrs: Vec<Correspondence>,
    }

    /// Points in front of camera i, a random second camera, exact projections.
    fn scene(rng: &mut ChaCha8Rng, n: usize) -> Scene {
        let rot = UnitQuaternion::from_scaled_axis(Vector3::new(
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
        ));
        let t = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        let rel = relative_motion(&Pose::identity(), &Pose::new(rot, t));
        let mut corrs = Vec::new();
        while corrs.len() < n {
            let x = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(4.0..12.0));
            let xj = rel.transform(&x);
            if xj.z < 1.0 {
                continue;
            }
            corrs.push(Correspondence::new(x.x / x.z, x.y / x.z, xj.x / xj.z, xj.y / xj.z));
        }
        Scene { rel, corrs }
    }

    #[test]
    fn essential_of_pure_x_translation() {
        let rel = RelativeMotion::new(UnitQuaternion::identity(), Vector3::new(1.0, 0.0, 0.0), 0, 1);
        let e = essential_from_motion(&rel).unwrap();
        let s = 2f64.sqrt() / 2f64.sqrt();
        let expected = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0) * s;
        assert!((e.matrix() - expected).norm() < 1e-15);
        assert!((e.matrix().norm() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn essential_is_scale_invariant_and_rejects_zero_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = scene(&mut rng, 1);
        let doubled = s.rel.with_translation(s.rel.translation * 2.0);
        let a = essential_from_motion(&s.rel).unwrap();
        let b = essential_from_motion(&doubled).unwrap();
        assert!((a.matrix() - b.matrix()).norm() < 1e-14);
        let zero = s.rel.with_translation(Vector3::zeros());
        assert_eq!(essential_from_motion(&zero), Err(GeomError::DegenerateTranslation));
    }

    #[test]
    fn epipolar_residual_vanishes_on_projections() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let s = scene(&mut rng, 50);
            let e = essential_from_motion(&s.rel).unwrap();
            let max = s.corrs.iter().map(|c| e.residual(c).abs()).fold(0.0, f64::max);
            assert!(max < 1e-12, "{max}");
        }
    }

    #[test]
    fn essential_singular_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let s = scene(&mut rng, 1);
        let e = essential_from_motion(&s.rel).unwrap();
        let mut sv: Vec<f64> = e.matrix().singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        assert!((sv[0] - sv[1]).abs() < 1e-8 && sv[2].abs() < 1e-8);
        assert!(e.matrix().determinant().abs() < 1e-8);
    }

    #[test]
    fn eight_point_recovers_ground_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..50 {
            let s = scene(&mut rng, 50);
            let gt = essential_from_motion(&s.rel).unwrap();
            let est = eight_point(&s.corrs).unwrap();
            assert!(est.distance_up_to_sign(&gt) < 1e-8);
        }
    }

    #[test]
    fn eight_point_minimal_sample_generalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..20 {
            let s = scene(&mut rng, 108);
            let est = eight_point(&s.corrs[..8]).unwrap();
            let max = s.corrs[8..].iter().map(|c| est.residual(c).abs()).fold(0.0, f64::max);
            assert!(max < 1e-10, "{max}");
        }
    }

    #[test]
    fn eight_point_rejects_too_few() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let s = scene(&mut rng, 7);
        assert_eq!(eight_point(&s.corrs), Err(GeomError::InsufficientCorrespondences { needed: 8, got: 7 }));
    }

    #[test]
    fn eight_point_detects_plane_through_both_centers() {
        // Camera j sits at (1,0,0) in camera i's frame; the plane y = 0.3 x
        // contains both centers.
        let rel = relative_motion(&Pose::identity(), &Pose::new(UnitQuaternion::identity(), Vector3::new(-1.0, 0.0, 0.0)));
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let corrs: Vec<_> = (0..8)
            .map(|_| {
                let x = rng.random_range(-2.0..2.0);
                let z = rng.random_range(4.0..9.0);
                let p = Vector3::new(x, 0.3 * x, z);
                let q = rel.transform(&p);
                Correspondence::new(p.x / p.z, p.y / p.z, q.x / q.z, q.y / q.z)
            })
            .collect();
        assert_eq!(eight_point(&corrs), Err(GeomError::DegenerateConfiguration));
    }

    #[test]
    fn eight_point_is_invariant_to_pixel_similarity() {
        // Same correspondences expressed through two different intrinsics:
        // after normalizing back to camera coordinates the estimate agrees.
        use crate::geom::CameraIntrinsics;
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let s = scene(&mut rng, 40);
        let k1 = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let k2 = CameraIntrinsics::new(1000.0, 1000.0, 640.0, 480.0, 1280, 960).unwrap();
        let via = |k: &CameraIntrinsics| {
            let c: Vec<_> = s
                .corrs
                .iter()
                .map(|c| {
                    let a = k.normalize(k.denormalize(c.p1));
                    let b = k.normalize(k.denormalize(c.p2));
                    Correspondence { p1: a, p2: b }
                })
                .collect();
            eight_point(&c).unwrap()
        };
        assert!(via(&k1).distance_up_to_sign(&via(&k2)) < 1e-8);
    }

    #[test]
    fn sampson_zero_on_exact_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let s = scene(&mut rng, 30);
        let e = essential_from_motion(&s.rel).unwrap();
        for c in &s.corrs {
            assert!(sampson_distance(&e, c).unwrap() < 1e-14);
            let moved = Correspondence { p1: c.p1, p2: c.p2 + Vector2::new(0.01, -0.02) };
            let a = sampson_distance(&e, &moved).unwrap();
            let b = sampson_distance(&e.transpose(), &moved.swapped()).unwrap();
            assert!(a >= 0.0 && (a - b).abs() < 1e-12);
        }
    }

    /// Minimum of ‖Δ1‖² + ‖Δ2‖² subject to the epipolar constraint, by a
    /// coarse-to-fine grid over Δ1 with the optimal Δ2 in closed form.
    fn geometric_distance_oracle(e: &EssentialMatrix, c: &Correspondence, radius: f64) -> f64 {
        let cost = |d1: Vector2<f64>| {
            let l = e.matrix() * (c.p1 + d1).push(1.0);
            let r = l.dot(&c.h2());
            d1.norm_squared() + r * r / (l.x * l.x + l.y * l.y)
        };
        let mut center = Vector2::zeros();
        let mut half = radius;
        let mut best = cost(center);
        for _ in 0..40 {
            let mut best_pt = center;
            for i in -10..=10 {
                for j in -10..=10 {
                    let p = center + Vector2::new(i as f64, j as f64) * (half / 10.0);
                    let v = cost(p);
                    if v < best {
                        best = v;
                        best_pt = p;
                    }
                }
            }
            center = best_pt;
            half *= 0.3;
        }
        best
    }

    #[test]
    fn sampson_matches_first_order_geometric_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let s = scene(&mut rng, 20);
        let e = essential_from_motion(&s.rel).unwrap();
        let delta = 1e-4;
        for c in &s.corrs {
            let l2 = e.matrix() * c.h1();
            let normal = Vector2::new(l2.x, l2.y).normalize();
            let moved = Correspondence { p1: c.p1, p2: c.p2 + normal * delta };
            let sampson = sampson_distance(&e, &moved).unwrap();
            let oracle = geometric_distance_oracle(&e, &moved, 2.0 * delta);
            let ratio = sampson / oracle;
            assert!((0.9..=1.1).contains(&ratio), "{ratio}");
            // Moving only one image's point by δ costs at most δ².
            assert!(sampson <= delta * delta * (1.0 + 1e-6));
        }
    }

    #[test]
    fn sampson_zero_gradient() {
        let e = EssentialMatrix(Matrix3::zeros());
        assert_eq!(sampson_distance(&e, &Correspondence::new(0.0, 0.0, 0.0, 0.0)), Err(GeomError::ZeroGradient));
    }

    #[test]
    fn decomposition_recovers_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let s = scene(&mut rng, 50);
            let e = essential_from_motion(&s.rel).unwrap();
            let m = decompose_essential(&e, &s.corrs).unwrap();
            assert!(m.rotation.angle_to(&s.rel.rotation) < 1e-8);
            assert!((m.translation - s.rel.translation.normalize()).norm() < 1e-8);
            assert!((m.translation.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn round_trip_through_eight_point_and_decomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..50 {
            let s = scene(&mut rng, 10);
            let e = eight_point(&s.corrs).unwrap();
            let m = decompose_essential(&e, &s.corrs).unwrap();
            assert!(m.rotation.angle_to(&s.rel.rotation) < 1e-8);
        }
    }

    #[test]
    fn single_correspondence_is_put_in_front() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let s = scene(&mut rng, 1);
        let e = essential_from_motion(&s.rel).unwrap();
        let m = decompose_essential(&e, &s.corrs).unwrap();
        let t = triangulate(&m, &s.corrs[0]).unwrap();
        assert!(t.depth_i > 0.0 && t.depth_j > 0.0);
    }

    #[test]
    fn tied_cheirality_vote_is_ambiguous() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let s = scene(&mut rng, 2);
        let mut corrs = s.corrs.clone();
        // Points behind both cameras project like points in front of the
        // (R, -t) candidate.
        let mut behind = 0;
        while behind < 2 {
            let x = -Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(4.0..12.0));
            let xj = s.rel.transform(&x);
            if xj.z > -1.0 {
                continue;
            }
            corrs.push(Correspondence::new(x.x / x.z, x.y / x.z, xj.x / xj.z, xj.y / xj.z));
            behind += 1;
        }
        let e = essential_from_motion(&s.rel).unwrap();
        assert_eq!(decompose_essential(&e, &corrs), Err(GeomError::CheiralityAmbiguity));
    }
}
