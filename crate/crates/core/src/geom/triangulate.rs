use nalgebra::{Matrix4, Vector3};

use super::{Correspondence, GeomError, RelativeMotion};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangulated {
    /// Point in camera-i coordinates.
    pub point: Vector3<f64>,
    pub depth_i: f64,
    pub depth_j: f64,
}

/// Angle between two viewing rays (any length), robust near zero.
pub fn ray_angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Linear (DLT) two-view triangulation of a normalized-coordinate
/// correspondence with cameras `[I|0]` and `[R|t]`.
pub fn triangulate(rel: &RelativeMotion, c: &Correspondence) -> Result<Triangulated, GeomError> {
    let r = rel.rotation_matrix();
    let t = rel.translation;
    let ray_i = c.p1.push(1.0);
    let ray_j_in_i = r.transpose() * c.p2.push(1.0);
    if t.norm() <= 1e-12 || ray_angle(&ray_i, &ray_j_in_i) <= 1e-9 {
        return Err(GeomError::ParallelRays);
    }
    let mut a = Matrix4::zeros();
    // Rows of P1 = [I | 0].
    a.row_mut(0).copy_from(&nalgebra::RowVector4::new(-1.0, 0.0, c.p1.x, 0.0));
    a.row_mut(1).copy_from(&nalgebra::RowVector4::new(0.0, -1.0, c.p1.y, 0.0));
    let p2 = |row: usize| nalgebra::RowVector4::new(r[(row, 0)], r[(row, 1)], r[(row, 2)], t[row]);
    a.row_mut(2).copy_from(&(p2(2) * c.p2.x - p2(0)));
    a.row_mut(3).copy_from(&(p2(2) * c.p2.y - p2(1)));
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeomError::ParallelRays)?;
    let k = (0..4).min_by(|&x, &y| svd.singular_values[x].total_cmp(&svd.singular_values[y])).unwrap();
    let h = v_t.row(k);
    if h[3].abs() < 1e-14 * h.norm() {
        return Err(GeomError::ParallelRays);
    }
    let point = Vector3::new(h[0], h[1], h[2]) / h[3];
    let depth_j = (r * point + t).z;
    Ok(Triangulated { point, depth_i: point.z, depth_j })
}
