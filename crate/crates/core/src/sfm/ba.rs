use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, SMatrix, UnitQuaternion, Vector2, Vector3};

use super::{intrinsics_of, Fragment, SfmConfig, SfmError, Track};
use crate::geom::{skew, CameraIntrinsics, GeomError, Pose};

/// Residual `projection - observed` and its derivatives with respect to a
/// left rotation update `exp(d) * R`, the translation and the world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReprojectionJacobian {
    pub residual: Vector2<f64>,
    pub d_rotation: Matrix2x3<f64>,
    pub d_translation: Matrix2x3<f64>,
    pub d_point: Matrix2x3<f64>,
}

pub fn reprojection_jacobian(k: &CameraIntrinsics, pose: &Pose, x: &Vector3<f64>, observed: &Vector2<f64>) -> Result<ReprojectionJacobian, GeomError> {
    let r = pose.rotation_matrix();
    let rx = r * x;
    let xc = rx + pose.translation;
    if xc.z <= 1e-12 {
        return Err(GeomError::NonPositiveDepth);
    }
    let iz = 1.0 / xc.z;
    let proj = Vector2::new(k.fx * xc.x * iz + k.cx, k.fy * xc.y * iz + k.cy);
    let d_proj = Matrix2x3::new(k.fx * iz, 0.0, -k.fx * xc.x * iz * iz, 0.0, k.fy * iz, -k.fy * xc.y * iz * iz);
    Ok(ReprojectionJacobian {
        residual: proj - observed,
        d_rotation: d_proj * (-skew(&rx)),
        d_translation: d_proj,
        d_point: d_proj * r,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BaReport {
    /// Iterations run, accepted or not.
    pub iterations: usize,
    pub accepted_steps: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    pub observations: usize,
}

impl BaReport {
    pub fn rms_px(&self) -> f64 {
        if self.observations == 0 {
            0.0
        } else {
            (self.final_cost / self.observations as f64).sqrt()
        }
    }
}

/// How a camera participates in the optimization.
#[derive(Debug, Clone, Copy, PartialEq)]
enum CameraBlock {
    Fixed,
    /// Rotation plus translation restricted to a sphere (2 tangent dof).
    Sphere { offset: usize },
    Free { offset: usize },
}

impl CameraBlock {
    fn dof(&self) -> usize {
        match self {
            CameraBlock::Fixed => 0,
            CameraBlock::Sphere { .. } => 5,
            CameraBlock::Free { .. } => 6,
        }
    }

    fn offset(&self) -> usize {
        match *self {
            CameraBlock::Fixed => 0,
            CameraBlock::Sphere { offset } | CameraBlock::Free { offset } => offset,
        }
    }
}

fn tangent_basis(t: &Vector3<f64>) -> SMatrix<f64, 3, 2> {
    let n = t.normalize();
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let a = n.cross(&helper).normalize();
    let b = n.cross(&a);
    SMatrix::<f64, 3, 2>::from_columns(&[a, b])
}

struct Problem<'a> {
    frames: Vec<usize>,
    blocks: Vec<CameraBlock>,
    camera_dof: usize,
    point_ids: Vec<usize>,
    /// (camera index, point index, observed pixel, intrinsics)
    observations: Vec<(usize, usize, Vector2<f64>, &'a CameraIntrinsics)>,
}

struct State {
    poses: Vec<Pose>,
    points: Vec<Vector3<f64>>,
}

impl Problem<'_> {
    fn cost(&self, s: &State) -> Option<f64> {
        let mut total = 0.0;
        for (c, p, obs, k) in &self.observations {
            let xc = s.poses[*c].transform(&s.points[*p]);
            let px = k.project_camera_point(&xc).ok()?;
            total += (px - obs).norm_squared();
        }
        Some(total)
    }

    /// Camera Jacobian in the block's own parametrization.
    fn camera_jacobian(&self, c: usize, pose: &Pose, j: &ReprojectionJacobian) -> DMatrix<f64> {
        match self.blocks[c] {
            CameraBlock::Fixed => DMatrix::zeros(2, 0),
            CameraBlock::Sphere { .. } => {
                let mut m = DMatrix::zeros(2, 5);
                m.view_mut((0, 0), (2, 3)).copy_from(&j.d_rotation);
                m.view_mut((0, 3), (2, 2)).copy_from(&(j.d_translation * tangent_basis(&pose.translation)));
                m
            }
            CameraBlock::Free { .. } => {
                let mut m = DMatrix::zeros(2, 6);
                m.view_mut((0, 0), (2, 3)).copy_from(&j.d_rotation);
                m.view_mut((0, 3), (2, 3)).copy_from(&j.d_translation);
                m
            }
        }
    }

    fn apply(&self, s: &State, dc: &DVector<f64>, dp: &[Vector3<f64>]) -> State {
        let poses = s
            .poses
            .iter()
            .zip(&self.blocks)
            .map(|(pose, block)| match *block {
                CameraBlock::Fixed => *pose,
                CameraBlock::Sphere { offset } => {
                    let rot = UnitQuaternion::from_scaled_axis(Vector3::new(dc[offset], dc[offset + 1], dc[offset + 2])) * pose.rotation;
                    let norm = pose.translation.norm();
                    let moved = pose.translation + tangent_basis(&pose.translation) * Vector2::new(dc[offset + 3], dc[offset + 4]);
                    Pose::new(rot, moved.normalize() * norm)
                }
                CameraBlock::Free { offset } => {
                    let rot = UnitQuaternion::from_scaled_axis(Vector3::new(dc[offset], dc[offset + 1], dc[offset + 2])) * pose.rotation;
                    Pose::new(rot, pose.translation + Vector3::new(dc[offset + 3], dc[offset + 4], dc[offset + 5]))
                }
            })
            .collect();
        let points = s.points.iter().zip(dp).map(|(x, d)| x + d).collect();
        State { poses, points }
    }
}

struct Normal {
    u: DMatrix<f64>,
    gc: DVector<f64>,
    v: Vec<Matrix3<f64>>,
    gp: Vec<Vector3<f64>>,
    /// Per observation: camera-point coupling block `J_cᵀ J_p`.
    w: Vec<DMatrix<f64>>,
}

fn build_normal(problem: &Problem, s: &State) -> Result<Normal, GeomError> {
    let n_pts = s.points.len();
    let mut u = DMatrix::zeros(problem.camera_dof, problem.camera_dof);
    let mut gc = DVector::zeros(problem.camera_dof);
    let mut v = vec![Matrix3::zeros(); n_pts];
    let mut gp = vec![Vector3::zeros(); n_pts];
    let mut w = Vec::with_capacity(problem.observations.len());
    for (c, p, obs, k) in &problem.observations {
        let j = reprojection_jacobian(k, &s.poses[*c], &s.points[*p], obs)?;
        let jc = problem.camera_jacobian(*c, &s.poses[*c], &j);
        let block = problem.blocks[*c];
        let (off, dof) = (block.offset(), block.dof());
        if dof > 0 {
            let mut view = u.view_mut((off, off), (dof, dof));
            view += jc.transpose() * &jc;
            let mut g = gc.rows_mut(off, dof);
            g += jc.transpose() * j.residual;
        }
        v[*p] += j.d_point.transpose() * j.d_point;
        gp[*p] += j.d_point.transpose() * j.residual;
        let jp = DMatrix::from_row_slice(2, 3, j.d_point.transpose().as_slice());
        w.push(jc.transpose() * jp);
    }
    Ok(Normal { u, gc, v, gp, w })
}

/// Solves the damped normal equations through the reduced camera system.
fn solve_step(problem: &Problem, n: &Normal, lambda: f64) -> Option<(DVector<f64>, Vec<Vector3<f64>>)> {
    let n_pts = n.v.len();
    let damp = |d: f64| d + lambda * d.max(1e-12);
    let mut s = n.u.clone();
    for i in 0..s.nrows() {
        s[(i, i)] = damp(s[(i, i)]);
    }
    let mut rhs = -n.gc.clone();
    let mut v_inv = Vec::with_capacity(n_pts);
    for p in 0..n_pts {
        let mut vp = n.v[p];
        for i in 0..3 {
            vp[(i, i)] = damp(vp[(i, i)]);
        }
        v_inv.push(vp.try_inverse()?);
    }
    // Observations grouped per point.
    let mut by_point: Vec<Vec<usize>> = vec![Vec::new(); n_pts];
    for (k, (_, p, _, _)) in problem.observations.iter().enumerate() {
        by_point[*p].push(k);
    }
    for p in 0..n_pts {
        let vi = &v_inv[p];
        let vi_g = vi * n.gp[p];
        for &a in &by_point[p] {
            let ca = problem.blocks[problem.observations[a].0];
            if ca.dof() == 0 {
                continue;
            }
            let wa = &n.w[a];
            let wa_vi = wa * DMatrix::from_column_slice(3, 3, vi.as_slice());
            let mut r = rhs.rows_mut(ca.offset(), ca.dof());
            r += wa * DVector::from_column_slice(vi_g.as_slice());
            for &b in &by_point[p] {
                let cb = problem.blocks[problem.observations[b].0];
                if cb.dof() == 0 {
                    continue;
                }
                let mut view = s.view_mut((ca.offset(), cb.offset()), (ca.dof(), cb.dof()));
                view -= &wa_vi * n.w[b].transpose();
            }
        }
    }
    let dc = if s.nrows() > 0 { s.cholesky()?.solve(&rhs) } else { DVector::zeros(0) };
    if dc.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let mut dp = Vec::with_capacity(n_pts);
    for p in 0..n_pts {
        let mut b = -n.gp[p];
        for &a in &by_point[p] {
            let ca = problem.blocks[problem.observations[a].0];
            if ca.dof() == 0 {
                continue;
            }
            let wt = n.w[a].transpose() * dc.rows(ca.offset(), ca.dof());
            b -= Vector3::new(wt[0], wt[1], wt[2]);
        }
        dp.push(v_inv[p] * b);
    }
    Some((dc, dp))
}

/// Levenberg-Marquardt refinement of all poses and points of `fragment`.
/// The first registered camera is held fixed and the translation norm of
/// the second is preserved. On failure the fragment is left unchanged and
/// its warning flag is raised.
pub fn bundle_adjust(fragment: &mut Fragment, tracks: &[Track], intrinsics: &[CameraIntrinsics], cfg: &SfmConfig) -> Result<BaReport, SfmError> {
    let order: Vec<usize> = fragment.registration_order.iter().copied().filter(|f| fragment.poses.contains_key(f)).collect();
    if order.len() < 2 || fragment.points.is_empty() {
        return Err(SfmError::NothingToAdjust);
    }
    let cam_index: BTreeMap<usize, usize> = order.iter().enumerate().map(|(k, f)| (*f, k)).collect();
    let mut blocks = Vec::with_capacity(order.len());
    let mut offset = 0;
    for k in 0..order.len() {
        let block = match k {
            0 => CameraBlock::Fixed,
            1 if fragment.poses[&order[1]].translation.norm() > 1e-12 => CameraBlock::Sphere { offset },
            1 => CameraBlock::Fixed,
            _ => CameraBlock::Free { offset },
        };
        offset += block.dof();
        blocks.push(block);
    }
    let point_ids: Vec<usize> = fragment.points.keys().copied().collect();
    let mut observations = Vec::new();
    for (p, id) in point_ids.iter().enumerate() {
        for o in &tracks[*id].observations {
            if let Some(&c) = cam_index.get(&o.frame) {
                observations.push((c, p, o.pixel(), intrinsics_of(intrinsics, o.frame)?));
            }
        }
    }
    let problem = Problem { frames: order.clone(), blocks, camera_dof: offset, point_ids, observations };
    let mut state = State {
        poses: order.iter().map(|f| fragment.poses[f]).collect(),
        points: problem.point_ids.iter().map(|id| fragment.points[id]).collect(),
    };
    let initial = problem.cost(&state).ok_or(SfmError::Geom(GeomError::NonPositiveDepth))?;
    let mut report = BaReport { initial_cost: initial, final_cost: initial, cost_history: vec![initial], observations: problem.observations.len(), ..Default::default() };
    let mut cost = initial;
    let mut lambda = 1e-3;
    const ABS_TOL: f64 = 1e-18;
    let mut normal = build_normal(&problem, &state)?;
    while report.iterations < cfg.ba_max_iterations && cost > ABS_TOL {
        report.iterations += 1;
        let Some((dc, dp)) = solve_step(&problem, &normal, lambda) else {
            lambda *= 10.0;
            if lambda > 1e16 {
                fragment.ba_warning = true;
                log::warn!("bundle adjustment gave up: normal equations singular");
                return Err(SfmError::SingularNormalEquations);
            }
            continue;
        };
        let candidate = problem.apply(&state, &dc, &dp);
        match problem.cost(&candidate) {
            Some(new_cost) if new_cost < cost => {
                let decrease = cost - new_cost;
                state = candidate;
                report.accepted_steps += 1;
                report.cost_history.push(new_cost);
                let previous = cost;
                cost = new_cost;
                lambda = (lambda / 10.0).max(1e-12);
                if decrease < cfg.ba_rel_tol * previous || decrease < ABS_TOL {
                    break;
                }
                normal = build_normal(&problem, &state)?;
            }
            _ => {
                lambda *= 10.0;
                if lambda > 1e16 {
                    break;
                }
            }
        }
    }
    report.final_cost = cost;
    for (k, f) in problem.frames.iter().enumerate() {
        fragment.poses.insert(*f, state.poses[k]);
    }
    for (p, id) in problem.point_ids.iter().enumerate() {
        fragment.points.insert(*id, state.points[p]);
    }
    log::debug!(
        "bundle adjustment: {} cameras, {} points, cost {:.3e} -> {:.3e} in {} iterations",
        problem.frames.len(),
        problem.point_ids.len(),
        report.initial_cost,
        report.final_cost,
        report.iterations
    );
    Ok(report)
}
