//! EPnP for coplanar model points with three control points. Closed form only:
//! the candidate from the one- and two-dimensional null-space approximations with
//! the lower reprojection error wins, and no Gauss–Newton polish is applied.

use alloc::vec::Vec;
use nalgebra::{Matrix3, SMatrix, SymmetricEigen, Vector3};

use super::{all_finite2, planar_spread_ratio, CameraIntrinsics, GeometryError, Point2, Point3, RigidPose};

const MIN_SPREAD: f64 = 1e-6;

struct ControlFrame {
    ctrl: [Point3; 3],
    alphas: Vec<[f64; 3]>,
}

fn control_frame(model: &[Point3]) -> Result<ControlFrame, GeometryError> {
    let n = model.len() as f64;
    let c0 = model.iter().fold(Point3::zeros(), |a, p| a + p) / n;
    let mut cov = Matrix3::zeros();
    for p in model {
        let d = p - c0;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    if !(l1 > 0.0) || l2 <= MIN_SPREAD * MIN_SPREAD * l1 {
        return Err(GeometryError::Degenerate("model points are collinear"));
    }
    let e1 = eig.eigenvectors.column(order[0]).into_owned();
    let e2 = eig.eigenvectors.column(order[1]).into_owned();
    let s1 = libm::sqrt(l1 / n);
    let s2 = libm::sqrt(l2 / n);
    let ctrl = [c0, c0 + e1 * s1, c0 + e2 * s2];
    let alphas = model
        .iter()
        .map(|p| {
            let d = p - c0;
            let a1 = d.dot(&e1) / s1;
            let a2 = d.dot(&e2) / s2;
            [1.0 - a1 - a2, a1, a2]
        })
        .collect();
    Ok(ControlFrame { ctrl, alphas })
}

/// Rigid transform `x_cam ≈ R · x_model + t` by SVD of the cross-covariance.
fn absolute_orientation(model: &[Point3], cam_pts: &[Point3]) -> Result<RigidPose, GeometryError> {
    let n = model.len() as f64;
    let mw = model.iter().fold(Point3::zeros(), |a, p| a + p) / n;
    let mc = cam_pts.iter().fold(Point3::zeros(), |a, p| a + p) / n;
    let mut h = Matrix3::zeros();
    for (pw, pc) in model.iter().zip(cam_pts) {
        h += (pw - mw) * (pc - mc).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(GeometryError::Degenerate("absolute orientation svd failed")),
    };
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    Ok(RigidPose::new(r, mc - r * mw))
}

fn pose_from_controls(
    frame: &ControlFrame,
    model: &[Point3],
    x: &SMatrix<f64, 9, 1>,
) -> Result<RigidPose, GeometryError> {
    let cc: [Point3; 3] = core::array::from_fn(|j| Point3::new(x[3 * j], x[3 * j + 1], x[3 * j + 2]));
    let mut pts: Vec<Point3> = frame
        .alphas
        .iter()
        .map(|a| cc[0] * a[0] + cc[1] * a[1] + cc[2] * a[2])
        .collect();
    let mean_z = pts.iter().map(|p| p.z).sum::<f64>();
    if mean_z < 0.0 {
        for p in &mut pts {
            *p = -*p;
        }
    }
    absolute_orientation(model, &pts)
}

const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

/// Coplanar-point EPnP estimate without iterative refinement.
pub fn solve_p4p_epnp(
    model: &[Point3],
    pixels: &[Point2],
    cam: &CameraIntrinsics,
) -> Result<RigidPose, GeometryError> {
    assert_eq!(model.len(), pixels.len(), "one pixel per model point");
    if model.len() < 4 {
        return Err(GeometryError::Degenerate("need four correspondences"));
    }
    if !all_finite2(pixels) {
        return Err(GeometryError::NonFinite);
    }
    let norm: Vec<Point2> = pixels.iter().map(|q| cam.normalize(q)).collect();
    if planar_spread_ratio(&norm) < MIN_SPREAD {
        return Err(GeometryError::Degenerate("image points are collinear"));
    }
    let frame = control_frame(model)?;

    let mut mtm = SMatrix::<f64, 9, 9>::zeros();
    for (a, q) in frame.alphas.iter().zip(&norm) {
        let mut r1 = SMatrix::<f64, 1, 9>::zeros();
        let mut r2 = SMatrix::<f64, 1, 9>::zeros();
        for j in 0..3 {
            r1[3 * j] = a[j];
            r1[3 * j + 2] = -a[j] * q.x;
            r2[3 * j + 1] = a[j];
            r2[3 * j + 2] = -a[j] * q.y;
        }
        mtm += r1.transpose() * r1 + r2.transpose() * r2;
    }
    let eig = SymmetricEigen::new(mtm);
    let mut order: [usize; 9] = core::array::from_fn(|i| i);
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let largest = eig.eigenvalues[order[8]].abs();
    if !(largest > 0.0) || eig.eigenvalues[order[2]].abs() <= 1e-14 * largest {
        return Err(GeometryError::Degenerate("rank-deficient EPnP system"));
    }
    let v1 = eig.eigenvectors.column(order[0]).into_owned();
    let v2 = eig.eigenvectors.column(order[1]).into_owned();

    let ctrl_dist2 = |a: usize, b: usize| (frame.ctrl[a] - frame.ctrl[b]).norm_squared();
    let sub = |v: &SMatrix<f64, 9, 1>, a: usize, b: usize| {
        Vector3::new(v[3 * a] - v[3 * b], v[3 * a + 1] - v[3 * b + 1], v[3 * a + 2] - v[3 * b + 2])
    };

    let mut candidates: Vec<RigidPose> = Vec::new();

    // One null vector: scale so control-point distances match.
    {
        let (mut num, mut den) = (0.0, 0.0);
        for &(a, b) in &PAIRS {
            let dv = sub(&v1, a, b).norm();
            num += dv * libm::sqrt(ctrl_dist2(a, b));
            den += dv * dv;
        }
        if den > 0.0 {
            let x = v1 * (num / den);
            if let Ok(p) = pose_from_controls(&frame, model, &x) {
                candidates.push(p);
            }
        }
    }

    // Two null vectors: linearized distance constraints in (b11, b12, b22).
    {
        let mut l = Matrix3::zeros();
        let mut rho = Vector3::zeros();
        for (row, &(a, b)) in PAIRS.iter().enumerate() {
            let d1 = sub(&v1, a, b);
            let d2 = sub(&v2, a, b);
            l[(row, 0)] = d1.dot(&d1);
            l[(row, 1)] = 2.0 * d1.dot(&d2);
            l[(row, 2)] = d2.dot(&d2);
            rho[row] = ctrl_dist2(a, b);
        }
        if let Some(sol) = l.try_inverse().map(|inv| inv * rho) {
            if sol[0] > 0.0 {
                let b1 = libm::sqrt(sol[0]);
                let b2 = if sol[2] > 0.0 {
                    libm::sqrt(sol[2]).copysign(sol[1] / b1)
                } else {
                    sol[1] / b1
                };
                let x = v1 * b1 + v2 * b2;
                if let Ok(p) = pose_from_controls(&frame, model, &x) {
                    candidates.push(p);
                }
            }
        }
    }

    candidates
        .into_iter()
        .filter_map(|p| {
            super::reprojection_error(&p, model, pixels, cam)
                .ok()
                .map(|e| (e, p))
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, p)| p)
        .ok_or(GeometryError::Degenerate("no EPnP candidate in front of the camera"))
}
