use nalgebra::{Matrix3, SMatrix, SymmetricEigen, Vector3};

use super::{planar_spread_ratio, GeometryError, Point2, RigidPose};

/// Minimum ratio of minor to major principal spread for a usable point set.
const MIN_SPREAD: f64 = 1e-6;

/// Hartley normalization: centroid to the origin, mean distance √2.
fn normalizing_transform(pts: &[Point2]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let c = pts.iter().fold(Point2::zeros(), |a, p| a + p) / n;
    let mean_dist = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if mean_dist > 0.0 {
        core::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

fn apply(m: &Matrix3<f64>, p: &Point2) -> Point2 {
    let v = m * Vector3::new(p.x, p.y, 1.0);
    Point2::new(v.x / v.z, v.y / v.z)
}

/// Direct linear transform estimate of `H` with `dst ~ H · src` from four or more pairs.
pub fn homography_dlt(src: &[Point2], dst: &[Point2]) -> Result<Matrix3<f64>, GeometryError> {
    assert_eq!(src.len(), dst.len());
    if src.len() < 4 {
        return Err(GeometryError::Degenerate("need at least four correspondences"));
    }
    if !super::all_finite2(src) || !super::all_finite2(dst) {
        return Err(GeometryError::NonFinite);
    }
    if planar_spread_ratio(src) < MIN_SPREAD || planar_spread_ratio(dst) < MIN_SPREAD {
        return Err(GeometryError::Degenerate("collinear points"));
    }
    let ts = normalizing_transform(src);
    let td = normalizing_transform(dst);
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for (s, d) in src.iter().zip(dst) {
        let s = apply(&ts, s);
        let d = apply(&td, d);
        let r1 = SMatrix::<f64, 1, 9>::from_row_slice(&[
            -s.x, -s.y, -1.0, 0.0, 0.0, 0.0, d.x * s.x, d.x * s.y, d.x,
        ]);
        let r2 = SMatrix::<f64, 1, 9>::from_row_slice(&[
            0.0, 0.0, 0.0, -s.x, -s.y, -1.0, d.y * s.x, d.y * s.y, d.y,
        ]);
        ata += r1.transpose() * r1 + r2.transpose() * r2;
    }
    let eig = SymmetricEigen::new(ata);
    let mut order: [usize; 9] = core::array::from_fn(|i| i);
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let largest = eig.eigenvalues[order[8]];
    if eig.eigenvalues[order[1]] <= 1e-12 * largest {
        return Err(GeometryError::Degenerate("homography is not unique"));
    }
    let h = eig.eigenvectors.column(order[0]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td
        .try_inverse()
        .ok_or(GeometryError::Degenerate("normalization"))?;
    let out = td_inv * hn * ts;
    let scale = out[(2, 2)];
    let out = if scale.abs() > 1e-300 { out / scale } else { out };
    let svd = out.svd(false, false);
    let sv = svd.singular_values;
    if sv.min() <= 1e-9 * sv.max() {
        return Err(GeometryError::Degenerate("rank-deficient homography"));
    }
    Ok(out)
}

/// Pose of a plane `z = plane_z` (source frame) from the homography mapping its
/// `(x, y)` coordinates to normalized image coordinates.
pub fn pose_from_plane_homography(h: &Matrix3<f64>, plane_z: f64) -> Result<RigidPose, GeometryError> {
    let h1 = h.column(0).into_owned();
    let h2 = h.column(1).into_owned();
    let h3 = h.column(2).into_owned();
    let norm = (h1.norm() + h2.norm()) / 2.0;
    if !(norm > 0.0) {
        return Err(GeometryError::Initialization("zero homography columns"));
    }
    // The plane origin must land in front of the camera.
    let mut s = 1.0 / norm;
    if h3.z < 0.0 {
        s = -s;
    }
    let r1 = h1 * s;
    let r2 = h2 * s;
    let r3 = r1.cross(&r2);
    let approx = Matrix3::from_columns(&[r1, r2, r3]);
    let svd = approx.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(GeometryError::Initialization("svd failed")),
    };
    let mut rot = u * vt;
    if rot.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        rot = u2 * vt;
    }
    let t = h3 * s - rot.column(2) * plane_z;
    let pose = RigidPose::new(rot, t);
    if !pose.rotation.iter().chain(pose.translation.iter()).all(|v| v.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    Ok(pose)
}
