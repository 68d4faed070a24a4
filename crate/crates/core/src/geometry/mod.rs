//! Camera model, P4P pose solvers and the robot → camera → world frame chain.
//!
//! Frames:
//! - robot: origin at the UGV center, X starboard, Y forward, Z zenith;
//! - camera: X right, Y down, Z along the optical axis;
//! - world: the robot frame at its reference (pre-departure) placement.
//!
//! A [`RigidPose`] maps points from a source frame into a target frame:
//! `x_target = R · x_source + T`.

mod camera;
mod epnp;
mod frames;
mod homography;
mod pnp;

pub use camera::CameraIntrinsics;
pub use epnp::solve_p4p_epnp;
pub use frames::{
    camera_extrinsics_from_reference, compose_euler_zxy, extract_euler_zxy, pose_to_world,
    EulerZXY, WorldPose,
};
pub use homography::{homography_dlt, pose_from_plane_homography};
pub use pnp::{solve_p4p_lm, LmSettings, P4pSolution};
pub(crate) use frames::{rot_x, rot_y, rot_z};

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use thiserror::Error;

pub type Point2 = Vector2<f64>;
pub type Point3 = Vector3<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("point is at or behind the camera plane (z = {0:.3e} m)")]
    BehindCamera(f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("invalid robot model: all dimensions must be positive")]
    InvalidModel,
    #[error("pose initialization failed: {0}")]
    Initialization(&'static str),
    #[error("degenerate point configuration: {0}")]
    Degenerate(&'static str),
    #[error("non-finite input")]
    NonFinite,
}

/// Rotation plus translation; maps source-frame points into the target frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    /// Pose from an axis-angle vector (radians) and a translation.
    pub fn from_axis_angle(omega: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self::new(*Rotation3::new(omega).matrix(), translation)
    }

    pub fn transform(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidPose) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    /// True when the rotation is orthonormal with determinant +1 within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        err <= tol && (self.rotation.determinant() - 1.0).abs() <= tol
    }

    /// Geodesic angle between the two rotations, in radians.
    pub fn rotation_distance(&self, other: &RigidPose) -> f64 {
        let r = self.rotation.transpose() * other.rotation;
        let s = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm() / 2.0;
        let c = (r.trace() - 1.0) / 2.0;
        libm::atan2(s, c)
    }
}

/// Pre-measured UGV box dimensions in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotModel {
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for RobotModel {
    fn default() -> Self {
        Self {
            length: 0.72,
            width: 0.48,
            height: 0.23,
        }
    }
}

impl RobotModel {
    pub fn new(length: f64, width: f64, height: f64) -> Result<Self, GeometryError> {
        let m = Self {
            length,
            width,
            height,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = [self.length, self.width, self.height]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidModel)
        }
    }

    /// The four top-surface corners in the robot frame, in keypoint order.
    pub fn keypoints(&self) -> [Point3; 4] {
        let (hw, hl, hh) = (self.width / 2.0, self.length / 2.0, self.height / 2.0);
        [
            Point3::new(-hw, hl, hh),
            Point3::new(-hw, -hl, hh),
            Point3::new(hw, -hl, hh),
            Point3::new(hw, hl, hh),
        ]
    }
}

/// Mean Euclidean pixel distance between projected model points and observed pixels.
pub fn reprojection_error(
    pose: &RigidPose,
    model_points: &[Point3],
    pixels: &[Point2],
    cam: &CameraIntrinsics,
) -> Result<f64, GeometryError> {
    assert_eq!(model_points.len(), pixels.len());
    if model_points.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (p, q) in model_points.iter().zip(pixels) {
        sum += (cam.project(pose, p)? - q).norm();
    }
    Ok(sum / model_points.len() as f64)
}

pub(crate) fn all_finite2(p: &[Point2]) -> bool {
    p.iter().all(|v| v.x.is_finite() && v.y.is_finite())
}

/// Ratio of the smaller to the larger principal spread of a 2-D point set.
///
/// Zero for collinear (or coincident) points.
pub(crate) fn planar_spread_ratio(points: &[Point2]) -> f64 {
    let n = points.len() as f64;
    let mean = points.iter().fold(Point2::zeros(), |a, p| a + p) / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let d = p - mean;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    let tr = sxx + syy;
    if tr <= 0.0 {
        return 0.0;
    }
    let disc = libm::sqrt(((sxx - syy) / 2.0) * ((sxx - syy) / 2.0) + sxy * sxy);
    let hi = tr / 2.0 + disc;
    let lo = (tr / 2.0 - disc).max(0.0);
    libm::sqrt(lo / hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_robot_keypoints() {
        let k = RobotModel::default().keypoints();
        assert!((k[0] - Point3::new(-0.24, 0.36, 0.115)).norm() < 1e-15);
        assert!(k.iter().all(|p| p.z == 0.115));
        let unit = RobotModel::new(1.0, 1.0, 1.0).unwrap().keypoints();
        for p in unit {
            assert_eq!((p.x.abs(), p.y.abs(), p.z), (0.5, 0.5, 0.5));
        }
        assert!(RobotModel::new(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn shifted_pixels_give_pythagorean_error() {
        let cam = CameraIntrinsics::new(1000.0, 1000.0, 960.0, 540.0).unwrap();
        let pose = RigidPose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 3.0));
        let pts = RobotModel::default().keypoints();
        let mut pix: alloc::vec::Vec<Point2> =
            pts.iter().map(|p| cam.project(&pose, p).unwrap()).collect();
        assert_eq!(reprojection_error(&pose, &pts, &pix, &cam).unwrap(), 0.0);
        for q in &mut pix {
            *q += Point2::new(3.0, 4.0);
        }
        let e = reprojection_error(&pose, &pts, &pix, &cam).unwrap();
        assert!((e - 5.0).abs() < 1e-9);
    }

    #[test]
    fn collinear_spread_is_zero() {
        let line = [
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 2.0),
            Point2::new(2.0, 4.0),
            Point2::new(5.0, 10.0),
        ];
        assert!(planar_spread_ratio(&line) < 1e-12);
        let square = [
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
        ];
        assert!((planar_spread_ratio(&square) - 1.0).abs() < 1e-12);
    }
}
