//! Camera-to-world calibration from a reference placement, the robot-to-world
//! composition, and the Z-X-Y attitude angles.
//!
//! Angle naming follows the extraction formulas rather than the rotation axes:
//!
//! ```text
//! theta_z = atan2(r21, r22)
//! theta_x = atan2(r13, r33)
//! theta_y = asin(-r23)
//! ```
//!
//! With these formulas `theta_x` is the rotation about the Y axis and `theta_y`
//! the rotation about the X axis. The composition that the formulas invert is
//! `R = Ry(theta_x) · Rx(theta_y) · Rz(theta_z)`.

use nalgebra::Matrix3;

use super::RigidPose;

/// Attitude angles in radians, each in `(-π, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EulerZXY {
    pub theta_z: f64,
    pub theta_x: f64,
    pub theta_y: f64,
}

/// Robot pose in the world frame with its attitude angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldPose {
    pub pose: RigidPose,
    pub euler: EulerZXY,
    /// `|r23|` was within 1e-9 of 1; `theta_y` was clamped and `theta_z`/`theta_x` are unreliable.
    pub gimbal_lock: bool,
}

/// Camera pose in the world frame from the robot-to-camera pose observed at the
/// reference placement, where the robot frame coincides with the world frame.
///
/// `R_c = R_0ᵀ`, `T_c = −R_0ᵀ · T_0`.
pub fn camera_extrinsics_from_reference(reference: &RigidPose) -> RigidPose {
    let rc = reference.rotation.transpose();
    RigidPose::new(rc, -(rc * reference.translation))
}

/// Chain a robot-to-camera pose with the camera-to-world pose.
///
/// `R_w = R_c · R`, `T_w = T_c + R_c · T`, then the attitude angles of `R_w`.
pub fn pose_to_world(robot_in_camera: &RigidPose, camera_in_world: &RigidPose) -> WorldPose {
    let rw = camera_in_world.rotation * robot_in_camera.rotation;
    let tw = camera_in_world.translation + camera_in_world.rotation * robot_in_camera.translation;
    let (euler, gimbal_lock) = extract_euler_zxy(&rw);
    WorldPose {
        pose: RigidPose::new(rw, tw),
        euler,
        gimbal_lock,
    }
}

/// Attitude angles of a rotation matrix; the flag reports gimbal lock.
pub fn extract_euler_zxy(r: &Matrix3<f64>) -> (EulerZXY, bool) {
    let r23 = r[(1, 2)];
    let gimbal_lock = r23.abs() > 1.0 - 1e-9;
    let euler = EulerZXY {
        theta_z: libm::atan2(r[(1, 0)], r[(1, 1)]),
        theta_x: libm::atan2(r[(0, 2)], r[(2, 2)]),
        theta_y: libm::asin((-r23).clamp(-1.0, 1.0)),
    };
    (euler, gimbal_lock)
}

/// Rotation whose extracted angles are `e` (away from gimbal lock).
pub fn compose_euler_zxy(e: &EulerZXY) -> Matrix3<f64> {
    rot_y(e.theta_x) * rot_x(e.theta_y) * rot_z(e.theta_z)
}

pub(crate) fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = libm::sincos(a);
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub(crate) fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = libm::sincos(a);
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub(crate) fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = libm::sincos(a);
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> RigidPose {
        let w = Vector3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        );
        let t = Vector3::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(0.5..9.0),
        );
        RigidPose::from_axis_angle(w, t)
    }

    #[test]
    fn reference_substitution() {
        let r0 = RigidPose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 3.0));
        let c = camera_extrinsics_from_reference(&r0);
        assert_eq!(c.rotation, Matrix3::identity());
        assert_eq!(c.translation, Vector3::new(0.0, 0.0, -3.0));
    }

    #[test]
    fn extrinsics_is_an_involution_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let r0 = random_pose(&mut rng);
            let c = camera_extrinsics_from_reference(&r0);
            let back = camera_extrinsics_from_reference(&c);
            assert!((back.rotation - r0.rotation).abs().max() < 1e-12);
            assert!((back.translation - r0.translation).norm() < 1e-12);
            let x = Vector3::new(rng.random(), rng.random(), rng.random());
            let y = c.rotation * (r0.rotation * x + r0.translation) + c.translation;
            assert!((y - x).norm() < 1e-12);
        }
    }

    #[test]
    fn reference_placement_maps_to_world_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let r0 = random_pose(&mut rng);
            let cam_world = camera_extrinsics_from_reference(&r0);
            let w = pose_to_world(&r0, &cam_world);
            assert!(w.pose.translation.norm() < 1e-9);
            assert!((w.pose.rotation - Matrix3::identity()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn identity_has_zero_angles() {
        let (e, lock) = extract_euler_zxy(&Matrix3::identity());
        assert_eq!(e, EulerZXY::default());
        assert!(!lock);
        assert_eq!(compose_euler_zxy(&EulerZXY::default()), Matrix3::identity());
    }

    #[test]
    fn pure_yaw_reads_theta_z() {
        // Rz(30°) built from its entries, independent of compose_euler_zxy.
        let (s, c) = (0.5, libm::sqrt(3.0) / 2.0);
        let rz = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        let (e, _) = extract_euler_zxy(&rz);
        assert!((e.theta_z - PI / 6.0).abs() < 1e-15);
        assert_eq!(e.theta_x, 0.0);
        assert_eq!(e.theta_y, 0.0);
    }

    #[test]
    fn axis_naming_of_formulas() {
        // A pure X rotation shows up in theta_y, a pure Y rotation in theta_x.
        let (ex, _) = extract_euler_zxy(&rot_x(0.3));
        assert!((ex.theta_y - 0.3).abs() < 1e-15 && ex.theta_x.abs() < 1e-15);
        let (ey, _) = extract_euler_zxy(&rot_y(0.4));
        assert!((ey.theta_x - 0.4).abs() < 1e-15 && ey.theta_y.abs() < 1e-15);
    }

    #[test]
    fn compose_extract_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut n = 0;
        while n < 1000 {
            let e = EulerZXY {
                theta_z: rng.random_range(-PI..PI),
                theta_x: rng.random_range(-PI..PI),
                theta_y: rng.random_range(-PI / 2.0..PI / 2.0),
            };
            let r = compose_euler_zxy(&e);
            if r[(1, 2)].abs() >= 0.99 {
                continue;
            }
            n += 1;
            let (back, lock) = extract_euler_zxy(&r);
            assert!(!lock);
            assert!((compose_euler_zxy(&back) - r).abs().max() < 1e-9);
            assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gimbal_lock_is_flagged() {
        let r = rot_x(PI / 2.0);
        let (e, lock) = extract_euler_zxy(&r);
        assert!(lock);
        assert!((e.theta_y - PI / 2.0).abs() < 1e-7);
    }
}
