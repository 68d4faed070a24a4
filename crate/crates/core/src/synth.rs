//! Synthetic scenes: a robot placed on flat ground in front of a fixed, tilted
//! camera, projected through a pinhole model with optional pixel noise.
//!
//! Ground frame: origin on the ground below the camera, Z up, Y along the
//! horizontal viewing direction. The world frame is the robot frame at the
//! reference placement (straight ahead, yaw 0, on the ground).

use alloc::format;
use alloc::string::String;
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::encoding::{Annotation, Keypoint};
use crate::geometry::{rot_x, rot_y, rot_z, CameraIntrinsics, GeometryError, Point2, RigidPose, RobotModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("no in-frame placement found after {0} attempts")]
    Infeasible(usize),
    #[error("invalid scene parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub const MAX_ATTEMPTS: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub cam: CameraIntrinsics,
    /// `(height, width)` in pixels.
    pub image_size: (usize, usize),
    pub model: RobotModel,
    pub camera_height: f64,
    /// Downward tilt of the optical axis, radians.
    pub tilt: f64,
    /// Ground distance range of the robot center, meters.
    pub distance: (f64, f64),
    /// Bound on |pitch| and |roll|, radians.
    pub max_tilt: f64,
    /// Per-axis Gaussian pixel noise.
    pub noise_sigma: f64,
    /// Exact projections must stay this far inside the image.
    pub margin: f64,
    /// Ground distance of the reference placement.
    pub reference_distance: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            cam: CameraIntrinsics::new(1200.0, 1200.0, 960.0, 540.0).expect("valid intrinsics"),
            image_size: (1080, 1920),
            model: RobotModel::default(),
            camera_height: 2.0,
            tilt: 30f64.to_radians(),
            distance: (1.5, 8.0),
            max_tilt: 10f64.to_radians(),
            noise_sigma: 0.0,
            margin: 8.0,
            reference_distance: 3.0,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        self.cam.validate()?;
        self.model.validate()?;
        let bad = |m: &str| Err(SynthError::InvalidParameter(m.into()));
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return bad("image size must be positive");
        }
        if !(self.distance.0 > 0.0 && self.distance.1 >= self.distance.0) {
            return bad("distance range must be positive and ordered");
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad("noise sigma must be finite and non-negative");
        }
        if !(self.camera_height > 0.0) || !self.tilt.is_finite() || !(self.max_tilt >= 0.0) {
            return bad("camera height must be positive, tilts finite");
        }
        Ok(())
    }

    /// Ground → camera transform.
    pub fn camera_from_ground(&self) -> RigidPose {
        let (s, c) = libm::sincos(self.tilt);
        let r = Matrix3::new(1.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s);
        let center = Vector3::new(0.0, 0.0, self.camera_height);
        RigidPose::new(r, -(r * center))
    }

    /// Robot → ground transform for a placement.
    pub fn ground_from_robot(&self, x: f64, y: f64, yaw: f64, pitch: f64, roll: f64) -> RigidPose {
        let r = rot_z(yaw) * rot_x(pitch) * rot_y(roll);
        RigidPose::new(r, Vector3::new(x, y, self.model.height / 2.0))
    }

    /// Robot → camera transform at the reference placement.
    pub fn reference_pose(&self) -> RigidPose {
        self.camera_from_ground()
            .compose(&self.ground_from_robot(0.0, self.reference_distance, 0.0, 0.0, 0.0))
    }

    fn in_frame(&self, p: &Point2) -> bool {
        let (h, w) = (self.image_size.0 as f64, self.image_size.1 as f64);
        p.x >= self.margin && p.y >= self.margin && p.x < w - self.margin && p.y < h - self.margin
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub index: u64,
    /// Robot → camera.
    pub pose: RigidPose,
    /// Robot → world.
    pub world_pose: RigidPose,
    /// Exact keypoint projections.
    pub pixels_exact: [Point2; 4],
    /// Observed keypoints (exact plus noise, clamped into the image).
    pub pixels: [Point2; 4],
}

impl SyntheticScene {
    pub fn annotation(&self, image_id: impl Into<String>, image_size: (usize, usize)) -> Annotation {
        Annotation {
            image_id: image_id.into(),
            width: image_size.1,
            height: image_size.0,
            keypoints: self.pixels.map(|p| Keypoint {
                x: p.x,
                y: p.y,
                visible: true,
            }),
        }
    }

    pub fn default_image_id(&self) -> String {
        format!("synth_{:06}", self.index)
    }
}

/// Deterministic scene source: scene `i` depends only on `(seed, i)`.
#[derive(Debug, Clone)]
pub struct SceneGenerator {
    params: SceneParams,
    seed: u64,
}

impl SceneGenerator {
    pub fn new(params: SceneParams, seed: u64) -> Result<Self, SynthError> {
        params.validate()?;
        Ok(Self { params, seed })
    }

    pub fn params(&self) -> &SceneParams {
        &self.params
    }

    pub fn scene(&self, index: u64) -> Result<SyntheticScene, SynthError> {
        let p = &self.params;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let cam_from_ground = p.camera_from_ground();
        let world_from_camera = crate::geometry::camera_extrinsics_from_reference(&p.reference_pose());
        let pts = p.model.keypoints();
        // Horizontal half field of view bounds the bearing.
        let half_fov = libm::atan2(p.cam.cx, p.cam.fx);
        for _ in 0..MAX_ATTEMPTS {
            let d = rng.random_range(p.distance.0..=p.distance.1);
            let bearing = rng.random_range(-half_fov..=half_fov);
            let yaw = core::f64::consts::PI - rng.random_range(0.0..core::f64::consts::TAU);
            let pitch = rng.random_range(-p.max_tilt..=p.max_tilt);
            let roll = rng.random_range(-p.max_tilt..=p.max_tilt);
            let (sb, cb) = libm::sincos(bearing);
            let ground = p.ground_from_robot(d * sb, d * cb, yaw, pitch, roll);
            let pose = cam_from_ground.compose(&ground);
            let mut exact = [Point2::zeros(); 4];
            let mut ok = true;
            for (k, x) in pts.iter().enumerate() {
                match p.cam.project(&pose, x) {
                    Ok(q) if p.in_frame(&q) => exact[k] = q,
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue;
            }
            let mut pixels = exact;
            if p.noise_sigma > 0.0 {
                let n = Normal::new(0.0, p.noise_sigma).expect("sigma validated");
                let (h, w) = (p.image_size.0 as f64, p.image_size.1 as f64);
                for q in &mut pixels {
                    q.x = (q.x + n.sample(&mut rng)).clamp(0.0, w - 1e-6);
                    q.y = (q.y + n.sample(&mut rng)).clamp(0.0, h - 1e-6);
                }
            }
            return Ok(SyntheticScene {
                index,
                pose,
                world_pose: world_from_camera.compose(&pose),
                pixels_exact: exact,
                pixels,
            });
        }
        Err(SynthError::Infeasible(MAX_ATTEMPTS))
    }
}

/// Per-axis sigma whose 2-D displacement has mean `mean_displacement` (Rayleigh mean σ·sqrt(π/2)).
pub fn sigma_for_mean_displacement(mean_displacement: f64) -> f64 {
    mean_displacement / libm::sqrt(core::f64::consts::FRAC_PI_2)
}
