//! Levenberg–Marquardt refinement of a pose from 3-D/2-D correspondences.
//!
//! The state is a rotation matrix plus translation. Each step solves for an
//! axis-angle increment `δω` and translation increment `δt` with
//! `R ← exp(δω) · R`, `T ← T + δt`, so the rotation never leaves SO(3).

use alloc::vec::Vec;
use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use super::camera::MIN_DEPTH;
use super::homography::{homography_dlt, pose_from_plane_homography};
use super::{all_finite2, CameraIntrinsics, GeometryError, Point2, Point3, RigidPose};

type Mat6 = SMatrix<f64, 6, 6>;
type Vec6 = SVector<f64, 6>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmSettings {
    pub initial_lambda: f64,
    /// Damping multiplier after a rejected step.
    pub lambda_up: f64,
    /// Damping divisor after an accepted step.
    pub lambda_down: f64,
    pub max_iterations: usize,
    /// Stop once the parameter step norm falls below this.
    pub min_step: f64,
}

impl Default for LmSettings {
    fn default() -> Self {
        Self {
            initial_lambda: 1e-3,
            lambda_up: 10.0,
            lambda_down: 10.0,
            max_iterations: 100,
            min_step: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct P4pSolution {
    pub pose: RigidPose,
    /// Mean Euclidean distance between projected model points and observed pixels.
    pub mean_reprojection_error: f64,
    /// Number of damped steps tried, accepted or not.
    pub iterations: usize,
    pub converged: bool,
    /// Total squared reprojection error: the start value, then one entry per accepted step.
    pub cost_history: Vec<f64>,
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn cost(pose: &RigidPose, model: &[Point3], pixels: &[Point2], cam: &CameraIntrinsics) -> Option<f64> {
    let mut c = 0.0;
    for (p, q) in model.iter().zip(pixels) {
        let xc = pose.transform(p);
        if xc.z <= MIN_DEPTH {
            return None;
        }
        c += (cam.project_camera_point(&xc).ok()? - q).norm_squared();
    }
    Some(c)
}

/// Residuals and their Jacobian with respect to `(δω, δt)` at the current pose.
pub(crate) fn linearize(
    pose: &RigidPose,
    model: &[Point3],
    pixels: &[Point2],
    cam: &CameraIntrinsics,
) -> Result<(Vec<[f64; 2]>, Vec<SMatrix<f64, 2, 6>>), GeometryError> {
    let mut res = Vec::with_capacity(model.len());
    let mut jac = Vec::with_capacity(model.len());
    for (p, q) in model.iter().zip(pixels) {
        let rp = pose.rotation * p;
        let xc = rp + pose.translation;
        let px = cam.project_camera_point(&xc)?;
        let jp = cam.projection_jacobian(&xc);
        let mut j = SMatrix::<f64, 2, 6>::zeros();
        j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(jp * -skew(&rp)));
        j.fixed_view_mut::<2, 3>(0, 3).copy_from(&jp);
        res.push([px.x - q.x, px.y - q.y]);
        jac.push(j);
    }
    Ok((res, jac))
}

pub(crate) fn apply_increment(pose: &RigidPose, delta: &Vec6) -> RigidPose {
    let dw = Vector3::new(delta[0], delta[1], delta[2]);
    let dt = Vector3::new(delta[3], delta[4], delta[5]);
    let step = RigidPose::from_axis_angle(dw, Vector3::zeros());
    RigidPose::new(step.rotation * pose.rotation, pose.translation + dt)
}

/// Initial pose from the plane homography between the coplanar model points and
/// the undistorted, normalized pixels.
pub(crate) fn homography_init(
    model: &[Point3],
    pixels: &[Point2],
    cam: &CameraIntrinsics,
) -> Result<RigidPose, GeometryError> {
    let z0 = model[0].z;
    if model.iter().any(|p| (p.z - z0).abs() > 1e-9 * (1.0 + z0.abs())) {
        return Err(GeometryError::Initialization("model points are not on a z = const plane"));
    }
    let src: Vec<Point2> = model.iter().map(|p| Point2::new(p.x, p.y)).collect();
    let dst: Vec<Point2> = pixels.iter().map(|q| cam.normalize(q)).collect();
    let h = homography_dlt(&src, &dst).map_err(|e| match e {
        GeometryError::NonFinite => GeometryError::NonFinite,
        _ => GeometryError::Initialization("degenerate pixel quadrilateral"),
    })?;
    pose_from_plane_homography(&h, z0)
}

/// The mirror pose of a plane: the plane normal reflected about the line of
/// sight to the plane center, center fixed. The two poses project the plane
/// almost identically, so LM started from one cannot reach the other.
pub(crate) fn planar_twin(pose: &RigidPose, model: &[Point3]) -> Option<RigidPose> {
    let n = model.len() as f64;
    let m = model.iter().fold(Point3::zeros(), |a, p| a + p) / n;
    let c = pose.transform(&m);
    let v = c.try_normalize(1e-12)?;
    let normal = pose.rotation.column(2).into_owned();
    let twin_normal = v * (2.0 * normal.dot(&v)) - normal;
    let axis = normal.cross(&twin_normal);
    let angle = libm::atan2(axis.norm(), normal.dot(&twin_normal));
    let q = match axis.try_normalize(1e-12) {
        Some(a) => *nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_unchecked(a), angle).matrix(),
        None => return None,
    };
    let r = q * pose.rotation;
    Some(RigidPose::new(r, c - r * m))
}

fn refine(
    mut pose: RigidPose,
    model: &[Point3],
    pixels: &[Point2],
    cam: &CameraIntrinsics,
    settings: &LmSettings,
) -> Result<P4pSolution, GeometryError> {
    let mut current = cost(&pose, model, pixels, cam)
        .ok_or(GeometryError::Initialization("initial pose puts points behind the camera"))?;
    let mut history = alloc::vec![current];
    let mut lambda = settings.initial_lambda;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < settings.max_iterations {
        if current == 0.0 {
            converged = true;
            break;
        }
        iterations += 1;
        let (res, jac) = linearize(&pose, model, pixels, cam)?;
        let mut a = Mat6::zeros();
        let mut g = Vec6::zeros();
        for (r, j) in res.iter().zip(&jac) {
            a += j.transpose() * j;
            g += j.transpose() * nalgebra::Vector2::new(r[0], r[1]);
        }
        let mut damped = a;
        for k in 0..6 {
            damped[(k, k)] += lambda * a[(k, k)].max(1e-12);
        }
        let Some(delta) = damped.cholesky().map(|c| c.solve(&(-g))) else {
            lambda *= settings.lambda_up;
            continue;
        };
        if delta.norm() < settings.min_step {
            converged = true;
            break;
        }
        let candidate = apply_increment(&pose, &delta);
        match cost(&candidate, model, pixels, cam) {
            Some(c) if c < current => {
                pose = candidate;
                current = c;
                history.push(c);
                lambda /= settings.lambda_down;
            }
            _ => {
                lambda *= settings.lambda_up;
                if lambda > 1e32 {
                    // No representable step improves the cost: this is a minimum.
                    converged = true;
                    break;
                }
            }
        }
    }
    let err = super::reprojection_error(&pose, model, pixels, cam)?;
    Ok(P4pSolution {
        pose,
        mean_reprojection_error: err,
        iterations,
        converged,
        cost_history: history,
    })
}

/// Minimize the total squared reprojection error over the pose.
///
/// With `init` a single run starts there. Without it, runs start from the plane
/// homography pose, its planar twin and the EPnP estimate, and the lowest final
/// cost wins. A run that hits the iteration cap returns the best pose found with
/// `converged == false`.
pub fn solve_p4p_lm(
    model: &[Point3],
    pixels: &[Point2],
    cam: &CameraIntrinsics,
    init: Option<&RigidPose>,
    settings: &LmSettings,
) -> Result<P4pSolution, GeometryError> {
    assert_eq!(model.len(), pixels.len(), "one pixel per model point");
    if model.len() < 4 {
        return Err(GeometryError::Degenerate("need four correspondences"));
    }
    if !all_finite2(pixels) {
        return Err(GeometryError::NonFinite);
    }
    if let Some(p) = init {
        return refine(*p, model, pixels, cam, settings);
    }
    let mut starts: Vec<RigidPose> = Vec::with_capacity(4);
    let mut first_err = None;
    match homography_init(model, pixels, cam) {
        Ok(h) => {
            starts.push(h);
            starts.extend(planar_twin(&h, model));
        }
        Err(e) => first_err = Some(e),
    }
    if let Ok(e) = super::solve_p4p_epnp(model, pixels, cam) {
        starts.push(e);
        starts.extend(planar_twin(&e, model));
    }
    let mut best: Option<(f64, P4pSolution)> = None;
    for s in starts {
        let Ok(sol) = refine(s, model, pixels, cam, settings) else { continue };
        let Some(c) = sol.cost_history.last().copied() else { continue };
        if best.as_ref().map_or(true, |(b, _)| c < *b) {
            best = Some((c, sol));
        }
    }
    best.map(|(_, s)| s).ok_or_else(|| {
        first_err.unwrap_or(GeometryError::Initialization("no start pose puts the points in front of the camera"))
    })
}
