use nalgebra::{Matrix2, Matrix2x3};

use super::{GeometryError, Point2, Point3, RigidPose};

/// Points closer than this to the camera plane cannot be projected.
pub const MIN_DEPTH: f64 = 1e-9;

/// Pinhole intrinsics with Brown–Conrady distortion (`k1, k2` radial, `p1, p2` tangential).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
    pub p1: f64,
    pub p2: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        Self::with_distortion(fx, fy, cx, cy, [0.0; 4])
    }

    pub fn with_distortion(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        dist: [f64; 4],
    ) -> Result<Self, GeometryError> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            k1: dist[0],
            k2: dist[1],
            p1: dist[2],
            p2: dist[3],
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be positive"));
        }
        let all = [self.fx, self.fy, self.cx, self.cy, self.k1, self.k2, self.p1, self.p2];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics("non-finite parameter"));
        }
        Ok(())
    }

    pub fn distortion(&self) -> [f64; 4] {
        [self.k1, self.k2, self.p1, self.p2]
    }

    pub fn has_distortion(&self) -> bool {
        self.distortion().iter().any(|&d| d != 0.0)
    }

    /// Apply lens distortion to normalized coordinates.
    pub fn distort(&self, n: Point2) -> Point2 {
        let (x, y) = (n.x, n.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + self.k1 * r2 + self.k2 * r2 * r2;
        Point2::new(
            x * radial + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x),
            y * radial + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y,
        )
    }

    /// Jacobian of [`distort`](Self::distort) with respect to the normalized point.
    pub fn distort_jacobian(&self, n: Point2) -> Matrix2<f64> {
        let (x, y) = (n.x, n.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + self.k1 * r2 + self.k2 * r2 * r2;
        // d(radial)/dx = (k1 + 2 k2 r2) * 2x
        let dr = self.k1 + 2.0 * self.k2 * r2;
        let drx = dr * 2.0 * x;
        let dry = dr * 2.0 * y;
        Matrix2::new(
            radial + x * drx + 2.0 * self.p1 * y + 6.0 * self.p2 * x,
            x * dry + 2.0 * self.p1 * x + 2.0 * self.p2 * y,
            y * drx + 2.0 * self.p1 * x + 2.0 * self.p2 * y,
            radial + y * dry + 6.0 * self.p1 * y + 2.0 * self.p2 * x,
        )
    }

    /// Invert [`distort`](Self::distort) by Newton iteration.
    pub fn undistort(&self, d: Point2) -> Point2 {
        if !self.has_distortion() {
            return d;
        }
        let mut n = d;
        for _ in 0..50 {
            let r = self.distort(n) - d;
            if r.norm() < 1e-15 {
                break;
            }
            match self.distort_jacobian(n).try_inverse() {
                Some(inv) => n -= inv * r,
                None => break,
            }
        }
        n
    }

    /// Pixel → normalized, undistorted image coordinates.
    pub fn normalize(&self, pixel: &Point2) -> Point2 {
        let d = Point2::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy);
        self.undistort(d)
    }

    /// Project a camera-frame point to pixels.
    pub fn project_camera_point(&self, xc: &Point3) -> Result<Point2, GeometryError> {
        if xc.z <= MIN_DEPTH {
            return Err(GeometryError::BehindCamera(xc.z));
        }
        let d = self.distort(Point2::new(xc.x / xc.z, xc.y / xc.z));
        Ok(Point2::new(self.fx * d.x + self.cx, self.fy * d.y + self.cy))
    }

    /// Project a source-frame point through `pose` to pixels.
    pub fn project(&self, pose: &RigidPose, p: &Point3) -> Result<Point2, GeometryError> {
        self.project_camera_point(&pose.transform(p))
    }

    /// Jacobian of the pixel with respect to the camera-frame point.
    pub fn projection_jacobian(&self, xc: &Point3) -> Matrix2x3<f64> {
        let iz = 1.0 / xc.z;
        let n = Point2::new(xc.x * iz, xc.y * iz);
        let dn = Matrix2x3::new(iz, 0.0, -n.x * iz, 0.0, iz, -n.y * iz);
        let k = Matrix2::new(self.fx, 0.0, 0.0, self.fy);
        k * self.distort_jacobian(n) * dn
    }

    /// Camera-frame point at depth `z` that projects to `pixel`.
    pub fn back_project(&self, pixel: &Point2, z: f64) -> Point3 {
        let n = self.normalize(pixel);
        Point3::new(n.x * z, n.y * z, z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(1000.0, 1000.0, 960.0, 540.0).unwrap()
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let pose = RigidPose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 2.0));
        let p = cam().project(&pose, &Point3::zeros()).unwrap();
        assert_eq!(p, Point2::new(960.0, 540.0));
    }

    #[test]
    fn lateral_offset_scales_by_focal_length() {
        let pose = RigidPose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 2.0));
        let p = cam().project(&pose, &Point3::new(0.2, 0.0, 0.0)).unwrap();
        assert!((p.x - 1060.0).abs() < 1e-12);
        assert_eq!(p.y, 540.0);
    }

    #[test]
    fn behind_camera_is_an_error() {
        let pose = RigidPose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, -1.0));
        assert!(matches!(
            cam().project(&pose, &Point3::zeros()),
            Err(GeometryError::BehindCamera(_))
        ));
    }

    #[test]
    fn rejects_bad_focal() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, -1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn undistort_inverts_distort() {
        let c = CameraIntrinsics::with_distortion(900.0, 910.0, 640.0, 360.0, [-0.12, 0.03, 1e-3, -5e-4])
            .unwrap();
        for &(x, y) in &[(0.1, -0.2), (-0.4, 0.3), (0.0, 0.0), (0.5, 0.25)] {
            let n = Point2::new(x, y);
            let back = c.undistort(c.distort(n));
            assert!((back - n).norm() < 1e-12, "{back} vs {n}");
        }
    }

    #[test]
    fn distortion_jacobian_matches_central_differences() {
        let c = CameraIntrinsics::with_distortion(1.0, 1.0, 0.0, 0.0, [-0.2, 0.05, 2e-3, 1e-3]).unwrap();
        let n = Point2::new(0.3, -0.2);
        let j = c.distort_jacobian(n);
        let h = 1e-6;
        for k in 0..2 {
            let mut e = Point2::zeros();
            e[k] = h;
            let fd = (c.distort(n + e) - c.distort(n - e)) / (2.0 * h);
            for r in 0..2 {
                assert!((fd[r] - j[(r, k)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn back_projection_recovers_point() {
        let c = cam();
        let xc = Point3::new(0.31, -0.27, 4.2);
        let px = c.project_camera_point(&xc).unwrap();
        assert!((c.back_project(&px, xc.z) - xc).norm() < 1e-9);
    }
}
