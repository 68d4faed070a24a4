//! JSON and JSON-lines record formats.
//!
//! | file | one record |
//! |---|---|
//! | annotations | `{"image_id", "w", "h", "kps": [[x, y, v] ×4]}` |
//! | detections | `{"image_id", "complete", "kps": [[x, y, score] \| null ×4], "score"}` |
//! | map index | `{"image_id", "w", "h", "heat", "paf"}` |
//! | poses | `{"image_id", "frame", "t", "r", "euler", "gimbal_lock", "reproj_err"}` |
//! | camera | `{"fx", "fy", "cx", "cy", "dist": [k1, k2, p1, p2], "cam_to_world": {"r", "t"}}` |
//!
//! Rotations are 9 floats, row-major. Pixel coordinates are in the raw image.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use ugvkit_core::decoding::{DetectedKeypoint, Detection};
use ugvkit_core::encoding::{Annotation, Keypoint};
use ugvkit_core::evaluation::Quad;
use ugvkit_core::geometry::{CameraIntrinsics, RigidPose};

use crate::error::{Error, Result};
use crate::io;

/// Parse a JSON-lines file; blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = io::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::invalid(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("records serialize"));
        s.push('\n');
    }
    s
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    io::write_file(path, to_jsonl(records).as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = io::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    io::write_file(path, s.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub w: usize,
    pub h: usize,
    pub kps: [(f64, f64, u8); 4],
}

impl AnnotationRecord {
    pub fn from_annotation(a: &Annotation) -> Self {
        Self {
            image_id: a.image_id.clone(),
            w: a.width,
            h: a.height,
            kps: a.keypoints.map(|k| (k.x, k.y, k.visible as u8)),
        }
    }

    pub fn to_annotation(&self) -> Result<Annotation> {
        if self.w == 0 || self.h == 0 {
            return Err(Error::invalid(format!("{}: image size must be positive", self.image_id)));
        }
        let mut keypoints = [Keypoint {
            x: 0.0,
            y: 0.0,
            visible: false,
        }; 4];
        for (k, &(x, y, v)) in keypoints.iter_mut().zip(&self.kps) {
            if v > 1 {
                return Err(Error::invalid(format!("{}: visibility must be 0 or 1, got {v}", self.image_id)));
            }
            *k = Keypoint { x, y, visible: v == 1 };
        }
        Ok(Annotation {
            image_id: self.image_id.clone(),
            width: self.w,
            height: self.h,
            keypoints,
        })
    }

    /// The quad when all four keypoints are visible.
    pub fn quad(&self) -> Option<Quad> {
        self.kps.iter().all(|k| k.2 == 1).then(|| self.kps.map(|k| (k.0, k.1)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub complete: bool,
    pub kps: [Option<[f64; 3]>; 4],
    pub score: f64,
}

impl DetectionRecord {
    pub fn from_detection(image_id: &str, d: &Detection) -> Self {
        Self {
            image_id: image_id.to_string(),
            complete: d.complete,
            kps: d.keypoints.map(|k| k.map(|k| [k.x, k.y, k.score])),
            score: d.total_score,
        }
    }

    pub fn to_detection(&self) -> Detection {
        let kps = self.kps.map(|k| k.map(|[x, y, score]| DetectedKeypoint { x, y, score }));
        Detection::new(kps, self.score)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapIndexRecord {
    pub image_id: String,
    /// Raw image size the maps describe.
    pub w: usize,
    pub h: usize,
    /// Tensor files, relative to the index.
    pub heat: String,
    pub paf: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseJson {
    pub r: [f64; 9],
    pub t: [f64; 3],
}

impl PoseJson {
    pub fn from_pose(p: &RigidPose) -> Self {
        let m = &p.rotation;
        let mut r = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                r[3 * i + j] = m[(i, j)];
            }
        }
        Self {
            r,
            t: [p.translation.x, p.translation.y, p.translation.z],
        }
    }

    /// Rejects matrices that are not rotations to within 1e-6.
    pub fn to_pose(&self) -> Result<RigidPose> {
        let p = RigidPose::new(Matrix3::from_row_slice(&self.r), Vector3::from(self.t));
        if !p.is_valid(1e-6) {
            return Err(Error::invalid("rotation is not orthonormal with determinant 1"));
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub dist: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cam_to_world: Option<PoseJson>,
}

impl CameraConfig {
    pub fn from_intrinsics(cam: &CameraIntrinsics) -> Self {
        Self {
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            dist: cam.distortion(),
            cam_to_world: None,
        }
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        Ok(CameraIntrinsics::with_distortion(self.fx, self.fy, self.cx, self.cy, self.dist)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = read_json(path)?;
        c.intrinsics().map_err(|e| e.context(path.display()))?;
        if let Some(p) = &c.cam_to_world {
            p.to_pose().map_err(|e| e.context(format!("{}: cam_to_world", path.display())))?;
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerJson {
    pub theta_z: f64,
    pub theta_x: f64,
    pub theta_y: f64,
}

/// Ground-truth poses written by the scene generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub image_id: String,
    pub robot_to_camera: PoseJson,
    pub robot_to_world: PoseJson,
    pub euler: EulerJson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseFrame {
    World,
    /// No camera-to-world calibration was available.
    Camera,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub image_id: String,
    pub frame: PoseFrame,
    pub t: [f64; 3],
    pub r: [f64; 9],
    pub euler: EulerJson,
    pub gimbal_lock: bool,
    /// Mean reprojection error of the fitted pose, pixels.
    pub reproj_err: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detection_record_shape() {
        let rec = DetectionRecord {
            image_id: "a".into(),
            complete: false,
            kps: [Some([1.0, 2.5, 0.75]), None, None, None],
            score: 0.5,
        };
        assert_eq!(
            serde_json::to_string(&rec).unwrap(),
            r#"{"image_id":"a","complete":false,"kps":[[1.0,2.5,0.75],null,null,null],"score":0.5}"#
        );
        let d = rec.to_detection();
        assert_eq!(d.num_keypoints(), 1);
        assert!(!d.complete);
    }

    #[test]
    fn annotation_record_shape_and_validation() {
        let line = r#"{"image_id":"x","w":640,"h":360,"kps":[[1.0,2.0,1],[3.0,4.0,1],[5.0,6.0,0],[7.0,8.0,1]]}"#;
        let rec: AnnotationRecord = serde_json::from_str(line).unwrap();
        assert_eq!(serde_json::to_string(&rec).unwrap(), line);
        let a = rec.to_annotation().unwrap();
        assert!(!a.keypoints[2].visible);
        assert_eq!(rec.quad(), None);
        let mut bad = rec.clone();
        bad.kps[0].2 = 2;
        assert!(bad.to_annotation().is_err());
    }

    #[test]
    fn camera_config_without_extrinsics() {
        let c: CameraConfig = serde_json::from_str(r#"{"fx":1000,"fy":1000,"cx":320,"cy":180}"#).unwrap();
        assert_eq!(c.dist, [0.0; 4]);
        assert!(c.cam_to_world.is_none());
        assert!(!serde_json::to_string(&c).unwrap().contains("cam_to_world"));
    }

    #[test]
    fn pose_json_round_trip() {
        let p = RigidPose::from_axis_angle(Vector3::new(0.1, -0.2, 0.3), Vector3::new(1.0, 2.0, 3.0));
        let back = PoseJson::from_pose(&p).to_pose().unwrap();
        assert_eq!(back, p);
        let mut j = PoseJson::from_pose(&p);
        j.r[0] = 2.0;
        assert!(j.to_pose().is_err());
    }
}
