//! Detection and pose overlays drawn onto RGB images.

use image::{Rgb, RgbImage};
use ugvkit_core::geometry::{solve_p4p_lm, CameraIntrinsics, LmSettings, Point2, Point3, RobotModel};

use crate::formats::DetectionRecord;

/// Edge colors in connection order 1→2, 2→3, 3→4, 4→1.
pub const EDGE_COLORS: [[u8; 3]; 4] = [[255, 0, 0], [0, 255, 0], [0, 0, 255], [255, 255, 0]];
/// Axis colors X, Y, Z.
pub const AXIS_COLORS: [[u8; 3]; 3] = [[255, 0, 0], [0, 255, 0], [0, 0, 255]];

fn stamp(img: &mut RgbImage, x: f64, y: f64, radius: f64, c: Rgb<u8>) {
    let r = radius.ceil() as i64;
    let (cx, cy) = (x.floor() as i64, y.floor() as i64);
    for dy in -r..=r {
        for dx in -r..=r {
            let (px, py) = (cx + dx, cy + dy);
            if (dx * dx + dy * dy) as f64 <= radius * radius
                && px >= 0
                && py >= 0
                && (px as u32) < img.width()
                && (py as u32) < img.height()
            {
                img.put_pixel(px as u32, py as u32, c);
            }
        }
    }
}

/// Thick line segment; endpoints far outside the image are fine.
pub fn draw_line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), thickness: f64, color: [u8; 3]) {
    let len = (b.0 - a.0).hypot(b.1 - a.1);
    if !len.is_finite() {
        return;
    }
    let limit = 4.0 * (img.width() + img.height()) as f64;
    let steps = (len.min(limit) * 2.0).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        stamp(img, a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1), thickness / 2.0, Rgb(color));
    }
}

/// Draw each detection's edges, and for complete detections with a camera the
/// robot-frame axes at the robot center.
pub fn draw_detections(img: &mut RgbImage, dets: &[&DetectionRecord], pose: Option<(&CameraIntrinsics, &RobotModel)>) {
    let thickness = (img.width().max(img.height()) as f64 / 400.0).max(2.0);
    for d in dets {
        for (e, color) in EDGE_COLORS.iter().enumerate() {
            if let (Some(a), Some(b)) = (d.kps[e], d.kps[(e + 1) % 4]) {
                draw_line(img, (a[0], a[1]), (b[0], b[1]), thickness, *color);
            }
        }
        for k in d.kps.iter().flatten() {
            stamp(img, k[0], k[1], thickness * 1.5, Rgb([255, 255, 255]));
        }
        let (Some((cam, model)), Some(q)) = (pose, d.to_detection().quad()) else {
            continue;
        };
        let pixels: Vec<Point2> = q.iter().map(|&(x, y)| Point2::new(x, y)).collect();
        let Ok(sol) = solve_p4p_lm(&model.keypoints(), &pixels, cam, None, &LmSettings::default()) else {
            continue;
        };
        let len = 0.5 * model.length.min(model.width);
        let Ok(o) = cam.project(&sol.pose, &Point3::zeros()) else { continue };
        for (axis, color) in AXIS_COLORS.iter().enumerate() {
            let mut tip = Point3::zeros();
            tip[axis] = len;
            if let Ok(p) = cam.project(&sol.pose, &tip) {
                draw_line(img, (o.x, o.y), (p.x, p.y), thickness, *color);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edges_use_their_colors() {
        let mut img = RgbImage::new(100, 100);
        let d = DetectionRecord {
            image_id: "a".into(),
            complete: true,
            kps: [
                Some([20.0, 20.0, 1.0]),
                Some([80.0, 20.0, 1.0]),
                Some([80.0, 80.0, 1.0]),
                Some([20.0, 80.0, 1.0]),
            ],
            score: 4.0,
        };
        draw_detections(&mut img, &[&d], None);
        assert_eq!(img.get_pixel(50, 20).0, EDGE_COLORS[0]);
        assert_eq!(img.get_pixel(80, 50).0, EDGE_COLORS[1]);
        assert_eq!(img.get_pixel(50, 80).0, EDGE_COLORS[2]);
        assert_eq!(img.get_pixel(20, 50).0, EDGE_COLORS[3]);
        assert_eq!(img.get_pixel(50, 50).0, [0, 0, 0]);
    }
}
