//! Detection metrics: pixel IoU of quadrilaterals, precision/recall at an IoU
//! threshold, keypoint distances and reprojected-pose error.

use alloc::vec::Vec;

use crate::decoding::Detection;
use crate::geometry::{
    reprojection_error, solve_p4p_epnp, solve_p4p_lm, CameraIntrinsics, LmSettings, Point2, RobotModel,
};
use crate::NUM_KEYPOINTS;

/// Four ordered corners in image pixels.
pub type Quad = [(f64, f64); 4];

/// x-coordinates where the horizontal line at `y` crosses the outline.
///
/// An edge counts when exactly one endpoint lies strictly above `y`.
fn crossings(q: &Quad, y: f64, out: &mut Vec<f64>) {
    out.clear();
    for k in 0..4 {
        let (x1, y1) = q[k];
        let (x2, y2) = q[(k + 1) % 4];
        if (y1 > y) != (y2 > y) {
            out.push(x1 + (y - y1) * (x2 - x1) / (y2 - y1));
        }
    }
    out.sort_by(f64::total_cmp);
}

/// Even-odd membership of `px` given sorted crossings: odd count of crossings right of `px`.
fn inside(xs: &[f64], px: f64) -> bool {
    xs.iter().filter(|&&x| x > px).count() % 2 == 1
}

/// Pixel range `[lo, hi)` covering the quad's bounding box, clipped to `[0, n)`.
fn span(lo: f64, hi: f64, n: usize) -> (usize, usize) {
    let a = libm::floor(lo - 1.0).max(0.0);
    let b = libm::ceil(hi + 1.0).max(0.0);
    ((a as usize).min(n), (b as usize).min(n))
}

fn bbox(q: &Quad) -> (f64, f64, f64, f64) {
    q.iter().fold(
        (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        |(x0, y0, x1, y1), &(x, y)| (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
    )
}

/// Number of pixels of an `h × w` grid whose centers lie inside `q` (even-odd rule).
pub fn quad_area_pixels(q: &Quad, res: (usize, usize)) -> usize {
    let (x0, y0, x1, y1) = bbox(q);
    let (i0, i1) = span(y0, y1, res.0);
    let (j0, j1) = span(x0, x1, res.1);
    let mut xs = Vec::with_capacity(4);
    let mut n = 0;
    for i in i0..i1 {
        crossings(q, i as f64 + 0.5, &mut xs);
        n += (j0..j1).filter(|&j| inside(&xs, j as f64 + 0.5)).count();
    }
    n
}

/// Pixel IoU of two quads rasterized at `res = (h, w)`. Both empty gives 0.
pub fn quad_iou(pred: &Quad, gt: &Quad, res: (usize, usize)) -> f64 {
    if pred.iter().chain(gt).any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return 0.0;
    }
    let (a0, b0, a1, b1) = bbox(pred);
    let (c0, d0, c1, d1) = bbox(gt);
    let (i0, i1) = span(b0.min(d0), b1.max(d1), res.0);
    let (j0, j1) = span(a0.min(c0), a1.max(c1), res.1);
    let (mut xp, mut xg) = (Vec::with_capacity(4), Vec::with_capacity(4));
    let (mut inter, mut union) = (0usize, 0usize);
    for i in i0..i1 {
        let y = i as f64 + 0.5;
        crossings(pred, y, &mut xp);
        crossings(gt, y, &mut xg);
        if xp.is_empty() && xg.is_empty() {
            continue;
        }
        for j in j0..j1 {
            let x = j as f64 + 0.5;
            let (p, g) = (inside(&xp, x), inside(&xg, x));
            inter += (p && g) as usize;
            union += (p || g) as usize;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// `(detection index, ground-truth index, IoU)` of every true positive.
    pub matches: Vec<(usize, usize, f64)>,
}

impl MatchResult {
    pub fn mean_iou(&self) -> Option<f64> {
        mean(self.matches.iter().map(|m| m.2))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Greedy one-to-one matching by descending IoU; a pair qualifies when IoU > `t`.
///
/// Each ground truth takes its best remaining detection; every other detection,
/// including every incomplete one, is a false positive.
pub fn match_and_count(dets: &[Detection], gts: &[Quad], t: f64, res: (usize, usize)) -> MatchResult {
    let mut pairs = Vec::new();
    for (di, d) in dets.iter().enumerate() {
        let Some(q) = d.quad() else { continue };
        for (gi, g) in gts.iter().enumerate() {
            let iou = quad_iou(&q, g, res);
            if iou > t {
                pairs.push((di, gi, iou));
            }
        }
    }
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut det_used = alloc::vec![false; dets.len()];
    let mut gt_used = alloc::vec![false; gts.len()];
    let mut matches = Vec::new();
    for (di, gi, iou) in pairs {
        if !det_used[di] && !gt_used[gi] {
            det_used[di] = true;
            gt_used[gi] = true;
            matches.push((di, gi, iou));
        }
    }
    let tp = matches.len();
    MatchResult {
        tp,
        fp: dets.len() - tp,
        fn_: gts.len() - tp,
        matches,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointDistance {
    pub per_channel: [f64; NUM_KEYPOINTS],
    /// Mean of the per-channel means.
    pub mean: f64,
}

/// Euclidean keypoint error over matched pairs. `None` when nothing is matched.
pub fn keypoint_distance(dets: &[Detection], gts: &[Quad], matches: &[(usize, usize, f64)]) -> Option<KeypointDistance> {
    let pairs: Vec<(Quad, Quad)> = matches
        .iter()
        .filter_map(|&(di, gi, _)| dets[di].quad().map(|q| (q, gts[gi])))
        .collect();
    keypoint_distance_pairs(&pairs)
}

/// [`keypoint_distance`] on `(predicted, ground truth)` quads.
pub fn keypoint_distance_pairs(pairs: &[(Quad, Quad)]) -> Option<KeypointDistance> {
    if pairs.is_empty() {
        return None;
    }
    let per_channel: [f64; NUM_KEYPOINTS] = core::array::from_fn(|k| {
        let s: f64 = pairs
            .iter()
            .map(|(p, g)| libm::hypot(p[k].0 - g[k].0, p[k].1 - g[k].1))
            .sum();
        s / pairs.len() as f64
    });
    Some(KeypointDistance {
        per_channel,
        mean: per_channel.iter().sum::<f64>() / NUM_KEYPOINTS as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoseSolver {
    Lm,
    Epnp,
}

/// Reprojection error of the pose fitted to `observed`, measured against `reference`.
pub fn pose_reproj_error(
    observed: &Quad,
    reference: &Quad,
    model: &RobotModel,
    cam: &CameraIntrinsics,
    solver: PoseSolver,
) -> Option<f64> {
    let pts = model.keypoints();
    let obs: Vec<Point2> = observed.iter().map(|&(x, y)| Point2::new(x, y)).collect();
    let refp: Vec<Point2> = reference.iter().map(|&(x, y)| Point2::new(x, y)).collect();
    let pose = match solver {
        PoseSolver::Lm => solve_p4p_lm(&pts, &obs, cam, None, &LmSettings::default()).ok()?.pose,
        PoseSolver::Epnp => solve_p4p_epnp(&pts, &obs, cam).ok()?,
    };
    reprojection_error(&pose, &pts, &refp, cam).ok().filter(|e| e.is_finite())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEval {
    pub mean: Option<f64>,
    pub evaluated: usize,
    pub failures: usize,
}

/// Solve each matched detection's pose and compare its reprojection with the ground truth.
pub fn pose_reproj_eval(
    dets: &[Detection],
    gts: &[Quad],
    matches: &[(usize, usize, f64)],
    model: &RobotModel,
    cam: &CameraIntrinsics,
    solver: PoseSolver,
) -> PoseEval {
    let mut errs = Vec::new();
    let mut failures = 0;
    for &(di, gi, _) in matches {
        let Some(q) = dets[di].quad() else { continue };
        match pose_reproj_error(&q, &gts[gi], model, cam, solver) {
            Some(e) => errs.push(e),
            None => failures += 1,
        }
    }
    PoseEval {
        mean: mean(errs.iter().copied()),
        evaluated: errs.len(),
        failures,
    }
}

/// Aggregate metrics over a set of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub mean_iou: Option<f64>,
    pub per_channel_dist: Option<[f64; NUM_KEYPOINTS]>,
    pub mean_dist: Option<f64>,
    pub pose_reproj_err: Option<f64>,
    pub pose_failures: usize,
}

/// One frame's detections and ground-truth quads.
pub struct Frame<'a> {
    pub detections: &'a [Detection],
    pub ground_truth: &'a [Quad],
    pub res: (usize, usize),
}

/// Metrics over `frames`; frame order fixes the reduction order.
pub fn evaluate(frames: &[Frame<'_>], t: f64, pose: Option<(&RobotModel, &CameraIntrinsics)>) -> EvalReport {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let mut ious = Vec::new();
    let mut pairs = Vec::new();
    let mut pose_errs = Vec::new();
    let mut pose_failures = 0;
    for f in frames {
        let m = match_and_count(f.detections, f.ground_truth, t, f.res);
        tp += m.tp;
        fp += m.fp;
        fn_ += m.fn_;
        for &(di, gi, iou) in &m.matches {
            ious.push(iou);
            let q = f.detections[di].quad().expect("matched detections are complete");
            pairs.push((q, f.ground_truth[gi]));
            if let Some((model, cam)) = pose {
                match pose_reproj_error(&q, &f.ground_truth[gi], model, cam, PoseSolver::Lm) {
                    Some(e) => pose_errs.push(e),
                    None => pose_failures += 1,
                }
            }
        }
    }
    let dist = keypoint_distance_pairs(&pairs);
    EvalReport {
        tp,
        fp,
        fn_,
        precision: (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64),
        recall: (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64),
        mean_iou: mean(ious.into_iter()),
        per_channel_dist: dist.map(|d| d.per_channel),
        mean_dist: dist.map(|d| d.mean),
        pose_reproj_err: mean(pose_errs.into_iter()),
        pose_failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::DetectedKeypoint;

    fn det(q: Quad) -> Detection {
        Detection::new(q.map(|(x, y)| Some(DetectedKeypoint { x, y, score: 1.0 })), 1.0)
    }

    fn square(x: f64, y: f64, s: f64) -> Quad {
        [(x, y), (x + s, y), (x + s, y + s), (x, y + s)]
    }

    #[test]
    fn iou_basics() {
        let a = square(10.0, 10.0, 10.0);
        assert_eq!(quad_iou(&a, &a, (50, 50)), 1.0);
        assert_eq!(quad_iou(&a, &square(30.0, 30.0, 5.0), (50, 50)), 0.0);
        let b = square(15.0, 10.0, 10.0);
        assert!((quad_iou(&a, &b, (50, 50)) - 50.0 / 150.0).abs() < 1e-12);
        assert_eq!(quad_area_pixels(&a, (50, 50)), 100);
        // empty (degenerate) quads
        let z = [(1.0, 1.0); 4];
        assert_eq!(quad_iou(&z, &z, (10, 10)), 0.0);
        // cyclic rotation
        let r = [a[1], a[2], a[3], a[0]];
        assert_eq!(quad_iou(&a, &b, (50, 50)), quad_iou(&r, &b, (50, 50)));
    }

    #[test]
    fn counting_fixtures() {
        let g = square(10.0, 10.0, 40.0);
        let res = (100, 100);
        let r = match_and_count(&[det(g)], &[g], 0.8, res);
        assert_eq!((r.tp, r.fp, r.fn_), (1, 0, 0));

        let near = square(11.0, 10.0, 40.0);
        let r = match_and_count(&[det(near), det(g)], &[g], 0.8, res);
        assert_eq!((r.tp, r.fp, r.fn_), (1, 1, 0));
        assert_eq!(r.matches[0].0, 1, "higher IoU wins");

        let poor = square(22.0, 10.0, 40.0); // IoU = 28/52
        let r = match_and_count(&[det(poor)], &[g], 0.8, res);
        assert_eq!((r.tp, r.fp, r.fn_), (0, 1, 1));

        let mut partial = det(g);
        partial.keypoints[3] = None;
        let partial = Detection::new(partial.keypoints, 1.0);
        let r = match_and_count(&[partial], &[g], 0.8, res);
        assert_eq!((r.tp, r.fp, r.fn_), (0, 1, 1));
    }

    #[test]
    fn distances() {
        let g = square(10.0, 10.0, 40.0);
        let shifted = g.map(|(x, y)| (x + 3.0, y + 4.0));
        let d = keypoint_distance_pairs(&[(shifted, g)]).unwrap();
        assert!(d.per_channel.iter().all(|&v| (v - 5.0).abs() < 1e-12));
        assert!((d.mean - 5.0).abs() < 1e-12);

        let mut p = g;
        for (k, v) in p.iter_mut().enumerate() {
            v.0 += (k + 1) as f64;
        }
        let d = keypoint_distance_pairs(&[(p, g)]).unwrap();
        assert_eq!(d.per_channel, [1.0, 2.0, 3.0, 4.0]);
        assert_eq!(d.mean, 2.5);
        assert!(keypoint_distance_pairs(&[]).is_none());
    }
}
