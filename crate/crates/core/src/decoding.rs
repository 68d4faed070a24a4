//! From predicted heatmaps and PAFs to ordered quadrilateral detections.
//!
//! Map coordinates use the pixel-center convention: pixel `(i, j)` covers
//! `[j, j + 1) × [i, i + 1)` and has center `(j + 0.5, i + 0.5)`. A keypoint
//! at input pixel `(x, y)` sits at map coordinate `(x / stride, y / stride)`.

use alloc::vec;
use alloc::vec::Vec;
use thiserror::Error;

use crate::network::{forward, NetworkConfig, NetworkError, ParameterStore};
use crate::tensor::{ImageBuffer, Tensor, TensorError};
use crate::{CONNECTIONS, NUM_KEYPOINTS, PAF_CHANNELS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("invalid decode parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("connection endpoints coincide")]
    DegenerateConnection,
    #[error("map shape: {0}")]
    Shape(&'static str),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// A keypoint hypothesis in map coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub channel: usize,
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConnectionScore {
    /// Mean alignment of the sampled field with the segment direction, in `[-1, 1]`.
    pub paf_score: f64,
    /// Fraction of samples whose alignment exceeds the threshold.
    pub valid_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeParams {
    /// NMS window side, odd and at least 3.
    pub window: usize,
    pub peak_threshold: f64,
    pub n_samples: usize,
    pub alignment_threshold: f64,
    pub min_paf_score: f64,
    pub min_valid_fraction: f64,
    /// Input pixels per map pixel.
    pub stride: f64,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            window: 5,
            peak_threshold: 0.5,
            n_samples: 10,
            alignment_threshold: 0.05,
            min_paf_score: 0.05,
            min_valid_fraction: 0.8,
            stride: 4.0,
        }
    }
}

impl DecodeParams {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(DecodeError::InvalidParameter("window must be odd and at least 3"));
        }
        if self.n_samples < 2 {
            return Err(DecodeError::InvalidParameter("need at least two samples per connection"));
        }
        if !(self.stride > 0.0) || !self.peak_threshold.is_finite() {
            return Err(DecodeError::InvalidParameter("stride must be positive, threshold finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectedKeypoint {
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

/// One assembled UGV; coordinates in image pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub keypoints: [Option<DetectedKeypoint>; NUM_KEYPOINTS],
    pub total_score: f64,
    /// All four keypoints present.
    pub complete: bool,
    /// Complete but the 1→2→3→4 outline crosses itself.
    pub degenerate: bool,
}

impl Detection {
    pub fn new(keypoints: [Option<DetectedKeypoint>; NUM_KEYPOINTS], total_score: f64) -> Self {
        let complete = keypoints.iter().all(Option::is_some);
        let degenerate = complete && {
            let p: [(f64, f64); 4] = core::array::from_fn(|k| {
                let kp = keypoints[k].expect("complete");
                (kp.x, kp.y)
            });
            segments_cross(p[0], p[1], p[2], p[3]) || segments_cross(p[1], p[2], p[3], p[0])
        };
        Self {
            keypoints,
            total_score,
            complete,
            degenerate,
        }
    }

    pub fn num_keypoints(&self) -> usize {
        self.keypoints.iter().flatten().count()
    }

    /// Corner positions when complete.
    pub fn quad(&self) -> Option<[(f64, f64); 4]> {
        if !self.complete {
            return None;
        }
        Some(core::array::from_fn(|k| {
            let kp = self.keypoints[k].expect("complete");
            (kp.x, kp.y)
        }))
    }

    fn map_coords(mut self, f: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        for kp in self.keypoints.iter_mut().flatten() {
            (kp.x, kp.y) = f(kp.x, kp.y);
        }
        Detection::new(self.keypoints, self.total_score)
    }
}

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

/// Proper crossing of segments `ab` and `cd`.
fn segments_cross(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let (d1, d2) = (orient(a, b, c), orient(a, b, d));
    let (d3, d4) = (orient(c, d, a), orient(c, d, b));
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

fn check_maps(heat: &Tensor, min_channels: usize) -> Result<(usize, usize, usize), DecodeError> {
    let (c, h, w) = heat.chw()?;
    if c < min_channels {
        return Err(DecodeError::Shape("too few channels"));
    }
    Ok((c, h, w))
}

/// Quadratic peak offset from three samples, capped at ±0.5.
fn parabola_offset(l: f32, c: f32, r: f32) -> f64 {
    let (l, c, r) = (l as f64, c as f64, r as f64);
    let den = l - 2.0 * c + r;
    if den >= 0.0 {
        return 0.0;
    }
    (0.5 * (l - r) / den).clamp(-0.5, 0.5)
}

/// Local maxima of keypoint channels 0–3.
///
/// A pixel is a candidate when it reaches `peak_threshold` and no value in its
/// `window × window` neighbourhood exceeds it. 8-connected candidates of equal
/// value form a plateau; a plateau counts as a peak only when some member's
/// window holds a strictly smaller value, so flat maps yield nothing. Single
/// pixel peaks are refined by a separable quadratic fit on the 3×3
/// neighbourhood; larger plateaus report their centroid.
pub fn nms_peaks(heatmap: &Tensor, window: usize, peak_threshold: f64) -> Result<Vec<Candidate>, DecodeError> {
    if window < 3 || window % 2 == 0 {
        return Err(DecodeError::InvalidParameter("window must be odd and at least 3"));
    }
    let (_, h, w) = check_maps(heatmap, NUM_KEYPOINTS)?;
    let r = window / 2;
    let mut out = Vec::new();
    for ch in 0..NUM_KEYPOINTS {
        let plane = heatmap.channel(ch);
        let at = |i: usize, j: usize| plane[i * w + j];
        let win = |i: usize, j: usize| {
            let (i0, i1) = (i.saturating_sub(r), (i + r).min(h - 1));
            let (j0, j1) = (j.saturating_sub(r), (j + r).min(w - 1));
            (i0..=i1).flat_map(move |y| (j0..=j1).map(move |x| (y, x)))
        };
        let mut is_cand = vec![false; h * w];
        for i in 0..h {
            for j in 0..w {
                let v = at(i, j);
                if (v as f64) >= peak_threshold && win(i, j).all(|(y, x)| at(y, x) <= v) {
                    is_cand[i * w + j] = true;
                }
            }
        }
        let mut seen = vec![false; h * w];
        let mut stack = Vec::new();
        for start in 0..h * w {
            if !is_cand[start] || seen[start] {
                continue;
            }
            let v = plane[start];
            seen[start] = true;
            stack.push(start);
            let mut members = Vec::new();
            while let Some(p) = stack.pop() {
                members.push(p);
                let (i, j) = (p / w, p % w);
                for y in i.saturating_sub(1)..=(i + 1).min(h - 1) {
                    for x in j.saturating_sub(1)..=(j + 1).min(w - 1) {
                        let q = y * w + x;
                        if is_cand[q] && !seen[q] && plane[q] == v {
                            seen[q] = true;
                            stack.push(q);
                        }
                    }
                }
            }
            let strict = members.iter().any(|&p| win(p / w, p % w).any(|(y, x)| at(y, x) < v));
            if !strict {
                continue;
            }
            let (x, y) = if members.len() == 1 {
                let (i, j) = (start / w, start % w);
                let dx = if j > 0 && j + 1 < w { parabola_offset(at(i, j - 1), v, at(i, j + 1)) } else { 0.0 };
                let dy = if i > 0 && i + 1 < h { parabola_offset(at(i - 1, j), v, at(i + 1, j)) } else { 0.0 };
                (j as f64 + 0.5 + dx, i as f64 + 0.5 + dy)
            } else {
                let n = members.len() as f64;
                let sx: f64 = members.iter().map(|&p| (p % w) as f64 + 0.5).sum();
                let sy: f64 = members.iter().map(|&p| (p / w) as f64 + 0.5).sum();
                (sx / n, sy / n)
            };
            out.push(Candidate {
                channel: ch,
                x,
                y,
                score: v as f64,
            });
        }
    }
    Ok(out)
}

/// Bilinear sample of one channel at continuous map coordinate `(x, y)`, edge clamped.
fn bilinear(plane: &[f32], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let fx = (x - 0.5).clamp(0.0, (w - 1) as f64);
    let fy = (y - 0.5).clamp(0.0, (h - 1) as f64);
    let (j0, i0) = (fx as usize, fy as usize);
    let (j1, i1) = ((j0 + 1).min(w - 1), (i0 + 1).min(h - 1));
    let (tx, ty) = (fx - j0 as f64, fy - i0 as f64);
    let v = |i: usize, j: usize| plane[i * w + j] as f64;
    let top = v(i0, j0) * (1.0 - tx) + v(i0, j1) * tx;
    let bot = v(i1, j0) * (1.0 - tx) + v(i1, j1) * tx;
    top * (1.0 - ty) + bot * ty
}

/// Line integral of connection `conn`'s field along `a → b`.
pub fn score_connection(
    a: &Candidate,
    b: &Candidate,
    paf: &Tensor,
    conn: usize,
    n_samples: usize,
    alignment_threshold: f64,
) -> Result<ConnectionScore, DecodeError> {
    let (_, h, w) = check_maps(paf, 2 * conn + 2)?;
    if n_samples < 2 {
        return Err(DecodeError::InvalidParameter("need at least two samples per connection"));
    }
    let (vx, vy) = (b.x - a.x, b.y - a.y);
    let len = libm::sqrt(vx * vx + vy * vy);
    if !(len > 1e-9) {
        return Err(DecodeError::DegenerateConnection);
    }
    let (ux, uy) = (vx / len, vy / len);
    let (px, py) = (paf.channel(2 * conn), paf.channel(2 * conn + 1));
    let (mut sum, mut valid) = (0.0, 0usize);
    for i in 0..n_samples {
        let t = i as f64 / (n_samples - 1) as f64;
        let (x, y) = (a.x + t * vx, a.y + t * vy);
        let d = bilinear(px, h, w, x, y) * ux + bilinear(py, h, w, x, y) * uy;
        sum += d;
        if d > alignment_threshold {
            valid += 1;
        }
    }
    Ok(ConnectionScore {
        paf_score: sum / n_samples as f64,
        valid_fraction: valid as f64 / n_samples as f64,
    })
}

/// Greedy assembly of candidates into detections.
///
/// All scored pairs of every edge type meeting the acceptance thresholds are
/// visited in descending score order. A pair is accepted when neither endpoint
/// already served that edge type and joining it leaves at most one candidate per
/// channel in the resulting detection. Candidates without any accepted edge are
/// dropped. Output coordinates are map coordinates times `params.stride`;
/// detections are sorted by descending total score.
pub fn assemble(candidates: &[Candidate], paf: &Tensor, params: &DecodeParams) -> Result<Vec<Detection>, DecodeError> {
    params.validate()?;
    check_maps(paf, PAF_CHANNELS)?;
    struct Edge {
        score: f64,
        conn: usize,
        a: usize,
        b: usize,
    }
    let mut edges = Vec::new();
    for (conn, &(s, t)) in CONNECTIONS.iter().enumerate() {
        for (ia, a) in candidates.iter().enumerate().filter(|(_, c)| c.channel == s) {
            for (ib, b) in candidates.iter().enumerate().filter(|(_, c)| c.channel == t) {
                let Ok(sc) = score_connection(a, b, paf, conn, params.n_samples, params.alignment_threshold) else {
                    continue;
                };
                if sc.paf_score >= params.min_paf_score && sc.valid_fraction >= params.min_valid_fraction {
                    edges.push(Edge {
                        score: sc.paf_score,
                        conn,
                        a: ia,
                        b: ib,
                    });
                }
            }
        }
    }
    edges.sort_by(|x, y| {
        y.score
            .total_cmp(&x.score)
            .then(x.conn.cmp(&y.conn))
            .then(x.a.cmp(&y.a))
            .then(x.b.cmp(&y.b))
    });

    struct Group {
        slots: [Option<usize>; NUM_KEYPOINTS],
        edge_score: f64,
        alive: bool,
    }
    let mut groups: Vec<Group> = Vec::new();
    let mut owner: Vec<Option<usize>> = vec![None; candidates.len()];
    let mut used_src = vec![[false; NUM_KEYPOINTS]; candidates.len()];
    let mut used_dst = vec![[false; NUM_KEYPOINTS]; candidates.len()];

    for e in &edges {
        if used_src[e.a][e.conn] || used_dst[e.b][e.conn] {
            continue;
        }
        let (ca, cb) = (candidates[e.a].channel, candidates[e.b].channel);
        let accepted = match (owner[e.a], owner[e.b]) {
            (None, None) => {
                let mut slots = [None; NUM_KEYPOINTS];
                slots[ca] = Some(e.a);
                slots[cb] = Some(e.b);
                groups.push(Group {
                    slots,
                    edge_score: e.score,
                    alive: true,
                });
                owner[e.a] = Some(groups.len() - 1);
                owner[e.b] = Some(groups.len() - 1);
                true
            }
            (Some(g), None) | (None, Some(g)) => {
                let (free, ch) = if owner[e.a].is_none() { (e.a, ca) } else { (e.b, cb) };
                if groups[g].slots[ch].is_none() {
                    groups[g].slots[ch] = Some(free);
                    groups[g].edge_score += e.score;
                    owner[free] = Some(g);
                    true
                } else {
                    false
                }
            }
            (Some(g1), Some(g2)) if g1 == g2 => {
                groups[g1].edge_score += e.score;
                true
            }
            (Some(g1), Some(g2)) => {
                let clash = (0..NUM_KEYPOINTS).any(|k| groups[g1].slots[k].is_some() && groups[g2].slots[k].is_some());
                if clash {
                    false
                } else {
                    let moved = groups[g2].slots;
                    for (k, m) in moved.iter().enumerate() {
                        if let Some(ci) = *m {
                            groups[g1].slots[k] = Some(ci);
                            owner[ci] = Some(g1);
                        }
                    }
                    groups[g1].edge_score += groups[g2].edge_score + e.score;
                    groups[g2].alive = false;
                    true
                }
            }
        };
        if accepted {
            used_src[e.a][e.conn] = true;
            used_dst[e.b][e.conn] = true;
        }
    }

    let mut dets: Vec<Detection> = groups
        .iter()
        .filter(|g| g.alive)
        .map(|g| {
            let kps = g.slots.map(|s| {
                s.map(|ci| {
                    let c = &candidates[ci];
                    DetectedKeypoint {
                        x: c.x * params.stride,
                        y: c.y * params.stride,
                        score: c.score,
                    }
                })
            });
            let kp_score: f64 = kps.iter().flatten().map(|k| k.score).sum();
            Detection::new(kps, kp_score + g.edge_score)
        })
        .collect();
    dets.sort_by(|a, b| b.total_score.total_cmp(&a.total_score));
    Ok(dets)
}

/// NMS followed by assembly on given maps.
pub fn decode_maps(heatmap: &Tensor, paf: &Tensor, params: &DecodeParams) -> Result<Vec<Detection>, DecodeError> {
    params.validate()?;
    let cands = nms_peaks(heatmap, params.window, params.peak_threshold)?;
    assemble(&cands, paf, params)
}

/// Highest-scoring detection, preferring complete ones.
pub fn best_detection(dets: &[Detection]) -> Option<&Detection> {
    dets.iter().max_by(|a, b| {
        (a.complete, a.num_keypoints())
            .cmp(&(b.complete, b.num_keypoints()))
            .then(a.total_score.total_cmp(&b.total_score))
            .then(core::cmp::Ordering::Greater)
    })
}

/// Rescale detections from network-input pixels to raw-image pixels and clamp into the image.
pub fn to_raw_coordinates(dets: Vec<Detection>, input: (usize, usize), raw: (usize, usize)) -> Vec<Detection> {
    let sx = raw.1 as f64 / input.1 as f64;
    let sy = raw.0 as f64 / input.0 as f64;
    let (xmax, ymax) = (raw.1 as f64, raw.0 as f64);
    dets.into_iter()
        .map(|d| d.map_coords(|x, y| ((x * sx).clamp(0.0, xmax), (y * sy).clamp(0.0, ymax))))
        .collect()
}

/// Resize to the network input size, run the network, decode, map back to raw pixels.
pub fn detect(
    img: &ImageBuffer,
    params: &ParameterStore,
    cfg: &NetworkConfig,
    thresholds: &DecodeParams,
) -> Result<Vec<Detection>, DecodeError> {
    thresholds.validate()?;
    let (ih, iw) = cfg.input_size;
    let resized = img.resize_bilinear(ih, iw)?;
    let out = forward(&resized.to_tensor(), params, cfg)?;
    let dets = decode_maps(&out.heatmap, &out.paf, thresholds)?;
    Ok(to_raw_coordinates(dets, (ih, iw), (img.height(), img.width())))
}
