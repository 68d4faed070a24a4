//! Ground-truth targets built from annotations, the masked MSE training loss,
//! and background sampling for class balance.
//!
//! Heatmaps are hard binary disks (no Gaussian falloff): one channel per
//! keypoint plus a background channel `clamp(1 - Σ keypoint channels, 0, 1)`.
//! Each directed connection owns two PAF channels holding the unit vector from
//! source to target on every pixel within `width / 2` of the segment.

use alloc::string::String;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::Tensor;
use crate::{CONNECTIONS, HEAT_CHANNELS, NUM_KEYPOINTS, PAF_CHANNELS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncodingError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("balance mask selects no pixels")]
    EmptyMask,
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

/// One image's four ordered keypoints, in pixels of an `width × height` image.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    pub keypoints: [Keypoint; NUM_KEYPOINTS],
}

impl Annotation {
    /// Same keypoints in the pixel frame of a resized `new_w × new_h` image.
    pub fn scaled_to(&self, new_w: usize, new_h: usize) -> Annotation {
        let sx = new_w as f64 / self.width as f64;
        let sy = new_h as f64 / self.height as f64;
        Annotation {
            image_id: self.image_id.clone(),
            width: new_w,
            height: new_h,
            keypoints: self.keypoints.map(|k| Keypoint {
                x: k.x * sx,
                y: k.y * sy,
                visible: k.visible,
            }),
        }
    }

    /// True when every visible keypoint lies inside the image.
    pub fn is_valid(&self) -> bool {
        self.keypoints.iter().filter(|k| k.visible).all(|k| {
            k.x.is_finite()
                && k.y.is_finite()
                && k.x >= 0.0
                && k.y >= 0.0
                && k.x < self.width as f64
                && k.y < self.height as f64
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodeWarning {
    /// Keypoint `k` falls outside the map after striding; treated as invisible.
    KeypointOutsideMap(usize),
    /// Connection `c` joins coincident keypoints; its PAF channels stay zero.
    ZeroLengthConnection(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodeParams {
    /// Input pixels per map pixel.
    pub stride: f64,
    /// Disk radius in map pixels.
    pub radius: f64,
    /// Connection width in map pixels.
    pub paf_width: f64,
}

impl Default for EncodeParams {
    fn default() -> Self {
        Self {
            stride: 4.0,
            radius: 3.0,
            paf_width: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthMaps {
    /// `[5, mh, mw]`
    pub heatmap: Tensor,
    /// `[8, mh, mw]`
    pub paf: Tensor,
    pub stride: f64,
}

impl GroundTruthMaps {
    pub fn map_size(&self) -> (usize, usize) {
        let d = self.heatmap.dims();
        (d[1], d[2])
    }
}

/// Keypoints in map coordinates; `None` for invisible or out-of-map ones.
fn map_keypoints(
    ann: &Annotation,
    mh: usize,
    mw: usize,
    stride: f64,
    warnings: &mut Vec<EncodeWarning>,
) -> [Option<(f64, f64)>; NUM_KEYPOINTS] {
    let mut out = [None; NUM_KEYPOINTS];
    for (k, kp) in ann.keypoints.iter().enumerate() {
        if !kp.visible {
            continue;
        }
        let (x, y) = (kp.x / stride, kp.y / stride);
        if x.is_finite() && y.is_finite() && x >= 0.0 && y >= 0.0 && x < mw as f64 && y < mh as f64 {
            out[k] = Some((x, y));
        } else {
            warnings.push(EncodeWarning::KeypointOutsideMap(k));
        }
    }
    out
}

fn check_dims(mh: usize, mw: usize, stride: f64) -> Result<(), EncodingError> {
    if mh == 0 || mw == 0 {
        return Err(EncodingError::InvalidParameter("map size must be positive"));
    }
    if !(stride > 0.0) {
        return Err(EncodingError::InvalidParameter("stride must be positive"));
    }
    Ok(())
}

/// Binary-disk heatmap `[5, mh, mw]`; annotation coordinates are in input pixels.
pub fn encode_heatmap(
    ann: &Annotation,
    mh: usize,
    mw: usize,
    stride: f64,
    radius: f64,
) -> Result<(Tensor, Vec<EncodeWarning>), EncodingError> {
    check_dims(mh, mw, stride)?;
    if !(radius >= 1.0) {
        return Err(EncodingError::InvalidParameter("radius must be at least 1"));
    }
    let mut warnings = Vec::new();
    let kps = map_keypoints(ann, mh, mw, stride, &mut warnings);
    let mut heat = Tensor::zeros_chw(HEAT_CHANNELS, mh, mw);
    let r2 = radius * radius;
    for (k, kp) in kps.iter().enumerate() {
        let Some((x, y)) = *kp else { continue };
        let plane = heat.channel_mut(k);
        let i0 = libm::floor(y - radius - 0.5).max(0.0) as usize;
        let i1 = (libm::ceil(y + radius) as usize).min(mh - 1);
        let j0 = libm::floor(x - radius - 0.5).max(0.0) as usize;
        let j1 = (libm::ceil(x + radius) as usize).min(mw - 1);
        for i in i0..=i1 {
            let dy = i as f64 + 0.5 - y;
            for j in j0..=j1 {
                let dx = j as f64 + 0.5 - x;
                if dx * dx + dy * dy <= r2 {
                    plane[i * mw + j] = 1.0;
                }
            }
        }
    }
    let plane = mh * mw;
    let (fg, bg) = heat.data_mut().split_at_mut(NUM_KEYPOINTS * plane);
    for (p, b) in bg.iter_mut().enumerate() {
        let sum: f32 = (0..NUM_KEYPOINTS).map(|k| fg[k * plane + p]).sum();
        *b = (1.0 - sum).clamp(0.0, 1.0);
    }
    Ok((heat, warnings))
}

/// Part affinity fields `[8, mh, mw]`; connection `c` occupies channels `2c, 2c + 1`.
pub fn encode_paf(
    ann: &Annotation,
    mh: usize,
    mw: usize,
    stride: f64,
    width: f64,
) -> Result<(Tensor, Vec<EncodeWarning>), EncodingError> {
    check_dims(mh, mw, stride)?;
    if !(width >= 1.0) {
        return Err(EncodingError::InvalidParameter("connection width must be at least 1"));
    }
    let mut warnings = Vec::new();
    let kps = map_keypoints(ann, mh, mw, stride, &mut warnings);
    let mut paf = Tensor::zeros_chw(PAF_CHANNELS, mh, mw);
    let half = width / 2.0;
    let plane = mh * mw;
    for (c, &(s, t)) in CONNECTIONS.iter().enumerate() {
        let (Some(a), Some(b)) = (kps[s], kps[t]) else { continue };
        let (vx, vy) = (b.0 - a.0, b.1 - a.1);
        let len = libm::sqrt(vx * vx + vy * vy);
        if len < 1e-9 {
            warnings.push(EncodeWarning::ZeroLengthConnection(c));
            continue;
        }
        let (ux, uy) = (vx / len, vy / len);
        let (fx, fy) = (ux as f32, uy as f32);
        let i0 = libm::floor(a.1.min(b.1) - half - 0.5).max(0.0) as usize;
        let i1 = (libm::ceil(a.1.max(b.1) + half) as usize).min(mh - 1);
        let j0 = libm::floor(a.0.min(b.0) - half - 0.5).max(0.0) as usize;
        let j1 = (libm::ceil(a.0.max(b.0) + half) as usize).min(mw - 1);
        let data = paf.data_mut();
        for i in i0..=i1 {
            for j in j0..=j1 {
                let (px, py) = (j as f64 + 0.5, i as f64 + 0.5);
                if point_segment_distance(px, py, a, b) <= half {
                    data[2 * c * plane + i * mw + j] = fx;
                    data[(2 * c + 1) * plane + i * mw + j] = fy;
                }
            }
        }
    }
    Ok((paf, warnings))
}

pub(crate) fn point_segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 {
        (((px - a.0) * vx + (py - a.1) * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (dx, dy) = (px - (a.0 + t * vx), py - (a.1 + t * vy));
    libm::sqrt(dx * dx + dy * dy)
}

/// Heatmap and PAF targets for one annotation.
pub fn encode_ground_truth(
    ann: &Annotation,
    mh: usize,
    mw: usize,
    params: &EncodeParams,
) -> Result<(GroundTruthMaps, Vec<EncodeWarning>), EncodingError> {
    let (heatmap, mut warnings) = encode_heatmap(ann, mh, mw, params.stride, params.radius)?;
    let (paf, w2) = encode_paf(ann, mh, mw, params.stride, params.paf_width)?;
    // Out-of-map keypoints are reported by both encoders; keep one copy.
    warnings.extend(w2.into_iter().filter(|w| matches!(w, EncodeWarning::ZeroLengthConnection(_))));
    Ok((
        GroundTruthMaps {
            heatmap,
            paf,
            stride: params.stride,
        },
        warnings,
    ))
}

/// Background sampling rate after `epoch` completed epochs: 5 % plus 2 % per epoch, capped at 1.
pub fn balance_rate(epoch: u32) -> f64 {
    (0.05 + 0.02 * epoch as f64).min(1.0)
}

/// Per-pixel loss mask: foreground always kept, background sampled at [`balance_rate`].
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceMask {
    /// `[mh, mw]` of zeros and ones.
    pub mask: Tensor,
    pub epoch: u32,
    pub rate: f64,
}

impl BalanceMask {
    /// Mask selecting every pixel.
    pub fn all(mh: usize, mw: usize) -> Self {
        Self {
            mask: Tensor::full(&[mh, mw], 1.0).expect("positive map size"),
            epoch: 0,
            rate: 1.0,
        }
    }

    pub fn selected(&self) -> usize {
        self.mask.data().iter().filter(|&&v| v != 0.0).count()
    }
}

/// Sample the loss mask for `epoch`. Deterministic in `(epoch, seed)`.
pub fn balance_mask(epoch: u32, gt: &GroundTruthMaps, seed: u64) -> BalanceMask {
    let (mh, mw) = gt.map_size();
    let plane = mh * mw;
    let rate = balance_rate(epoch);
    let heat = gt.heatmap.data();
    let paf = gt.paf.data();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut mask = Tensor::zeros(&[mh, mw]).expect("positive map size");
    for (p, m) in mask.data_mut().iter_mut().enumerate() {
        let fg = (0..NUM_KEYPOINTS).any(|k| heat[k * plane + p] > 0.0)
            || (0..PAF_CHANNELS).any(|c| paf[c * plane + p] != 0.0);
        // Draw for every pixel so the stream does not depend on the foreground layout.
        let keep = rng.random_bool(rate);
        *m = if fg || keep { 1.0 } else { 0.0 };
    }
    BalanceMask { mask, epoch, rate }
}

/// Balancing weights of the two loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub heat: f64,
    pub paf: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { heat: 1.0, paf: 0.1 }
    }
}

/// Masked MSE over heatmap and PAF channels.
///
/// `w_p / (n·s) · Σ (p − p̂)² + w_q / (n·t) · Σ (q − q̂)²` where sums run over
/// mask-selected pixels, `n` is the number of selected pixels, `s = 5` and `t = 8`.
pub fn loss(
    pred_heat: &Tensor,
    gt_heat: &Tensor,
    pred_paf: &Tensor,
    gt_paf: &Tensor,
    mask: &BalanceMask,
    weights: LossWeights,
) -> Result<f64, EncodingError> {
    let shape_err = |what: &str, a: &[usize], b: &[usize]| {
        EncodingError::Shape(alloc::format!("{what}: {a:?} vs {b:?}"))
    };
    if pred_heat.dims() != gt_heat.dims() {
        return Err(shape_err("heatmap", pred_heat.dims(), gt_heat.dims()));
    }
    if pred_paf.dims() != gt_paf.dims() {
        return Err(shape_err("paf", pred_paf.dims(), gt_paf.dims()));
    }
    let (s, mh, mw) = gt_heat.chw().map_err(|e| EncodingError::Shape(alloc::format!("{e}")))?;
    let (t, ph, pw) = gt_paf.chw().map_err(|e| EncodingError::Shape(alloc::format!("{e}")))?;
    if (ph, pw) != (mh, mw) || mask.mask.dims() != [mh, mw] {
        return Err(shape_err("mask/map size", mask.mask.dims(), &[mh, mw]));
    }
    let m = mask.mask.data();
    let n = mask.selected();
    if n == 0 {
        return Err(EncodingError::EmptyMask);
    }
    let masked_sse = |pred: &Tensor, gt: &Tensor, channels: usize| -> f64 {
        let plane = mh * mw;
        let (pd, gd) = (pred.data(), gt.data());
        let mut acc = 0.0f64;
        for c in 0..channels {
            for p in 0..plane {
                if m[p] != 0.0 {
                    let d = pd[c * plane + p] as f64 - gd[c * plane + p] as f64;
                    acc += d * d;
                }
            }
        }
        acc
    };
    let n = n as f64;
    let heat_term = weights.heat / (n * s as f64) * masked_sse(pred_heat, gt_heat, s);
    let paf_term = weights.paf / (n * t as f64) * masked_sse(pred_paf, gt_paf, t);
    Ok(heat_term + paf_term)
}
