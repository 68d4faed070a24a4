//! The network topology, written once against [`Backend`] so that execution,
//! shape inference, parameter layout and FLOP counting cannot drift apart.
//!
//! Resolution levels: level 0 is the output map (input / 4); level `l + 1` has
//! `ceil(h / 2) × ceil(w / 2)` of level `l`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{NetworkConfig, NetworkError};

pub(crate) trait Backend {
    type Map: Clone;

    fn shape(&self, x: &Self::Map) -> (usize, usize, usize);
    /// `k × k` convolution with bias, padding `k / 2`; parameters live under `path`.
    fn conv(
        &mut self,
        path: &str,
        x: &Self::Map,
        cout: usize,
        k: usize,
        stride: usize,
        groups: usize,
    ) -> Result<Self::Map, NetworkError>;
    fn relu(&mut self, x: Self::Map) -> Self::Map;
    fn add(&mut self, a: Self::Map, b: &Self::Map) -> Result<Self::Map, NetworkError>;
    fn concat(&mut self, parts: &[Self::Map]) -> Result<Self::Map, NetworkError>;
    fn split_half(&mut self, x: &Self::Map) -> Result<(Self::Map, Self::Map), NetworkError>;
    fn shuffle(&mut self, x: &Self::Map, groups: usize) -> Result<Self::Map, NetworkError>;
    fn duc(&mut self, x: &Self::Map, d: usize) -> Result<Self::Map, NetworkError>;
    fn crop(&mut self, x: &Self::Map, h: usize, w: usize) -> Result<Self::Map, NetworkError>;
    fn max_pool2(&mut self, x: &Self::Map) -> Result<Self::Map, NetworkError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShuffleBlockKind {
    /// Two branches, both stride 2; output has `cout` channels at half resolution.
    SpatialDown,
    /// Channel split, one branch transformed; shape preserving.
    Basic,
}

/// Improved shuffle block. `improved` drops the ReLU after each branch's first 1×1 conv.
pub(crate) fn shuffle_block<B: Backend>(
    be: &mut B,
    path: &str,
    x: &B::Map,
    kind: ShuffleBlockKind,
    cout: usize,
    improved: bool,
) -> Result<B::Map, NetworkError> {
    let (cin, _, _) = be.shape(x);
    let pw1 = |be: &mut B, x: &B::Map, c: usize| -> Result<B::Map, NetworkError> {
        let y = be.conv(&format!("{path}.right.pw1"), x, c, 1, 1, 1)?;
        Ok(if improved { y } else { be.relu(y) })
    };
    let merged = match kind {
        ShuffleBlockKind::SpatialDown => {
            if cout % 2 != 0 {
                return Err(NetworkError::Config(format!("{path}: odd output width {cout}")));
            }
            let bf = cout / 2;
            let l = be.conv(&format!("{path}.left.dw"), x, cin, 3, 2, cin)?;
            let l = be.conv(&format!("{path}.left.pw"), &l, bf, 1, 1, 1)?;
            let l = be.relu(l);
            let r = pw1(be, x, bf)?;
            let r = be.conv(&format!("{path}.right.dw"), &r, bf, 3, 2, bf)?;
            let r = be.conv(&format!("{path}.right.pw2"), &r, bf, 1, 1, 1)?;
            let r = be.relu(r);
            be.concat(&[l, r])?
        }
        ShuffleBlockKind::Basic => {
            if cout != cin {
                return Err(NetworkError::Shape(format!("{path}: basic block maps {cin} to {cout} channels")));
            }
            let (keep, t) = be.split_half(x)?;
            let c = cin / 2;
            let r = pw1(be, &t, c)?;
            let r = be.conv(&format!("{path}.right.dw"), &r, c, 3, 1, c)?;
            let r = be.conv(&format!("{path}.right.pw2"), &r, c, 1, 1, 1)?;
            let r = be.relu(r);
            be.concat(&[keep, r])?
        }
    };
    be.shuffle(&merged, 2)
}

/// `y = expand(relu(dw(relu(reduce(x))))) + x + W_α x`.
pub(crate) fn residual_adapter<B: Backend>(
    be: &mut B,
    path: &str,
    x: &B::Map,
    mid: usize,
) -> Result<B::Map, NetworkError> {
    let (c, _, _) = be.shape(x);
    let m = be.conv(&format!("{path}.reduce"), x, mid, 1, 1, 1)?;
    let m = be.relu(m);
    let m = be.conv(&format!("{path}.dw"), &m, mid, 3, 1, mid)?;
    let m = be.relu(m);
    let m = be.conv(&format!("{path}.expand"), &m, c, 1, 1, 1)?;
    let m = be.add(m, x)?;
    let a = be.conv(&format!("{path}.alpha"), x, c, 1, 1, 1)?;
    be.add(m, &a)
}

/// Spatial size of every level for a given level-0 size.
pub(crate) fn level_dims(h0: usize, w0: usize, levels: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(levels + 1);
    let (mut h, mut w) = (h0, w0);
    out.push((h, w));
    for _ in 0..levels {
        h = h.div_ceil(2);
        w = w.div_ceil(2);
        out.push((h, w));
    }
    out
}

/// Bring `x` from level `from` to level `to` with `cout` channels.
///
/// Same level: identity, or a 1×1 conv when widths differ. Finer source: a chain
/// of 3×3 stride-2 convs. Coarser source: a chain of (1×1 conv to `4·cout`, DUC
/// with d = 2, crop). Chain steps are separated by ReLU; the last step is linear.
pub(crate) fn resample<B: Backend>(
    be: &mut B,
    path: &str,
    x: &B::Map,
    from: usize,
    to: usize,
    cout: usize,
    levels: &[(usize, usize)],
) -> Result<B::Map, NetworkError> {
    let (cin, _, _) = be.shape(x);
    if from == to {
        return if cin == cout {
            Ok(x.clone())
        } else {
            be.conv(&format!("{path}.step0"), x, cout, 1, 1, 1)
        };
    }
    let steps = from.abs_diff(to);
    let mut y = x.clone();
    for m in 0..steps {
        if m > 0 {
            y = be.relu(y);
        }
        let step = format!("{path}.step{m}");
        y = if from < to {
            be.conv(&step, &y, cout, 3, 2, 1)?
        } else {
            let lvl = from - m - 1;
            let z = be.conv(&step, &y, 4 * cout, 1, 1, 1)?;
            let z = be.duc(&z, 2)?;
            be.crop(&z, levels[lvl].0, levels[lvl].1)?
        };
    }
    Ok(y)
}

/// Backbone: stem, four stages, skip concatenation at level 0.
pub(crate) fn backbone<B: Backend>(
    be: &mut B,
    img: &B::Map,
    cfg: &NetworkConfig,
) -> Result<B::Map, NetworkError> {
    let (_, h, w) = be.shape(img);
    let s = be.conv("stem.conv", img, cfg.stem_width, 3, 2, 1)?;
    let s = be.relu(s);
    let stem = be.max_pool2(&s)?;
    let (_, h0, w0) = be.shape(&stem);
    debug_assert_eq!((h0, w0), (h.div_ceil(2).div_ceil(2), w.div_ceil(2).div_ceil(2)));
    let levels = level_dims(h0, w0, cfg.base_level + cfg.max_subnets());

    let mut prev: Vec<(B::Map, usize)> = alloc::vec![(stem, 0)];
    let mut skips = Vec::with_capacity(cfg.stage_block_counts.len());
    for (si, &blocks) in cfg.stage_block_counts.iter().enumerate() {
        let stage = si + 1;
        let mut outs = Vec::new();
        for j in 0..cfg.subnets(stage) {
            let width = cfg.stage_widths[j];
            let work = cfg.base_level + j;
            let sub = format!("stage{stage}.sub{j}");
            let mut fused: Option<B::Map> = None;
            for (k, (src, lvl)) in prev.iter().enumerate() {
                let t = resample(be, &format!("{sub}.fuse.src{k}"), src, *lvl, work - 1, width / 2, &levels)?;
                fused = Some(match fused {
                    None => t,
                    Some(acc) => be.add(acc, &t)?,
                });
            }
            let fused = be.relu(fused.expect("at least one source"));
            let mut y = shuffle_block(be, &format!("{sub}.block0"), &fused, ShuffleBlockKind::SpatialDown, width, cfg.improved)?;
            for b in 1..blocks {
                y = shuffle_block(be, &format!("{sub}.block{b}"), &y, ShuffleBlockKind::Basic, width, cfg.improved)?;
            }
            outs.push((y, work));
        }
        let (top, lvl) = &outs[0];
        skips.push(resample(be, &format!("skip{stage}"), top, *lvl, 0, cfg.skip_width, &levels)?);
        prev = outs;
    }
    be.concat(&skips)
}

/// Per-stage `(heatmap, paf)` predictions.
pub(crate) fn refinement<B: Backend>(
    be: &mut B,
    f: &B::Map,
    cfg: &NetworkConfig,
) -> Result<Vec<(B::Map, B::Map)>, NetworkError> {
    let mut stages: Vec<(B::Map, B::Map)> = Vec::with_capacity(cfg.refinement_stages);
    for s in 1..=cfg.refinement_stages {
        let input = match stages.last() {
            None => f.clone(),
            Some((h, p)) => be.concat(&[f.clone(), h.clone(), p.clone()])?,
        };
        let mut branch = |name: &str, cout: usize| -> Result<B::Map, NetworkError> {
            let mut x = input.clone();
            for a in 0..cfg.adapters_per_branch {
                x = residual_adapter(be, &format!("refine{s}.{name}.adapter{a}"), &x, cfg.adapter_mid)?;
            }
            be.conv(&format!("refine{s}.{name}.head"), &x, cout, 1, 1, 1)
        };
        let heat = branch("heat", cfg.heat_channels)?;
        let paf = branch("paf", cfg.paf_channels)?;
        stages.push((heat, paf));
    }
    Ok(stages)
}

/// One convolution as seen by the shape-only backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    pub path: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub groups: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvSpec {
    pub fn weight_dims(&self) -> [usize; 4] {
        [self.cout, self.cin / self.groups, self.kernel, self.kernel]
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.path)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.path)
    }

    pub fn params(&self) -> usize {
        self.cout * (self.cin / self.groups) * self.kernel * self.kernel + self.cout
    }

    /// Two operations per multiply-accumulate.
    pub fn flops(&self) -> u64 {
        let macs = (self.cout * (self.cin / self.groups) * self.kernel * self.kernel) as u64
            * (self.out_h * self.out_w) as u64;
        2 * macs
    }
}

/// Shape inference that records every convolution.
#[derive(Default)]
pub(crate) struct ShapeTracer {
    pub convs: Vec<ConvSpec>,
}

impl Backend for ShapeTracer {
    type Map = (usize, usize, usize);

    fn shape(&self, x: &Self::Map) -> (usize, usize, usize) {
        *x
    }

    fn conv(
        &mut self,
        path: &str,
        x: &Self::Map,
        cout: usize,
        k: usize,
        stride: usize,
        groups: usize,
    ) -> Result<Self::Map, NetworkError> {
        let (cin, h, w) = *x;
        if groups == 0 || cin % groups != 0 || cout % groups != 0 || cin == 0 || cout == 0 {
            return Err(NetworkError::Config(format!("{path}: {cin} -> {cout} channels in {groups} groups")));
        }
        let out_h = super::ops::conv_out_len(h, k, stride);
        let out_w = super::ops::conv_out_len(w, k, stride);
        self.convs.push(ConvSpec {
            path: path.into(),
            cin,
            cout,
            kernel: k,
            stride,
            groups,
            out_h,
            out_w,
        });
        Ok((cout, out_h, out_w))
    }

    fn relu(&mut self, x: Self::Map) -> Self::Map {
        x
    }

    fn add(&mut self, a: Self::Map, b: &Self::Map) -> Result<Self::Map, NetworkError> {
        if a != *b {
            return Err(NetworkError::Shape(format!("add {a:?} + {b:?}")));
        }
        Ok(a)
    }

    fn concat(&mut self, parts: &[Self::Map]) -> Result<Self::Map, NetworkError> {
        let (_, h, w) = parts[0];
        if parts.iter().any(|p| (p.1, p.2) != (h, w)) {
            return Err(NetworkError::Shape(format!("concat spatial mismatch {parts:?}")));
        }
        Ok((parts.iter().map(|p| p.0).sum(), h, w))
    }

    fn split_half(&mut self, x: &Self::Map) -> Result<(Self::Map, Self::Map), NetworkError> {
        if x.0 % 2 != 0 {
            return Err(NetworkError::Config(format!("cannot split {} channels", x.0)));
        }
        let h = (x.0 / 2, x.1, x.2);
        Ok((h, h))
    }

    fn shuffle(&mut self, x: &Self::Map, groups: usize) -> Result<Self::Map, NetworkError> {
        if x.0 % groups != 0 {
            return Err(NetworkError::Config(format!("cannot shuffle {} channels in {groups} groups", x.0)));
        }
        Ok(*x)
    }

    fn duc(&mut self, x: &Self::Map, d: usize) -> Result<Self::Map, NetworkError> {
        Ok((x.0 / (d * d), x.1 * d, x.2 * d))
    }

    fn crop(&mut self, x: &Self::Map, h: usize, w: usize) -> Result<Self::Map, NetworkError> {
        if h > x.1 || w > x.2 {
            return Err(NetworkError::Shape(format!("cannot crop {x:?} to {h}x{w}")));
        }
        Ok((x.0, h, w))
    }

    fn max_pool2(&mut self, x: &Self::Map) -> Result<Self::Map, NetworkError> {
        Ok((x.0, x.1.div_ceil(2), x.2.div_ceil(2)))
    }
}
