//! Keypoint network inference: stem, four multi-resolution stages of shuffle
//! blocks, skip concatenation into the shared feature map `F`, and two-branch
//! multi-stage refinement with residual adapters.
//!
//! Every convolution carries a bias; inference-time normalization is folded into
//! the preceding convolution (see [`fold_batch_norm`]).
//!
//! Parameter names are `<layer path>.weight` (`[cout, cin / groups, k, k]`) and
//! `<layer path>.bias` (`[cout]`). Layer paths:
//!
//! ```text
//! stem.conv
//! stage{i}.sub{j}.fuse.src{k}.step{m}
//! stage{i}.sub{j}.block{b}.left.{dw,pw}          (first block of a subnetwork)
//! stage{i}.sub{j}.block{b}.right.{pw1,dw,pw2}
//! skip{i}.step{m}
//! refine{s}.{heat,paf}.adapter{a}.{reduce,dw,expand,alpha}
//! refine{s}.{heat,paf}.head
//! ```
//!
//! Stages and refinement stages count from 1, everything else from 0.

mod arch;
pub mod ops;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use arch::{ConvSpec, ShuffleBlockKind};
pub use ops::{channel_shuffle, conv2d, duc_upsample, relu};

use crate::tensor::Tensor;
use arch::{Backend, ShapeTracer};

pub type FeatureMap = Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("unexpected parameter `{0}`")]
    UnexpectedParameter(String),
    #[error("parameter `{name}` has dims {found:?}, expected {expected:?}")]
    ParameterShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Up to three parallel resolutions per stage.
    Full,
    /// A single subnetwork per stage.
    Star,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Star => "star",
        }
    }
}

impl FromStr for Variant {
    type Err = NetworkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Variant::Full),
            "star" => Ok(Variant::Star),
            other => Err(NetworkError::Config(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub variant: Variant,
    pub stem_width: usize,
    /// Level of the top subnetwork; level 0 is the output map.
    pub base_level: usize,
    /// Width of subnetwork `j` (same in every stage).
    pub stage_widths: Vec<usize>,
    pub stage_block_counts: [usize; 4],
    /// Channels each stage contributes to `F`.
    pub skip_width: usize,
    pub adapter_mid: usize,
    pub adapters_per_branch: usize,
    pub refinement_stages: usize,
    pub duc_factor: usize,
    /// `(height, width)` used for FLOP accounting.
    pub input_size: (usize, usize),
    pub heat_channels: usize,
    pub paf_channels: usize,
    pub output_stride: usize,
    /// Omit the ReLU after the first 1×1 conv of each shuffle branch.
    pub improved: bool,
}

impl NetworkConfig {
    pub fn full() -> Self {
        Self {
            variant: Variant::Full,
            stem_width: 24,
            base_level: 2,
            stage_widths: alloc::vec![160, 256, 384],
            stage_block_counts: [2, 2, 2, 2],
            skip_width: 8,
            adapter_mid: 8,
            adapters_per_branch: 2,
            refinement_stages: 2,
            duc_factor: 2,
            input_size: (360, 640),
            heat_channels: crate::HEAT_CHANNELS,
            paf_channels: crate::PAF_CHANNELS,
            output_stride: 4,
            improved: true,
        }
    }

    pub fn star() -> Self {
        Self {
            variant: Variant::Star,
            ..Self::full()
        }
    }

    pub fn for_variant(v: Variant) -> Self {
        match v {
            Variant::Full => Self::full(),
            Variant::Star => Self::star(),
        }
    }

    /// Subnetworks in 1-based stage `stage`.
    pub fn subnets(&self, stage: usize) -> usize {
        match self.variant {
            Variant::Star => 1,
            Variant::Full => stage.min(3),
        }
    }

    pub(crate) fn max_subnets(&self) -> usize {
        (1..=4).map(|s| self.subnets(s)).max().unwrap_or(1)
    }

    /// Channels of the backbone feature map `F`.
    pub fn feature_channels(&self) -> usize {
        4 * self.skip_width
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let bad = |m: &str| Err(NetworkError::Config(m.into()));
        if self.duc_factor != 2 {
            return bad("duc_factor must be 2 (levels differ by a factor of two)");
        }
        if self.output_stride != 4 {
            return bad("output_stride is fixed at 4 by the stem");
        }
        if self.base_level == 0 {
            return bad("base_level must be at least 1");
        }
        if self.stage_widths.len() < self.max_subnets() {
            return bad("stage_widths has fewer entries than subnetworks");
        }
        if self.stage_widths.iter().any(|&w| w < 2 || w % 4 != 0) {
            return bad("stage widths must be positive multiples of 4");
        }
        if self.stage_block_counts.iter().any(|&b| b == 0) {
            return bad("every stage needs at least one block");
        }
        let positive = [
            self.stem_width,
            self.skip_width,
            self.adapter_mid,
            self.refinement_stages,
            self.heat_channels,
            self.paf_channels,
            self.input_size.0,
            self.input_size.1,
        ];
        if positive.iter().any(|&v| v == 0) {
            return bad("widths, stage counts and input size must be positive");
        }
        Ok(())
    }

    /// Every convolution in execution order, shapes for `input_size`.
    pub fn layer_specs(&self) -> Result<Vec<ConvSpec>, NetworkError> {
        self.validate()?;
        let mut tr = ShapeTracer::default();
        let (h, w) = self.input_size;
        let f = arch::backbone(&mut tr, &(3, h, w), self)?;
        arch::refinement(&mut tr, &f, self)?;
        Ok(tr.convs)
    }
}

/// Output of [`model_stats`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelStats {
    pub params: usize,
    /// Convolution FLOPs (2 per multiply-accumulate) for one forward pass at `input_size`.
    pub flops: u64,
    pub conv_layers: usize,
}

pub fn model_stats(cfg: &NetworkConfig) -> Result<ModelStats, NetworkError> {
    let specs = cfg.layer_specs()?;
    Ok(ModelStats {
        params: specs.iter().map(ConvSpec::params).sum(),
        flops: specs.iter().map(ConvSpec::flops).sum(),
        conv_layers: specs.len(),
    })
}

/// Named weights and biases.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    entries: BTreeMap<String, Tensor>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Option<Tensor> {
        self.entries.insert(name.into(), t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.entries.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count.
    pub fn num_values(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    fn expect(&self, name: &str, dims: &[usize]) -> Result<&Tensor, NetworkError> {
        let t = self
            .get(name)
            .ok_or_else(|| NetworkError::MissingParameter(name.into()))?;
        if t.dims() != dims {
            return Err(NetworkError::ParameterShape {
                name: name.into(),
                expected: dims.to_vec(),
                found: t.dims().to_vec(),
            });
        }
        Ok(t)
    }

    /// Exactly the parameters `cfg` declares, with matching dims.
    pub fn validate(&self, cfg: &NetworkConfig) -> Result<(), NetworkError> {
        let specs = cfg.layer_specs()?;
        let mut names = BTreeMap::new();
        for s in &specs {
            self.expect(&s.weight_name(), &s.weight_dims())?;
            self.expect(&s.bias_name(), &[s.cout])?;
            names.insert(s.weight_name(), ());
            names.insert(s.bias_name(), ());
        }
        if let Some(extra) = self.entries.keys().find(|k| !names.contains_key(*k)) {
            return Err(NetworkError::UnexpectedParameter(extra.clone()));
        }
        Ok(())
    }
}

/// He-uniform weights (`±sqrt(6 / fan_in)`) and zero biases.
pub fn init_parameters(cfg: &NetworkConfig, seed: u64) -> Result<ParameterStore, NetworkError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    for s in cfg.layer_specs()? {
        let dims = s.weight_dims();
        let fan_in = dims[1] * dims[2] * dims[3];
        let bound = libm::sqrt(6.0 / fan_in as f64) as f32;
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        store.insert(s.weight_name(), Tensor::new(&dims, data).expect("valid dims"));
        store.insert(s.bias_name(), Tensor::zeros(&[s.cout]).expect("valid dims"));
    }
    Ok(store)
}

/// Fold an inference-mode normalization `γ (y − μ) / sqrt(σ² + ε) + β` into the
/// preceding convolution's weight and bias.
pub fn fold_batch_norm(
    weight: &mut Tensor,
    bias: &mut Tensor,
    gamma: &[f32],
    beta: &[f32],
    mean: &[f32],
    var: &[f32],
    eps: f32,
) -> Result<(), NetworkError> {
    let cout = weight.dims().first().copied().unwrap_or(0);
    if bias.dims() != [cout] || [gamma.len(), beta.len(), mean.len(), var.len()].iter().any(|&l| l != cout) {
        return Err(NetworkError::Shape(format!("normalization statistics for {cout} channels")));
    }
    let per = weight.len() / cout.max(1);
    for c in 0..cout {
        let scale = gamma[c] / libm::sqrtf(var[c] + eps);
        for v in &mut weight.data_mut()[c * per..(c + 1) * per] {
            *v *= scale;
        }
        let b = &mut bias.data_mut()[c];
        *b = (*b - mean[c]) * scale + beta[c];
    }
    Ok(())
}

/// Executes against a [`ParameterStore`].
struct Exec<'a> {
    store: &'a ParameterStore,
}

impl Backend for Exec<'_> {
    type Map = Tensor;

    fn shape(&self, x: &Tensor) -> (usize, usize, usize) {
        x.chw().expect("feature maps are 3-d")
    }

    fn conv(&mut self, path: &str, x: &Tensor, cout: usize, k: usize, stride: usize, groups: usize) -> Result<Tensor, NetworkError> {
        let (cin, _, _) = self.shape(x);
        if cin % groups != 0 {
            return Err(NetworkError::Shape(format!("{path}: {cin} channels in {groups} groups")));
        }
        let w = self.store.expect(&format!("{path}.weight"), &[cout, cin / groups, k, k])?;
        let b = self.store.expect(&format!("{path}.bias"), &[cout])?;
        ops::conv2d(x, w, Some(b), stride, groups)
    }

    fn relu(&mut self, x: Tensor) -> Tensor {
        ops::relu(x)
    }

    fn add(&mut self, a: Tensor, b: &Tensor) -> Result<Tensor, NetworkError> {
        ops::add(a, b)
    }

    fn concat(&mut self, parts: &[Tensor]) -> Result<Tensor, NetworkError> {
        let refs: Vec<&Tensor> = parts.iter().collect();
        Tensor::concat_channels(&refs).map_err(|e| NetworkError::Shape(format!("{e}")))
    }

    fn split_half(&mut self, x: &Tensor) -> Result<(Tensor, Tensor), NetworkError> {
        ops::split_half(x)
    }

    fn shuffle(&mut self, x: &Tensor, groups: usize) -> Result<Tensor, NetworkError> {
        ops::channel_shuffle(x, groups)
    }

    fn duc(&mut self, x: &Tensor, d: usize) -> Result<Tensor, NetworkError> {
        ops::duc_upsample(x, d)
    }

    fn crop(&mut self, x: &Tensor, h: usize, w: usize) -> Result<Tensor, NetworkError> {
        ops::crop(x, h, w)
    }

    fn max_pool2(&mut self, x: &Tensor) -> Result<Tensor, NetworkError> {
        ops::max_pool2(x)
    }
}

fn check_feature_map(x: &Tensor, channels: Option<usize>) -> Result<(), NetworkError> {
    let (c, _, _) = x.chw().map_err(|e| NetworkError::Shape(format!("{e}")))?;
    match channels {
        Some(want) if want != c => Err(NetworkError::Shape(format!("expected {want} channels, got {c}"))),
        _ => Ok(()),
    }
}

pub fn shuffle_block_forward(
    x: &FeatureMap,
    params: &ParameterStore,
    path: &str,
    kind: ShuffleBlockKind,
    cout: usize,
    improved: bool,
) -> Result<FeatureMap, NetworkError> {
    check_feature_map(x, None)?;
    arch::shuffle_block(&mut Exec { store: params }, path, x, kind, cout, improved)
}

pub fn residual_adapter_forward(
    x: &FeatureMap,
    params: &ParameterStore,
    path: &str,
    mid: usize,
) -> Result<FeatureMap, NetworkError> {
    check_feature_map(x, None)?;
    arch::residual_adapter(&mut Exec { store: params }, path, x, mid)
}

/// Image `[3, H, W]` to `F` `[4·skip_width, ceil(H/4), ceil(W/4)]`.
pub fn backbone_forward(img: &Tensor, params: &ParameterStore, cfg: &NetworkConfig) -> Result<FeatureMap, NetworkError> {
    cfg.validate()?;
    check_feature_map(img, Some(3))?;
    arch::backbone(&mut Exec { store: params }, img, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementOutput {
    pub heatmap: Tensor,
    pub paf: Tensor,
    /// `(heatmap, paf)` of every stage; the last equals the final output.
    pub stages: Vec<(Tensor, Tensor)>,
}

pub fn refinement_forward(f: &FeatureMap, params: &ParameterStore, cfg: &NetworkConfig) -> Result<RefinementOutput, NetworkError> {
    cfg.validate()?;
    check_feature_map(f, Some(cfg.feature_channels()))?;
    let stages = arch::refinement(&mut Exec { store: params }, f, cfg)?;
    let (heatmap, paf) = stages.last().cloned().expect("at least one refinement stage");
    Ok(RefinementOutput { heatmap, paf, stages })
}

/// Full forward pass.
pub fn forward(img: &Tensor, params: &ParameterStore, cfg: &NetworkConfig) -> Result<RefinementOutput, NetworkError> {
    let f = backbone_forward(img, params, cfg)?;
    refinement_forward(&f, params, cfg)
}
