//! Weight manifests: a JSON file naming the network configuration and one
//! tensor file per parameter.
//!
//! ```json
//! {
//!   "config": { "variant": "full", "stem_width": 24, ... },
//!   "layers": { "stem.conv.weight": "layers/stem.conv.weight.ugvt", ... }
//! }
//! ```
//!
//! Paths are relative to the manifest. Parameter names follow the layer path
//! grammar of [`ugvkit_core::network`] with a `.weight` or `.bias` suffix.
//! Entries named `<layer>.bn.{gamma,beta,mean,var}` are folded into that
//! layer's weight and bias at load time.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ugvkit_core::network::{fold_batch_norm, NetworkConfig, NetworkError, ParameterStore, Variant};

use crate::error::{Error, Result};
use crate::{formats, io};

pub const BN_EPS: f32 = 1e-5;

/// Serialized form of [`NetworkConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigJson {
    pub variant: String,
    pub stem_width: usize,
    pub base_level: usize,
    pub stage_widths: Vec<usize>,
    pub stage_block_counts: [usize; 4],
    pub skip_width: usize,
    pub adapter_mid: usize,
    pub adapters_per_branch: usize,
    pub refinement_stages: usize,
    pub duc_factor: usize,
    pub input_size: [usize; 2],
    pub heat_channels: usize,
    pub paf_channels: usize,
    pub output_stride: usize,
    pub improved: bool,
}

impl From<&NetworkConfig> for ConfigJson {
    fn from(c: &NetworkConfig) -> Self {
        Self {
            variant: c.variant.as_str().into(),
            stem_width: c.stem_width,
            base_level: c.base_level,
            stage_widths: c.stage_widths.clone(),
            stage_block_counts: c.stage_block_counts,
            skip_width: c.skip_width,
            adapter_mid: c.adapter_mid,
            adapters_per_branch: c.adapters_per_branch,
            refinement_stages: c.refinement_stages,
            duc_factor: c.duc_factor,
            input_size: [c.input_size.0, c.input_size.1],
            heat_channels: c.heat_channels,
            paf_channels: c.paf_channels,
            output_stride: c.output_stride,
            improved: c.improved,
        }
    }
}

impl ConfigJson {
    pub fn to_config(&self) -> Result<NetworkConfig> {
        let cfg = NetworkConfig {
            variant: self.variant.parse::<Variant>()?,
            stem_width: self.stem_width,
            base_level: self.base_level,
            stage_widths: self.stage_widths.clone(),
            stage_block_counts: self.stage_block_counts,
            skip_width: self.skip_width,
            adapter_mid: self.adapter_mid,
            adapters_per_branch: self.adapters_per_branch,
            refinement_stages: self.refinement_stages,
            duc_factor: self.duc_factor,
            input_size: (self.input_size[0], self.input_size[1]),
            heat_channels: self.heat_channels,
            paf_channels: self.paf_channels,
            output_stride: self.output_stride,
            improved: self.improved,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ConfigJson,
    pub layers: BTreeMap<String, String>,
}

/// Write `manifest.json` and `layers/<name>.ugvt` under `dir`.
pub fn save_parameters(dir: &Path, cfg: &NetworkConfig, store: &ParameterStore) -> Result<PathBuf> {
    let mut layers = BTreeMap::new();
    for (name, t) in store.iter() {
        let rel = format!("layers/{name}.ugvt");
        io::tensor_write(&dir.join(&rel), t)?;
        layers.insert(name.clone(), rel);
    }
    let manifest = Manifest {
        config: cfg.into(),
        layers,
    };
    let path = dir.join("manifest.json");
    formats::write_json(&path, &manifest)?;
    Ok(path)
}

/// Load, fold normalization entries and validate every parameter against the config.
pub fn load_parameters(manifest_path: &Path) -> Result<(NetworkConfig, ParameterStore)> {
    let ctx = |e: Error| e.context(manifest_path.display());
    let manifest: Manifest = formats::read_json(manifest_path)?;
    let cfg = manifest.config.to_config().map_err(ctx)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut store = ParameterStore::new();
    for (name, rel) in &manifest.layers {
        let t = io::tensor_read(&base.join(rel)).map_err(|e| e.context(format!("layer `{name}`")))?;
        store.insert(name.clone(), t);
    }
    fold_all_batch_norms(&mut store).map_err(ctx)?;
    store.validate(&cfg).map_err(|e| ctx(e.into()))?;
    Ok((cfg, store))
}

fn fold_all_batch_norms(store: &mut ParameterStore) -> Result<()> {
    let layers: Vec<String> = store
        .iter()
        .filter_map(|(k, _)| k.strip_suffix(".bn.gamma").map(str::to_string))
        .collect();
    for layer in layers {
        let mut take = |stat: &str| {
            let name = format!("{layer}.bn.{stat}");
            store.remove(&name).ok_or(NetworkError::MissingParameter(name))
        };
        let (gamma, beta, mean, var) = (take("gamma")?, take("beta")?, take("mean")?, take("var")?);
        let wname = format!("{layer}.weight");
        let mut weight = store.remove(&wname).ok_or(NetworkError::MissingParameter(wname.clone()))?;
        let bname = format!("{layer}.bias");
        let mut bias = store.remove(&bname).ok_or(NetworkError::MissingParameter(bname.clone()))?;
        fold_batch_norm(&mut weight, &mut bias, gamma.data(), beta.data(), mean.data(), var.data(), BN_EPS)
            .map_err(|e| Error::from(e).context(format!("layer `{layer}`")))?;
        store.insert(wname, weight);
        store.insert(bname, bias);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ugvkit_core::network::init_parameters;
    use ugvkit_core::Tensor;

    fn tiny() -> NetworkConfig {
        NetworkConfig {
            stem_width: 8,
            stage_widths: vec![8, 8, 8],
            stage_block_counts: [1, 1, 1, 1],
            input_size: (64, 64),
            ..NetworkConfig::star()
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny();
        let store = init_parameters(&cfg, 3).unwrap();
        let path = save_parameters(dir.path(), &cfg, &store).unwrap();
        let (cfg2, store2) = load_parameters(&path).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(store2.len(), store.len());
        for (name, t) in store.iter() {
            let u = store2.get(name).unwrap();
            assert_eq!(u.dims(), t.dims());
            assert!(u.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn missing_layer_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny();
        let path = save_parameters(dir.path(), &cfg, &init_parameters(&cfg, 0).unwrap()).unwrap();
        let mut m: Manifest = formats::read_json(&path).unwrap();
        m.layers.remove("stem.conv.bias");
        formats::write_json(&path, &m).unwrap();
        let err = load_parameters(&path).unwrap_err().to_string();
        assert!(err.contains("stem.conv.bias"), "{err}");
    }

    #[test]
    fn transposed_dims_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny();
        let path = save_parameters(dir.path(), &cfg, &init_parameters(&cfg, 0).unwrap()).unwrap();
        let f = dir.path().join("layers/stem.conv.weight.ugvt");
        let t = io::tensor_read(&f).unwrap();
        let d = t.dims().to_vec();
        io::tensor_write(&f, &t.reshape(vec![d[1], d[0], d[2], d[3]]).unwrap()).unwrap();
        let err = load_parameters(&path).unwrap_err().to_string();
        assert!(err.contains("stem.conv.weight") && err.contains("[8, 3, 3, 3]") && err.contains("[3, 8, 3, 3]"), "{err}");
    }

    #[test]
    fn batch_norm_entries_are_folded() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny();
        let store = init_parameters(&cfg, 0).unwrap();
        let path = save_parameters(dir.path(), &cfg, &store).unwrap();
        let mut m: Manifest = formats::read_json(&path).unwrap();
        let c = 8;
        for (stat, v) in [("gamma", 2.0), ("beta", 0.5), ("mean", 0.0), ("var", 1.0 - BN_EPS)] {
            let rel = format!("layers/stem.conv.bn.{stat}.ugvt");
            io::tensor_write(&dir.path().join(&rel), &Tensor::full(&[c], v).unwrap()).unwrap();
            m.layers.insert(format!("stem.conv.bn.{stat}"), rel);
        }
        formats::write_json(&path, &m).unwrap();
        let (_, folded) = load_parameters(&path).unwrap();
        let w0 = store.get("stem.conv.weight").unwrap().data()[0];
        let w1 = folded.get("stem.conv.weight").unwrap().data()[0];
        assert!((w1 - 2.0 * w0).abs() < 1e-6);
        assert!(folded.get("stem.conv.bias").unwrap().data().iter().all(|&b| (b - 0.5).abs() < 1e-6));
    }
}
