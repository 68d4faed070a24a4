//! Golden-file fixtures shared by the integration tests and the acceptance run.
//!
//! Regenerate with `UGVKIT_BLESS=1 cargo test -p ugvkit --test golden`.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use ugvkit::weights::{load_parameters, save_parameters};
use ugvkit_core::network::{init_parameters, NetworkConfig};
use ugvkit_core::Tensor;

pub const MANIFEST_SEED: u64 = 7;

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Distinct values including signed zero, a NaN payload and a subnormal.
pub fn golden_tensor() -> Tensor {
    let data = vec![
        1.0,
        -2.5,
        0.0,
        -0.0,
        f32::from_bits(0x7fc0_0001),
        f32::from_bits(0x0000_0001),
    ];
    Tensor::new([2, 3], data).unwrap()
}

pub fn golden_config() -> NetworkConfig {
    NetworkConfig {
        stem_width: 8,
        stage_widths: vec![8],
        stage_block_counts: [1, 1, 1, 1],
        adapter_mid: 4,
        adapters_per_branch: 1,
        input_size: (32, 32),
        ..NetworkConfig::star()
    }
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn bits(t: &Tensor) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

pub fn bless() {
    let dir = golden_dir();
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join("tensor_2x3.ugvt"), golden_tensor().to_bytes().unwrap()).unwrap();
    fs::write(dir.join("smallest.ugvt"), Tensor::new([1], vec![0.0]).unwrap().to_bytes().unwrap()).unwrap();
    let cfg = golden_config();
    save_parameters(&dir.join("manifest"), &cfg, &init_parameters(&cfg, MANIFEST_SEED).unwrap()).unwrap();
}

/// Compare freshly written artifacts with the checked-in bytes and check that
/// reading them back is bitwise lossless.
pub fn check_golden() -> Result<String, String> {
    let dir = golden_dir();
    let read = |p: &Path| fs::read(p).map_err(|e| format!("{}: {e}", p.display()));

    let want = read(&dir.join("tensor_2x3.ugvt"))?;
    let t = golden_tensor();
    if t.to_bytes().unwrap() != want {
        return Err("tensor_2x3.ugvt bytes changed".into());
    }
    let (back, used) = Tensor::from_bytes(&want).map_err(|e| e.to_string())?;
    if used != want.len() || back.dims() != t.dims() || bits(&back) != bits(&t) {
        return Err("tensor_2x3.ugvt does not read back bitwise".into());
    }
    let small = read(&dir.join("smallest.ugvt"))?;
    if small.len() != 17 || Tensor::new([1], vec![0.0]).unwrap().to_bytes().unwrap() != small {
        return Err("smallest.ugvt changed".into());
    }

    let cfg = golden_config();
    let store = init_parameters(&cfg, MANIFEST_SEED).map_err(|e| e.to_string())?;
    let tmp = tempfile::tempdir().unwrap();
    save_parameters(tmp.path(), &cfg, &store).map_err(|e| e.to_string())?;
    let golden_manifest = dir.join("manifest");
    let (ours, theirs) = (files_under(tmp.path()), files_under(&golden_manifest));
    if ours != theirs {
        return Err(format!("manifest file set changed: {} vs {} files", ours.len(), theirs.len()));
    }
    for rel in &ours {
        if read(&tmp.path().join(rel))? != read(&golden_manifest.join(rel))? {
            return Err(format!("manifest file {} changed", rel.display()));
        }
    }
    let (cfg2, loaded) = load_parameters(&golden_manifest.join("manifest.json")).map_err(|e| e.to_string())?;
    if cfg2 != cfg || loaded.len() != store.len() {
        return Err("manifest does not load back to the same config".into());
    }
    for (name, t) in store.iter() {
        if loaded.get(name).map(bits) != Some(bits(t)) {
            return Err(format!("parameter {name} does not read back bitwise"));
        }
    }
    let again = tempfile::tempdir().unwrap();
    save_parameters(again.path(), &cfg2, &loaded).map_err(|e| e.to_string())?;
    for rel in &ours {
        if read(&again.path().join(rel))? != read(&golden_manifest.join(rel))? {
            return Err(format!("re-saved {} differs", rel.display()));
        }
    }
    Ok(format!("2 tensor files, manifest with {} files", ours.len()))
}
