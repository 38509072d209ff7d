//! Checkpoint layout:
//!
//! ```text
//! FBLAE1\n
//! <manifest byte length, decimal>\n
//! <JSON manifest>\n
//! <f32 little-endian values in manifest tensor order>
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nngraph::Scalar;

use super::config::AeConfig;
use super::model::{build_model, AeModel};

pub const MAGIC: &[u8] = b"FBLAE1\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub activation: crate::nngraph::Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub config: AeConfig,
    pub layers: Vec<LayerEntry>,
    pub tensors: Vec<TensorEntry>,
    pub trainable_params: usize,
    pub stored_values: usize,
    pub seed: u64,
}

/// Trainable tensors in store order, then each block's running mean and variance.
fn collect<T: Scalar>(model: &AeModel<T>) -> (Vec<TensorEntry>, Vec<f32>) {
    let mut entries = Vec::new();
    let mut values = Vec::new();
    let f = |v: &T| v.to_f32().unwrap_or(f32::NAN);
    for p in model.store().iter() {
        entries.push(TensorEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            trainable: true,
        });
        values.extend(p.value.data().iter().map(f));
    }
    for (_, b) in model.blocks() {
        for (suffix, stat) in [
            ("running_mean", &b.bn.running_mean),
            ("running_var", &b.bn.running_var),
        ] {
            entries.push(TensorEntry {
                name: format!("{}.bn.{suffix}", b.name),
                shape: vec![stat.len()],
                trainable: false,
            });
            values.extend(stat.iter().map(f));
        }
    }
    (entries, values)
}

pub fn manifest<T: Scalar>(model: &AeModel<T>) -> Manifest {
    let (tensors, values) = collect(model);
    Manifest {
        format_version: FORMAT_VERSION,
        config: model.config().clone(),
        layers: model
            .blocks()
            .map(|(_, b)| LayerEntry {
                name: b.name.clone(),
                in_channels: b.conv.in_ch,
                out_channels: b.conv.out_ch,
                kernel: b.conv.kernel,
                activation: b.act,
            })
            .collect(),
        tensors,
        trainable_params: model.trainable_params(),
        stored_values: values.len(),
        seed: model.config().seed,
    }
}

pub fn to_bytes<T: Scalar>(model: &AeModel<T>) -> Result<Vec<u8>> {
    let man = manifest(model);
    let (_, values) = collect(model);
    let json = serde_json::to_string_pretty(&man)?;
    let mut out = Vec::with_capacity(json.len() + 4 * values.len() + 32);
    out.extend_from_slice(MAGIC);
    writeln!(out, "{}", json.len())?;
    out.extend_from_slice(json.as_bytes());
    out.push(b'\n');
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn from_bytes<T: Scalar>(bytes: &[u8], path: &Path) -> Result<AeModel<T>> {
    let bad = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let rest = bytes
        .strip_prefix(MAGIC)
        .ok_or_else(|| bad("bad magic string".into()))?;
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing manifest length".into()))?;
    let len: usize = std::str::from_utf8(&rest[..nl])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("unreadable manifest length".into()))?;
    let rest = &rest[nl + 1..];
    if rest.len() < len + 1 || rest[len] != b'\n' {
        return Err(bad("truncated manifest".into()));
    }
    let man: Manifest =
        serde_json::from_slice(&rest[..len]).map_err(|e| bad(format!("manifest: {e}")))?;
    if man.format_version != FORMAT_VERSION {
        return Err(bad(format!(
            "format version {} is not supported",
            man.format_version
        )));
    }
    let payload = &rest[len + 1..];

    let mut model = build_model::<T>(&man.config).map_err(|e| bad(e.to_string()))?;
    let expected = manifest(&model);
    if man.trainable_params != expected.trainable_params {
        return Err(bad(format!(
            "manifest declares {} trainable parameters, the configuration implies {}",
            man.trainable_params, expected.trainable_params
        )));
    }
    if man.tensors != expected.tensors || man.layers != expected.layers {
        return Err(bad(
            "tensor or layer list does not match the configuration".into()
        ));
    }
    if man.stored_values != expected.stored_values {
        return Err(bad(format!(
            "manifest declares {} values, expected {}",
            man.stored_values, expected.stored_values
        )));
    }
    if payload.len() != 4 * man.stored_values {
        return Err(bad(format!(
            "payload holds {} bytes, expected {}",
            payload.len(),
            4 * man.stored_values
        )));
    }

    let mut values = payload
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64));
    for p in model.store_mut().iter_mut() {
        for (dst, src) in p.value.data_mut().iter_mut().zip(values.by_ref()) {
            *dst = src;
        }
    }
    for b in model.blocks_mut() {
        for dst in
            b.bn.running_mean
                .iter_mut()
                .chain(b.bn.running_var.iter_mut())
        {
            *dst = values.next().expect("length checked");
        }
    }
    Ok(model)
}

pub fn save_checkpoint<T: Scalar>(model: &AeModel<T>, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<AeModel<T>> {
    from_bytes(&fs::read(path)?, path)
}
