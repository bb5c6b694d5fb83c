use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{put_f32s, put_string, put_u32, Reader};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::{Network, NetworkConfig};

const MAGIC: &[u8; 4] = b"MPNW";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetworkConfig,
    /// Running-statistic update count per batch-norm layer.
    bn_updates: Vec<u64>,
}

/// Named tensors in file order: parameters, then running statistics.
fn records(net: &Network<f32>) -> Vec<(String, &Tensor<f32>)> {
    let mut out: Vec<_> = net.params().into_iter().map(|p| (p.name, p.value)).collect();
    for (i, bn) in net.norms.iter().enumerate() {
        out.push((format!("bn{i}.running_mean"), &bn.running_mean));
        out.push((format!("bn{i}.running_var"), &bn.running_var));
    }
    out
}

pub fn encode_checkpoint(net: &Network<f32>) -> Result<Vec<u8>> {
    let header = serde_json::to_string(&Header {
        config: net.config().clone(),
        bn_updates: net.norms.iter().map(|bn| bn.updates()).collect(),
    })?;
    let mut out = MAGIC.to_vec();
    put_u32(&mut out, VERSION);
    put_string(&mut out, &header);
    let recs = records(net);
    put_u32(&mut out, recs.len() as u32);
    for (name, t) in recs {
        put_string(&mut out, &name);
        put_u32(&mut out, t.ndim() as u32);
        for &d in t.shape() {
            put_u32(&mut out, d as u32);
        }
        put_f32s(&mut out, t.data());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Network<f32>> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::IncompatibleCheckpoint("missing MPNW magic".into()));
    }
    let mut r = Reader::new(&bytes[4..], "checkpoint");
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::IncompatibleCheckpoint(format!(
            "version {version}, expected {VERSION}"
        )));
    }
    let header: Header = serde_json::from_str(&r.string()?)
        .map_err(|e| Error::Parse(format!("checkpoint header: {e}")))?;
    let mut net = Network::<f32>::zeros(header.config)?;
    if header.bn_updates.len() != net.norms.len() {
        return Err(Error::IncompatibleCheckpoint("batch-norm layer count disagrees".into()));
    }

    let count = r.u32()? as usize;
    let mut loaded = std::collections::BTreeMap::new();
    for _ in 0..count {
        let name = r.string()?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len = shape.iter().product();
        let t = Tensor::from_vec(&shape, r.f32s(len)?)?;
        loaded.insert(name, t);
    }
    if !r.is_done() {
        return Err(Error::Parse("trailing bytes after checkpoint records".into()));
    }

    let names: Vec<String> = records(&net).into_iter().map(|(n, _)| n).collect();
    let mut take = |name: &str, like: &Tensor<f32>| -> Result<Tensor<f32>> {
        let t = loaded
            .remove(name)
            .ok_or_else(|| Error::IncompatibleCheckpoint(format!("missing record {name}")))?;
        if t.shape() != like.shape() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "{name} has shape {:?}, expected {:?}",
                t.shape(),
                like.shape()
            )));
        }
        Ok(t)
    };

    let param_names: Vec<String> = net.params().into_iter().map(|p| p.name).collect();
    for (name, slot) in param_names.iter().zip(net.params_mut()) {
        *slot = take(name, slot)?;
    }
    for (i, bn) in net.norms.iter_mut().enumerate() {
        let mean = take(&format!("bn{i}.running_mean"), &bn.running_mean)?;
        let var = take(&format!("bn{i}.running_var"), &bn.running_var)?;
        bn.set_running_stats(mean, var, header.bn_updates[i])?;
    }
    if let Some(extra) = loaded.keys().next() {
        return Err(Error::IncompatibleCheckpoint(format!(
            "unexpected record {extra}; expected only {names:?}"
        )));
    }
    Ok(net)
}

pub fn save_checkpoint(net: &Network<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(net)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network<f32>> {
    let path = path.as_ref();
    decode_checkpoint(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Loads a checkpoint and requires its configuration to equal `expected`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &NetworkConfig) -> Result<Network<f32>> {
    let net = load_checkpoint(path)?;
    check_config(net.config(), expected)?;
    Ok(net)
}

pub fn check_config(found: &NetworkConfig, expected: &NetworkConfig) -> Result<()> {
    if found == expected {
        return Ok(());
    }
    let mut diffs = Vec::new();
    if found.input_bins != expected.input_bins {
        diffs.push(format!("input_bins {} vs {}", found.input_bins, expected.input_bins));
    }
    if found.num_classes != expected.num_classes {
        diffs.push(format!("num_classes {} vs {}", found.num_classes, expected.num_classes));
    }
    if found.head != expected.head {
        diffs.push(format!("head {:?} vs {:?}", found.head, expected.head));
    }
    if diffs.is_empty() {
        diffs.push("architecture or batch-norm settings differ".into());
    }
    Err(Error::ConfigMismatch(format!("checkpoint vs run: {}", diffs.join(", "))))
}
