//! Checkpoint container:
//!
//! ```text
//! 8 bytes   magic "INTENTCK"
//! u32 LE    format version
//! u64 LE    manifest length n
//! n bytes   JSON manifest
//! rest      f64 values in the manifest's byte order
//! ```
//!
//! The manifest holds the run configuration (TOML text), the training step,
//! the REINFORCE baseline, the Adam step counters and one `(name, shape,
//! offset)` entry per stored tensor. Offsets are byte offsets into the value
//! section. Tensor names are `<set>/<parameter>` for parameters and
//! `<set>/<parameter>#m`, `#v` for the Adam moments.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::numerics::{AdamState, Tensor};
use crate::recommender::{IntentRecommender, MovingBaseline, TrainState, PARAM_SET_NAMES};

pub const MAGIC: &[u8; 8] = b"INTENTCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    byte_order: String,
    step: u64,
    baseline: f64,
    config: String,
    adam_steps: Vec<u64>,
    entries: Vec<Entry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

pub fn checkpoint_name(step: u64) -> String {
    format!("checkpoint_{step:06}.ckpt")
}

/// Checkpoints in `dir`, ordered by step.
pub fn list_checkpoints(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(step) =
            name.strip_prefix("checkpoint_").and_then(|s| s.strip_suffix(".ckpt")).and_then(|s| s.parse::<u64>().ok())
        {
            out.push((step, path));
        }
    }
    out.sort();
    Ok(out)
}

pub fn encode(config: &RunConfig, state: &TrainState) -> Result<Vec<u8>> {
    let mut entries = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    let mut push = |name: String, t: &Tensor| {
        entries.push(Entry { name, shape: t.shape().to_vec(), offset: blob.len() });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    };
    for ((set_name, set), opt) in PARAM_SET_NAMES.iter().zip(state.model.param_sets()).zip(&state.optimizers) {
        for (name, p) in set.iter() {
            push(format!("{set_name}/{name}"), &p.value);
        }
        for (name, m) in &opt.first {
            push(format!("{set_name}/{name}#m"), m);
        }
        for (name, v) in &opt.second {
            push(format!("{set_name}/{name}#v"), v);
        }
    }
    let manifest = Manifest {
        byte_order: "little".into(),
        step: state.step,
        baseline: state.baseline.value,
        config: config.to_toml()?,
        adam_steps: state.optimizers.iter().map(|o| o.step).collect(),
        entries,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(20 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> std::result::Result<(RunConfig, TrainState), String> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err("not a checkpoint file".into());
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(format!("format version {version} is not supported (expected {FORMAT_VERSION})"));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let json = bytes.get(20..20 + len).ok_or("truncated manifest")?;
    let blob = &bytes[20 + len..];
    let manifest: Manifest = serde_json::from_slice(json).map_err(|e| format!("manifest: {e}"))?;
    if manifest.byte_order != "little" {
        return Err(format!("unsupported byte order `{}`", manifest.byte_order));
    }
    let config = RunConfig::from_toml(&manifest.config).map_err(|e| format!("embedded config: {e}"))?;

    let mut model = IntentRecommender::init(
        &config.model,
        config.variant,
        config.simulator.x_dim(),
        config.simulator.y_dim(),
        config.context_dim(),
        config.simulator.catalog_size,
        config.seed,
    )
    .map_err(|e| e.to_string())?;
    let mut optimizers: Vec<AdamState> =
        model.param_sets().iter().map(|p| AdamState::new(p, config.training.adam())).collect();
    if manifest.adam_steps.len() != optimizers.len() {
        return Err("wrong number of optimizer states".into());
    }

    let mut entries = manifest.entries.iter();
    let mut read = |expected: String, shape: &[usize]| -> std::result::Result<Tensor, String> {
        let e = entries.next().ok_or_else(|| format!("missing tensor `{expected}`"))?;
        if e.name != expected || e.shape != shape {
            return Err(format!("expected `{expected}` {shape:?}, found `{}` {:?}", e.name, e.shape));
        }
        let n: usize = shape.iter().product();
        let raw = blob
            .get(e.offset..e.offset + 8 * n)
            .ok_or_else(|| format!("tensor `{expected}` runs past the end of the file"))?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Tensor::new(shape.to_vec(), data).map_err(|err| err.to_string())
    };
    for (((set_name, set), opt), &steps) in
        PARAM_SET_NAMES.iter().zip(model.param_sets_mut()).zip(&mut optimizers).zip(&manifest.adam_steps)
    {
        let names: Vec<String> = set.iter().map(|(n, _)| n.to_string()).collect();
        for name in &names {
            let shape = set.get(name).map_err(|e| e.to_string())?.shape().to_vec();
            *set.get_mut(name).map_err(|e| e.to_string())? = read(format!("{set_name}/{name}"), &shape)?;
        }
        for (suffix, moments) in [("m", &mut opt.first), ("v", &mut opt.second)] {
            for name in &names {
                let slot = moments.get_mut(name).expect("moments mirror parameters");
                *slot = read(format!("{set_name}/{name}#{suffix}"), slot.shape())?;
            }
        }
        opt.step = steps;
    }
    if let Some(extra) = entries.next() {
        return Err(format!("unexpected tensor `{}`", extra.name));
    }
    let mut baseline = MovingBaseline::new(config.model.baseline_decay).map_err(|e| e.to_string())?;
    baseline.value = manifest.baseline;
    let state = TrainState { model, optimizers, baseline, step: manifest.step };
    Ok((config, state))
}

pub fn save_checkpoint(path: &Path, config: &RunConfig, state: &TrainState) -> Result<()> {
    std::fs::write(path, encode(config, state)?)
        .map_err(|e| Error::Checkpoint { path: path.to_path_buf(), reason: e.to_string() })
}

pub fn load_checkpoint(path: &Path) -> Result<(RunConfig, TrainState)> {
    let fail = |reason: String| Error::Checkpoint { path: path.to_path_buf(), reason };
    let bytes = std::fs::read(path).map_err(|e| fail(e.to_string()))?;
    decode(&bytes).map_err(fail)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recommender::Variant;

    fn small_config() -> RunConfig {
        let mut c = RunConfig::default();
        c.simulator.catalog_size = 40;
        c.variant = Variant::Control;
        c
    }

    fn state(c: &RunConfig) -> TrainState {
        let model = IntentRecommender::init(&c.model, c.variant, 16, 8, 8, 40, c.seed).unwrap();
        let mut s = TrainState::new(model, c.training.adam(), 0.9).unwrap();
        s.step = 17;
        s.baseline.value = 0.1 + 0.2;
        s.optimizers[2].step = 5;
        s.optimizers[4].first.values_mut().next().unwrap().data_mut()[0] = -1.5e-300;
        s
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let c = small_config();
        let s = state(&c);
        let bytes = encode(&c, &s).unwrap();
        let (c2, s2) = decode(&bytes).unwrap();
        assert_eq!(c2, c);
        assert_eq!(s2.step, 17);
        assert_eq!(s2.baseline.value.to_bits(), (0.1f64 + 0.2).to_bits());
        assert_eq!(s2.optimizers, s.optimizers);
        for (a, b) in s2.model.param_sets().iter().zip(s.model.param_sets()) {
            for ((_, pa), (_, pb)) in a.iter().zip(b.iter()) {
                assert_eq!(pa.value, pb.value);
            }
        }
        assert_eq!(encode(&c2, &s2).unwrap(), bytes);
    }

    #[test]
    fn version_and_corruption_are_rejected() {
        let c = small_config();
        let mut bytes = encode(&c, &state(&c)).unwrap();
        let good = bytes.clone();
        bytes[8] = 9;
        let err = decode(&bytes).unwrap_err();
        assert!(err.contains("version 9"), "{err}");
        assert!(decode(&good[..good.len() - 8]).is_err());
        assert!(decode(b"not a checkpoint at all").is_err());
    }

    #[test]
    fn checkpoints_are_listed_in_step_order() {
        let dir = tempfile::tempdir().unwrap();
        for step in [20, 0, 3] {
            std::fs::write(dir.path().join(checkpoint_name(step)), b"").unwrap();
        }
        std::fs::write(dir.path().join("metrics.csv"), b"").unwrap();
        let steps: Vec<u64> = list_checkpoints(dir.path()).unwrap().into_iter().map(|(s, _)| s).collect();
        assert_eq!(steps, [0, 3, 20]);
        assert_eq!(checkpoint_name(3), "checkpoint_000003.ckpt");
    }
}
