use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::Result;
use crate::model::{validate_params, ModelConfig};
use crate::numerics::{ParamSet, Tensor};
use crate::training::{AdamState, Checkpoint, EpochMetrics, TrainConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"A2WC";
pub const CHECKPOINT_VERSION: u32 = 1;

const PARAM: &str = "param/";
const MOMENT1: &str = "adam_m/";
const MOMENT2: &str = "adam_v/";

#[derive(Serialize, Deserialize)]
struct RngHeader {
    algorithm: String,
    init_seed: u64,
    shuffle_seed: u64,
    /// Index of the next epoch's shuffle stream.
    next_epoch: u64,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    /// Byte offset from the start of the payload section.
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model_config: ModelConfig,
    train_config: TrainConfig,
    epoch: u64,
    adam_step: u64,
    rng: RngHeader,
    metrics: Vec<EpochMetrics>,
    tensors: Vec<TensorEntry>,
}

fn entries<'a>(ck: &'a Checkpoint) -> impl Iterator<Item = (String, &'a Tensor)> {
    let tag = |prefix: &'static str, set: &'a ParamSet| {
        set.iter().map(move |(n, t)| (format!("{prefix}{n}"), t))
    };
    tag(PARAM, &ck.params)
        .chain(tag(MOMENT1, &ck.adam.m))
        .chain(tag(MOMENT2, &ck.adam.v))
}

/// `A2WC`, version, `u64` header length, JSON header, then f64 payloads in
/// directory order.
pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let mut offset = 0u64;
    let mut tensors = Vec::new();
    for (name, t) in entries(ck) {
        tensors.push(TensorEntry {
            name,
            dtype: "f64".into(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += 8 * t.len() as u64;
    }
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        model_config: ck.model_config,
        train_config: ck.train_config,
        epoch: ck.epoch as u64,
        adam_step: ck.adam.step,
        rng: RngHeader {
            algorithm: "chacha8".into(),
            init_seed: ck.init_seed,
            shuffle_seed: ck.train_config.shuffle_seed,
            next_epoch: ck.epoch as u64,
        },
        metrics: ck.metrics.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header)
        .map_err(|e| crate::Error::Data(format!("cannot encode checkpoint header: {e}")))?;
    let mut w = Writer::default();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u64(json.len() as u64);
    w.bytes(&json);
    for (_, t) in entries(ck) {
        for &v in t.data() {
            w.f64(v);
        }
    }
    write_file(path, &w.buf)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(&bytes, path);
    r.magic(CHECKPOINT_MAGIC)?;
    r.version(CHECKPOINT_VERSION)?;
    let len = usize::try_from(r.u64()?).map_err(|_| r.err("header length overflows"))?;
    let json = r.take(len)?;
    let h: Header = serde_json::from_slice(json).map_err(|e| r.err(format!("bad header: {e}")))?;
    if h.format_version != CHECKPOINT_VERSION {
        return Err(r.err(format!("header version {} unsupported", h.format_version)));
    }
    if h.rng.shuffle_seed != h.train_config.shuffle_seed || h.rng.next_epoch != h.epoch {
        return Err(r.err("rng state inconsistent with header"));
    }
    let mut sets = [ParamSet::new(), ParamSet::new(), ParamSet::new()];
    let mut expected = 0u64;
    for e in &h.tensors {
        if e.dtype != "f64" {
            return Err(r.err(format!("tensor {} has unsupported dtype {}", e.name, e.dtype)));
        }
        if e.offset != expected {
            return Err(r.err(format!("tensor {} offset {} out of order", e.name, e.offset)));
        }
        let n = e
            .shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
            .ok_or_else(|| r.err(format!("tensor {} shape {:?} exceeds file", e.name, e.shape)))?;
        expected += 8 * n as u64;
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let t = Tensor::new(e.shape.clone(), data).map_err(|err| r.err(format!("tensor {}: {err}", e.name)))?;
        let (slot, name) = [PARAM, MOMENT1, MOMENT2]
            .iter()
            .enumerate()
            .find_map(|(i, p)| e.name.strip_prefix(p).map(|n| (i, n)))
            .ok_or_else(|| r.err(format!("unknown tensor {}", e.name)))?;
        sets[slot].insert(name, t);
    }
    r.finish()?;
    let [params, m, v] = sets;
    validate_params(&params, &h.model_config).map_err(|e| r.err(e.to_string()))?;
    if !params.same_layout(&m) || !params.same_layout(&v) {
        return Err(r.err("optimizer moments do not match parameter layout"));
    }
    Ok(Checkpoint {
        model_config: h.model_config,
        train_config: h.train_config,
        params,
        adam: AdamState {
            step: h.adam_step,
            m,
            v,
        },
        epoch: h.epoch as usize,
        init_seed: h.rng.init_seed,
        metrics: h.metrics,
    })
}
