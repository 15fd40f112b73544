//! Checkpoint directories: `checkpoint.json` with the config, history and
//! tensor names, and one AAPT file per tensor under `tensors/`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use shiftpool_core::model::{Checkpoint, ModelConfig, TensorMap};
use shiftpool_core::train::{AdamState, EpochRecord};

use crate::error::Result;
use crate::io::{read_json, read_tensor, write_json, write_tensor};

pub const INDEX: &str = "checkpoint.json";

#[derive(Serialize, Deserialize)]
struct OptimizerIndex {
    step: u64,
    lr: f32,
}

#[derive(Serialize, Deserialize)]
struct Index {
    config: ModelConfig,
    epoch: usize,
    history: Vec<EpochRecord>,
    params: Vec<String>,
    buffers: Vec<String>,
    optimizer: Option<OptimizerIndex>,
}

fn save_group(dir: &Path, group: &str, map: &TensorMap) -> Result<Vec<String>> {
    for (name, t) in map {
        write_tensor(&dir.join("tensors").join(group).join(format!("{name}.aapt")), t)?;
    }
    Ok(map.keys().cloned().collect())
}

fn load_group(dir: &Path, group: &str, names: &[String]) -> Result<TensorMap> {
    names
        .iter()
        .map(|n| Ok((n.clone(), read_tensor(&dir.join("tensors").join(group).join(format!("{n}.aapt")))?)))
        .collect()
}

pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    let params = save_group(dir, "params", &ckpt.params)?;
    let buffers = save_group(dir, "buffers", &ckpt.buffers)?;
    let optimizer = match &ckpt.optimizer {
        Some(opt) => {
            save_group(dir, "adam_m", &opt.m)?;
            save_group(dir, "adam_v", &opt.v)?;
            Some(OptimizerIndex { step: opt.step, lr: opt.lr })
        }
        None => None,
    };
    let index = Index { config: ckpt.config.clone(), epoch: ckpt.epoch, history: ckpt.history.clone(), params, buffers, optimizer };
    write_json(&dir.join(INDEX), &index)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let index: Index = read_json(&dir.join(INDEX))?;
    let params = load_group(dir, "params", &index.params)?;
    let buffers = load_group(dir, "buffers", &index.buffers)?;
    let optimizer = match index.optimizer {
        Some(o) => Some(AdamState {
            step: o.step,
            lr: o.lr,
            m: load_group(dir, "adam_m", &index.params)?,
            v: load_group(dir, "adam_v", &index.params)?,
        }),
        None => None,
    };
    Ok(Checkpoint { config: index.config, params, buffers, optimizer, epoch: index.epoch, history: index.history })
}
