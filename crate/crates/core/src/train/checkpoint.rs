//! Checkpoint directories: `config.json`, `train_config.json`, `weights.bin`
//! and `history.jsonl`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpochRecord, TrainConfig};
use crate::data::io::ensure_dir;
use crate::error::{Error, Result};
use crate::models::{build_skeleton, ModelConfig, ModelGraph};
use crate::nn::{weights, Module};

pub const CHECKPOINT_VERSION: u32 = 1;

pub const CONFIG_FILE: &str = "config.json";
pub const TRAIN_CONFIG_FILE: &str = "train_config.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const HISTORY_FILE: &str = "history.jsonl";

#[derive(Clone, Debug)]
pub struct CheckpointBundle {
    pub model: ModelGraph,
    pub train_config: TrainConfig,
    /// Index of the last completed epoch.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl CheckpointBundle {
    pub fn model_config(&self) -> &ModelConfig {
        self.model.config()
    }
}

#[derive(Serialize, Deserialize)]
struct TrainState {
    version: u32,
    epoch: usize,
    config: TrainConfig,
}

fn corrupt(path: &Path, reason: impl ToString) -> Error {
    Error::CorruptCheckpoint {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_checkpoint(bundle: &CheckpointBundle, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    write_file(
        &dir.join(CONFIG_FILE),
        serde_json::to_string_pretty(bundle.model.config())?.as_bytes(),
    )?;
    let state = TrainState {
        version: CHECKPOINT_VERSION,
        epoch: bundle.epoch,
        config: bundle.train_config.clone(),
    };
    write_file(&dir.join(TRAIN_CONFIG_FILE), serde_json::to_string_pretty(&state)?.as_bytes())?;
    weights::write(&bundle.model, &dir.join(WEIGHTS_FILE))?;
    let mut history = Vec::new();
    for record in &bundle.history {
        serde_json::to_writer(&mut history, record)?;
        history.write_all(b"\n").expect("writing to a Vec");
    }
    write_file(&dir.join(HISTORY_FILE), &history)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| corrupt(path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<CheckpointBundle> {
    let config: ModelConfig = read_json(&dir.join(CONFIG_FILE))?;
    let state_path = dir.join(TRAIN_CONFIG_FILE);
    let state: TrainState = read_json(&state_path)?;
    if state.version != CHECKPOINT_VERSION {
        return Err(corrupt(
            &state_path,
            format!("checkpoint version {} (expected {CHECKPOINT_VERSION})", state.version),
        ));
    }
    config
        .validate()
        .map_err(|e| Error::ConfigMismatch(format!("stored model config is invalid: {e}")))?;
    let tensors = weights::read(&dir.join(WEIGHTS_FILE))?;
    let mut model = build_skeleton(&config)?;
    let mut expected = 0usize;
    model.visit(&mut |_| expected += 1);
    if tensors.len() != expected {
        return Err(Error::ConfigMismatch(format!(
            "weights hold {} tensors, {} expects {expected}",
            tensors.len(),
            config.arch
        )));
    }
    weights::load_into(&mut model, &tensors, None)?;

    let history_path = dir.join(HISTORY_FILE);
    let text = std::fs::read_to_string(&history_path).map_err(|e| Error::io(&history_path, e))?;
    let history = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| corrupt(&history_path, e)))
        .collect::<Result<_>>()?;
    Ok(CheckpointBundle {
        model,
        train_config: state.config,
        epoch: state.epoch,
        history,
    })
}

/// Load and require the stored model configuration to equal `expected`.
pub fn load_checkpoint_for(dir: &Path, expected: &ModelConfig) -> Result<CheckpointBundle> {
    let bundle = load_checkpoint(dir)?;
    if bundle.model_config() != expected {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint {} was trained with {:?}, expected {:?}",
            dir.display(),
            bundle.model_config(),
            expected
        )));
    }
    Ok(bundle)
}
