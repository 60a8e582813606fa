//! Checkpoint directories: `config.json`, `params.bin`, `norm_stats.json`,
//! `history.csv`, plus a `state/` subdirectory for resuming.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::TrainConfig;
use super::fit::{BestSnapshot, Dataset, EpochRecord, TrainState, Trainer};
use crate::diffcore::{ParamManifest, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::geodata::{Bounds, DataCube, Dtype, PatchConfig, TargetField, VarSchema};
use crate::objective::LossConfig;
use crate::pscnet::{ModelConfig, Network, Normalization, Predictor};

pub const CONFIG_FILE: &str = "config.json";
pub const NORM_FILE: &str = "norm_stats.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const STATE_DIR: &str = "state";

/// Optimizer bookkeeping needed to continue a run bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResumeInfo {
    pub next_epoch: usize,
    pub adam_step: u64,
    pub since_best: usize,
    pub stopped: bool,
    pub diverged: bool,
}

/// Contents of `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: String,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    /// Patch geometry actually used for training.
    pub patch: PatchConfig,
    pub bounds: Bounds,
    pub input_schema: VarSchema,
    pub schema_hash: String,
    pub params: ParamManifest,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub test_loss: Option<f64>,
    pub resume: ResumeInfo,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    /// Predictor built from the best-validation parameters.
    pub predictor: Predictor,
    pub history: Vec<EpochRecord>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for rec in history {
        w.serialize(rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

fn moments_set(names: &ParamSet, moments: &[Tensor]) -> Result<ParamSet> {
    let mut set = ParamSet::new();
    for (name, t) in names.names().iter().zip(moments) {
        set.push(name.clone(), t.clone())?;
    }
    Ok(set)
}

fn save_set(dir: &Path, set: &ParamSet) -> Result<ParamManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    set.save(dir, Dtype::F64Le)
}

/// Writes the current trainer state. The top-level `params.bin` holds the
/// best-validation parameters.
pub fn save_checkpoint(dir: &Path, trainer: &Trainer, data: &Dataset, test_loss: Option<f64>) -> Result<()> {
    let st = &trainer.state;
    let best = st
        .best
        .as_ref()
        .ok_or_else(|| Error::InsufficientData("no completed epoch to checkpoint".into()))?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let params = save_set(dir, &best.params)?;
    let state = dir.join(STATE_DIR);
    let spec = save_set(&state.join("current"), &st.net.params)?;
    save_set(&state.join("adam_m"), &moments_set(&st.net.params, &st.opt.m)?)?;
    save_set(&state.join("adam_v"), &moments_set(&st.net.params, &st.opt.v)?)?;
    write_json(&state.join("manifest.json"), &spec)?;
    let meta = CheckpointMeta {
        version: env!("CARGO_PKG_VERSION").to_string(),
        model: st.net.config.clone(),
        loss: trainer.loss,
        train: trainer.cfg.clone(),
        patch: data.patch,
        bounds: data.bounds,
        input_schema: data.input_schema.clone(),
        schema_hash: data.input_schema.fingerprint(),
        params,
        best_epoch: best.epoch,
        best_val_loss: best.val_loss,
        test_loss,
        resume: ResumeInfo {
            next_epoch: st.epoch,
            adam_step: st.opt.step,
            since_best: st.since_best,
            stopped: st.stopped,
            diverged: st.diverged,
        },
    };
    write_json(&dir.join(CONFIG_FILE), &meta)?;
    write_json(&dir.join(NORM_FILE), &data.norm)?;
    write_history(&dir.join(HISTORY_FILE), &st.history)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let meta: CheckpointMeta = read_json(&dir.join(CONFIG_FILE))?;
    let norm: Normalization = read_json(&dir.join(NORM_FILE))?;
    let params = ParamSet::load(dir, &meta.params)?;
    let net = Network::new(meta.model.clone(), params)?;
    let history = read_history(&dir.join(HISTORY_FILE))?;
    let predictor = Predictor {
        net,
        norm,
        bounds: meta.bounds,
        t_len: meta.patch.t_len,
    };
    Ok(Checkpoint {
        meta,
        predictor,
        history,
    })
}

/// Reconstructs the exact training state saved by [`save_checkpoint`].
pub fn load_train_state(dir: &Path) -> Result<(Checkpoint, TrainState)> {
    let ck = load_checkpoint(dir)?;
    let state = dir.join(STATE_DIR);
    let spec: ParamManifest = read_json(&state.join("manifest.json"))?;
    let current = ParamSet::load(&state.join("current"), &spec)?;
    let m = ParamSet::load(&state.join("adam_m"), &spec)?;
    let v = ParamSet::load(&state.join("adam_v"), &spec)?;
    let net = Network::new(ck.meta.model.clone(), current)?;
    let r = &ck.meta.resume;
    let opt = Adam {
        cfg: ck.meta.train.adam,
        step: r.adam_step,
        m: m.tensors().to_vec(),
        v: v.tensors().to_vec(),
    };
    let st = TrainState {
        net,
        opt,
        epoch: r.next_epoch,
        history: ck.history.clone(),
        best: Some(BestSnapshot {
            epoch: ck.meta.best_epoch,
            val_loss: ck.meta.best_val_loss,
            params: ck.predictor.net.params.clone(),
        }),
        since_best: r.since_best,
        stopped: r.stopped,
        diverged: r.diverged,
    };
    Ok((ck, st))
}

/// Full-resolution inference at every time step of a fine-grid cube.
pub fn downscale(ck: &Checkpoint, cube: &DataCube) -> Result<TargetField> {
    let hash = cube.schema.fingerprint();
    if hash != ck.meta.schema_hash {
        return Err(Error::Schema(format!(
            "input variables {:?} do not match the trained schema {:?}",
            cube.schema.names(),
            ck.meta.input_schema.names()
        )));
    }
    ck.predictor.infer_full(cube)
}
