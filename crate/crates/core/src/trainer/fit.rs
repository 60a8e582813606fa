use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::{mask_schedule, TrainConfig};
use crate::diffcore::{Graph, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::geodata::{
    augment, extract_patches, scalar_stats, split_patches, zscore_apply, zscore_fit, AugmentOp, Bounds, DataCube,
    Patch, PatchConfig, Splits, TargetField, VarSchema,
};
use crate::objective::{loss_full, LossConfig};
use crate::pscnet::{append_hints, model_forward, positional_encode, BoundParams, Network, Normalization};

/// Normalized, split training patches plus the transforms that produced them.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub splits: Splits,
    pub norm: Normalization,
    pub bounds: Bounds,
    /// Schema of the raw input cube (before context channels).
    pub input_schema: VarSchema,
    /// Patch geometry actually used (size clamped to the grid).
    pub patch: PatchConfig,
}

/// Encodes, normalizes, cuts and splits a training-domain cube.
pub fn prepare_dataset(cube: &DataCube, target: &TargetField, patch: PatchConfig, seed: u64) -> Result<Dataset> {
    let bounds = cube.grid.bounds();
    let encoded = positional_encode(cube, &bounds)?;
    let inputs = zscore_fit(&encoded)?;
    let normalized = zscore_apply(&encoded, &inputs)?;
    let (target_mean, target_std) = scalar_stats(&target.values, &target.mask)
        .ok_or_else(|| Error::InsufficientData("target has fewer than two valid values".into()))?;
    let mut target_n = target.clone();
    for (v, &m) in target_n.values.iter_mut().zip(&target.mask) {
        *v = if m { (*v - target_mean) / target_std } else { 0.0 };
    }
    let (h, w) = cube.grid.shape();
    let patch = PatchConfig {
        size: patch.size.min(h).min(w),
        ..patch
    };
    let patches = extract_patches(&normalized, &target_n, &patch)?;
    Ok(Dataset {
        splits: split_patches(patches, seed)?,
        norm: Normalization {
            inputs,
            target_mean,
            target_std,
        },
        bounds,
        input_schema: cube.schema.clone(),
        patch,
    })
}

/// Network input for a patch: its window plus hint channels when enabled.
pub fn patch_input(net: &Network, patch: &Patch, hint: Option<&[bool]>) -> Result<Tensor> {
    let (t, h, w, c) = (patch.t_len, patch.height, patch.width, patch.channels);
    if net.config.sm_hint {
        let data = append_hints(&patch.window, t, h * w, c, hint.map(|shown| (patch.label.as_slice(), shown)));
        Tensor::new(&[t, h, w, c + 2], data)
    } else {
        Tensor::new(&[t, h, w, c], patch.window.clone())
    }
}

/// Loss and parameter gradients for one input/label pair.
pub fn sample_gradients(
    net: &Network,
    input: Tensor,
    label: &[f64],
    mask: &[bool],
    loss: &LossConfig,
) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let p = BoundParams::bind(&mut g, &net.params, true);
    let x = g.constant(input);
    let y = model_forward(&mut g, &p, &net.config, x)?;
    let l = loss_full(&mut g, y, label, mask, loss)?;
    let value = g.value(l).item();
    let mut grads = g.backward(l)?;
    let out = p
        .vars()
        .iter()
        .zip(net.params.tensors())
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    Ok((value, out))
}

/// Loss of the network on a patch without hints.
pub fn patch_loss(net: &Network, patch: &Patch, loss: &LossConfig) -> Result<f64> {
    let x = patch_input(net, patch, None)?;
    let pred = net.predict(&x)?;
    crate::objective::eval_loss_full(pred.data(), patch.height, patch.width, &patch.label, &patch.label_mask, loss)
}

/// Mean no-hint loss over patches, evaluated in parallel and reduced in order.
pub fn evaluate(net: &Network, patches: &[Patch], loss: &LossConfig) -> Result<Option<f64>> {
    if patches.is_empty() {
        return Ok(None);
    }
    let losses: Vec<f64> = patches.par_iter().map(|p| patch_loss(net, p, loss)).collect::<Result<_>>()?;
    Ok(Some(losses.iter().sum::<f64>() / losses.len() as f64))
}

/// Random dihedral transform and hint selection for one training sample.
fn draw_sample(patch: &Patch, p: f64, augment_on: bool, rng: &mut ChaCha8Rng) -> Result<(Patch, Vec<bool>)> {
    let mut out = patch.clone();
    if augment_on {
        for op in [AugmentOp::FlipH, AugmentOp::FlipV, AugmentOp::Transpose] {
            let square = out.height == out.width;
            if rng.gen_bool(0.5) && (op != AugmentOp::Transpose || square) {
                out = augment(&out, op)?;
            }
        }
    }
    let valid: Vec<usize> = (0..out.label_mask.len()).filter(|&k| out.label_mask[k]).collect();
    let n_show = (p * valid.len() as f64).round() as usize;
    let mut shown = vec![false; out.label_mask.len()];
    for k in sample(rng, valid.len(), n_show.min(valid.len())).into_iter() {
        shown[valid[k]] = true;
    }
    Ok((out, shown))
}

/// One optimizer step on a batch. A fraction `p` of each patch's valid label
/// pixels is revealed through the hint channels; the loss covers all valid
/// pixels. Per-sample gradients are averaged in batch order.
pub fn train_step(
    net: &mut Network,
    opt: &mut Adam,
    batch: &[&Patch],
    p: f64,
    augment_on: bool,
    loss: &LossConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    let mut samples = Vec::with_capacity(batch.len());
    for patch in batch {
        let (aug, shown) = draw_sample(patch, p, augment_on, rng)?;
        let hint = (p > 0.0).then_some(shown);
        samples.push((patch_input(net, &aug, hint.as_deref())?, aug));
    }
    let frozen: &Network = net;
    let results: Vec<(f64, Vec<Tensor>)> = samples
        .into_par_iter()
        .map(|(x, aug)| sample_gradients(frozen, x, &aug.label, &aug.label_mask, loss))
        .collect::<Result<_>>()
        .map_err(|e| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("batch [{}]: {m}", ids(batch))),
            other => other,
        })?;
    let n = results.len() as f64;
    let mut mean_loss = 0.0;
    let mut acc: Vec<Tensor> = net.params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
    for (l, grads) in &results {
        mean_loss += l;
        for (a, g) in acc.iter_mut().zip(grads) {
            a.add_assign(g);
        }
    }
    for a in &mut acc {
        a.data_mut().iter_mut().for_each(|v| *v /= n);
    }
    if !mean_loss.is_finite() {
        return Err(Error::NonFinite(format!("loss of batch [{}]", ids(batch))));
    }
    opt.update(&mut net.params, &acc)?;
    Ok(mean_loss / n)
}

fn ids(batch: &[&Patch]) -> String {
    batch.iter().map(|p| p.id.to_string()).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub mask_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestSnapshot {
    pub epoch: usize,
    pub val_loss: f64,
    pub params: ParamSet,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub net: Network,
    pub opt: Adam,
    /// Next epoch to run.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub best: Option<BestSnapshot>,
    pub since_best: usize,
    pub stopped: bool,
    pub diverged: bool,
}

impl TrainState {
    pub fn fresh(net: Network, cfg: &TrainConfig) -> TrainState {
        let opt = Adam::new(cfg.adam, &net.params);
        TrainState {
            net,
            opt,
            epoch: 0,
            history: Vec::new(),
            best: None,
            since_best: 0,
            stopped: false,
            diverged: false,
        }
    }
}

/// Epoch-level driver with validation-based model selection.
pub struct Trainer<'a> {
    pub cfg: TrainConfig,
    pub loss: LossConfig,
    pub splits: &'a Splits,
    pub state: TrainState,
    /// Ids of every patch that contributed to a gradient step.
    pub trained_ids: BTreeSet<usize>,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub best: Network,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub test_loss: Option<f64>,
    pub state: TrainState,
    pub trained_ids: BTreeSet<usize>,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

impl<'a> Trainer<'a> {
    pub fn new(net: Network, cfg: TrainConfig, loss: LossConfig, splits: &'a Splits) -> Result<Trainer<'a>> {
        let state = TrainState::fresh(net, &cfg);
        Trainer::resume(state, cfg, loss, splits)
    }

    pub fn resume(state: TrainState, cfg: TrainConfig, loss: LossConfig, splits: &'a Splits) -> Result<Trainer<'a>> {
        cfg.validate()?;
        loss.validate()?;
        if splits.train.is_empty() || splits.val.is_empty() {
            return Err(Error::InsufficientData("training and validation splits must be non-empty".into()));
        }
        Ok(Trainer {
            cfg,
            loss,
            splits,
            state,
            trained_ids: BTreeSet::new(),
        })
    }

    pub fn finished(&self) -> bool {
        self.state.stopped || self.state.epoch >= self.cfg.epochs
    }

    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.state.epoch;
        let p = mask_schedule(epoch, self.cfg.p0, self.cfg.e_mask());
        let mut rng = epoch_rng(self.cfg.seed, epoch);
        let mut order: Vec<usize> = (0..self.splits.train.len()).collect();
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<&Patch> = chunk.iter().map(|&k| &self.splits.train[k]).collect();
            let l = train_step(
                &mut self.state.net,
                &mut self.state.opt,
                &batch,
                p,
                self.cfg.augment,
                &self.loss,
                &mut rng,
            )?;
            self.trained_ids.extend(batch.iter().map(|b| b.id));
            total += l * batch.len() as f64;
            count += batch.len();
        }
        let val_loss = evaluate(&self.state.net, &self.splits.val, &self.loss)?.expect("validation split non-empty");
        let rec = EpochRecord {
            epoch,
            train_loss: total / count as f64,
            val_loss,
            mask_fraction: p,
        };
        self.state.history.push(rec);
        self.state.epoch += 1;
        if !val_loss.is_finite() {
            self.state.stopped = true;
            self.state.diverged = true;
            return Ok(rec);
        }
        match &self.state.best {
            Some(b) if b.val_loss <= val_loss => {
                self.state.since_best += 1;
                if self.state.since_best > self.cfg.patience {
                    self.state.stopped = true;
                }
            }
            _ => {
                self.state.best = Some(BestSnapshot {
                    epoch,
                    val_loss,
                    params: self.state.net.params.clone(),
                });
                self.state.since_best = 0;
            }
        }
        Ok(rec)
    }

    /// Runs to completion, reporting each epoch to `on_epoch`.
    pub fn run(mut self, on_epoch: &mut dyn FnMut(&EpochRecord)) -> Result<FitOutcome> {
        while !self.finished() {
            let rec = self.run_epoch()?;
            on_epoch(&rec);
        }
        self.outcome()
    }

    pub fn outcome(&self) -> Result<FitOutcome> {
        let best = self
            .state
            .best
            .clone()
            .ok_or_else(|| Error::NonFinite("no epoch produced a finite validation loss".into()))?;
        let net = Network::new(self.state.net.config.clone(), best.params)?;
        let test_loss = evaluate(&net, &self.splits.test, &self.loss)?;
        Ok(FitOutcome {
            best: net,
            best_epoch: best.epoch,
            best_val_loss: best.val_loss,
            test_loss,
            state: self.state.clone(),
            trained_ids: self.trained_ids.clone(),
        })
    }
}

/// Trains from `net` with the given splits until the epoch budget or early
/// stopping ends the run.
pub fn fit(net: Network, splits: &Splits, cfg: &TrainConfig, loss: &LossConfig) -> Result<FitOutcome> {
    Trainer::new(net, cfg.clone(), *loss, splits)?.run(&mut |_| {})
}
