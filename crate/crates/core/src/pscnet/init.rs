use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::diffcore::{ParamSet, Tensor};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Fan-in uniform weights, zero biases, zero head.
    Default,
    /// Fan-in uniform everywhere, including biases and head.
    Random,
}

/// Temporal encoder parameters versus spatial decoder parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Temporal,
    Spatial,
}

pub fn param_group(name: &str) -> ParamGroup {
    if name.starts_with("mftf.") {
        ParamGroup::Temporal
    } else {
        ParamGroup::Spatial
    }
}

/// Parameter names and shapes in declaration order.
pub fn param_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (c, k) = (cfg.base_channels, cfg.stage_kernel);
    let mut out: Vec<(String, Vec<usize>)> = Vec::new();
    let dense = |out: &mut Vec<(String, Vec<usize>)>, name: String, shape: Vec<usize>| {
        let cout = *shape.last().unwrap();
        out.push((format!("{name}.weight"), shape));
        out.push((format!("{name}.bias"), vec![cout]));
    };
    dense(&mut out, "mftf.embed".into(), vec![cfg.input_width(), c]);
    for l in 0..cfg.tcn_levels() {
        dense(&mut out, format!("mftf.tcn.{l}.conv"), vec![cfg.tcn_kernel, c, c]);
        dense(&mut out, format!("mftf.tcn.{l}.enrich"), vec![c, c]);
    }
    for l in 0..cfg.tcn_levels() {
        dense(&mut out, format!("mftf.distill.{l}"), vec![cfg.distill_kernel, c, c]);
    }
    for s in 0..cfg.num_stages() {
        dense(&mut out, format!("stage.{s}.conv_v"), vec![k, 1, c, c]);
        dense(&mut out, format!("stage.{s}.conv_h"), vec![1, k, c, c]);
        dense(&mut out, format!("stage.{s}.se.fc1"), vec![c, cfg.se_width()]);
        dense(&mut out, format!("stage.{s}.se.fc2"), vec![cfg.se_width(), c]);
        dense(&mut out, format!("stage.{s}.ffn.expand"), vec![c, c * cfg.ffn_expansion]);
        dense(&mut out, format!("stage.{s}.ffn.project"), vec![c * cfg.ffn_expansion, c]);
    }
    dense(&mut out, "head".into(), vec![c, 1]);
    out
}

/// Product of all axes but the last (output) one.
fn fan_in(shape: &[usize]) -> usize {
    shape[..shape.len() - 1].iter().product::<usize>().max(1)
}

pub fn init_params(cfg: &ModelConfig, scheme: InitScheme, seed: u64) -> Result<ParamSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = ParamSet::new();
    let layout = param_layout(cfg);
    for (idx, (name, shape)) in layout.iter().enumerate() {
        let is_bias = name.ends_with(".bias");
        let is_head = name.starts_with("head.");
        let zero = scheme == InitScheme::Default && (is_bias || is_head);
        let fan = if is_bias {
            fan_in(&layout[idx - 1].1)
        } else {
            fan_in(shape)
        };
        let bound = (3.0 / fan as f64).sqrt() * if is_bias { 0.1 } else { 1.0 };
        let n: usize = shape.iter().product();
        let data = if zero {
            vec![0.0; n]
        } else {
            (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
        };
        set.push(name.clone(), Tensor::new(shape, data)?)?;
    }
    Ok(set)
}
