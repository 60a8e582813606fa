//! Randomized gradient checks for every graph operator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::gradcheck::{grad_check, Coords, FD_STEP};
use super::graph::{Graph, Padding2d, TimePadding, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Pass threshold on the maximum relative error.
pub const GRAD_TOLERANCE: f64 = 1e-4;

pub const OPERATORS: [&str; 19] = [
    "conv2d",
    "conv_time",
    "pointwise_linear",
    "gelu",
    "sigmoid",
    "add",
    "sub",
    "mul",
    "div",
    "mul_channels",
    "scale",
    "add_scalar",
    "sum",
    "reduce_mean",
    "sqrt_eps",
    "global_avg_pool",
    "box_avg_pool",
    "reshape",
    "composite_chain",
];

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub instances: usize,
    pub checked: usize,
    pub max_rel_error: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRAD_TOLERANCE
    }
}

type Case = (Vec<Tensor>, Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>);

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape matches")
}

/// Reduces an output to a scalar with fixed, non-uniform weights so every
/// output element contributes a distinct amount.
pub fn project(g: &mut Graph, y: Var) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|k| 0.5 + (1.7 * k as f64 + 0.3).sin()).collect();
    let w = g.constant(Tensor::new(&shape, w)?);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn case(op: &str, rng: &mut ChaCha8Rng) -> Result<Case> {
    let h = rng.gen_range(3..7);
    let w = rng.gen_range(3..7);
    let c = rng.gen_range(1..4);
    let xs = [h, w, c];
    Ok(match op {
        "conv2d" => {
            let k = if rng.gen_bool(0.7) { 3 } else { 1 };
            let dil = rng.gen_range(1..3);
            let valid = rng.gen_bool(0.3) && h.min(w) > dil * (k - 1);
            let cout = rng.gen_range(1..4);
            let pad = if valid { Padding2d::Valid } else { Padding2d::Same };
            (
                vec![
                    rand_tensor(rng, &xs, -1.0, 1.0),
                    rand_tensor(rng, &[k, k, c, cout], -1.0, 1.0),
                    rand_tensor(rng, &[cout], -0.5, 0.5),
                ],
                Box::new(move |g, v| {
                    let y = g.conv2d(v[0], v[1], Some(v[2]), dil, pad)?;
                    project(g, y)
                }),
            )
        }
        "conv_time" => {
            let t = rng.gen_range(1..7);
            let k = rng.gen_range(1..4);
            let dil = rng.gen_range(1..3);
            let modes = [TimePadding::Causal, TimePadding::Valid, TimePadding::Last];
            let mut pad = modes[rng.gen_range(0..3)];
            if pad == TimePadding::Valid && t < dil * (k - 1) + 1 {
                pad = TimePadding::Causal;
            }
            let cout = rng.gen_range(1..4);
            (
                vec![
                    rand_tensor(rng, &[t, 2, 2, c], -1.0, 1.0),
                    rand_tensor(rng, &[k, c, cout], -1.0, 1.0),
                    rand_tensor(rng, &[cout], -0.5, 0.5),
                ],
                Box::new(move |g, v| {
                    let y = g.conv_time(v[0], v[1], Some(v[2]), dil, pad)?;
                    project(g, y)
                }),
            )
        }
        "pointwise_linear" => {
            let cout = rng.gen_range(1..4);
            (
                vec![
                    rand_tensor(rng, &xs, -1.0, 1.0),
                    rand_tensor(rng, &[c, cout], -1.0, 1.0),
                    rand_tensor(rng, &[cout], -0.5, 0.5),
                ],
                Box::new(|g, v| {
                    let y = g.pointwise_linear(v[0], v[1], Some(v[2]))?;
                    project(g, y)
                }),
            )
        }
        "gelu" | "sigmoid" | "scale" | "add_scalar" | "sum" | "reduce_mean" | "global_avg_pool" | "reshape" => {
            let s = rng.gen_range(-2.0..2.0);
            let name = op.to_string();
            (
                vec![rand_tensor(rng, &xs, -3.0, 3.0)],
                Box::new(move |g, v| {
                    let y = match name.as_str() {
                        "gelu" => g.gelu(v[0]),
                        "sigmoid" => g.sigmoid(v[0]),
                        "scale" => g.scale(v[0], s),
                        "add_scalar" => g.add_scalar(v[0], s),
                        "sum" => g.sum(v[0]),
                        "reduce_mean" => g.reduce_mean(v[0]),
                        "global_avg_pool" => g.global_avg_pool(v[0])?,
                        _ => g.reshape(v[0], &[h * w, c])?,
                    };
                    project(g, y)
                }),
            )
        }
        "sqrt_eps" => (
            vec![rand_tensor(rng, &xs, 0.05, 3.0)],
            Box::new(|g, v| {
                let y = g.sqrt_eps(v[0]);
                project(g, y)
            }),
        ),
        "add" | "sub" | "mul" | "div" => {
            let name = op.to_string();
            let b_lo = if op == "div" { 0.3 } else { -2.0 };
            let b = rand_tensor(rng, &xs, b_lo, 2.0);
            let b = if op == "div" {
                let signs: Vec<f64> = (0..b.len()).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
                Tensor::new(&xs, b.data().iter().zip(&signs).map(|(v, s)| v * s).collect())?
            } else {
                b
            };
            (
                vec![rand_tensor(rng, &xs, -2.0, 2.0), b],
                Box::new(move |g, v| {
                    let y = match name.as_str() {
                        "add" => g.add(v[0], v[1])?,
                        "sub" => g.sub(v[0], v[1])?,
                        "mul" => g.mul(v[0], v[1])?,
                        _ => g.div(v[0], v[1])?,
                    };
                    project(g, y)
                }),
            )
        }
        "mul_channels" => (
            vec![rand_tensor(rng, &xs, -2.0, 2.0), rand_tensor(rng, &[c], -2.0, 2.0)],
            Box::new(|g, v| {
                let y = g.mul_channels(v[0], v[1])?;
                project(g, y)
            }),
        ),
        "box_avg_pool" => {
            let r = rng.gen_range(0..3);
            (
                vec![rand_tensor(rng, &xs, -2.0, 2.0)],
                Box::new(move |g, v| {
                    let y = g.box_avg_pool(v[0], r)?;
                    project(g, y)
                }),
            )
        }
        "composite_chain" => {
            let cout = rng.gen_range(1..4);
            (
                vec![
                    rand_tensor(rng, &xs, -1.0, 1.0),
                    rand_tensor(rng, &[3, 3, c, cout], -1.0, 1.0),
                    rand_tensor(rng, &[cout], -1.0, 1.0),
                ],
                Box::new(|g, v| {
                    let y = g.conv2d(v[0], v[1], None, 1, Padding2d::Same)?;
                    let y = g.gelu(y);
                    let gate = g.global_avg_pool(y)?;
                    let gate = g.mul(gate, v[2])?;
                    let gate = g.sigmoid(gate);
                    let y = g.mul_channels(y, gate)?;
                    let sq = g.mul(y, y)?;
                    let m = g.reduce_mean(sq);
                    Ok(g.sqrt_eps(m))
                }),
            )
        }
        other => return Err(Error::Config(format!("unknown operator '{other}'"))),
    })
}

/// Runs `instances` random gradient checks of one operator.
pub fn op_suite(op: &str, instances: usize, seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SuiteResult {
        name: op.to_string(),
        instances,
        checked: 0,
        max_rel_error: 0.0,
    };
    for _ in 0..instances {
        let (inputs, f) = case(op, &mut rng)?;
        let rep = grad_check(|g: &mut Graph, v: &[Var]| f(g, v), &inputs, FD_STEP, Coords::All)?;
        out.checked += rep.checked;
        out.max_rel_error = out.max_rel_error.max(rep.max_rel_error);
    }
    Ok(out)
}
