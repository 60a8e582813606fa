use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::init::{init_params, InitScheme};
use super::model::{model_forward, BoundParams};
use crate::diffcore::{grad_check, Coords, SuiteResult, Tensor, FD_STEP};
use crate::error::Result;
use crate::objective::{loss_full, LossConfig};

/// Small random architecture for gradient checks.
pub fn random_small_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let levels = rng.gen_range(1..4);
    let stages = rng.gen_range(1..3);
    ModelConfig {
        in_channels: rng.gen_range(1..3),
        base_channels: 4,
        tcn_dilations: (0..levels).map(|_| rng.gen_range(1..3)).collect(),
        tcn_kernel: rng.gen_range(2..4),
        distill_kernel: rng.gen_range(2..4),
        stage_kernel: 3,
        stage_dilations: (0..stages).map(|_| rng.gen_range(1..3)).collect(),
        se_reduction: 2,
        ffn_expansion: 2,
        se_window: if rng.gen_bool(0.5) { Some(rng.gen_range(1..3)) } else { None },
        sm_hint: rng.gen_bool(0.5),
    }
}

/// Gradient checks of the full training objective through the network,
/// with respect to every parameter tensor and the input window.
pub fn model_suite(instances: usize, seed: u64) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SuiteResult {
        name: "loss_full(model_forward)".into(),
        instances,
        checked: 0,
        max_rel_error: 0.0,
    };
    for inst in 0..instances {
        let cfg = random_small_config(&mut rng);
        let params = init_params(&cfg, InitScheme::Random, rng.gen())?;
        let (t, h, w) = (rng.gen_range(1..5), rng.gen_range(5..8), rng.gen_range(5..8));
        let n = t * h * w * cfg.input_width();
        let x = Tensor::new(&[t, h, w, cfg.input_width()], (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let label: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mask: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(0.8)).collect();
        let loss = LossConfig::with_range(2.0, rng.gen_range(0.2..0.9), 2.0);
        let mut inputs = params.tensors().to_vec();
        inputs.push(x);
        let np = params.len();
        let rep = grad_check(
            |g, v| {
                let p = BoundParams::from_vars(&params, v[..np].to_vec())?;
                let y = model_forward(g, &p, &cfg, v[np])?;
                loss_full(g, y, &label, &mask, &loss)
            },
            &inputs,
            FD_STEP,
            Coords::Sample {
                per_input: 3,
                seed: seed ^ inst as u64,
            },
        )?;
        out.checked += rep.checked;
        out.max_rel_error = out.max_rel_error.max(rep.max_rel_error);
    }
    Ok(out)
}
