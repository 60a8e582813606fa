use super::config::ModelConfig;
use crate::diffcore::{Graph, Padding2d, ParamSet, Tensor, TimePadding, Var};
use crate::error::{Error, Result};

/// Parameters placed on a graph, addressable by name.
pub struct BoundParams<'a> {
    params: &'a ParamSet,
    vars: Vec<Var>,
}

impl<'a> BoundParams<'a> {
    /// Adds every parameter as a leaf; `trainable` controls differentiation.
    pub fn bind(g: &mut Graph, params: &'a ParamSet, trainable: bool) -> BoundParams<'a> {
        let vars = params.tensors().iter().map(|t| g.leaf(t.clone(), trainable)).collect();
        BoundParams { params, vars }
    }

    /// Uses vars already on the graph, one per parameter in set order.
    pub fn from_vars(params: &'a ParamSet, vars: Vec<Var>) -> Result<BoundParams<'a>> {
        if vars.len() != params.len() {
            return Err(Error::Shape(format!("{} vars for {} parameters", vars.len(), params.len())));
        }
        Ok(BoundParams { params, vars })
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.params
            .position(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::Config(format!("missing parameter '{name}'")))
    }

    /// Vars in parameter-set order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn dense(&self, g: &mut Graph, x: Var, name: &str) -> Result<Var> {
        let w = self.var(&format!("{name}.weight"))?;
        let b = self.var(&format!("{name}.bias"))?;
        g.pointwise_linear(x, w, Some(b))
    }
}

/// Temporal padding mode used by distillation level `l` at length `t_len`.
fn distill_mode(cfg: &ModelConfig, l: usize, t_len: usize) -> TimePadding {
    let eff = cfg.tcn_dilations[l] * (cfg.distill_kernel - 1) + 1;
    if l + 1 == cfg.tcn_levels() || t_len < eff {
        TimePadding::Last
    } else {
        TimePadding::Valid
    }
}

/// Sequence length after each distillation level, starting from `t`.
pub fn distill_lengths(cfg: &ModelConfig, t: usize) -> Vec<usize> {
    let mut lens = vec![t];
    for l in 0..cfg.tcn_levels() {
        let cur = *lens.last().unwrap();
        lens.push(match distill_mode(cfg, l, cur) {
            TimePadding::Last => 1,
            _ => cur - cfg.tcn_dilations[l] * (cfg.distill_kernel - 1),
        });
    }
    lens
}

/// `[T,H,W,C_in] → [H,W,C_b]`: pointwise embedding, causal TCN residual
/// levels, then distillation down to a single step.
pub fn mftf_forward(g: &mut Graph, p: &BoundParams, cfg: &ModelConfig, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    if s.len() != 4 || s[3] != cfg.input_width() {
        return Err(Error::Shape(format!(
            "network input must be [T,H,W,{}], got {s:?}",
            cfg.input_width()
        )));
    }
    let mut h = p.dense(g, x, "mftf.embed")?;
    for (l, &d) in cfg.tcn_dilations.iter().enumerate() {
        let k = p.var(&format!("mftf.tcn.{l}.conv.weight"))?;
        let b = p.var(&format!("mftf.tcn.{l}.conv.bias"))?;
        let y = g.conv_time(h, k, Some(b), d, TimePadding::Causal)?;
        let y = g.gelu(y);
        let y = p.dense(g, y, &format!("mftf.tcn.{l}.enrich"))?;
        h = g.add(h, y)?;
    }
    for (l, &d) in cfg.tcn_dilations.iter().enumerate() {
        let mode = distill_mode(cfg, l, g.shape(h)[0]);
        let k = p.var(&format!("mftf.distill.{l}.weight"))?;
        let b = p.var(&format!("mftf.distill.{l}.bias"))?;
        let y = g.conv_time(h, k, Some(b), d, mode)?;
        h = g.gelu(y);
    }
    let s = g.shape(h).to_vec();
    debug_assert_eq!(s[0], 1);
    g.reshape(h, &s[1..])
}

/// Channel gate `sigmoid(fc2(gelu(fc1(squeeze(x)))))` applied to `x`.
pub fn se_forward(g: &mut Graph, p: &BoundParams, cfg: &ModelConfig, stage: usize, x: Var) -> Result<Var> {
    let squeezed = match cfg.se_window {
        Some(r) => g.box_avg_pool(x, r)?,
        None => g.global_avg_pool(x)?,
    };
    let z = p.dense(g, squeezed, &format!("stage.{stage}.se.fc1"))?;
    let z = g.gelu(z);
    let z = p.dense(g, z, &format!("stage.{stage}.se.fc2"))?;
    let gate = g.sigmoid(z);
    match cfg.se_window {
        Some(_) => g.mul(x, gate),
        None => g.mul_channels(x, gate),
    }
}

/// Factorized dilated convolution with SE gating, then a pointwise FFN,
/// each wrapped in a residual connection.
pub fn stage_forward(g: &mut Graph, p: &BoundParams, cfg: &ModelConfig, stage: usize, x: Var) -> Result<Var> {
    let d = cfg.stage_dilations[stage];
    let mut y = x;
    for part in ["conv_v", "conv_h"] {
        let k = p.var(&format!("stage.{stage}.{part}.weight"))?;
        let b = p.var(&format!("stage.{stage}.{part}.bias"))?;
        y = g.conv2d(y, k, Some(b), d, Padding2d::Same)?;
    }
    let y = g.gelu(y);
    let y = se_forward(g, p, cfg, stage, y)?;
    let x = g.add(x, y)?;
    let f = p.dense(g, x, &format!("stage.{stage}.ffn.expand"))?;
    let f = g.gelu(f);
    let f = p.dense(g, f, &format!("stage.{stage}.ffn.project"))?;
    g.add(x, f)
}

/// `[T,H,W,C_in] → [H,W]` prediction in normalized target units.
pub fn model_forward(g: &mut Graph, p: &BoundParams, cfg: &ModelConfig, x: Var) -> Result<Var> {
    let mut h = mftf_forward(g, p, cfg, x)?;
    for s in 0..cfg.num_stages() {
        h = stage_forward(g, p, cfg, s, h)?;
    }
    let y = p.dense(g, h, "head")?;
    let s = g.shape(y).to_vec();
    g.reshape(y, &s[..2])
}

/// A configuration together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: ModelConfig,
    pub params: ParamSet,
}

impl Network {
    pub fn new(config: ModelConfig, params: ParamSet) -> Result<Network> {
        config.validate()?;
        let layout = super::init::param_layout(&config);
        let specs = params.specs();
        if specs.len() != layout.len()
            || specs.iter().zip(&layout).any(|(s, (n, sh))| &s.name != n || &s.shape != sh)
        {
            return Err(Error::Config("parameter set does not match the model configuration".into()));
        }
        Ok(Network { config, params })
    }

    /// Forward pass without gradient tracking; `window` is `[T,H,W,C_in]`.
    pub fn predict(&self, window: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = BoundParams::bind(&mut g, &self.params, false);
        let x = g.constant(window.clone());
        let y = model_forward(&mut g, &p, &self.config, x)?;
        if let Some((i, op)) = g.first_nonfinite() {
            return Err(Error::NonFinite(format!("inference node {i} ({op})")));
        }
        Ok(g.value(y).clone())
    }
}
