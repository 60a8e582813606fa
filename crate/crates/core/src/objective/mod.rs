//! Mask-aware training loss: edge-weighted RMSE blended with a whole-patch
//! SSIM term.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Edge-weight coefficient; corners weigh about `ratio` times the center.
    pub ratio: f64,
    /// Weight of the RMSE term.
    pub alpha: f64,
    pub c1: f64,
    pub c2: f64,
}

impl LossConfig {
    /// Stabilizers `(0.01·L)²` and `(0.03·L)²` for dynamic range `L`.
    pub fn with_range(ratio: f64, alpha: f64, range: f64) -> LossConfig {
        LossConfig {
            ratio,
            alpha,
            c1: (0.01 * range).powi(2),
            c2: (0.03 * range).powi(2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ratio >= 1.0) {
            return Err(Error::Config(format!("edge ratio {} must be ≥ 1", self.ratio)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} must lie in [0, 1]", self.alpha)));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(Error::Config("SSIM stabilizers must be positive".into()));
        }
        Ok(())
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig::with_range(2.0, 0.8, 1.0)
    }
}

/// `W_e(i,j) = 1 + (ratio−1)·2·‖(i,j) − center‖ / √(H²+W²)`, row-major H×W.
pub fn edge_weight_kernel(h: usize, w: usize, ratio: f64) -> Result<Vec<f64>> {
    if !(ratio >= 1.0) {
        return Err(Error::Config(format!("edge ratio {ratio} must be ≥ 1")));
    }
    let (ci, cj) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let diag = ((h * h + w * w) as f64).sqrt();
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let r = ((i as f64 - ci).powi(2) + (j as f64 - cj).powi(2)).sqrt();
            out.push(1.0 + (ratio - 1.0) * 2.0 * r / diag);
        }
    }
    Ok(out)
}

fn check_inputs(g: &Graph, pred: Var, target: &[f64], mask: &[bool]) -> Result<(usize, usize)> {
    let s = g.shape(pred);
    if s.len() != 2 || s[0] * s[1] != target.len() || target.len() != mask.len() {
        return Err(Error::Shape(format!(
            "loss: prediction {s:?}, target {} and mask {} disagree",
            target.len(),
            mask.len()
        )));
    }
    Ok((s[0], s[1]))
}

fn masked_target(target: &[f64], mask: &[bool]) -> Vec<f64> {
    target.iter().zip(mask).map(|(&y, &m)| if m { y } else { 0.0 }).collect()
}

/// `√(Σ_valid W_e·(ŷ−y)² / Σ_valid W_e)`.
pub fn loss_rmse(g: &mut Graph, pred: Var, target: &[f64], mask: &[bool], we: &[f64]) -> Result<Var> {
    let (h, w) = check_inputs(g, pred, target, mask)?;
    if we.len() != h * w {
        return Err(Error::Shape(format!("edge weights have {} entries for a {h}×{w} patch", we.len())));
    }
    let wsum: f64 = we.iter().zip(mask).filter(|(_, &m)| m).map(|(w, _)| w).sum();
    if !mask.iter().any(|&m| m) {
        return Err(Error::InsufficientData("loss over a patch without valid pixels".into()));
    }
    let y = g.constant(Tensor::new(&[h, w], masked_target(target, mask))?);
    let wm = g.constant(Tensor::new(
        &[h, w],
        we.iter().zip(mask).map(|(&w, &m)| if m { w } else { 0.0 }).collect(),
    )?);
    let d = g.sub(pred, y)?;
    let sq = g.mul(d, d)?;
    let weighted = g.mul(sq, wm)?;
    let total = g.sum(weighted);
    let mse = g.scale(total, 1.0 / wsum);
    Ok(g.sqrt_eps(mse))
}

/// `1 − SSIM` from whole-patch statistics over valid pixels (population
/// moments). `None` when fewer than two pixels are valid.
pub fn loss_ssim(g: &mut Graph, pred: Var, target: &[f64], mask: &[bool], cfg: &LossConfig) -> Result<Option<Var>> {
    let (h, w) = check_inputs(g, pred, target, mask)?;
    let n = mask.iter().filter(|&&m| m).count();
    if n < 2 {
        return Ok(None);
    }
    let nf = n as f64;
    let y = masked_target(target, mask);
    let mu_y = y.iter().sum::<f64>() / nf;
    let var_y = y.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| (v - mu_y).powi(2)).sum::<f64>() / nf;

    let m = g.constant(Tensor::new(&[h, w], mask.iter().map(|&m| m as u8 as f64).collect())?);
    let yv = g.constant(Tensor::new(&[h, w], y)?);
    let xm = g.mul(pred, m)?;
    let sx = g.sum(xm);
    let mu_x = g.scale(sx, 1.0 / nf);
    let xx = g.mul(xm, pred)?;
    let sxx = g.sum(xx);
    let ex2 = g.scale(sxx, 1.0 / nf);
    let mu_x2 = g.mul(mu_x, mu_x)?;
    let var_x = g.sub(ex2, mu_x2)?;
    let xy = g.mul(xm, yv)?;
    let sxy = g.sum(xy);
    let exy = g.scale(sxy, 1.0 / nf);
    let mxy = g.scale(mu_x, mu_y);
    let cov = g.sub(exy, mxy)?;

    let a = g.scale(mu_x, 2.0 * mu_y);
    let a = g.add_scalar(a, cfg.c1);
    let b = g.scale(cov, 2.0);
    let b = g.add_scalar(b, cfg.c2);
    let num = g.mul(a, b)?;
    let c = g.add_scalar(mu_x2, mu_y * mu_y + cfg.c1);
    let d = g.add_scalar(var_x, var_y + cfg.c2);
    let den = g.mul(c, d)?;
    let ssim = g.div(num, den)?;
    let neg = g.scale(ssim, -1.0);
    Ok(Some(g.add_scalar(neg, 1.0)))
}

/// `α·L_RMSE + (1−α)·L_SSIM`; pure RMSE when the SSIM term is undefined.
pub fn loss_full(g: &mut Graph, pred: Var, target: &[f64], mask: &[bool], cfg: &LossConfig) -> Result<Var> {
    cfg.validate()?;
    let (h, w) = check_inputs(g, pred, target, mask)?;
    let we = edge_weight_kernel(h, w, cfg.ratio)?;
    let rmse = loss_rmse(g, pred, target, mask, &we)?;
    if cfg.alpha == 1.0 {
        return Ok(rmse);
    }
    let Some(ssim) = loss_ssim(g, pred, target, mask, cfg)? else {
        return Ok(rmse);
    };
    if cfg.alpha == 0.0 {
        return Ok(ssim);
    }
    let a = g.scale(rmse, cfg.alpha);
    let b = g.scale(ssim, 1.0 - cfg.alpha);
    g.add(a, b)
}

/// Loss value for plain arrays; `pred` is row-major H×W.
pub fn eval_loss_full(pred: &[f64], h: usize, w: usize, target: &[f64], mask: &[bool], cfg: &LossConfig) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.constant(Tensor::new(&[h, w], pred.to_vec())?);
    let l = loss_full(&mut g, p, target, mask, cfg)?;
    Ok(g.value(l).item())
}
