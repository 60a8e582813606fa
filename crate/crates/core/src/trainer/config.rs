use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::PatchConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Initial hint-reveal fraction of the masking curriculum.
    pub p0: f64,
    /// Epoch at which the curriculum reaches zero; `None` means `epochs / 2`.
    pub e_mask: Option<usize>,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    /// Random dihedral augmentation of training patches.
    pub augment: bool,
    pub patch: PatchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 16,
            adam: AdamConfig::default(),
            seed: 42,
            p0: 0.5,
            e_mask: None,
            patience: 8,
            augment: true,
            patch: PatchConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn e_mask(&self) -> usize {
        self.e_mask.unwrap_or(self.epochs / 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.p0) {
            return Err(Error::Config(format!("p0 {} outside [0, 1]", self.p0)));
        }
        if self.e_mask() > self.epochs {
            return Err(Error::Config(format!(
                "e_mask {} exceeds epochs {}",
                self.e_mask(),
                self.epochs
            )));
        }
        let a = &self.adam;
        if !(a.lr > 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::Config(format!("invalid optimizer settings {a:?}")));
        }
        Ok(())
    }
}

/// Hint-reveal fraction `p0·max(0, 1 − epoch/e_mask)`; zero throughout when
/// `e_mask` is zero.
pub fn mask_schedule(epoch: usize, p0: f64, e_mask: usize) -> f64 {
    if e_mask == 0 {
        return 0.0;
    }
    p0 * (1.0 - epoch as f64 / e_mask as f64).max(0.0)
}
