use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Channels of the input cube before context encoding.
    pub in_channels: usize,
    pub base_channels: usize,
    /// One causal TCN level and one distillation level per entry.
    pub tcn_dilations: Vec<usize>,
    pub tcn_kernel: usize,
    pub distill_kernel: usize,
    pub stage_kernel: usize,
    /// One stage per entry.
    pub stage_dilations: Vec<usize>,
    pub se_reduction: usize,
    pub ffn_expansion: usize,
    /// Radius of the SE squeeze window; `None` pools over the whole image.
    pub se_window: Option<usize>,
    /// Two extra input channels carrying partially revealed SM values.
    pub sm_hint: bool,
}

/// Appended context channels (hour of year, longitude, latitude).
pub const CONTEXT_WIDTH: usize = 3;
/// Hint value and hint indicator.
pub const HINT_WIDTH: usize = 2;

impl ModelConfig {
    pub fn with_inputs(in_channels: usize) -> ModelConfig {
        ModelConfig {
            in_channels,
            base_channels: 64,
            tcn_dilations: vec![1, 2, 4],
            tcn_kernel: 3,
            distill_kernel: 3,
            stage_kernel: 3,
            stage_dilations: vec![1, 2, 1, 2],
            se_reduction: 8,
            ffn_expansion: 4,
            se_window: Some(7),
            sm_hint: true,
        }
    }

    pub fn num_stages(&self) -> usize {
        self.stage_dilations.len()
    }

    pub fn tcn_levels(&self) -> usize {
        self.tcn_dilations.len()
    }

    /// Width of the tensor fed to the network.
    pub fn input_width(&self) -> usize {
        self.in_channels + CONTEXT_WIDTH + if self.sm_hint { HINT_WIDTH } else { 0 }
    }

    pub fn se_width(&self) -> usize {
        self.base_channels / self.se_reduction
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("in_channels", self.in_channels),
            ("base_channels", self.base_channels),
            ("tcn_kernel", self.tcn_kernel),
            ("distill_kernel", self.distill_kernel),
            ("stage_kernel", self.stage_kernel),
            ("se_reduction", self.se_reduction),
            ("ffn_expansion", self.ffn_expansion),
            ("tcn levels", self.tcn_levels()),
            ("stages", self.num_stages()),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.tcn_dilations.contains(&0) || self.stage_dilations.contains(&0) {
            return Err(Error::Config("dilations must be at least 1".into()));
        }
        if self.stage_kernel % 2 == 0 {
            return Err(Error::Config(format!("stage_kernel {} must be odd", self.stage_kernel)));
        }
        if self.base_channels % self.se_reduction != 0 {
            return Err(Error::Config(format!(
                "se_reduction {} does not divide base_channels {}",
                self.se_reduction, self.base_channels
            )));
        }
        Ok(())
    }

    /// Chebyshev radius of each output pixel's spatial receptive field, or
    /// `None` when the SE squeeze is global.
    pub fn receptive_radius(&self) -> Option<usize> {
        let r = self.se_window?;
        Some(
            self.stage_dilations
                .iter()
                .map(|d| d * (self.stage_kernel - 1) / 2 + r)
                .sum(),
        )
    }
}
