use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::encode::{append_hints, positional_encode, window_at};
use super::model::Network;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::geodata::{zscore_apply, Bounds, DataCube, NormStats, TargetField};

/// Input and target normalization fitted on the training domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    /// Statistics of the context-encoded input channels.
    pub inputs: NormStats,
    pub target_mean: f64,
    pub target_std: f64,
}

/// Everything needed to turn an input cube into an SM field.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub net: Network,
    pub norm: Normalization,
    /// Training-domain bounds used by the coordinate encoding.
    pub bounds: Bounds,
    pub t_len: usize,
}

/// Marks every pixel within Chebyshev distance `r` of an invalid one.
pub fn dilate_invalid(valid: &[bool], h: usize, w: usize, r: usize) -> Vec<bool> {
    // integer prefix sums keep this exact
    let mut sat = vec![0u32; (h + 1) * (w + 1)];
    for i in 0..h {
        for j in 0..w {
            sat[(i + 1) * (w + 1) + j + 1] = sat[i * (w + 1) + j + 1] + sat[(i + 1) * (w + 1) + j]
                - sat[i * (w + 1) + j]
                + (!valid[i * w + j]) as u32;
        }
    }
    let mut out = vec![false; h * w];
    for i in 0..h {
        let (i0, i1) = (i.saturating_sub(r), (i + r + 1).min(h));
        for j in 0..w {
            let (j0, j1) = (j.saturating_sub(r), (j + r + 1).min(w));
            let bad = sat[i1 * (w + 1) + j1] + sat[i0 * (w + 1) + j0] - sat[i0 * (w + 1) + j1] - sat[i1 * (w + 1) + j0];
            out[i * w + j] = bad == 0;
        }
    }
    out
}

impl Predictor {
    /// Context encoding followed by normalization with the training stats.
    pub fn prepare(&self, cube: &DataCube) -> Result<DataCube> {
        if cube.channels() != self.net.config.in_channels {
            return Err(Error::Schema(format!(
                "model expects {} input channels, cube has {}",
                self.net.config.in_channels,
                cube.channels()
            )));
        }
        zscore_apply(&positional_encode(cube, &self.bounds)?, &self.norm.inputs)
    }

    /// Denormalized, clamped map for the window ending at `t_end` of a
    /// prepared cube, with its validity mask.
    pub fn predict_prepared(&self, prepared: &DataCube, t_end: usize) -> Result<(Vec<f64>, Vec<bool>)> {
        let (h, w) = prepared.grid.shape();
        let c = prepared.channels();
        let (window, valid) = window_at(prepared, t_end, self.t_len)?;
        let (data, width) = if self.net.config.sm_hint {
            (append_hints(&window, self.t_len, h * w, c, None), c + 2)
        } else {
            (window, c)
        };
        let x = Tensor::new(&[self.t_len, h, w, width], data)?;
        let y = self.net.predict(&x)?;
        let values = y
            .data()
            .iter()
            .map(|v| (v * self.norm.target_std + self.norm.target_mean).clamp(0.0, 1.0))
            .collect();
        let mask = match self.net.config.receptive_radius() {
            Some(r) => dilate_invalid(&valid, h, w, r),
            None => vec![valid.iter().all(|&v| v); h * w],
        };
        Ok((values, mask))
    }

    /// Full-image inference at every cube time. Steps without a complete
    /// history window are masked.
    pub fn infer_full(&self, cube: &DataCube) -> Result<TargetField> {
        let prepared = self.prepare(cube)?;
        let px = cube.grid.cells();
        let maps: Vec<(Vec<f64>, Vec<bool>)> = (0..cube.t_len())
            .into_par_iter()
            .map(|t| {
                if t + 1 < self.t_len {
                    Ok((vec![0.0; px], vec![false; px]))
                } else {
                    self.predict_prepared(&prepared, t)
                }
            })
            .collect::<Result<_>>()?;
        let mut values = Vec::with_capacity(px * maps.len());
        let mut mask = Vec::with_capacity(px * maps.len());
        for (v, m) in maps {
            values.extend(v.iter().zip(&m).map(|(&v, &m)| if m { v } else { 0.0 }));
            mask.extend(m);
        }
        TargetField::new(cube.grid, cube.times.clone(), values, mask)
    }
}
