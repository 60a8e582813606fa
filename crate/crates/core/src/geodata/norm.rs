use serde::{Deserialize, Serialize};

use super::cube::DataCube;
use crate::error::{Error, Result};

/// Minimum standard deviation; constant channels are clamped to this.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-channel Z-score parameters fitted on the training-domain cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Mean and population standard deviation of the valid cells of each channel.
pub fn zscore_fit(cube: &DataCube) -> Result<NormStats> {
    let c_len = cube.channels();
    let mut count = vec![0usize; c_len];
    let mut sum = vec![0.0f64; c_len];
    for (k, (&v, &m)) in cube.values.iter().zip(&cube.mask).enumerate() {
        if m {
            count[k % c_len] += 1;
            sum[k % c_len] += v;
        }
    }
    let names = cube.schema.names();
    for c in 0..c_len {
        if count[c] < 2 {
            return Err(Error::InsufficientData(format!(
                "channel '{}' has {} valid cells, need at least 2",
                names[c], count[c]
            )));
        }
    }
    let mean: Vec<f64> = (0..c_len).map(|c| sum[c] / count[c] as f64).collect();
    let mut ss = vec![0.0f64; c_len];
    for (k, (&v, &m)) in cube.values.iter().zip(&cube.mask).enumerate() {
        if m {
            let d = v - mean[k % c_len];
            ss[k % c_len] += d * d;
        }
    }
    let std = (0..c_len)
        .map(|c| (ss[c] / count[c] as f64).sqrt().max(STD_FLOOR))
        .collect();
    Ok(NormStats { names, mean, std })
}

/// `(value - mean) / std` per channel; the mask is unchanged.
pub fn zscore_apply(cube: &DataCube, stats: &NormStats) -> Result<DataCube> {
    let names = cube.schema.names();
    if names != stats.names {
        return Err(Error::Schema(format!(
            "normalization stats cover {:?}, cube has {:?}",
            stats.names, names
        )));
    }
    let c_len = cube.channels();
    let mut out = cube.clone();
    for (k, v) in out.values.iter_mut().enumerate() {
        let c = k % c_len;
        *v = (*v - stats.mean[c]) / stats.std[c];
    }
    Ok(out)
}

/// Mean/std of one scalar series over valid cells (population convention).
pub fn scalar_stats(values: &[f64], mask: &[bool]) -> Option<(f64, f64)> {
    let n = mask.iter().filter(|&&m| m).count();
    if n < 2 {
        return None;
    }
    let mean = values.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| v).sum::<f64>() / n as f64;
    let var = values
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(v, _)| (v - mean) * (v - mean))
        .sum::<f64>()
        / n as f64;
    Some((mean, var.sqrt().max(STD_FLOOR)))
}
