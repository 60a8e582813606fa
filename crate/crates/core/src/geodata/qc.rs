use serde::{Deserialize, Serialize};

use super::cube::{FieldSeries, TargetField};
use crate::error::{Error, Result};

/// Retrieval-quality thresholds for satellite soil moisture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QcThresholds {
    /// Frozen-ground cutoff on surface temperature, K.
    pub min_surface_temp_k: f64,
    /// Maximum tolerated open-water fraction.
    pub max_water_frac: f64,
    /// Minimum valid soil moisture, m³/m³.
    pub min_sm: f64,
}

impl Default for QcThresholds {
    fn default() -> Self {
        QcThresholds {
            min_surface_temp_k: 273.15,
            max_water_frac: 0.10,
            min_sm: 0.02,
        }
    }
}

/// Masks frozen, water-covered and sub-threshold retrievals.
///
/// `water_frac` may carry a single time slice, which is then applied to
/// every target time. Values are left untouched; only the mask changes.
pub fn qc_filter_sm(
    target: &TargetField,
    surface_temp: &FieldSeries,
    water_frac: &FieldSeries,
    thresholds: &QcThresholds,
) -> Result<TargetField> {
    if surface_temp.grid != target.grid || water_frac.grid != target.grid {
        return Err(Error::Shape(format!(
            "qc fields must share the target grid {}x{} (temperature {}x{}, water {}x{})",
            target.grid.nlat,
            target.grid.nlon,
            surface_temp.grid.nlat,
            surface_temp.grid.nlon,
            water_frac.grid.nlat,
            water_frac.grid.nlon
        )));
    }
    if surface_temp.times != target.times {
        return Err(Error::Shape(format!(
            "surface temperature has {} times, target has {}",
            surface_temp.t_len(),
            target.t_len()
        )));
    }
    let static_water = water_frac.t_len() == 1 && target.t_len() != 1;
    if !static_water && water_frac.times != target.times {
        return Err(Error::Shape(format!(
            "water fraction has {} times, target has {}",
            water_frac.t_len(),
            target.t_len()
        )));
    }

    let plane = target.grid.cells();
    let mut out = target.clone();
    for (k, m) in out.mask.iter_mut().enumerate() {
        if !*m {
            continue;
        }
        let water = if static_water { water_frac.values[k % plane] } else { water_frac.values[k] };
        let frozen = surface_temp.values[k] < thresholds.min_surface_temp_k;
        let wet = water > thresholds.max_water_frac;
        let low = target.values[k] < thresholds.min_sm;
        if frozen || wet || low {
            *m = false;
        }
    }
    Ok(out)
}
