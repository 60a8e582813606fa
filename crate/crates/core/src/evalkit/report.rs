use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::Metrics;
use super::relgen::{HourMetrics, ReTable};
use crate::error::{Error, Result};

/// One row of `metrics.csv`; absent statistics are empty fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    /// "pooled", "pixel", "station" or "network".
    pub scope: String,
    pub id: String,
    pub n: usize,
    pub r: Option<f64>,
    pub bias: Option<f64>,
    pub rmse: Option<f64>,
    pub ubrmse: Option<f64>,
}

impl MetricsRow {
    pub fn new(scope: &str, id: impl Into<String>, m: &Metrics) -> MetricsRow {
        MetricsRow {
            scope: scope.to_string(),
            id: id.into(),
            n: m.n,
            r: m.r,
            bias: m.bias,
            rmse: m.rmse,
            ubrmse: m.ubrmse,
        }
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Debug, Serialize, Deserialize)]
struct HourRow {
    hour: u32,
    n: usize,
    r: Option<f64>,
    bias: Option<f64>,
    rmse: Option<f64>,
    ubrmse: Option<f64>,
}

/// `metrics_by_hour.csv`: one row per UTC hour.
pub fn write_hour_metrics_csv(path: &Path, by_hour: &[(u32, Metrics)]) -> Result<()> {
    let rows: Vec<HourRow> = by_hour
        .iter()
        .map(|(h, m)| HourRow {
            hour: *h,
            n: m.n,
            r: m.r,
            bias: m.bias,
            rmse: m.rmse,
            ubrmse: m.ubrmse,
        })
        .collect();
    write_rows(path, &rows)
}

pub fn read_hour_metrics_csv(path: &Path) -> Result<Vec<HourMetrics>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows: Vec<HourRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    Ok(rows
        .into_iter()
        .map(|h| HourMetrics {
            hour: h.hour,
            r: h.r,
            ubrmse: h.ubrmse,
        })
        .collect())
}

/// `re_table.csv`: one row per held-out hour.
pub fn write_re_table_csv(path: &Path, table: &ReTable) -> Result<()> {
    write_rows(path, &table.rows)
}

/// Binary graymap with north up. Valid cells span grey levels 1–255 between
/// the valid minimum and maximum; masked cells are 0.
pub fn write_pgm(path: &Path, values: &[f64], mask: &[bool], h: usize, w: usize) -> Result<()> {
    if values.len() != h * w || mask.len() != h * w {
        return Err(Error::Shape(format!("heatmap needs {} cells", h * w)));
    }
    let valid = values.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| *v);
    let (lo, hi) = valid.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    for i in (0..h).rev() {
        for j in 0..w {
            let k = i * w + j;
            bytes.push(if mask[k] {
                1 + ((values[k] - lo) / span * 254.0).round() as u8
            } else {
                0
            });
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
