use serde::{Deserialize, Serialize};

use super::metrics::Metrics;

/// UTC hours present in training.
pub const BASELINE_HOURS: [u32; 2] = [6, 18];
/// UTC hours never seen during training.
pub const HELDOUT_HOURS: [u32; 6] = [0, 3, 9, 12, 15, 21];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourMetrics {
    pub hour: u32,
    pub r: Option<f64>,
    pub ubrmse: Option<f64>,
}

impl HourMetrics {
    pub fn from_metrics(hour: u32, m: &Metrics) -> HourMetrics {
        HourMetrics {
            hour,
            r: m.r,
            ubrmse: m.ubrmse,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReRow {
    pub hour: u32,
    pub re_r: Option<f64>,
    pub re_ubrmse: Option<f64>,
}

/// Relative generalization errors; positive means better than the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReTable {
    pub baseline_r: Option<f64>,
    pub baseline_ubrmse: Option<f64>,
    pub rows: Vec<ReRow>,
    pub mean_re_r: Option<f64>,
    pub mean_re_ubrmse: Option<f64>,
}

fn at(by_hour: &[HourMetrics], hour: u32) -> Option<&HourMetrics> {
    by_hour.iter().find(|m| m.hour == hour)
}

fn baseline(by_hour: &[HourMetrics], f: impl Fn(&HourMetrics) -> Option<f64>) -> Option<f64> {
    let a = at(by_hour, BASELINE_HOURS[0]).and_then(&f)?;
    let b = at(by_hour, BASELINE_HOURS[1]).and_then(&f)?;
    Some((a + b) / 2.0)
}

fn mean_all(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

/// `RE_R = (Xʲ − X̄)/X̄` and `RE_ubRMSE = (X̄ − Xʲ)/X̄` for each held-out hour,
/// with `X̄` the mean of the 06 and 18 UTC values.
pub fn relgen(by_hour: &[HourMetrics]) -> ReTable {
    let base_r = baseline(by_hour, |m| m.r);
    let base_u = baseline(by_hour, |m| m.ubrmse);
    let rel = |base: Option<f64>, x: Option<f64>, sign: f64| -> Option<f64> {
        let (b, x) = (base?, x?);
        (b != 0.0).then(|| sign * (x - b) / b)
    };
    let rows: Vec<ReRow> = HELDOUT_HOURS
        .iter()
        .map(|&hour| {
            let m = at(by_hour, hour);
            ReRow {
                hour,
                re_r: rel(base_r, m.and_then(|m| m.r), 1.0),
                re_ubrmse: rel(base_u, m.and_then(|m| m.ubrmse), -1.0),
            }
        })
        .collect();
    ReTable {
        baseline_r: base_r,
        baseline_ubrmse: base_u,
        mean_re_r: mean_all(rows.iter().map(|r| r.re_r)),
        mean_re_ubrmse: mean_all(rows.iter().map(|r| r.re_ubrmse)),
        rows,
    }
}
