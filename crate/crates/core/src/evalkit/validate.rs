use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use super::metrics::{Metrics, PairAccumulator};
use crate::error::{Error, Result};
use crate::geodata::{
    select_stations, Aggregator, Exclusion, FieldSeries, GeoGrid, StationRecord, StationRules, BIN_HALF_WIDTH_S,
};

/// Per-pixel temporal metrics on a grid, plus the pooled space-time values.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    /// What was compared, e.g. "product vs coarse truth".
    pub label: String,
    pub grid: GeoGrid,
    pub pooled: Metrics,
    pub per_pixel: Vec<Metrics>,
}

impl MetricsReport {
    pub fn r_map(&self) -> (Vec<f64>, Vec<bool>) {
        let v = self.per_pixel.iter().map(|m| m.r.unwrap_or(0.0)).collect();
        let k = self.per_pixel.iter().map(|m| m.r.is_some()).collect();
        (v, k)
    }
}

fn shared_times(a: &[i64], b: &[i64]) -> Vec<(usize, usize)> {
    a.iter()
        .enumerate()
        .filter_map(|(i, t)| b.binary_search(t).ok().map(|j| (i, j)))
        .collect()
}

/// Aggregates every time step of a fine field onto `coarse`.
pub fn aggregate_series(field: &FieldSeries, coarse: &GeoGrid) -> Result<FieldSeries> {
    let agg = Aggregator::new(&field.grid, coarse)?;
    let planes: Vec<_> = (0..field.t_len())
        .into_par_iter()
        .map(|t| {
            let (v, m) = field.plane(t);
            agg.apply(v, m)
        })
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(planes.len() * coarse.cells());
    let mut mask = Vec::with_capacity(planes.len() * coarse.cells());
    for p in planes {
        values.extend(p.values);
        mask.extend(p.mask);
    }
    FieldSeries::new(*coarse, field.times.clone(), values, mask)
}

/// Compares two co-gridded fields over their shared timestamps.
pub fn compare_fields(product: &FieldSeries, reference: &FieldSeries, label: &str) -> Result<MetricsReport> {
    if product.grid != reference.grid {
        return Err(Error::Shape("compared fields must share a grid".into()));
    }
    let pairs = shared_times(&product.times, &reference.times);
    if pairs.is_empty() {
        return Err(Error::InsufficientData(format!("{label}: no shared timestamps")));
    }
    let px = product.grid.cells();
    let cells: Vec<PairAccumulator> = (0..px)
        .into_par_iter()
        .map(|c| {
            let mut acc = PairAccumulator::default();
            for &(i, j) in &pairs {
                let (a, b) = (i * px + c, j * px + c);
                if product.mask[a] && reference.mask[b] {
                    acc.push(product.values[a], reference.values[b]);
                }
            }
            acc
        })
        .collect();
    let per_pixel = cells.par_iter().map(PairAccumulator::finish).collect();
    let mut pooled = PairAccumulator::default();
    for &(i, j) in &pairs {
        for c in 0..px {
            let (a, b) = (i * px + c, j * px + c);
            if product.mask[a] && reference.mask[b] {
                pooled.push(product.values[a], reference.values[b]);
            }
        }
    }
    Ok(MetricsReport {
        label: label.to_string(),
        grid: product.grid,
        pooled: pooled.finish(),
        per_pixel,
    })
}

/// Aggregates the fine product to the truth grid and compares.
pub fn validate_vs_coarse(product_fine: &FieldSeries, truth_coarse: &FieldSeries) -> Result<MetricsReport> {
    if shared_times(&product_fine.times, &truth_coarse.times).is_empty() {
        return Err(Error::InsufficientData("product and coarse truth share no timestamps".into()));
    }
    let agg = aggregate_series(product_fine, &truth_coarse.grid)?;
    compare_fields(&agg, truth_coarse, "product (aggregated) vs coarse reference")
}

/// UTC hour of an epoch time.
pub fn utc_hour(t: i64) -> u32 {
    (t.rem_euclid(86_400) / 3600) as u32
}

/// Pooled metrics for each UTC hour present in both fields.
pub fn metrics_by_hour(product: &FieldSeries, reference: &FieldSeries) -> Result<Vec<(u32, Metrics)>> {
    if product.grid != reference.grid {
        return Err(Error::Shape("compared fields must share a grid".into()));
    }
    let px = product.grid.cells();
    let mut by_hour: BTreeMap<u32, PairAccumulator> = BTreeMap::new();
    for (i, j) in shared_times(&product.times, &reference.times) {
        let acc = by_hour.entry(utc_hour(product.times[i])).or_default();
        for c in 0..px {
            let (a, b) = (i * px + c, j * px + c);
            if product.mask[a] && reference.mask[b] {
                acc.push(product.values[a], reference.values[b]);
            }
        }
    }
    Ok(by_hour.into_iter().map(|(h, acc)| (h, acc.finish())).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct StationMetrics {
    pub id: String,
    pub network: String,
    pub cell: (usize, usize),
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Default)]
pub struct StationReport {
    pub stations: Vec<StationMetrics>,
    /// Pooled over all pairs of each network.
    pub networks: BTreeMap<String, Metrics>,
    pub skipped: Vec<Exclusion>,
}

/// Station series binned to the product's 3-hour axis (within the season
/// window) and compared at each station's cell.
pub fn validate_vs_stations(
    product_fine: &FieldSeries,
    stations: &[StationRecord],
    rules: &StationRules,
) -> Result<StationReport> {
    let grid = product_fine.grid;
    let times: Vec<(usize, i64)> = product_fine
        .times
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, t)| rules.season.map_or(true, |s| s.contains(t)))
        .collect();
    let axis: Vec<i64> = times.iter().map(|&(_, t)| t).collect();
    let (matched, mut skipped) = select_stations(stations, &grid, &axis, rules);
    let px = grid.cells();
    let mut report = StationReport::default();
    let mut pooled: BTreeMap<String, PairAccumulator> = BTreeMap::new();
    for ms in matched {
        let bins = ms.station.bin_to_times(&axis, BIN_HALF_WIDTH_S);
        let cell = ms.cell.0 * grid.nlon + ms.cell.1;
        let mut acc = PairAccumulator::default();
        for (&(k, _), obs) in times.iter().zip(&bins) {
            if let (Some(o), true) = (obs, product_fine.mask[k * px + cell]) {
                acc.push(product_fine.values[k * px + cell], *o);
            }
        }
        if acc.is_empty() {
            skipped.push(Exclusion {
                id: ms.station.id.clone(),
                reason: "no overlapping valid samples".into(),
            });
            continue;
        }
        let network = ms.station.network().to_string();
        pooled.entry(network.clone()).or_default().extend(&acc);
        report.stations.push(StationMetrics {
            id: ms.station.id.clone(),
            network,
            cell: ms.cell,
            metrics: acc.finish(),
        });
    }
    report.networks = pooled.into_iter().map(|(k, v)| (k, v.finish())).collect();
    report.skipped = skipped;
    Ok(report)
}
