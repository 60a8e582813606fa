//! In-situ station records: CSV I/O, quality rules, 3-hour binning and
//! station-to-cell matching.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Datelike, Utc};
use serde::{Deserialize, Serialize};

use super::grid::GeoGrid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quality {
    #[serde(rename = "G")]
    Good,
    #[serde(rename = "D")]
    Dubious,
    #[serde(rename = "M")]
    Missing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationSample {
    pub time: i64,
    pub sm: f64,
    pub quality: Quality,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationRecord {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub depth_cm: f64,
    /// Sorted by time.
    pub series: Vec<StationSample>,
}

impl StationRecord {
    /// Network name: the id prefix before ':' (or "default").
    pub fn network(&self) -> &str {
        self.id.split_once(':').map_or("default", |(n, _)| n)
    }

    pub fn check(&self) -> Result<()> {
        if self.series.windows(2).any(|w| w[1].time < w[0].time) {
            return Err(Error::Shape(format!("station {} series not time-sorted", self.id)));
        }
        if let Some(s) = self.series.iter().find(|s| s.quality == Quality::Good && !(0.0..=1.0).contains(&s.sm)) {
            return Err(Error::Domain(format!("station {} has good sample {} outside [0, 1]", self.id, s.sm)));
        }
        Ok(())
    }

    /// Mean of good samples within ±`half_width_s` of each grid time
    /// (window half-open on the right so adjacent bins never share a sample).
    pub fn bin_to_times(&self, times: &[i64], half_width_s: i64) -> Vec<Option<f64>> {
        times
            .iter()
            .map(|&t| {
                let lo = self.series.partition_point(|s| s.time < t - half_width_s);
                let hi = self.series.partition_point(|s| s.time < t + half_width_s);
                let good: Vec<f64> = self.series[lo..hi]
                    .iter()
                    .filter(|s| s.quality == Quality::Good)
                    .map(|s| s.sm)
                    .collect();
                (!good.is_empty()).then(|| good.iter().sum::<f64>() / good.len() as f64)
            })
            .collect()
    }

    /// Fraction of `times` with no good sample in its bin.
    pub fn missing_rate(&self, times: &[i64], half_width_s: i64) -> f64 {
        if times.is_empty() {
            return 1.0;
        }
        let bins = self.bin_to_times(times, half_width_s);
        bins.iter().filter(|b| b.is_none()).count() as f64 / times.len() as f64
    }
}

/// Half width of a 3-hour station bin, seconds.
pub const BIN_HALF_WIDTH_S: i64 = 5_400;

#[derive(Debug, Serialize, Deserialize)]
struct StationRow {
    id: String,
    lat: f64,
    lon: f64,
    depth_cm: f64,
    time_epoch: i64,
    sm: f64,
    quality: Quality,
}

pub fn read_stations_csv(path: &Path) -> Result<Vec<StationRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut by_id: BTreeMap<String, StationRecord> = BTreeMap::new();
    for row in reader.deserialize() {
        let row: StationRow = row?;
        let rec = by_id.entry(row.id.clone()).or_insert_with(|| StationRecord {
            id: row.id.clone(),
            lat: row.lat,
            lon: row.lon,
            depth_cm: row.depth_cm,
            series: Vec::new(),
        });
        if rec.lat != row.lat || rec.lon != row.lon {
            return Err(Error::format(path, format!("station {} changes location between rows", row.id)));
        }
        rec.series.push(StationSample {
            time: row.time_epoch,
            sm: row.sm,
            quality: row.quality,
        });
    }
    let mut out: Vec<StationRecord> = by_id.into_values().collect();
    for rec in &mut out {
        rec.series.sort_by_key(|s| s.time);
    }
    Ok(out)
}

pub fn write_stations_csv(path: &Path, stations: &[StationRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for st in stations {
        for s in &st.series {
            writer.serialize(StationRow {
                id: st.id.clone(),
                lat: st.lat,
                lon: st.lon,
                depth_cm: st.depth_cm,
                time_epoch: s.time,
                sm: s.sm,
                quality: s.quality,
            })?;
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Month/day window, inclusive start, exclusive end, any year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeasonWindow {
    pub start: (u32, u32),
    pub end: (u32, u32),
}

impl SeasonWindow {
    /// April 1 to November 1.
    pub const MELT: SeasonWindow = SeasonWindow {
        start: (4, 1),
        end: (11, 1),
    };

    pub fn contains(&self, epoch_s: i64) -> bool {
        let Some(dt) = DateTime::<Utc>::from_timestamp(epoch_s, 0) else {
            return false;
        };
        let md = (dt.month(), dt.day());
        if self.start <= self.end {
            md >= self.start && md < self.end
        } else {
            md >= self.start || md < self.end
        }
    }
}

/// Configurable station-screening rules.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationRules {
    /// Sensors must be shallower than this depth (cm).
    pub max_depth_cm: f64,
    pub good_only: bool,
    pub season: Option<SeasonWindow>,
    /// Stations missing more than this fraction of 3-hour bins are dropped.
    pub max_missing_rate: f64,
}

impl Default for StationRules {
    fn default() -> Self {
        StationRules {
            max_depth_cm: 5.0,
            good_only: true,
            season: Some(SeasonWindow::MELT),
            max_missing_rate: 0.95,
        }
    }
}

/// A station accepted for validation, with its grid cell.
#[derive(Debug, Clone)]
pub struct MatchedStation {
    pub station: StationRecord,
    pub cell: (usize, usize),
    pub missing_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exclusion {
    pub id: String,
    pub reason: String,
}

/// Containing cell of a station by nearest center.
pub fn match_station_to_cell(station: &StationRecord, grid: &GeoGrid) -> Result<(usize, usize)> {
    grid.locate(station.lat, station.lon).ok_or_else(|| {
        Error::Domain(format!(
            "station {} at ({}, {}) lies outside the grid",
            station.id, station.lat, station.lon
        ))
    })
}

/// Applies the screening rules and keeps one station per cell.
///
/// `times` is the evaluation time axis used for missing-rate accounting.
/// Among stations sharing a cell the lowest missing rate wins (ties: id order).
pub fn select_stations(
    stations: &[StationRecord],
    grid: &GeoGrid,
    times: &[i64],
    rules: &StationRules,
) -> (Vec<MatchedStation>, Vec<Exclusion>) {
    let mut excluded = Vec::new();
    let mut by_cell: BTreeMap<(usize, usize), MatchedStation> = BTreeMap::new();
    let season_times: Vec<i64> = times
        .iter()
        .copied()
        .filter(|&t| rules.season.map_or(true, |s| s.contains(t)))
        .collect();

    for st in stations {
        let reject = |reason: String| Exclusion { id: st.id.clone(), reason };
        if st.depth_cm >= rules.max_depth_cm {
            excluded.push(reject(format!("depth {} cm not shallower than {} cm", st.depth_cm, rules.max_depth_cm)));
            continue;
        }
        let cell = match match_station_to_cell(st, grid) {
            Ok(c) => c,
            Err(e) => {
                excluded.push(reject(e.to_string()));
                continue;
            }
        };
        let mut kept = st.clone();
        kept.series.retain(|s| {
            (!rules.good_only || s.quality == Quality::Good) && rules.season.map_or(true, |w| w.contains(s.time))
        });
        if !rules.good_only {
            // bins average good samples only; relabel the retained ones
            for s in &mut kept.series {
                if s.quality == Quality::Dubious {
                    s.quality = Quality::Good;
                }
            }
        }
        let missing_rate = kept.missing_rate(&season_times, BIN_HALF_WIDTH_S);
        if missing_rate > rules.max_missing_rate {
            excluded.push(reject(format!("missing rate {missing_rate:.3} above {}", rules.max_missing_rate)));
            continue;
        }
        let candidate = MatchedStation {
            station: kept,
            cell,
            missing_rate,
        };
        match by_cell.get(&cell) {
            Some(cur) if cur.missing_rate <= candidate.missing_rate => {
                excluded.push(reject(format!("cell {cell:?} already represented by {}", cur.station.id)));
            }
            Some(cur) => {
                excluded.push(Exclusion {
                    id: cur.station.id.clone(),
                    reason: format!("cell {cell:?} better represented by {}", st.id),
                });
                by_cell.insert(cell, candidate);
            }
            None => {
                by_cell.insert(cell, candidate);
            }
        }
    }
    (by_cell.into_values().collect(), excluded)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn station(id: &str, lat: f64, lon: f64, series: Vec<(i64, f64, Quality)>) -> StationRecord {
        StationRecord {
            id: id.into(),
            lat,
            lon,
            depth_cm: 2.5,
            series: series
                .into_iter()
                .map(|(time, sm, quality)| StationSample { time, sm, quality })
                .collect(),
        }
    }

    #[test]
    fn exact_center_and_boundary_tie_break() {
        let g = GeoGrid::new(30.0, 90.0, 0.1, 0.1, 10, 10).unwrap();
        let s = station("a", g.lat(3), g.lon(4), vec![]);
        assert_eq!(match_station_to_cell(&s, &g).unwrap(), (3, 4));
        let g = GeoGrid::new(0.0, 0.0, 1.0, 1.0, 4, 4).unwrap();
        let s = station("b", 1.5, 2.5, vec![]);
        assert_eq!(match_station_to_cell(&s, &g).unwrap(), (1, 2));
        let s = station("c", 9.0, 0.0, vec![]);
        assert!(match_station_to_cell(&s, &g).is_err());
    }

    #[test]
    fn binning_averages_good_samples() {
        let h = 3600;
        let s = station(
            "a",
            0.0,
            0.0,
            vec![
                (-2 * h, 0.9, Quality::Good),
                (-h, 0.2, Quality::Good),
                (0, 0.4, Quality::Good),
                (h, 0.8, Quality::Dubious),
                (5400, 0.5, Quality::Good),
            ],
        );
        let bins = s.bin_to_times(&[0, 3 * h, 9 * h], BIN_HALF_WIDTH_S);
        assert!((bins[0].unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(bins[1], Some(0.5));
        assert_eq!(bins[2], None);
        assert!((s.missing_rate(&[0, 3 * h, 9 * h], BIN_HALF_WIDTH_S) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn most_complete_station_wins_its_cell() {
        let g = GeoGrid::new(0.0, 0.0, 1.0, 1.0, 2, 2).unwrap();
        let times: Vec<i64> = (0..10).map(|k| 1_530_403_200 + k * 10_800).collect();
        let series = |keep: usize| {
            times
                .iter()
                .enumerate()
                .map(|(k, &t)| (t, 0.3, if k < keep { Quality::Good } else { Quality::Missing }))
                .collect::<Vec<_>>()
        };
        let a = station("net:a", 0.1, 0.1, series(6)); // 40% missing
        let b = station("net:b", -0.1, 0.2, series(4)); // 60% missing
        let rules = StationRules::default();
        let (kept, excluded) = select_stations(&[b.clone(), a.clone()], &g, &times, &rules);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].station.id, "net:a");
        assert!((kept[0].missing_rate - 0.4).abs() < 1e-12);
        assert_eq!(excluded.len(), 1);
        assert_eq!(excluded[0].id, "net:b");
        assert_eq!(a.network(), "net");
    }

    #[test]
    fn rules_drop_deep_outside_and_empty() {
        let g = GeoGrid::new(0.0, 0.0, 1.0, 1.0, 2, 2).unwrap();
        let times = vec![1_530_403_200];
        let mut deep = station("deep", 0.0, 0.0, vec![(times[0], 0.3, Quality::Good)]);
        deep.depth_cm = 10.0;
        let outside = station("far", 40.0, 0.0, vec![(times[0], 0.3, Quality::Good)]);
        let flagged = station("bad", 1.0, 1.0, vec![(times[0], 0.3, Quality::Dubious)]);
        let (kept, excluded) = select_stations(&[deep, outside, flagged], &g, &times, &StationRules::default());
        assert!(kept.is_empty());
        assert_eq!(excluded.len(), 3);
    }

    #[test]
    fn melt_season_window() {
        // 2018-03-31 12:00 and 2018-04-01 00:00, 2018-11-01 00:00 UTC
        assert!(!SeasonWindow::MELT.contains(1_522_497_600));
        assert!(SeasonWindow::MELT.contains(1_522_540_800));
        assert!(!SeasonWindow::MELT.contains(1_541_030_400));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stations.csv");
        let st = vec![
            station("n:a", 30.05, 90.05, vec![(0, 0.25, Quality::Good), (10_800, 0.5, Quality::Dubious)]),
            station("n:b", 31.0, 91.0, vec![(0, 0.125, Quality::Missing)]),
        ];
        write_stations_csv(&path, &st).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("id,lat,lon,depth_cm,time_epoch,sm,quality"));
        assert_eq!(read_stations_csv(&path).unwrap(), st);
    }
}
