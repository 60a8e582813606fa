//! Spatial and temporal resampling between regular grids.

use serde::{Deserialize, Serialize};

use super::grid::{rect_area, GeoGrid};
use crate::error::{Error, Result};

/// One H×W plane with its validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl Raster {
    pub fn new(values: Vec<f64>, mask: Vec<bool>) -> Self {
        debug_assert_eq!(values.len(), mask.len());
        Raster { values, mask }
    }

    pub fn filled(n: usize, value: f64) -> Self {
        Raster {
            values: vec![value; n],
            mask: vec![true; n],
        }
    }
}

/// What to do with destination cells whose bilinear neighbours are all invalid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GapPolicy {
    /// Leave them masked.
    #[default]
    Mask,
    /// Take the nearest valid source cell.
    Fill,
}

fn check_plane(values: &[f64], mask: &[bool], grid: &GeoGrid) -> Result<()> {
    if values.len() != grid.cells() || mask.len() != grid.cells() {
        return Err(Error::Shape(format!(
            "plane has {} values / {} mask entries, grid {}x{} needs {}",
            values.len(),
            mask.len(),
            grid.nlat,
            grid.nlon,
            grid.cells()
        )));
    }
    Ok(())
}

/// Interpolation stencil along one axis: lower index and upper weight.
fn axis_stencil(u: f64, n: usize) -> (usize, f64) {
    if n == 1 {
        return (0, 0.0);
    }
    let u = u.clamp(0.0, (n - 1) as f64);
    let i0 = (u.floor() as usize).min(n - 2);
    (i0, u - i0 as f64)
}

/// Bilinear resampling from `src` to `dst` cell centers.
///
/// Weights are renormalized over valid neighbours. Destination centers
/// outside the source hull clamp to the nearest edge. A destination cell
/// is masked when its valid neighbours carry zero total weight, unless
/// `gaps` is [`GapPolicy::Fill`].
pub fn bilinear_resample(
    values: &[f64],
    mask: &[bool],
    src: &GeoGrid,
    dst: &GeoGrid,
    gaps: GapPolicy,
) -> Result<Raster> {
    src.validate()?;
    dst.validate()?;
    check_plane(values, mask, src)?;

    let rows: Vec<(usize, f64)> = (0..dst.nlat).map(|i| axis_stencil(src.row_coord(dst.lat(i)), src.nlat)).collect();
    let cols: Vec<(usize, f64)> = (0..dst.nlon).map(|j| axis_stencil(src.col_coord(dst.lon(j)), src.nlon)).collect();

    let mut out = Raster {
        values: vec![0.0; dst.cells()],
        mask: vec![false; dst.cells()],
    };
    for (i, &(i0, fy)) in rows.iter().enumerate() {
        let i1 = (i0 + 1).min(src.nlat - 1);
        for (j, &(j0, fx)) in cols.iter().enumerate() {
            let j1 = (j0 + 1).min(src.nlon - 1);
            let taps = [
                (i0, j0, (1.0 - fy) * (1.0 - fx)),
                (i0, j1, (1.0 - fy) * fx),
                (i1, j0, fy * (1.0 - fx)),
                (i1, j1, fy * fx),
            ];
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (si, sj, w) in taps {
                let k = si * src.nlon + sj;
                if mask[k] && w > 0.0 {
                    acc += w * values[k];
                    wsum += w;
                }
            }
            let k = i * dst.nlon + j;
            if wsum > 0.0 {
                out.values[k] = acc / wsum;
                out.mask[k] = true;
            } else if gaps == GapPolicy::Fill {
                if let Some(v) = nearest_valid(values, mask, src, src.row_coord(dst.lat(i)), src.col_coord(dst.lon(j))) {
                    out.values[k] = v;
                    out.mask[k] = true;
                }
            }
        }
    }
    Ok(out)
}

fn nearest_valid(values: &[f64], mask: &[bool], src: &GeoGrid, u: f64, v: f64) -> Option<f64> {
    let mut best: Option<(f64, usize)> = None;
    for i in 0..src.nlat {
        for j in 0..src.nlon {
            let k = i * src.nlon + j;
            if !mask[k] {
                continue;
            }
            let d = (i as f64 - u).powi(2) + (j as f64 - v).powi(2);
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, k));
            }
        }
    }
    best.map(|(_, k)| values[k])
}

/// Default longest gap bridged by temporal interpolation (48 h).
pub const DEFAULT_MAX_GAP_S: i64 = 48 * 3600;

/// Linear interpolation of one series onto `dst_times`.
///
/// No extrapolation; gaps between valid samples longer than `max_gap_s`
/// stay masked. Exact time matches return the source value.
pub fn temporal_interp(
    values: &[f64],
    mask: &[bool],
    src_times: &[i64],
    dst_times: &[i64],
    max_gap_s: i64,
) -> Result<(Vec<f64>, Vec<bool>)> {
    if values.len() != src_times.len() || mask.len() != src_times.len() {
        return Err(Error::Shape(format!(
            "series has {} values / {} mask entries for {} times",
            values.len(),
            mask.len(),
            src_times.len()
        )));
    }
    if src_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Shape("source times must be sorted".into()));
    }
    let valid: Vec<(i64, f64)> = src_times
        .iter()
        .zip(values)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&t, &v), _)| (t, v))
        .collect();

    let mut out_v = vec![0.0; dst_times.len()];
    let mut out_m = vec![false; dst_times.len()];
    if valid.is_empty() {
        return Ok((out_v, out_m));
    }
    for (k, &t) in dst_times.iter().enumerate() {
        // first valid sample with time >= t
        let hi = valid.partition_point(|&(s, _)| s < t);
        if hi < valid.len() && valid[hi].0 == t {
            out_v[k] = valid[hi].1;
            out_m[k] = true;
            continue;
        }
        if hi == 0 || hi == valid.len() {
            continue;
        }
        let (t0, v0) = valid[hi - 1];
        let (t1, v1) = valid[hi];
        if t1 - t0 > max_gap_s {
            continue;
        }
        let w = (t - t0) as f64 / (t1 - t0) as f64;
        out_v[k] = v0 + w * (v1 - v0);
        out_m[k] = true;
    }
    Ok((out_v, out_m))
}

/// Minimum valid-weight fraction for an aggregated coarse cell.
pub const MIN_VALID_WEIGHT_FRACTION: f64 = 0.5;

/// 1-D overlap list: for each coarse cell, (fine index, overlap length).
fn overlaps(coarse_edges: impl Fn(usize) -> (f64, f64), nc: usize, fine_edges: impl Fn(usize) -> (f64, f64), nf: usize) -> Vec<Vec<(usize, f64, f64)>> {
    (0..nc)
        .map(|c| {
            let (a0, a1) = coarse_edges(c);
            (0..nf)
                .filter_map(|f| {
                    let (b0, b1) = fine_edges(f);
                    let lo = a0.max(b0);
                    let hi = a1.min(b1);
                    (hi > lo).then_some((f, lo, hi))
                })
                .collect()
        })
        .collect()
}

/// Precomputed area weights for fine→coarse aggregation.
#[derive(Debug, Clone)]
pub struct Aggregator {
    fine: GeoGrid,
    coarse: GeoGrid,
    /// Per coarse cell: (fine flat index, overlap area).
    weights: Vec<Vec<(usize, f64)>>,
    coarse_area: Vec<f64>,
}

impl Aggregator {
    pub fn new(fine: &GeoGrid, coarse: &GeoGrid) -> Result<Self> {
        fine.validate()?;
        coarse.validate()?;
        let rows = overlaps(|i| coarse.row_edges(i), coarse.nlat, |i| fine.row_edges(i), fine.nlat);
        let cols = overlaps(|j| coarse.col_edges(j), coarse.nlon, |j| fine.col_edges(j), fine.nlon);
        let mut weights = Vec::with_capacity(coarse.cells());
        let mut coarse_area = Vec::with_capacity(coarse.cells());
        for (ci, row) in rows.iter().enumerate() {
            for (cj, col) in cols.iter().enumerate() {
                let mut w = Vec::with_capacity(row.len() * col.len());
                for &(fi, s, n) in row {
                    for &(fj, wst, e) in col {
                        w.push((fi * fine.nlon + fj, rect_area(s, n, wst, e)));
                    }
                }
                weights.push(w);
                let (s, n) = coarse.row_edges(ci);
                let (wst, e) = coarse.col_edges(cj);
                coarse_area.push(rect_area(s, n, wst, e));
            }
        }
        Ok(Aggregator {
            fine: *fine,
            coarse: *coarse,
            weights,
            coarse_area,
        })
    }

    pub fn coarse(&self) -> &GeoGrid {
        &self.coarse
    }

    pub fn apply(&self, values: &[f64], mask: &[bool]) -> Result<Raster> {
        check_plane(values, mask, &self.fine)?;
        let mut out = Raster {
            values: vec![0.0; self.coarse.cells()],
            mask: vec![false; self.coarse.cells()],
        };
        for (k, cell) in self.weights.iter().enumerate() {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for &(f, w) in cell {
                if mask[f] {
                    acc += w * values[f];
                    wsum += w;
                }
            }
            if wsum > 0.0 && wsum >= MIN_VALID_WEIGHT_FRACTION * self.coarse_area[k] {
                out.values[k] = acc / wsum;
                out.mask[k] = true;
            }
        }
        Ok(out)
    }
}

/// Area-weighted mean of fine cells overlapping each coarse cell.
///
/// A coarse cell is masked when the valid overlap covers less than half
/// of its area; disjoint grids yield a fully masked output.
pub fn aggregate_to_coarse(values: &[f64], mask: &[bool], fine: &GeoGrid, coarse: &GeoGrid) -> Result<Raster> {
    Aggregator::new(fine, coarse)?.apply(values, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_constant_and_identity() {
        let src = GeoGrid::new(10.0, 20.0, 0.5, 0.5, 4, 5).unwrap();
        let dst = GeoGrid::new(10.1, 20.05, 0.13, 0.17, 11, 9).unwrap();
        let r = bilinear_resample(&[0.7; 20], &[true; 20], &src, &dst, GapPolicy::Mask).unwrap();
        assert!(r.values.iter().all(|&v| (v - 0.7).abs() < 1e-15));
        assert!(r.mask.iter().all(|&m| m));

        let vals: Vec<f64> = (0..20).map(|k| k as f64 * 0.37).collect();
        let mut mask = vec![true; 20];
        mask[7] = false;
        let same = bilinear_resample(&vals, &mask, &src, &src, GapPolicy::Mask).unwrap();
        for k in 0..20 {
            assert_eq!(same.mask[k], mask[k]);
            if mask[k] {
                assert_eq!(same.values[k], vals[k]);
            }
        }
    }

    #[test]
    fn bilinear_midpoint_of_two_by_two() {
        let src = GeoGrid::new(0.0, 0.0, 1.0, 1.0, 2, 2).unwrap();
        let dst = GeoGrid::new(0.5, 0.5, 1.0, 1.0, 1, 1).unwrap();
        let r = bilinear_resample(&[0.0, 1.0, 2.0, 3.0], &[true; 4], &src, &dst, GapPolicy::Mask).unwrap();
        assert_eq!(r.values[0], 1.5);
    }

    #[test]
    fn bilinear_reproduces_linear_fields() {
        let src = GeoGrid::new(30.0, 90.0, 0.36, 0.36, 6, 7).unwrap();
        let dst = GeoGrid::new(30.05, 90.05, 0.1, 0.1, 18, 20).unwrap();
        let f = |lat: f64, lon: f64| 0.3 * lat - 0.2 * lon + 1.0;
        let vals: Vec<f64> = (0..42).map(|k| f(src.lat(k / 7), src.lon(k % 7))).collect();
        let r = bilinear_resample(&vals, &[true; 42], &src, &dst, GapPolicy::Mask).unwrap();
        for i in 0..dst.nlat {
            for j in 0..dst.nlon {
                let (lat, lon) = (dst.lat(i), dst.lon(j));
                let interior = lat >= src.lat(0) && lat <= src.lat(5) && lon >= src.lon(0) && lon <= src.lon(6);
                if interior {
                    assert!((r.values[i * dst.nlon + j] - f(lat, lon)).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn bilinear_gap_policies() {
        let src = GeoGrid::new(0.0, 0.0, 1.0, 1.0, 3, 3).unwrap();
        let dst = GeoGrid::new(0.0, 0.0, 0.5, 0.5, 5, 5).unwrap();
        let mut mask = vec![true; 9];
        for k in [0, 1, 3, 4] {
            mask[k] = false;
        }
        let vals: Vec<f64> = (0..9).map(|k| k as f64).collect();
        let masked = bilinear_resample(&vals, &mask, &src, &dst, GapPolicy::Mask).unwrap();
        assert!(!masked.mask[0]);
        assert!(!masked.mask[6]); // (0.5, 0.5): all four neighbours invalid
        let filled = bilinear_resample(&vals, &mask, &src, &dst, GapPolicy::Fill).unwrap();
        assert!(filled.mask.iter().all(|&m| m));
    }

    #[test]
    fn temporal_examples() {
        let h = 3600;
        let (v, m) = temporal_interp(&[0.2, 0.4], &[true, true], &[0, 6 * h], &[3 * h, 0, 6 * h], DEFAULT_MAX_GAP_S).unwrap();
        assert!(m.iter().all(|&x| x));
        assert!((v[0] - 0.3).abs() < 1e-15);
        assert_eq!(v[1], 0.2);
        assert_eq!(v[2], 0.4);
        let (v, _) = temporal_interp(&[0.2, 0.5], &[true, true], &[0, 12 * h], &[3 * h], DEFAULT_MAX_GAP_S).unwrap();
        assert!((v[0] - 0.275).abs() < 1e-15);
    }

    #[test]
    fn temporal_no_extrapolation_and_max_gap() {
        let h = 3600;
        let (_, m) = temporal_interp(&[0.2, 0.4], &[true, true], &[0, 6 * h], &[-h, 7 * h], DEFAULT_MAX_GAP_S).unwrap();
        assert_eq!(m, vec![false, false]);
        let (_, m) = temporal_interp(&[0.2, 0.4], &[true, true], &[0, 49 * h], &[3 * h], DEFAULT_MAX_GAP_S).unwrap();
        assert_eq!(m, vec![false]);
        let (_, m) = temporal_interp(&[0.2, 0.4], &[false, false], &[0, h], &[0], DEFAULT_MAX_GAP_S).unwrap();
        assert_eq!(m, vec![false]);
        // masked sample in the middle is skipped
        let (v, m) = temporal_interp(&[0.2, 9.0, 0.4], &[true, false, true], &[0, h, 2 * h], &[h], DEFAULT_MAX_GAP_S).unwrap();
        assert!(m[0] && (v[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn aggregate_block_mean_and_mask_renormalization() {
        // rows symmetric about the equator so the four fine cells have equal area
        let fine = GeoGrid::new(-0.5, 0.0, 1.0, 1.0, 2, 2).unwrap();
        let coarse = GeoGrid::new(0.0, 0.5, 2.0, 2.0, 1, 1).unwrap();
        let r = aggregate_to_coarse(&[0.1, 0.2, 0.3, 0.4], &[true; 4], &fine, &coarse).unwrap();
        assert!((r.values[0] - 0.25).abs() < 1e-15);
        let r = aggregate_to_coarse(&[0.1, 0.2, 0.3, 0.4], &[true, false, true, true], &fine, &coarse).unwrap();
        assert!((r.values[0] - (0.1 + 0.3 + 0.4) / 3.0).abs() < 1e-12);
        let r = aggregate_to_coarse(&[0.1, 0.2, 0.3, 0.4], &[true, false, false, true], &fine, &coarse).unwrap();
        assert!(r.mask[0]);
        let r = aggregate_to_coarse(&[0.1, 0.2, 0.3, 0.4], &[true, false, false, false], &fine, &coarse).unwrap();
        assert!(!r.mask[0]);
    }

    #[test]
    fn aggregate_constant_on_non_integer_ratio() {
        let fine = GeoGrid::from_edges(30.0, 90.0, 0.1, 0.1, 90, 90).unwrap();
        let coarse = GeoGrid::from_edges(30.0, 90.0, 0.36, 0.36, 25, 25).unwrap();
        let n = fine.cells();
        let r = aggregate_to_coarse(&vec![0.31; n], &vec![true; n], &fine, &coarse).unwrap();
        assert!(r.mask.iter().all(|&m| m));
        assert!(r.values.iter().all(|&v| (v - 0.31).abs() < 1e-14));
    }

    #[test]
    fn aggregate_disjoint_is_masked() {
        let fine = GeoGrid::new(0.0, 0.0, 1.0, 1.0, 2, 2).unwrap();
        let coarse = GeoGrid::new(50.0, 50.0, 2.0, 2.0, 2, 2).unwrap();
        let r = aggregate_to_coarse(&[1.0; 4], &[true; 4], &fine, &coarse).unwrap();
        assert!(r.mask.iter().all(|&m| !m));
    }
}
