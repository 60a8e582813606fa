use chrono::{DateTime, Datelike, TimeZone, Utc};

use crate::geodata::{Bounds, DataCube, VarKind, VarSpec, CONTEXT_CHANNELS};
use crate::error::{Error, Result};

/// Hours in a leap year; keeps the encoding below 1 in every year.
pub const HOURS_PER_YEAR: f64 = 8784.0;

/// Hours since January 1 00:00 UTC of the timestamp's year, over 8784.
pub fn hour_of_year_fraction(epoch_s: i64) -> Result<f64> {
    let dt = DateTime::<Utc>::from_timestamp(epoch_s, 0)
        .ok_or_else(|| Error::Domain(format!("timestamp {epoch_s} out of range")))?;
    let start = Utc
        .with_ymd_and_hms(dt.year(), 1, 1, 0, 0, 0)
        .single()
        .expect("January 1 is unambiguous in UTC");
    Ok((epoch_s - start.timestamp()) as f64 / 3600.0 / HOURS_PER_YEAR)
}

/// Appends hour-of-year, longitude and latitude channels. Coordinates are
/// mapped to [0, 1] over `bounds`, which must be the training domain so
/// every grid shares one encoding.
pub fn positional_encode(cube: &DataCube, bounds: &Bounds) -> Result<DataCube> {
    if cube.schema.has_context() {
        return Err(Error::Schema("cube already carries context channels".into()));
    }
    let (lat_span, lon_span) = (bounds.lat_max - bounds.lat_min, bounds.lon_max - bounds.lon_min);
    if !(lat_span > 0.0 && lon_span > 0.0) {
        return Err(Error::Config(format!("degenerate domain bounds {bounds:?}")));
    }
    let schema = cube.schema.with_appended(CONTEXT_CHANNELS.iter().map(|n| {
        let units = if *n == "hoy" { "fraction of year" } else { "normalized degrees" };
        VarSpec::new(*n, VarKind::Context, units)
    }))?;
    let (h, w) = cube.grid.shape();
    let (c_in, c_out) = (cube.channels(), cube.channels() + CONTEXT_CHANNELS.len());
    let hoy: Vec<f64> = cube.times.iter().map(|&t| hour_of_year_fraction(t)).collect::<Result<_>>()?;
    let lon: Vec<f64> = (0..w).map(|j| (cube.grid.lon(j) - bounds.lon_min) / lon_span).collect();
    let lat: Vec<f64> = (0..h).map(|i| (cube.grid.lat(i) - bounds.lat_min) / lat_span).collect();

    let n = cube.t_len() * h * w;
    let mut values = Vec::with_capacity(n * c_out);
    let mut mask = Vec::with_capacity(n * c_out);
    for (t, &hy) in hoy.iter().enumerate() {
        for i in 0..h {
            for j in 0..w {
                let o = cube.offset(t, i * w + j, 0);
                values.extend_from_slice(&cube.values[o..o + c_in]);
                mask.extend_from_slice(&cube.mask[o..o + c_in]);
                values.extend_from_slice(&[hy, lon[j], lat[i]]);
                mask.extend_from_slice(&[true; 3]);
            }
        }
    }
    DataCube::new(cube.grid, schema, cube.times.clone(), values, mask)
}

/// Window of `t_len` steps ending at cube index `t_end`, masked values
/// zeroed, as a flat `[T, H, W, C]` array plus per-pixel input validity.
pub fn window_at(cube: &DataCube, t_end: usize, t_len: usize) -> Result<(Vec<f64>, Vec<bool>)> {
    if t_len == 0 || t_end + 1 < t_len || t_end >= cube.t_len() {
        return Err(Error::Shape(format!(
            "window of {t_len} steps ending at {t_end} does not fit {} times",
            cube.t_len()
        )));
    }
    let (p, c) = (cube.grid.cells(), cube.channels());
    let start = cube.offset(t_end + 1 - t_len, 0, 0);
    let end = cube.offset(t_end, p - 1, c - 1) + 1;
    let mut values = cube.values[start..end].to_vec();
    let mut valid = vec![true; p];
    for (k, (v, &m)) in values.iter_mut().zip(&cube.mask[start..end]).enumerate() {
        if !m {
            *v = 0.0;
            valid[(k / c) % p] = false;
        }
    }
    Ok((values, valid))
}

/// Appends hint-value and hint-indicator channels to a `[T,H,W,C]` window.
/// Hints occupy the final step only; `hint` is `None` at inference.
pub fn append_hints(
    window: &[f64],
    t_len: usize,
    pixels: usize,
    channels: usize,
    hint: Option<(&[f64], &[bool])>,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(window.len() / channels * (channels + 2));
    for (k, px) in window.chunks_exact(channels).enumerate() {
        out.extend_from_slice(px);
        let (t, p) = (k / pixels, k % pixels);
        match hint {
            Some((vals, shown)) if t + 1 == t_len && shown[p] => out.extend_from_slice(&[vals[p], 1.0]),
            _ => out.extend_from_slice(&[0.0, 0.0]),
        }
    }
    out
}
