use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regular latitude-longitude raster geometry.
///
/// Row `i` has its cell center at `lat0 + i * dlat`, column `j` at
/// `lon0 + j * dlon`. There is no rotation and no projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoGrid {
    pub lat0: f64,
    pub lon0: f64,
    pub dlat: f64,
    pub dlon: f64,
    pub nlat: usize,
    pub nlon: usize,
}

/// Outer cell-edge extent of a grid, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl GeoGrid {
    pub fn new(lat0: f64, lon0: f64, dlat: f64, dlon: f64, nlat: usize, nlon: usize) -> Result<Self> {
        let grid = GeoGrid {
            lat0,
            lon0,
            dlat,
            dlon,
            nlat,
            nlon,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid whose outer edges start at (`south`, `west`).
    pub fn from_edges(south: f64, west: f64, dlat: f64, dlon: f64, nlat: usize, nlon: usize) -> Result<Self> {
        Self::new(south + 0.5 * dlat, west + 0.5 * dlon, dlat, dlon, nlat, nlon)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dlat > 0.0 && self.dlon > 0.0) {
            return Err(Error::Config(format!(
                "grid spacing must be positive, got dlat={} dlon={}",
                self.dlat, self.dlon
            )));
        }
        if self.nlat == 0 || self.nlon == 0 {
            return Err(Error::Config(format!(
                "grid must have at least one cell, got {}x{}",
                self.nlat, self.nlon
            )));
        }
        if !(self.lat0.is_finite() && self.lon0.is_finite()) {
            return Err(Error::Config("grid origin must be finite".into()));
        }
        Ok(())
    }

    pub fn lat(&self, i: usize) -> f64 {
        self.lat0 + i as f64 * self.dlat
    }

    pub fn lon(&self, j: usize) -> f64 {
        self.lon0 + j as f64 * self.dlon
    }

    pub fn cells(&self) -> usize {
        self.nlat * self.nlon
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nlat, self.nlon)
    }

    pub fn bounds(&self) -> Bounds {
        Bounds {
            lat_min: self.lat0 - 0.5 * self.dlat,
            lat_max: self.lat0 + (self.nlat as f64 - 0.5) * self.dlat,
            lon_min: self.lon0 - 0.5 * self.dlon,
            lon_max: self.lon0 + (self.nlon as f64 - 0.5) * self.dlon,
        }
    }

    /// Edges `[south, north]` of row `i`.
    pub fn row_edges(&self, i: usize) -> (f64, f64) {
        let c = self.lat(i);
        (c - 0.5 * self.dlat, c + 0.5 * self.dlat)
    }

    /// Edges `[west, east]` of column `j`.
    pub fn col_edges(&self, j: usize) -> (f64, f64) {
        let c = self.lon(j);
        (c - 0.5 * self.dlon, c + 0.5 * self.dlon)
    }

    /// Fractional row coordinate of a latitude (0 at the first center).
    pub fn row_coord(&self, lat: f64) -> f64 {
        (lat - self.lat0) / self.dlat
    }

    pub fn col_coord(&self, lon: f64) -> f64 {
        (lon - self.lon0) / self.dlon
    }

    /// Index of the cell containing (`lat`, `lon`) by nearest center.
    ///
    /// A point on a cell boundary goes to the lower-index cell.
    pub fn locate(&self, lat: f64, lon: f64) -> Option<(usize, usize)> {
        let i = nearest_index(self.row_coord(lat), self.nlat)?;
        let j = nearest_index(self.col_coord(lon), self.nlon)?;
        Some((i, j))
    }
}

fn nearest_index(u: f64, n: usize) -> Option<usize> {
    if !u.is_finite() || u < -0.5 || u > n as f64 - 0.5 {
        return None;
    }
    // ceil(u - 0.5) rounds exact halves down.
    let k = (u - 0.5).ceil().max(0.0) as usize;
    Some(k.min(n - 1))
}

impl Bounds {
    pub fn lat_mid(&self) -> f64 {
        0.5 * (self.lat_min + self.lat_max)
    }

    pub fn lon_mid(&self) -> f64 {
        0.5 * (self.lon_min + self.lon_max)
    }
}

/// Spherical area (unit sphere, steradians) of a lat/lon rectangle.
pub(crate) fn rect_area(south: f64, north: f64, west: f64, east: f64) -> f64 {
    if north <= south || east <= west {
        return 0.0;
    }
    (north.to_radians().sin() - south.to_radians().sin()) * (east - west).to_radians()
}
