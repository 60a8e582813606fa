use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::grid::GeoGrid;
use crate::error::{Error, Result};

/// Uniform time step of every cube, in seconds (3 hours).
pub const TIME_STEP_S: i64 = 10_800;

/// Names of the context channels appended by positional encoding.
pub const CONTEXT_CHANNELS: [&str; 3] = ["hoy", "longitude", "latitude"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Dynamic,
    Static,
    Context,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarSpec {
    pub name: String,
    pub kind: VarKind,
    pub units: String,
}

impl VarSpec {
    pub fn new(name: impl Into<String>, kind: VarKind, units: impl Into<String>) -> Self {
        VarSpec {
            name: name.into(),
            kind,
            units: units.into(),
        }
    }
}

/// Ordered channel list; the channel index is the list position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VarSchema {
    vars: Vec<VarSpec>,
}

impl VarSchema {
    pub fn new(vars: Vec<VarSpec>) -> Result<Self> {
        let mut seen = HashSet::new();
        for v in &vars {
            if !seen.insert(v.name.as_str()) {
                return Err(Error::Schema(format!("duplicate channel name '{}'", v.name)));
            }
        }
        let context: Vec<&str> = vars
            .iter()
            .filter(|v| v.kind == VarKind::Context)
            .map(|v| v.name.as_str())
            .collect();
        if !context.is_empty() {
            let mut sorted = context.clone();
            sorted.sort_unstable();
            let mut expected = CONTEXT_CHANNELS.to_vec();
            expected.sort_unstable();
            if sorted != expected {
                return Err(Error::Schema(format!(
                    "context channels must be exactly {CONTEXT_CHANNELS:?}, got {context:?}"
                )));
            }
        }
        Ok(VarSchema { vars })
    }

    pub fn vars(&self) -> &[VarSpec] {
        &self.vars
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }

    pub fn has_context(&self) -> bool {
        self.vars.iter().any(|v| v.kind == VarKind::Context)
    }

    pub fn names(&self) -> Vec<String> {
        self.vars.iter().map(|v| v.name.clone()).collect()
    }

    /// Stable fingerprint of names, kinds and order.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in &self.vars {
            h.update(v.name.as_bytes());
            h.update([0u8]);
            h.update(format!("{:?}", v.kind).as_bytes());
            h.update([0u8]);
        }
        hex::encode(&h.finalize()[..8])
    }

    pub(crate) fn with_appended(&self, extra: impl IntoIterator<Item = VarSpec>) -> Result<Self> {
        let mut vars = self.vars.clone();
        vars.extend(extra);
        VarSchema::new(vars)
    }
}

fn check_times(times: &[i64]) -> Result<()> {
    for w in times.windows(2) {
        if w[1] - w[0] != TIME_STEP_S {
            return Err(Error::Shape(format!(
                "time axis must be strictly increasing with step {TIME_STEP_S} s, found {} -> {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// T×H×W×C multi-variable field with a per-cell validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DataCube {
    pub grid: GeoGrid,
    pub schema: VarSchema,
    pub times: Vec<i64>,
    /// Row-major in (T, H, W, C) order.
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl DataCube {
    pub fn new(grid: GeoGrid, schema: VarSchema, times: Vec<i64>, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        grid.validate()?;
        check_times(&times)?;
        let n = times.len() * grid.cells() * schema.len();
        if values.len() != n || mask.len() != n {
            return Err(Error::Shape(format!(
                "cube expects {} x {} x {} x {} = {n} cells, got {} values and {} mask entries",
                times.len(),
                grid.nlat,
                grid.nlon,
                schema.len(),
                values.len(),
                mask.len()
            )));
        }
        let cube = DataCube {
            grid,
            schema,
            times,
            values,
            mask,
        };
        cube.check_static()?;
        Ok(cube)
    }

    fn check_static(&self) -> Result<()> {
        let (t_len, plane) = (self.t_len(), self.grid.cells());
        for (c, var) in self.schema.vars().iter().enumerate() {
            if var.kind != VarKind::Static {
                continue;
            }
            for t in 1..t_len {
                for p in 0..plane {
                    let a = self.offset(0, p, c);
                    let b = self.offset(t, p, c);
                    if self.values[a].to_bits() != self.values[b].to_bits() || self.mask[a] != self.mask[b] {
                        return Err(Error::Shape(format!(
                            "static channel '{}' varies in time at t={t}",
                            var.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn t_len(&self) -> usize {
        self.times.len()
    }

    pub fn channels(&self) -> usize {
        self.schema.len()
    }

    /// Flat offset of (t, pixel, channel), pixel = i * nlon + j.
    #[inline]
    pub fn offset(&self, t: usize, pixel: usize, c: usize) -> usize {
        (t * self.grid.cells() + pixel) * self.schema.len() + c
    }

    #[inline]
    pub fn get(&self, t: usize, i: usize, j: usize, c: usize) -> Option<f64> {
        let k = self.offset(t, i * self.grid.nlon + j, c);
        self.mask[k].then_some(self.values[k])
    }

    /// One channel at one time as an H×W plane with its mask.
    pub fn plane(&self, t: usize, c: usize) -> (Vec<f64>, Vec<bool>) {
        let cells = self.grid.cells();
        let mut v = Vec::with_capacity(cells);
        let mut m = Vec::with_capacity(cells);
        for p in 0..cells {
            let k = self.offset(t, p, c);
            v.push(self.values[k]);
            m.push(self.mask[k]);
        }
        (v, m)
    }

    pub fn set_plane(&mut self, t: usize, c: usize, values: &[f64], mask: &[bool]) {
        for p in 0..self.grid.cells() {
            let k = self.offset(t, p, c);
            self.values[k] = values[p];
            self.mask[k] = mask[p];
        }
    }

    pub fn time_index(&self, time: i64) -> Option<usize> {
        let t0 = *self.times.first()?;
        let d = time - t0;
        if d < 0 || d % TIME_STEP_S != 0 {
            return None;
        }
        let t = (d / TIME_STEP_S) as usize;
        (t < self.times.len()).then_some(t)
    }
}

/// T×H×W scalar field with validity mask.
///
/// Used for soil-moisture targets, truth, products and auxiliary QC fields.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSeries {
    pub grid: GeoGrid,
    pub times: Vec<i64>,
    /// Row-major in (T, H, W) order.
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

/// Soil-moisture target (m³/m³); sparse in time.
pub type TargetField = FieldSeries;

impl FieldSeries {
    pub fn new(grid: GeoGrid, times: Vec<i64>, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        grid.validate()?;
        for w in times.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Shape("field times must be strictly increasing".into()));
            }
        }
        let n = times.len() * grid.cells();
        if values.len() != n || mask.len() != n {
            return Err(Error::Shape(format!(
                "field expects {} x {} x {} = {n} cells, got {} values and {} mask entries",
                times.len(),
                grid.nlat,
                grid.nlon,
                values.len(),
                mask.len()
            )));
        }
        Ok(FieldSeries {
            grid,
            times,
            values,
            mask,
        })
    }

    pub fn empty(grid: GeoGrid, times: Vec<i64>) -> Self {
        let n = times.len() * grid.cells();
        FieldSeries {
            grid,
            times,
            values: vec![0.0; n],
            mask: vec![false; n],
        }
    }

    pub fn t_len(&self) -> usize {
        self.times.len()
    }

    #[inline]
    pub fn offset(&self, t: usize, i: usize, j: usize) -> usize {
        (t * self.grid.nlat + i) * self.grid.nlon + j
    }

    pub fn get(&self, t: usize, i: usize, j: usize) -> Option<f64> {
        let k = self.offset(t, i, j);
        self.mask[k].then_some(self.values[k])
    }

    pub fn plane(&self, t: usize) -> (&[f64], &[bool]) {
        let n = self.grid.cells();
        (&self.values[t * n..(t + 1) * n], &self.mask[t * n..(t + 1) * n])
    }

    pub fn set_plane(&mut self, t: usize, values: &[f64], mask: &[bool]) {
        let n = self.grid.cells();
        self.values[t * n..(t + 1) * n].copy_from_slice(values);
        self.mask[t * n..(t + 1) * n].copy_from_slice(mask);
    }

    pub fn time_index(&self, time: i64) -> Option<usize> {
        self.times.binary_search(&time).ok()
    }

    /// Every valid value must be a volumetric fraction in [0, 1].
    pub fn check_sm_range(&self) -> Result<()> {
        for (k, (&v, &m)) in self.values.iter().zip(&self.mask).enumerate() {
            if m && !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!(
                    "soil moisture {v} at flat index {k} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Same values restricted to the listed times (each must exist).
    pub fn select_times(&self, times: &[i64]) -> Result<FieldSeries> {
        let n = self.grid.cells();
        let mut out = FieldSeries::empty(self.grid, times.to_vec());
        for (k, &t) in times.iter().enumerate() {
            let src = self
                .time_index(t)
                .ok_or_else(|| Error::Shape(format!("time {t} not present in field")))?;
            out.values[k * n..(k + 1) * n].copy_from_slice(&self.values[src * n..(src + 1) * n]);
            out.mask[k * n..(k + 1) * n].copy_from_slice(&self.mask[src * n..(src + 1) * n]);
        }
        Ok(out)
    }
}
