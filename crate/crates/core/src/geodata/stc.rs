//! STC cube container: a directory holding `manifest.json`, `data.bin`
//! (IEEE-754 little-endian values) and `mask.bin` (one byte per cell).
//! Values are stored in (T, H, W, C) row-major order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cube::{DataCube, FieldSeries, VarKind, VarSchema, VarSpec};
use super::grid::GeoGrid;
use crate::error::{Error, Result};

pub const ORDER: &str = "T,H,W,C row-major";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[default]
    #[serde(rename = "f32le")]
    F32Le,
    #[serde(rename = "f64le")]
    F64Le,
}

impl Dtype {
    pub fn width(self) -> usize {
        match self {
            Dtype::F32Le => 4,
            Dtype::F64Le => 8,
        }
    }

    pub fn encode(self, values: &[f64]) -> Vec<u8> {
        let mut out = Vec::with_capacity(values.len() * self.width());
        match self {
            Dtype::F32Le => values.iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
            Dtype::F64Le => values.iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
        }
        out
    }

    pub fn decode(self, bytes: &[u8]) -> Vec<f64> {
        match self {
            Dtype::F32Le => bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            Dtype::F64Le => bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub grid: GeoGrid,
    pub schema: VarSchema,
    pub times: Vec<i64>,
    pub dtype: Dtype,
    pub order: String,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_raw(dir: &Path, manifest: &Manifest, values: &[f64], mask: &[bool]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("manifest.json"), serde_json::to_string_pretty(manifest)?.as_bytes())?;
    write_file(&dir.join("data.bin"), &manifest.dtype.encode(values))?;
    let mask_bytes: Vec<u8> = mask.iter().map(|&m| m as u8).collect();
    write_file(&dir.join("mask.bin"), &mask_bytes)
}

fn read_raw(dir: &Path) -> Result<(Manifest, Vec<f64>, Vec<bool>)> {
    let mpath = dir.join("manifest.json");
    let manifest: Manifest = serde_json::from_slice(&read_file(&mpath)?)
        .map_err(|e| Error::format(&mpath, e.to_string()))?;
    if manifest.order != ORDER {
        return Err(Error::format(&mpath, format!("unsupported order '{}'", manifest.order)));
    }
    let n = manifest.times.len() * manifest.grid.cells() * manifest.schema.len();
    let dpath = dir.join("data.bin");
    let data = read_file(&dpath)?;
    if data.len() != n * manifest.dtype.width() {
        return Err(Error::format(
            &dpath,
            format!("expected {} bytes, found {}", n * manifest.dtype.width(), data.len()),
        ));
    }
    let kpath = dir.join("mask.bin");
    let mask_bytes = read_file(&kpath)?;
    if mask_bytes.len() != n {
        return Err(Error::format(&kpath, format!("expected {n} bytes, found {}", mask_bytes.len())));
    }
    let mask = mask_bytes
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::format(&kpath, format!("mask byte {other} is not 0/1"))),
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok((manifest.clone(), manifest.dtype.decode(&data), mask))
}

pub fn save_cube(dir: &Path, cube: &DataCube, dtype: Dtype) -> Result<()> {
    let manifest = Manifest {
        grid: cube.grid,
        schema: cube.schema.clone(),
        times: cube.times.clone(),
        dtype,
        order: ORDER.to_string(),
    };
    write_raw(dir, &manifest, &cube.values, &cube.mask)
}

pub fn load_cube(dir: &Path) -> Result<DataCube> {
    let (m, values, mask) = read_raw(dir)?;
    DataCube::new(m.grid, m.schema, m.times, values, mask)
}

/// Channel name used when a scalar field is stored as an STC cube.
pub const FIELD_CHANNEL: &str = "sm";

/// Stores a T×H×W field as a single-channel cube. Times need not be uniform.
pub fn save_field(dir: &Path, field: &FieldSeries, dtype: Dtype) -> Result<()> {
    save_field_named(dir, field, dtype, FIELD_CHANNEL, "m3/m3")
}

pub fn save_field_named(dir: &Path, field: &FieldSeries, dtype: Dtype, name: &str, units: &str) -> Result<()> {
    let manifest = Manifest {
        grid: field.grid,
        schema: VarSchema::new(vec![VarSpec::new(name, VarKind::Dynamic, units)])?,
        times: field.times.clone(),
        dtype,
        order: ORDER.to_string(),
    };
    write_raw(dir, &manifest, &field.values, &field.mask)
}

pub fn load_field(dir: &Path) -> Result<FieldSeries> {
    let (m, values, mask) = read_raw(dir)?;
    if m.schema.len() != 1 {
        return Err(Error::format(
            dir.join("manifest.json"),
            format!("expected a single-channel field, found {} channels", m.schema.len()),
        ));
    }
    FieldSeries::new(m.grid, m.times, values, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::TIME_STEP_S;

    #[test]
    fn rejects_truncated_data_and_bad_mask_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let g = GeoGrid::new(0.0, 0.0, 1.0, 1.0, 2, 2).unwrap();
        let f = FieldSeries::new(g, vec![0, TIME_STEP_S], vec![0.5; 8], vec![true; 8]).unwrap();
        save_field(dir.path(), &f, Dtype::F32Le).unwrap();
        assert_eq!(load_field(dir.path()).unwrap(), f);

        fs::write(dir.path().join("mask.bin"), [1u8, 1, 1, 1, 1, 1, 1, 2]).unwrap();
        assert!(load_field(dir.path()).is_err());
        fs::write(dir.path().join("data.bin"), [0u8; 12]).unwrap();
        assert!(load_field(dir.path()).is_err());
    }

    #[test]
    fn manifest_layout() {
        let dir = tempfile::tempdir().unwrap();
        let g = GeoGrid::new(0.0, 0.0, 1.0, 1.0, 1, 1).unwrap();
        let f = FieldSeries::new(g, vec![0], vec![0.25], vec![true]).unwrap();
        save_field(dir.path(), &f, Dtype::F32Le).unwrap();
        let m: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m["dtype"], "f32le");
        assert_eq!(m["order"], "T,H,W,C row-major");
        assert_eq!(m["grid"]["nlat"], 1);
        assert_eq!(m["schema"][0]["kind"], "dynamic");
        assert_eq!(fs::read(dir.path().join("data.bin")).unwrap(), 0.25f32.to_le_bytes());
    }
}
