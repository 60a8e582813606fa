//! Deterministic synthetic scenes with a known fine-scale soil-moisture truth.
//!
//! Auxiliary fields are smooth Gaussian random fields with AR(1) dynamics.
//! Truth comes from a fixed mapping `g` of the auxiliaries, the coarse
//! target from area aggregation of the truth sampled at 06/18 UTC.

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geodata::{
    save_cube, save_field, write_stations_csv, Aggregator, DataCube, Dtype, FieldSeries, GeoGrid, Quality,
    StationRecord, StationSample, TargetField, VarKind, VarSchema, VarSpec, TIME_STEP_S,
};

/// 2021-04-01T00:00:00Z.
pub const DEFAULT_START: i64 = 1_617_235_200;
pub const STEPS_PER_DAY: usize = 8;
/// UTC hours at which the coarse target is observed.
pub const TARGET_HOURS: [i64; 2] = [6, 18];
pub const SM_MIN: f64 = 0.02;
pub const SM_MAX: f64 = 0.6;

pub const DYNAMIC_CHANNELS: [(&str, &str); 6] = [
    ("precip", "mm/3h"),
    ("air_temp", "K"),
    ("radiation", "W/m2"),
    ("humidity", "%"),
    ("wind", "m/s"),
    ("vegetation", "-"),
];
pub const STATIC_CHANNELS: [(&str, &str); 3] = [("sand", "-"), ("clay", "-"), ("elevation", "m")];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MappingKind {
    /// `base + amplitude·σ(z)`.
    Logistic,
    /// First-order expansion of the logistic form around `z = 0`.
    Linear,
}

/// Coefficients of the truth mapping
/// `z = bias + w_precip·m̃ − w_temp·T̃ + w_texture·s̃`, where `m̃` is the
/// standardized exponentially weighted precipitation memory, `T̃` the
/// standardized air temperature and `s̃` the latent sand field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mapping {
    pub kind: MappingKind,
    pub bias: f64,
    pub w_precip: f64,
    pub w_temp: f64,
    pub w_texture: f64,
    /// Per-step decay of the precipitation memory weights.
    pub memory_decay: f64,
    /// Number of steps (current included) in the precipitation memory.
    pub memory_taps: usize,
    pub precip_ref_mean: f64,
    pub precip_ref_std: f64,
    pub temp_ref: f64,
    pub temp_ref_std: f64,
    pub base: f64,
    pub amplitude: f64,
}

impl Default for Mapping {
    fn default() -> Self {
        Mapping {
            kind: MappingKind::Logistic,
            bias: 0.0,
            w_precip: 1.0,
            w_temp: 0.6,
            w_texture: 0.5,
            memory_decay: 0.6,
            memory_taps: 5,
            precip_ref_mean: 0.6,
            precip_ref_std: 0.6,
            temp_ref: 285.0,
            temp_ref_std: 7.0,
            base: 0.05,
            amplitude: 0.45,
        }
    }
}

impl Mapping {
    /// Truth value from the standardized drivers, clamped to the SM range.
    pub fn eval(&self, memory: f64, temp: f64, texture: f64) -> f64 {
        let m = (memory - self.precip_ref_mean) / self.precip_ref_std;
        let t = (temp - self.temp_ref) / self.temp_ref_std;
        let z = self.bias + self.w_precip * m - self.w_temp * t + self.w_texture * texture;
        let s = match self.kind {
            MappingKind::Logistic => 1.0 / (1.0 + (-z).exp()),
            MappingKind::Linear => 0.5 + 0.25 * z,
        };
        (self.base + self.amplitude * s).clamp(SM_MIN, SM_MAX)
    }

    /// Normalized memory weights, most recent step first.
    pub fn memory_weights(&self) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.memory_taps).map(|k| self.memory_decay.powi(k as i32)).collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|w| w / s).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub fine: GeoGrid,
    pub coarse: GeoGrid,
    pub start: i64,
    pub days: usize,
    /// Gaussian smoothing length of the random fields, in fine cells.
    pub corr_len: f64,
    /// AR(1) coefficient per dynamic channel, per 3-hour step.
    pub ar_phi: Vec<f64>,
    pub mapping: Mapping,
    /// Standard deviation of noise added to the coarse target.
    pub target_noise: f64,
    /// Fraction of coarse target cells masked at each observation time.
    pub gap_fraction: f64,
    pub stations: usize,
    pub station_noise: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 7,
            fine: GeoGrid::from_edges(45.0, -100.0, 0.1, 0.1, 90, 90).expect("valid grid"),
            coarse: GeoGrid::from_edges(45.0, -100.0, 0.36, 0.36, 25, 25).expect("valid grid"),
            start: DEFAULT_START,
            days: 60,
            corr_len: 4.0,
            ar_phi: vec![0.7, 0.9, 0.8, 0.85, 0.8, 0.995],
            mapping: Mapping::default(),
            target_noise: 0.002,
            gap_fraction: 0.15,
            stations: 20,
            station_noise: 0.02,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.fine.validate()?;
        self.coarse.validate()?;
        if !(self.coarse.dlat > self.fine.dlat && self.coarse.dlon > self.fine.dlon) {
            return Err(Error::Config("coarse grid must be coarser than the fine grid".into()));
        }
        if self.fine.nlat < 2 || self.fine.nlon < 2 {
            return Err(Error::Config("fine grid must be at least 2x2".into()));
        }
        if self.days == 0 {
            return Err(Error::Config("scene needs at least one day".into()));
        }
        if self.ar_phi.len() != DYNAMIC_CHANNELS.len() || self.ar_phi.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::Config(format!(
                "ar_phi needs {} values in [0, 1)",
                DYNAMIC_CHANNELS.len()
            )));
        }
        if !(self.corr_len > 0.0) {
            return Err(Error::Config("corr_len must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gap_fraction) || !(self.target_noise >= 0.0) || !(self.station_noise >= 0.0) {
            return Err(Error::Config("gap_fraction must be in [0, 1] and noise levels non-negative".into()));
        }
        let m = &self.mapping;
        if m.w_precip < 0.0 || m.memory_taps == 0 || !(m.precip_ref_std > 0.0 && m.temp_ref_std > 0.0) {
            return Err(Error::Config("mapping needs w_precip >= 0, memory_taps >= 1 and positive scales".into()));
        }
        if self.stations > self.fine.cells() {
            return Err(Error::Config(format!(
                "{} stations requested on {} fine cells",
                self.stations,
                self.fine.cells()
            )));
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<i64> {
        (0..(self.days * STEPS_PER_DAY) as i64).map(|k| self.start + k * TIME_STEP_S).collect()
    }

    pub fn target_times(&self) -> Vec<i64> {
        self.times()
            .into_iter()
            .filter(|t| TARGET_HOURS.contains(&(t.rem_euclid(86_400) / 3600)))
            .collect()
    }

    /// SHA-256 of the compact JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn schema() -> VarSchema {
        let mut vars: Vec<VarSpec> = DYNAMIC_CHANNELS
            .iter()
            .map(|(n, u)| VarSpec::new(*n, VarKind::Dynamic, *u))
            .collect();
        vars.extend(STATIC_CHANNELS.iter().map(|(n, u)| VarSpec::new(*n, VarKind::Static, *u)));
        VarSchema::new(vars).expect("fixed schema is valid")
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestDoc {
    spec: SceneSpec,
    hash: String,
}

/// Auditable text form of a spec: every coefficient plus its hash.
pub fn scene_manifest(spec: &SceneSpec) -> String {
    serde_json::to_string_pretty(&ManifestDoc {
        spec: spec.clone(),
        hash: spec.hash(),
    })
    .expect("spec serializes")
}

/// Parses a manifest (or a bare spec) and checks the recorded hash.
pub fn parse_manifest(text: &str) -> Result<SceneSpec> {
    if let Ok(doc) = serde_json::from_str::<ManifestDoc>(text) {
        if doc.spec.hash() != doc.hash {
            return Err(Error::Config("scene manifest hash does not match its spec".into()));
        }
        return Ok(doc.spec);
    }
    Ok(serde_json::from_str(text)?)
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: SceneSpec,
    pub cube_fine: DataCube,
    pub cube_coarse: DataCube,
    /// Noise-free truth at every fine cell and time.
    pub truth_fine: FieldSeries,
    /// Aggregated truth at every time.
    pub truth_coarse: FieldSeries,
    /// Noisy, gappy coarse target at the observation times.
    pub target_coarse: TargetField,
    pub stations: Vec<StationRecord>,
}

const STREAM_DYNAMIC: u64 = 1;
const STREAM_STATIC: u64 = 2;
const STREAM_TARGET: u64 = 3;
const STREAM_GAPS: u64 = 4;
const STREAM_STATIONS: u64 = 5;

/// Independent random stream for (purpose, channel, step).
fn stream(seed: u64, purpose: u64, channel: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 56) | (channel << 40) | step);
    rng
}

fn gauss_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    (-r..=r).map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp()).collect()
}

fn blur_1d(src: &[f64], n_lines: usize, len: usize, stride_line: usize, stride_el: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let mut out = vec![0.0; src.len()];
    for line in 0..n_lines {
        for i in 0..len as isize {
            let mut acc = 0.0;
            for (t, &w) in k.iter().enumerate() {
                let j = i + t as isize - r;
                if j >= 0 && j < len as isize {
                    acc += w * src[line * stride_line + j as usize * stride_el];
                }
            }
            out[line * stride_line + i as usize * stride_el] = acc;
        }
    }
    out
}

/// Variance of the truncated blur at each position along one axis.
fn blur_variance(len: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    (0..len as isize)
        .map(|i| {
            k.iter()
                .enumerate()
                .filter(|(t, _)| (0..len as isize).contains(&(i + *t as isize - r)))
                .map(|(_, w)| w * w)
                .sum()
        })
        .collect()
}

/// Unit-variance Gaussian random field: blurred white noise, rescaled so
/// every cell (edges included) has variance exactly one.
pub fn gaussian_field(rng: &mut ChaCha8Rng, h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let noise: Vec<f64> = (0..h * w).map(|_| StandardNormal.sample(rng)).collect();
    let k = gauss_kernel(sigma);
    let rows = blur_1d(&noise, h, w, w, 1, &k);
    let both = blur_1d(&rows, w, h, 1, w, &k);
    let vr = blur_variance(h, &k);
    let vc = blur_variance(w, &k);
    let mut out = both;
    for i in 0..h {
        for j in 0..w {
            out[i * w + j] /= (vr[i] * vc[j]).sqrt();
        }
    }
    out
}

/// AR(1) series of unit-variance fields for one dynamic channel.
fn ar_fields(spec: &SceneSpec, channel: usize, steps: usize) -> Vec<Vec<f64>> {
    let (h, w) = spec.fine.shape();
    let innov: Vec<Vec<f64>> = (0..steps)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream(spec.seed, STREAM_DYNAMIC, channel as u64, t as u64);
            gaussian_field(&mut rng, h, w, spec.corr_len)
        })
        .collect();
    let phi = spec.ar_phi[channel];
    let scale = (1.0 - phi * phi).sqrt();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(steps);
    for e in innov {
        let next = match out.last() {
            None => e,
            Some(prev) => prev.iter().zip(&e).map(|(p, e)| phi * p + scale * e).collect(),
        };
        out.push(next);
    }
    out
}

fn hour_of_day(epoch: i64) -> f64 {
    (epoch.rem_euclid(86_400)) as f64 / 3600.0
}

fn diurnal(epoch: i64, peak_hour: f64) -> f64 {
    (2.0 * std::f64::consts::PI * (hour_of_day(epoch) - peak_hour) / 24.0).cos()
}

/// Generates the full scene. Identical specs give bit-identical scenes
/// regardless of thread count.
pub fn gen_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let (h, w) = spec.fine.shape();
    let px = h * w;
    let times = spec.times();
    let steps = times.len();

    let statics: Vec<Vec<f64>> = (0..STATIC_CHANNELS.len())
        .map(|c| gaussian_field(&mut stream(spec.seed, STREAM_STATIC, c as u64, 0), h, w, spec.corr_len))
        .collect();
    let texture = &statics[0];
    let sand: Vec<f64> = texture.iter().map(|s| 1.0 / (1.0 + (-s).exp())).collect();
    let clay: Vec<f64> = statics[1].iter().zip(&sand).map(|(c, s)| (1.0 - s) * 0.6 / (1.0 + (-c).exp())).collect();
    let elevation: Vec<f64> = statics[2].iter().map(|e| 500.0 + 250.0 * e).collect();

    let g: Vec<Vec<Vec<f64>>> = (0..DYNAMIC_CHANNELS.len()).map(|c| ar_fields(spec, c, steps)).collect();
    let mut dynamic: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(steps); DYNAMIC_CHANNELS.len()];
    for (t, &time) in times.iter().enumerate() {
        let precip: Vec<f64> = g[0][t].iter().map(|z| 1.5 * (z - 0.3).max(0.0)).collect();
        let temp: Vec<f64> = (0..px)
            .map(|k| 288.0 + 5.0 * g[1][t][k] + 5.0 * diurnal(time, 15.0) - 0.0065 * (elevation[k] - 500.0))
            .collect();
        let sun = diurnal(time, 12.0).max(0.0);
        let rad: Vec<f64> = g[2][t].iter().map(|z| 650.0 * sun * (0.75 + 0.1 * z).clamp(0.0, 1.0)).collect();
        let hum: Vec<f64> = (0..px)
            .map(|k| (70.0 + 8.0 * g[3][t][k] - 1.5 * (temp[k] - 288.0) + 5.0 * precip[k]).clamp(5.0, 100.0))
            .collect();
        let wind: Vec<f64> = g[4][t].iter().map(|z| 4.0 * (0.3 * z).exp()).collect();
        let veg: Vec<f64> = g[5][t].iter().map(|z| 0.5 + 0.1 * z).collect();
        for (c, field) in [precip, temp, rad, hum, wind, veg].into_iter().enumerate() {
            dynamic[c].push(field);
        }
    }
    drop(g);

    let weights = spec.mapping.memory_weights();
    let mut truth = Vec::with_capacity(steps * px);
    for t in 0..steps {
        for k in 0..px {
            let memory: f64 = weights
                .iter()
                .enumerate()
                .map(|(lag, wgt)| wgt * dynamic[0][t.saturating_sub(lag)][k])
                .sum();
            truth.push(spec.mapping.eval(memory, dynamic[1][t][k], texture[k]));
        }
    }
    let truth_fine = FieldSeries::new(spec.fine, times.clone(), truth, vec![true; steps * px])?;

    let schema = SceneSpec::schema();
    let n_ch = schema.len();
    let static_fields = [&sand, &clay, &elevation];
    let mut values = Vec::with_capacity(steps * px * n_ch);
    for t in 0..steps {
        for k in 0..px {
            values.extend(dynamic.iter().map(|d| d[t][k]));
            values.extend(static_fields.iter().map(|s| s[k]));
        }
    }
    drop(dynamic);
    let cube_fine = DataCube::new(spec.fine, schema.clone(), times.clone(), values, vec![true; steps * px * n_ch])?;

    let agg = Aggregator::new(&spec.fine, &spec.coarse)?;
    let cpx = spec.coarse.cells();
    let full = vec![true; px];
    let planes: Vec<(Vec<f64>, Vec<f64>)> = (0..steps)
        .into_par_iter()
        .map(|t| {
            let mut cube_plane = vec![0.0; cpx * n_ch];
            for c in 0..n_ch {
                let (v, _) = cube_fine.plane(t, c);
                let r = agg.apply(&v, &full)?;
                for (k, val) in r.values.iter().enumerate() {
                    cube_plane[k * n_ch + c] = *val;
                }
            }
            let (tv, tm) = truth_fine.plane(t);
            Ok((cube_plane, agg.apply(tv, tm)?.values))
        })
        .collect::<Result<_>>()?;
    let mut cvals = Vec::with_capacity(steps * cpx * n_ch);
    let mut tvals = Vec::with_capacity(steps * cpx);
    for (c, t) in planes {
        cvals.extend(c);
        tvals.extend(t);
    }
    let cube_coarse = DataCube::new(spec.coarse, schema, times.clone(), cvals, vec![true; steps * cpx * n_ch])?;
    let truth_coarse = FieldSeries::new(spec.coarse, times.clone(), tvals, vec![true; steps * cpx])?;

    let target_times = spec.target_times();
    let n_gap = (spec.gap_fraction * cpx as f64).round() as usize;
    let (ch, cw) = spec.coarse.shape();
    let gap_sigma = (spec.corr_len * spec.fine.dlat / spec.coarse.dlat).max(0.5);
    let target_planes: Vec<(Vec<f64>, Vec<bool>)> = target_times
        .par_iter()
        .enumerate()
        .map(|(n, &time)| {
            let t = truth_coarse.time_index(time).expect("target time on axis");
            let (tv, _) = truth_coarse.plane(t);
            let mut rng = stream(spec.seed, STREAM_TARGET, 0, n as u64);
            let vals: Vec<f64> = tv
                .iter()
                .map(|v| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    (v + spec.target_noise * e).clamp(0.0, 1.0)
                })
                .collect();
            let field = gaussian_field(&mut stream(spec.seed, STREAM_GAPS, 0, n as u64), ch, cw, gap_sigma);
            let mut order: Vec<usize> = (0..cpx).collect();
            order.sort_by(|&a, &b| field[a].total_cmp(&field[b]).then(a.cmp(&b)));
            let mut mask = vec![true; cpx];
            for &k in &order[..n_gap] {
                mask[k] = false;
            }
            let vals = vals.iter().zip(&mask).map(|(&v, &m)| if m { v } else { 0.0 }).collect();
            (vals, mask)
        })
        .collect();
    let (mut gv, mut gm) = (Vec::new(), Vec::new());
    for (v, m) in target_planes {
        gv.extend(v);
        gm.extend(m);
    }
    let target_coarse = FieldSeries::new(spec.coarse, target_times, gv, gm)?;

    let mut rng = stream(spec.seed, STREAM_STATIONS, 0, 0);
    let cells = sample(&mut rng, px, spec.stations).into_vec();
    let stations = cells
        .iter()
        .enumerate()
        .map(|(s, &cell)| {
            let (i, j) = (cell / w, cell % w);
            let series = times
                .iter()
                .enumerate()
                .map(|(t, &time)| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    StationSample {
                        time,
                        sm: (truth_fine.values[t * px + cell] + spec.station_noise * e).clamp(0.0, 1.0),
                        quality: Quality::Good,
                    }
                })
                .collect();
            StationRecord {
                id: format!("synth:S{:02}", s + 1),
                lat: spec.fine.lat(i),
                lon: spec.fine.lon(j),
                depth_cm: 2.5,
                series,
            }
        })
        .collect();

    Ok(Scene {
        spec: spec.clone(),
        cube_fine,
        cube_coarse,
        truth_fine,
        truth_coarse,
        target_coarse,
        stations,
    })
}

pub const FINE_DIR: &str = "fine";
pub const COARSE_DIR: &str = "coarse";
pub const TARGET_DIR: &str = "target";
pub const TRUTH_FINE_DIR: &str = "truth_fine";
pub const TRUTH_COARSE_DIR: &str = "truth_coarse";
pub const STATIONS_FILE: &str = "stations.csv";
pub const SCENE_FILE: &str = "scene.json";

/// Writes every scene product as STC cubes, `stations.csv` and `scene.json`.
pub fn write_scene(dir: &Path, scene: &Scene, dtype: Dtype) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_cube(&dir.join(FINE_DIR), &scene.cube_fine, dtype)?;
    save_cube(&dir.join(COARSE_DIR), &scene.cube_coarse, dtype)?;
    save_field(&dir.join(TARGET_DIR), &scene.target_coarse, dtype)?;
    save_field(&dir.join(TRUTH_FINE_DIR), &scene.truth_fine, dtype)?;
    save_field(&dir.join(TRUTH_COARSE_DIR), &scene.truth_coarse, dtype)?;
    write_stations_csv(&dir.join(STATIONS_FILE), &scene.stations)?;
    let path = dir.join(SCENE_FILE);
    fs::write(&path, scene_manifest(&scene.spec)).map_err(|e| Error::io(&path, e))
}
