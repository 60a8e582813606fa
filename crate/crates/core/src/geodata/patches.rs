//! Training-sample extraction, dihedral augmentation and dataset splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cube::{DataCube, TargetField};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchConfig {
    pub size: usize,
    pub t_len: usize,
    pub stride: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        PatchConfig {
            size: 32,
            t_len: 5,
            stride: 10,
        }
    }
}

/// Where a patch was cut from: cube time index of its last step and top-left cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub t: usize,
    pub row: usize,
    pub col: usize,
}

/// One training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub id: usize,
    pub anchor: Anchor,
    /// Epoch seconds of each window step.
    pub times: Vec<i64>,
    pub t_len: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// t_len×height×width×channels, masked inputs zeroed.
    pub window: Vec<f64>,
    /// Per-cell input validity (any channel masked at any step → false).
    pub input_valid: Vec<bool>,
    /// height×width label at the last window step.
    pub label: Vec<f64>,
    pub label_mask: Vec<bool>,
}

impl Patch {
    pub fn valid_labels(&self) -> usize {
        self.label_mask.iter().filter(|&&m| m).count()
    }
}

/// Cuts `t_len`-step windows whose last step coincides with a target time.
///
/// Spatial anchors step by `stride`; patches with no valid label are dropped.
pub fn extract_patches(cube: &DataCube, target: &TargetField, cfg: &PatchConfig) -> Result<Vec<Patch>> {
    let (h, w) = cube.grid.shape();
    if cfg.size == 0 || cfg.t_len == 0 || cfg.stride == 0 {
        return Err(Error::Config("patch size, length and stride must be positive".into()));
    }
    if h < cfg.size || w < cfg.size {
        return Err(Error::Shape(format!(
            "cube {h}x{w} is smaller than the {0}x{0} patch",
            cfg.size
        )));
    }
    if cfg.t_len > cube.t_len() {
        return Err(Error::Shape(format!(
            "window length {} exceeds the {} cube times",
            cfg.t_len,
            cube.t_len()
        )));
    }
    if target.grid != cube.grid {
        return Err(Error::Shape("target and cube grids differ".into()));
    }

    let c_len = cube.channels();
    let rows: Vec<usize> = (0..=(h - cfg.size) / cfg.stride).map(|k| k * cfg.stride).collect();
    let cols: Vec<usize> = (0..=(w - cfg.size) / cfg.stride).map(|k| k * cfg.stride).collect();

    let mut patches = Vec::new();
    for (k, &time) in target.times.iter().enumerate() {
        let Some(t) = cube.time_index(time) else { continue };
        if t + 1 < cfg.t_len {
            continue;
        }
        let t0 = t + 1 - cfg.t_len;
        for &r0 in &rows {
            for &c0 in &cols {
                let mut label = Vec::with_capacity(cfg.size * cfg.size);
                let mut label_mask = Vec::with_capacity(cfg.size * cfg.size);
                for i in r0..r0 + cfg.size {
                    for j in c0..c0 + cfg.size {
                        let o = target.offset(k, i, j);
                        label.push(target.values[o]);
                        label_mask.push(target.mask[o]);
                    }
                }
                if !label_mask.iter().any(|&m| m) {
                    continue;
                }
                let mut window = Vec::with_capacity(cfg.t_len * cfg.size * cfg.size * c_len);
                let mut input_valid = vec![true; cfg.size * cfg.size];
                for tt in t0..=t {
                    for i in r0..r0 + cfg.size {
                        for j in c0..c0 + cfg.size {
                            let p = (i - r0) * cfg.size + (j - c0);
                            let base = cube.offset(tt, i * w + j, 0);
                            for c in 0..c_len {
                                if cube.mask[base + c] {
                                    window.push(cube.values[base + c]);
                                } else {
                                    window.push(0.0);
                                    input_valid[p] = false;
                                }
                            }
                        }
                    }
                }
                patches.push(Patch {
                    id: patches.len(),
                    anchor: Anchor { t, row: r0, col: c0 },
                    times: cube.times[t0..=t].to_vec(),
                    t_len: cfg.t_len,
                    height: cfg.size,
                    width: cfg.size,
                    channels: c_len,
                    window,
                    input_valid,
                    label,
                    label_mask,
                });
            }
        }
    }
    Ok(patches)
}

/// Spatial dihedral operations applied to every channel, step, label and mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentOp {
    /// Mirror left-right (reverse columns).
    FlipH,
    /// Mirror top-bottom (reverse rows).
    FlipV,
    Transpose,
}

fn remap<T: Copy>(src: &[T], h: usize, w: usize, depth: usize, op: AugmentOp) -> Vec<T> {
    let mut out = Vec::with_capacity(src.len());
    let (oh, ow) = if op == AugmentOp::Transpose { (w, h) } else { (h, w) };
    let plane = h * w * depth;
    for base in (0..src.len()).step_by(plane) {
        for i in 0..oh {
            for j in 0..ow {
                let (si, sj) = match op {
                    AugmentOp::FlipH => (i, w - 1 - j),
                    AugmentOp::FlipV => (h - 1 - i, j),
                    AugmentOp::Transpose => (j, i),
                };
                let s = base + (si * w + sj) * depth;
                out.extend_from_slice(&src[s..s + depth]);
            }
        }
    }
    out
}

pub fn augment(patch: &Patch, op: AugmentOp) -> Result<Patch> {
    let (h, w) = (patch.height, patch.width);
    if op == AugmentOp::Transpose && h != w {
        return Err(Error::Shape(format!("transpose needs a square patch, got {h}x{w}")));
    }
    Ok(Patch {
        window: remap(&patch.window, h, w, patch.channels, op),
        input_valid: remap(&patch.input_valid, h, w, 1, op),
        label: remap(&patch.label, h, w, 1, op),
        label_mask: remap(&patch.label_mask, h, w, 1, op),
        ..patch.clone()
    })
}

#[derive(Debug, Clone, Default)]
pub struct Splits {
    pub train: Vec<Patch>,
    pub val: Vec<Patch>,
    pub test: Vec<Patch>,
}

pub const MIN_PATCHES_FOR_SPLIT: usize = 10;

/// Seeded 70/15/15 shuffle split; validation and test get `floor(0.15 n)` each.
pub fn split_patches(patches: Vec<Patch>, seed: u64) -> Result<Splits> {
    let n = patches.len();
    if n < MIN_PATCHES_FOR_SPLIT {
        return Err(Error::InsufficientData(format!(
            "{n} patches, need at least {MIN_PATCHES_FOR_SPLIT} to split"
        )));
    }
    let n_val = n * 15 / 100;
    let n_test = n * 15 / 100;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut slots: Vec<Option<Patch>> = patches.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<Patch> {
        let mut v: Vec<Patch> = idx.iter().map(|&k| slots[k].take().expect("index used once")).collect();
        v.sort_by_key(|p| p.id);
        v
    };
    let val = take(&order[..n_val]);
    let test = take(&order[n_val..n_val + n_test]);
    let train = take(&order[n_val + n_test..]);
    Ok(Splits { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::{FieldSeries, GeoGrid, VarKind, VarSchema, VarSpec, TIME_STEP_S};

    fn scene(h: usize, w: usize, t: usize) -> (DataCube, TargetField) {
        let g = GeoGrid::new(0.0, 0.0, 1.0, 1.0, h, w).unwrap();
        let schema = VarSchema::new(vec![
            VarSpec::new("a", VarKind::Dynamic, "-"),
            VarSpec::new("b", VarKind::Dynamic, "-"),
        ])
        .unwrap();
        let times: Vec<i64> = (0..t as i64).map(|k| k * TIME_STEP_S).collect();
        let n = t * h * w * 2;
        let cube = DataCube::new(g, schema, times.clone(), (0..n).map(|k| k as f64).collect(), vec![true; n]).unwrap();
        let tt = vec![times[t - 1]];
        let target = FieldSeries::new(g, tt, vec![0.3; h * w], vec![true; h * w]).unwrap();
        (cube, target)
    }

    #[test]
    fn anchor_counts() {
        let (c, y) = scene(64, 64, 6);
        assert_eq!(extract_patches(&c, &y, &PatchConfig::default()).unwrap().len(), 16);
        let (c, y) = scene(32, 32, 5);
        assert_eq!(extract_patches(&c, &y, &PatchConfig::default()).unwrap().len(), 1);
    }

    #[test]
    fn fully_masked_label_is_dropped_and_short_history_skipped() {
        let (c, mut y) = scene(32, 32, 5);
        y.mask.iter_mut().for_each(|m| *m = false);
        assert!(extract_patches(&c, &y, &PatchConfig::default()).unwrap().is_empty());
        let (c, y) = scene(32, 32, 5);
        let y0 = y.select_times(&[]).unwrap();
        assert!(extract_patches(&c, &y0, &PatchConfig::default()).unwrap().is_empty());
        let early = FieldSeries::new(y.grid, vec![3 * TIME_STEP_S], vec![0.3; 1024], vec![true; 1024]).unwrap();
        assert!(extract_patches(&c, &early, &PatchConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn window_ends_at_label_time() {
        let (c, y) = scene(32, 32, 7);
        let p = &extract_patches(&c, &y, &PatchConfig::default()).unwrap()[0];
        assert_eq!(p.anchor.t, 6);
        assert_eq!(*p.times.last().unwrap(), y.times[0]);
        assert_eq!(p.times[0], 2 * TIME_STEP_S);
        // first window value = cube value at (t=2, 0, 0, c=0)
        assert_eq!(p.window[0], c.values[c.offset(2, 0, 0)]);
    }

    #[test]
    fn undersized_cube_rejected() {
        let (c, y) = scene(20, 40, 5);
        assert!(extract_patches(&c, &y, &PatchConfig::default()).is_err());
    }

    fn tiny_patch() -> Patch {
        Patch {
            id: 0,
            anchor: Anchor { t: 0, row: 0, col: 0 },
            times: vec![0],
            t_len: 1,
            height: 2,
            width: 2,
            channels: 1,
            window: vec![1.0, 2.0, 3.0, 4.0],
            input_valid: vec![true; 4],
            label: vec![1.0, 2.0, 3.0, 4.0],
            label_mask: vec![true, false, true, true],
        }
    }

    #[test]
    fn flip_h_definition_and_involutions() {
        let p = tiny_patch();
        let f = augment(&p, AugmentOp::FlipH).unwrap();
        assert_eq!(f.label, vec![2.0, 1.0, 4.0, 3.0]);
        assert_eq!(f.label_mask, vec![false, true, true, true]);
        for op in [AugmentOp::FlipH, AugmentOp::FlipV, AugmentOp::Transpose] {
            assert_eq!(augment(&augment(&p, op).unwrap(), op).unwrap(), p);
        }
        assert_eq!(augment(&p, AugmentOp::Transpose).unwrap().label, vec![1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn transpose_rejects_non_square() {
        let mut p = tiny_patch();
        p.width = 4;
        p.height = 1;
        assert!(augment(&p, AugmentOp::Transpose).is_err());
        assert!(augment(&p, AugmentOp::FlipV).is_ok());
    }

    fn dummies(n: usize) -> Vec<Patch> {
        (0..n).map(|k| Patch { id: k, ..tiny_patch() }).collect()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let s = split_patches(dummies(100), 7).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 15, 15));
        let s = split_patches(dummies(20), 7).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (14, 3, 3));
        let ids = |v: &[Patch]| v.iter().map(|p| p.id).collect::<Vec<_>>();
        let a = split_patches(dummies(50), 3).unwrap();
        let b = split_patches(dummies(50), 3).unwrap();
        assert_eq!(ids(&a.test), ids(&b.test));
        assert_eq!(ids(&a.train), ids(&b.train));
        assert!(split_patches(dummies(9), 1).is_err());
    }
}
