//! Three-cornered-hat error-variance estimation.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::FieldSeries;

/// Minimum number of co-valid samples per estimate.
pub const TCH_MIN_SAMPLES: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TchMethod {
    /// Pairwise difference variances, exactly three products.
    ClosedForm,
    /// Differences against the last product, solved by least squares.
    LeastSquares,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TchEstimate {
    pub method: TchMethod,
    pub n: usize,
    /// Error variance per product, negative raw values clamped to zero.
    pub variances: Vec<f64>,
    /// True where the raw estimate was negative.
    pub clamped: Vec<bool>,
}

/// Sample variance (N − 1 denominator) of `a − b`.
fn diff_var(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let mean = a.iter().zip(b).map(|(x, y)| x - y).sum::<f64>() / n;
    a.iter().zip(b).map(|(x, y)| (x - y - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

fn cov(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0)
}

fn finish(method: TchMethod, n: usize, raw: Vec<f64>) -> TchEstimate {
    TchEstimate {
        method,
        n,
        clamped: raw.iter().map(|&v| v < 0.0).collect(),
        variances: raw.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// Estimates each product's error variance from fully co-valid samples.
///
/// Three products use `σᵢ² = ½(Var(dᵢⱼ) + Var(dᵢₖ) − Var(dⱼₖ))`. More
/// products use differences `yᵢ = sᵢ − s_ref` against the last product,
/// whose covariance satisfies `Cov(yᵢ, yⱼ) = σ_ref² + δᵢⱼ σᵢ²`; the
/// system is solved by least squares and rejected when rank deficient.
pub fn tch(series: &[&[f64]], masks: Option<&[&[bool]]>) -> Result<TchEstimate> {
    let m = series.len();
    if m < 3 {
        return Err(Error::InsufficientData(format!("TCH needs at least 3 products, got {m}")));
    }
    let len = series[0].len();
    if series.iter().any(|s| s.len() != len) || masks.is_some_and(|ms| ms.len() != m || ms.iter().any(|k| k.len() != len)) {
        return Err(Error::Shape("TCH inputs differ in length".into()));
    }
    let keep: Vec<usize> = (0..len)
        .filter(|&k| masks.map_or(true, |ms| ms.iter().all(|mk| mk[k])))
        .collect();
    let n = keep.len();
    if n < TCH_MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "{n} co-valid samples, need at least {TCH_MIN_SAMPLES}"
        )));
    }
    let cols: Vec<Vec<f64>> = series.iter().map(|s| keep.iter().map(|&k| s[k]).collect()).collect();
    if m == 3 {
        let v01 = diff_var(&cols[0], &cols[1]);
        let v02 = diff_var(&cols[0], &cols[2]);
        let v12 = diff_var(&cols[1], &cols[2]);
        let raw = vec![0.5 * (v01 + v02 - v12), 0.5 * (v01 + v12 - v02), 0.5 * (v02 + v12 - v01)];
        return Ok(finish(TchMethod::ClosedForm, n, raw));
    }
    let r = m - 1;
    let y: Vec<Vec<f64>> = (0..r)
        .map(|i| cols[i].iter().zip(&cols[r]).map(|(a, b)| a - b).collect())
        .collect();
    let rows = r * (r + 1) / 2;
    let mut a = DMatrix::<f64>::zeros(rows, m);
    let mut b = DVector::<f64>::zeros(rows);
    let mut row = 0;
    for i in 0..r {
        for j in i..r {
            a[(row, r)] = 1.0;
            if i == j {
                a[(row, i)] = 1.0;
            }
            b[row] = cov(&y[i], &y[j]);
            row += 1;
        }
    }
    let svd = a.svd(true, true);
    if svd.rank(1e-12) < m {
        return Err(Error::InsufficientData("TCH system is rank deficient".into()));
    }
    let x = svd.solve(&b, 1e-12).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(finish(TchMethod::LeastSquares, n, x.iter().copied().collect()))
}

/// Per-cell TCH over the time axis of co-gridded products.
#[derive(Debug, Clone, PartialEq)]
pub struct TchMaps {
    pub method: TchMethod,
    /// One H×W variance map per product; masked where the cell was invalid.
    pub variances: Vec<Vec<f64>>,
    pub valid: Vec<bool>,
    /// Per product and cell: the raw estimate was negative.
    pub clamped: Vec<Vec<bool>>,
    pub n: Vec<usize>,
}

pub fn tch_maps(products: &[&FieldSeries]) -> Result<TchMaps> {
    if products.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "TCH needs at least 3 products, got {}",
            products.len()
        )));
    }
    let first = products[0];
    if products.iter().any(|p| p.grid != first.grid || p.times != first.times) {
        return Err(Error::Shape("TCH products must share grid and time axis".into()));
    }
    let px = first.grid.cells();
    let t = first.times.len();
    let cells: Vec<Option<TchEstimate>> = (0..px)
        .into_par_iter()
        .map(|c| {
            let vals: Vec<Vec<f64>> = products.iter().map(|p| (0..t).map(|k| p.values[k * px + c]).collect()).collect();
            let masks: Vec<Vec<bool>> = products.iter().map(|p| (0..t).map(|k| p.mask[k * px + c]).collect()).collect();
            let vr: Vec<&[f64]> = vals.iter().map(Vec::as_slice).collect();
            let mr: Vec<&[bool]> = masks.iter().map(Vec::as_slice).collect();
            tch(&vr, Some(&mr)).ok()
        })
        .collect();
    let m = products.len();
    let mut out = TchMaps {
        method: if m == 3 { TchMethod::ClosedForm } else { TchMethod::LeastSquares },
        variances: vec![vec![0.0; px]; m],
        valid: vec![false; px],
        clamped: vec![vec![false; px]; m],
        n: vec![0; px],
    };
    for (c, est) in cells.into_iter().enumerate() {
        if let Some(e) = est {
            out.valid[c] = true;
            out.n[c] = e.n;
            for i in 0..m {
                out.variances[i][c] = e.variances[i];
                out.clamped[i][c] = e.clamped[i];
            }
        }
    }
    Ok(out)
}

/// UTC-day means; a day is valid only where every step that day is valid.
pub fn daily_mean(field: &FieldSeries) -> Result<FieldSeries> {
    let px = field.grid.cells();
    let mut days: Vec<(i64, Vec<usize>)> = Vec::new();
    for (k, &t) in field.times.iter().enumerate() {
        let day = t.div_euclid(86_400) * 86_400;
        match days.last_mut() {
            Some((d, idx)) if *d == day => idx.push(k),
            _ => days.push((day, vec![k])),
        }
    }
    let mut values = Vec::with_capacity(days.len() * px);
    let mut mask = Vec::with_capacity(days.len() * px);
    for (_, idx) in &days {
        for c in 0..px {
            let ok = idx.iter().all(|&k| field.mask[k * px + c]);
            let v = if ok {
                idx.iter().map(|&k| field.values[k * px + c]).sum::<f64>() / idx.len() as f64
            } else {
                0.0
            };
            values.push(v);
            mask.push(ok);
        }
    }
    FieldSeries::new(field.grid, days.iter().map(|(d, _)| *d).collect(), values, mask)
}
