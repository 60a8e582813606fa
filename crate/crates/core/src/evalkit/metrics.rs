use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pooled agreement statistics of a product `x` against a reference `y`.
/// A statistic is `None` when too few pairs support it.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub r: Option<f64>,
    /// mean(x − y).
    pub bias: Option<f64>,
    pub rmse: Option<f64>,
    pub ubrmse: Option<f64>,
}

/// Metrics over all pairs.
pub fn metrics(x: &[f64], y: &[f64]) -> Result<Metrics> {
    metrics_masked(x, None, y, None)
}

/// Metrics over pairs valid on both sides.
pub fn metrics_masked(x: &[f64], xm: Option<&[bool]>, y: &[f64], ym: Option<&[bool]>) -> Result<Metrics> {
    if x.len() != y.len() || xm.is_some_and(|m| m.len() != x.len()) || ym.is_some_and(|m| m.len() != y.len()) {
        return Err(Error::Shape("metric inputs differ in length".into()));
    }
    let ok = |k: usize| xm.map_or(true, |m| m[k]) && ym.map_or(true, |m| m[k]);
    let mut acc = PairAccumulator::default();
    for k in 0..x.len() {
        if ok(k) {
            acc.push(x[k], y[k]);
        }
    }
    Ok(acc.finish())
}

/// Collects pairs and evaluates the metrics with two-pass sums.
#[derive(Debug, Clone, Default)]
pub struct PairAccumulator {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl PairAccumulator {
    pub fn push(&mut self, x: f64, y: f64) {
        self.x.push(x);
        self.y.push(y);
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn extend(&mut self, other: &PairAccumulator) {
        self.x.extend_from_slice(&other.x);
        self.y.extend_from_slice(&other.y);
    }

    pub fn finish(&self) -> Metrics {
        let n = self.x.len();
        if n == 0 {
            return Metrics::default();
        }
        let nf = n as f64;
        let mx = self.x.iter().sum::<f64>() / nf;
        let my = self.y.iter().sum::<f64>() / nf;
        let (mut se, mut sub, mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&a, &b) in self.x.iter().zip(&self.y) {
            let (dx, dy) = (a - mx, b - my);
            se += (a - b) * (a - b);
            sub += (dx - dy) * (dx - dy);
            sxy += dx * dy;
            sxx += dx * dx;
            syy += dy * dy;
        }
        let two = n >= 2;
        Metrics {
            n,
            r: (two && sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)),
            bias: Some(mx - my),
            rmse: Some((se / nf).sqrt()),
            ubrmse: two.then(|| (sub / nf).sqrt()),
        }
    }
}
