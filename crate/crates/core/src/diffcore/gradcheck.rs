use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;
pub const REL_FLOOR: f64 = 1e-8;

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Which input coordinates to probe.
#[derive(Debug, Clone, Copy)]
pub enum Coords {
    All,
    /// At most `per_input` coordinates of each input, drawn without replacement.
    Sample { per_input: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<Probe>,
    pub checked: usize,
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` with central
/// differences `(f(x+h·e) − f(x−h·e)) / 2h`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64, coords: Coords) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.param(x.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(match coords {
        Coords::Sample { seed, .. } => seed,
        Coords::All => 0,
    });
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut work = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let n = inputs[i].len();
        let idx: Vec<usize> = match coords {
            Coords::All => (0..n).collect(),
            Coords::Sample { per_input, .. } if per_input >= n => (0..n).collect(),
            Coords::Sample { per_input, .. } => {
                let mut s = sample(&mut rng, n, per_input).into_vec();
                s.sort_unstable();
                s
            }
        };
        for k in idx {
            let x0 = inputs[i].data()[k];
            work[i].data_mut()[k] = x0 + h;
            let fp = eval(&work)?;
            work[i].data_mut()[k] = x0 - h;
            let fm = eval(&work)?;
            work[i].data_mut()[k] = x0;
            let numeric = (fp - fm) / (2.0 * h);
            let analytic = grads.get(*v).map_or(0.0, |t| t.data()[k]);
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some(Probe {
                    input: i,
                    index: k,
                    analytic,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}

/// Single-input, all-coordinate convenience form returning the max error.
pub fn grad_check_unary<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    Ok(grad_check(|g, v| f(g, v[0]), std::slice::from_ref(x), h, Coords::All)?.max_rel_error)
}
