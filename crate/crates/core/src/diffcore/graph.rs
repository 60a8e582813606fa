use std::collections::BTreeMap;

use super::kernels::{self, Conv2dGeom, ConvTimeGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding2d {
    /// Zero padding that preserves H×W.
    Same,
    /// No padding; output shrinks by the effective kernel size minus one.
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimePadding {
    /// Zeros prepended; output length equals input length.
    Causal,
    /// No padding; output length shrinks by `dil·(k−1)`.
    Valid,
    /// Causal convolution evaluated at the final step only (output length 1).
    Last,
}

pub const SQRT_EPS: f64 = 1e-12;

const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_A: f64 = 0.044_715;

/// Tanh-form GELU, evaluated through the identity `½(1 + tanh u) = σ(2u)`.
pub fn gelu_scalar(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    x / (1.0 + (-2.0 * u).exp())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let s = 1.0 / (1.0 + (-2.0 * u).exp());
    s + 2.0 * x * s * (1.0 - s) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d { x: Var, k: Var, b: Option<Var>, geom: Conv2dGeom },
    ConvTime { x: Var, k: Var, b: Option<Var>, geom: ConvTimeGeom },
    Linear { x: Var, w: Var, b: Option<Var> },
    Gelu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MulChannels { x: Var, g: Var },
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    SqrtEps(Var),
    GlobalAvgPool(Var),
    BoxAvgPool { x: Var, r: usize },
    Reshape(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTime { .. } => "conv_time",
            Op::Linear { .. } => "pointwise_linear",
            Op::Gelu(_) => "gelu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::MulChannels { .. } => "mul_channels",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SqrtEps(_) => "sqrt_eps",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::BoxAvgPool { .. } => "box_avg_pool",
            Op::Reshape(_) => "reshape",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only tape. Nodes are created in topological order, so the
/// backward sweep is a reverse scan.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    first_nonfinite: Option<usize>,
}

/// Gradients of a scalar with respect to every leaf that requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{op}: shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        if self.first_nonfinite.is_none() && !value.is_finite() {
            self.first_nonfinite = Some(self.nodes.len());
        }
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Operator names with their node counts, for architecture audits.
    pub fn op_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut m = BTreeMap::new();
        for n in &self.nodes {
            *m.entry(n.op.name()).or_insert(0) += 1;
        }
        m
    }

    /// First node holding a non-finite value, with its operator name.
    pub fn first_nonfinite(&self) -> Option<(usize, &'static str)> {
        self.first_nonfinite.map(|i| (i, self.nodes[i].op.name()))
    }

    fn check_bias(&self, b: Option<Var>, cout: usize, op: &str) -> Result<()> {
        if let Some(b) = b {
            let bs = self.shape(b);
            if bs != [cout] {
                return Err(Error::Shape(format!("{op}: bias {bs:?} does not match {cout} outputs")));
            }
        }
        Ok(())
    }

    fn bias_data(&self, b: Option<Var>) -> Option<&[f64]> {
        b.map(|b| self.value(b).data())
    }

    fn ng_opt(&self, vars: &[Var], b: Option<Var>) -> bool {
        self.ng(vars) || b.is_some_and(|b| self.ng(&[b]))
    }

    /// 2-D convolution of `x: [H,W,Cin]` with `k: [kh,kw,Cin,Cout]` plus an
    /// optional bias `[Cout]`.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Option<Var>, dil: usize, padding: Padding2d) -> Result<Var> {
        let (xs, ks) = (self.shape(x), self.shape(k));
        if xs.len() != 3 || ks.len() != 4 || xs[2] != ks[2] {
            return Err(Error::Shape(format!("conv2d: input {xs:?} incompatible with kernel {ks:?}")));
        }
        let (kh, kw) = (ks[0], ks[1]);
        if kh % 2 == 0 || kw % 2 == 0 || dil == 0 {
            return Err(Error::Config(format!("conv2d: kernel {kh}×{kw} must be odd, dilation {dil} ≥ 1")));
        }
        let (pad_h, pad_w) = match padding {
            Padding2d::Same => (dil * (kh - 1) / 2, dil * (kw - 1) / 2),
            Padding2d::Valid => (0, 0),
        };
        let (eh, ew) = (dil * (kh - 1) + 1, dil * (kw - 1) + 1);
        if xs[0] + 2 * pad_h < eh || xs[1] + 2 * pad_w < ew || xs[0] == 0 || xs[1] == 0 {
            return Err(Error::Shape(format!(
                "conv2d: input {}×{} smaller than effective kernel {eh}×{ew}",
                xs[0], xs[1]
            )));
        }
        let geom = Conv2dGeom {
            h: xs[0],
            w: xs[1],
            cin: xs[2],
            kh,
            kw,
            cout: ks[3],
            dil,
            pad_h,
            pad_w,
        };
        self.check_bias(b, geom.cout, "conv2d")?;
        let y = kernels::conv2d_forward(&geom, self.value(x).data(), self.value(k).data(), self.bias_data(b));
        let out = Tensor::new(&[geom.hout(), geom.wout(), geom.cout], y)?;
        let ng = self.ng_opt(&[x, k], b);
        Ok(self.push(out, Op::Conv2d { x, k, b, geom }, ng))
    }

    /// Temporal convolution of `x: [T, ..., Cin]` with `k: [k, Cin, Cout]`
    /// plus an optional bias, applied independently at every position of the
    /// middle axes.
    pub fn conv_time(&mut self, x: Var, k: Var, b: Option<Var>, dil: usize, padding: TimePadding) -> Result<Var> {
        let (xs, ks) = (self.shape(x).to_vec(), self.shape(k));
        if xs.len() < 2 || ks.len() != 3 || xs[xs.len() - 1] != ks[1] {
            return Err(Error::Shape(format!("conv_time: input {xs:?} incompatible with kernel {ks:?}")));
        }
        let (t, kl) = (xs[0], ks[0]);
        if kl == 0 || dil == 0 || t == 0 {
            return Err(Error::Config("conv_time: kernel length, dilation and T must be ≥ 1".into()));
        }
        let eff = dil * (kl - 1) + 1;
        let t_start = match padding {
            TimePadding::Causal => 0,
            TimePadding::Last => t - 1,
            TimePadding::Valid if t < eff => {
                return Err(Error::Shape(format!("conv_time: T={t} shorter than effective kernel {eff}")))
            }
            TimePadding::Valid => eff - 1,
        };
        let geom = ConvTimeGeom {
            t,
            p: xs[1..xs.len() - 1].iter().product(),
            cin: ks[1],
            k: kl,
            cout: ks[2],
            dil,
            t_start,
        };
        self.check_bias(b, geom.cout, "conv_time")?;
        let y = kernels::conv_time_forward(&geom, self.value(x).data(), self.value(k).data(), self.bias_data(b));
        let mut shape = xs.clone();
        shape[0] = geom.tout();
        *shape.last_mut().unwrap() = geom.cout;
        let out = Tensor::new(&shape, y)?;
        let ng = self.ng_opt(&[x, k], b);
        Ok(self.push(out, Op::ConvTime { x, k, b, geom }, ng))
    }

    /// `x[..., Cin] · w[Cin, Cout] + b[Cout]` along the trailing axis.
    pub fn pointwise_linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w));
        if ws.len() != 2 || xs.is_empty() || xs[xs.len() - 1] != ws[0] {
            return Err(Error::Shape(format!("pointwise_linear: input {xs:?} incompatible with weight {ws:?}")));
        }
        let (cin, cout) = (ws[0], ws[1]);
        self.check_bias(b, cout, "pointwise_linear")?;
        let m = self.value(x).len() / cin.max(1);
        let y = kernels::matmul(self.value(x).data(), m, cin, self.value(w).data(), cout, self.bias_data(b));
        let mut shape = xs;
        *shape.last_mut().unwrap() = cout;
        let out = Tensor::new(&shape, y)?;
        let ng = self.ng_opt(&[x, w], b);
        Ok(self.push(out, Op::Linear { x, w, b }, ng))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.value(x).map(f);
        let ng = self.ng(&[x]);
        self.push(out, op, ng)
    }

    /// Tanh-form GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Gelu(x), gelu_scalar)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid_scalar)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, Op::Scale(x, s), |v| v * s)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + s)
    }

    /// `√(x + 1e-12)`.
    pub fn sqrt_eps(&mut self, x: Var) -> Var {
        self.unary(x, Op::SqrtEps(x), |v| (v + SQRT_EPS).sqrt())
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(av, bv, op.name())?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(av.shape(), data)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// `x[..., C] ∘ g[C]`, broadcasting the gate over all leading axes.
    pub fn mul_channels(&mut self, x: Var, g: Var) -> Result<Var> {
        let (xv, gv) = (self.value(x), self.value(g));
        if gv.shape().len() != 1 || xv.channels() != gv.len() {
            return Err(Error::Shape(format!("mul_channels: {:?} vs gate {:?}", xv.shape(), gv.shape())));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_exact_mut(gv.len()) {
            for (v, s) in row.iter_mut().zip(gv.data()) {
                *v *= s;
            }
        }
        let ng = self.ng(&[x, g]);
        Ok(self.push(out, Op::MulChannels { x, g }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let ng = self.ng(&[x]);
        self.push(out, Op::Sum(x), ng)
    }

    pub fn reduce_mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Tensor::scalar(v.sum() / v.len() as f64);
        let ng = self.ng(&[x]);
        self.push(out, Op::Mean(x), ng)
    }

    /// `[H,W,C] → [C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 3 {
            return Err(Error::Shape(format!("global_avg_pool expects [H,W,C], got {:?}", xv.shape())));
        }
        let c = xv.channels();
        let n = (xv.len() / c.max(1)) as f64;
        let pooled: Vec<f64> = kernels::bias_grad(xv.data(), c).into_iter().map(|s| s / n).collect();
        let out = Tensor::new(&[c], pooled)?;
        let ng = self.ng(&[x]);
        Ok(self.push(out, Op::GlobalAvgPool(x), ng))
    }

    /// `[H,W,C] → [H,W,C]` mean over the `(2r+1)²` window clipped to the image.
    pub fn box_avg_pool(&mut self, x: Var, r: usize) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() != 3 {
            return Err(Error::Shape(format!("box_avg_pool expects [H,W,C], got {s:?}")));
        }
        let (h, w, c) = (s[0], s[1], s[2]);
        let mut sums = kernels::box_sum(xv.data(), h, w, c, r);
        let counts = kernels::box_count(h, w, r);
        for (px, n) in sums.chunks_exact_mut(c).zip(&counts) {
            px.iter_mut().for_each(|v| *v /= n);
        }
        let out = Tensor::new(&[h, w, c], sums)?;
        let ng = self.ng(&[x]);
        Ok(self.push(out, Op::BoxAvgPool { x, r }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let ng = self.ng(&[x]);
        Ok(self.push(out, Op::Reshape(x), ng))
    }

    /// Reverse sweep from scalar `loss`. Each node is visited once; fan-out
    /// contributions accumulate in node order, so results are deterministic.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Shape(format!("backward needs a scalar loss, got shape {:?}", lv.shape())));
        }
        if let Some((i, name)) = self.first_nonfinite() {
            return Err(Error::NonFinite(format!("forward value of node {i} ({name})")));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.is_finite() {
                    return Err(Error::NonFinite(format!("gradient of leaf node {i}")));
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn bias_backward(&self, grads: &mut [Option<Tensor>], b: Option<Var>, g: &Tensor) -> Result<()> {
        if let Some(b) = b.filter(|&b| self.wants(b)) {
            let db = kernels::bias_grad(g.data(), self.value(b).len());
            self.accumulate(grads, b, Tensor::new(self.shape(b), db)?);
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let like = |v: Var, data: Vec<f64>| Tensor::new(val(v).shape(), data);
        let zip = |a: &[f64], b: &[f64], f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
            a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
        };
        match node.op {
            Op::Leaf => {}
            Op::Conv2d { x, k, b, geom } => {
                self.bias_backward(grads, b, g)?;
                let (dx, dk) = kernels::conv2d_backward(
                    &geom,
                    val(x).data(),
                    val(k).data(),
                    g.data(),
                    self.wants(x),
                    self.wants(k),
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, x, like(x, dx)?);
                }
                if let Some(dk) = dk {
                    self.accumulate(grads, k, like(k, dk)?);
                }
            }
            Op::ConvTime { x, k, b, geom } => {
                self.bias_backward(grads, b, g)?;
                let (dx, dk) = kernels::conv_time_backward(
                    &geom,
                    val(x).data(),
                    val(k).data(),
                    g.data(),
                    self.wants(x),
                    self.wants(k),
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, x, like(x, dx)?);
                }
                if let Some(dk) = dk {
                    self.accumulate(grads, k, like(k, dk)?);
                }
            }
            Op::Linear { x, w, b } => {
                self.bias_backward(grads, b, g)?;
                let (cin, cout) = (val(w).shape()[0], val(w).shape()[1]);
                let m = val(x).len() / cin.max(1);
                if self.wants(x) {
                    let mut dx = vec![0.0; m * cin];
                    kernels::gemm_acc(m, cout, cin, g.data(), (cout, 1), val(w).data(), (1, cout), &mut dx, (cin, 1));
                    self.accumulate(grads, x, like(x, dx)?);
                }
                if self.wants(w) {
                    let mut dw = vec![0.0; cin * cout];
                    kernels::gemm_acc(cin, m, cout, val(x).data(), (1, cin), g.data(), (cout, 1), &mut dw, (cout, 1));
                    self.accumulate(grads, w, like(w, dw)?);
                }
            }
            Op::Gelu(x) => {
                let d = zip(g.data(), val(x).data(), &|g, x| g * gelu_grad_scalar(x));
                self.accumulate(grads, x, like(x, d)?);
            }
            Op::Sigmoid(x) => {
                let d = zip(g.data(), node.value.data(), &|g, y| g * y * (1.0 - y));
                self.accumulate(grads, x, like(x, d)?);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                if self.wants(b) {
                    self.accumulate(grads, b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(a) {
                    self.accumulate(grads, a, like(a, zip(g.data(), val(b).data(), &|g, y| g * y))?);
                }
                if self.wants(b) {
                    self.accumulate(grads, b, like(b, zip(g.data(), val(a).data(), &|g, x| g * x))?);
                }
            }
            Op::Div(a, b) => {
                if self.wants(a) {
                    self.accumulate(grads, a, like(a, zip(g.data(), val(b).data(), &|g, y| g / y))?);
                }
                if self.wants(b) {
                    let d = g
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .zip(val(b).data())
                        .map(|((&g, &q), &y)| -g * q / y)
                        .collect();
                    self.accumulate(grads, b, like(b, d)?);
                }
            }
            Op::MulChannels { x, g: gate } => {
                let c = val(gate).len();
                if self.wants(x) {
                    let mut dx = g.clone();
                    for row in dx.data_mut().chunks_exact_mut(c) {
                        for (v, s) in row.iter_mut().zip(val(gate).data()) {
                            *v *= s;
                        }
                    }
                    self.accumulate(grads, x, dx);
                }
                if self.wants(gate) {
                    let prod: Vec<f64> = zip(g.data(), val(x).data(), &|g, x| g * x);
                    self.accumulate(grads, gate, like(gate, kernels::bias_grad(&prod, c))?);
                }
            }
            Op::Scale(x, s) => self.accumulate(grads, x, g.map(|v| v * s)),
            Op::AddScalar(x) => self.accumulate(grads, x, g.clone()),
            Op::Sum(x) => self.accumulate(grads, x, Tensor::full(val(x).shape(), g.item())),
            Op::Mean(x) => {
                let n = val(x).len() as f64;
                self.accumulate(grads, x, Tensor::full(val(x).shape(), g.item() / n));
            }
            Op::SqrtEps(x) => {
                let d = zip(g.data(), node.value.data(), &|g, y| g * 0.5 / y);
                self.accumulate(grads, x, like(x, d)?);
            }
            Op::GlobalAvgPool(x) => {
                let xv = val(x);
                let n = (xv.len() / g.len().max(1)) as f64;
                let row: Vec<f64> = g.data().iter().map(|v| v / n).collect();
                let d = row.iter().copied().cycle().take(xv.len()).collect();
                self.accumulate(grads, x, like(x, d)?);
            }
            Op::BoxAvgPool { x, r } => {
                let s = val(x).shape();
                let (h, w, c) = (s[0], s[1], s[2]);
                let counts = kernels::box_count(h, w, r);
                let mut scaled = g.data().to_vec();
                for (px, n) in scaled.chunks_exact_mut(c).zip(&counts) {
                    px.iter_mut().for_each(|v| *v /= n);
                }
                // the clipped box window is symmetric, so the adjoint is another box sum
                let d = kernels::box_sum(&scaled, h, w, c, r);
                self.accumulate(grads, x, like(x, d)?);
            }
            Op::Reshape(x) => self.accumulate(grads, x, g.clone().reshape(val(x).shape())?),
        }
        Ok(())
    }
}
