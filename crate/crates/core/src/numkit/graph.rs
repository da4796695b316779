//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node to the tape, so node order is a topological
//! order and the graph is acyclic by construction. `backward` walks the tape
//! once in reverse.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::kernels::{dot, gemm_nn, gemm_nt, gemm_tn};
use super::{NumError, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise non-linearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unary {
    Sigmoid,
    Tanh,
    Relu,
    /// tanh approximation of GELU
    Gelu,
    Log,
    Exp,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl Unary {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => x.tanh(),
            Unary::Relu => x.max(0.0),
            Unary::Gelu => gelu(x),
            Unary::Log => x.ln(),
            Unary::Exp => x.exp(),
        }
    }

    /// Local derivative given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Gelu => gelu_grad(x),
            Unary::Log => 1.0 / x,
            Unary::Exp => y,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Unary::Sigmoid => "sigmoid",
            Unary::Tanh => "tanh",
            Unary::Relu => "relu",
            Unary::Gelu => "gelu",
            Unary::Log => "log",
            Unary::Exp => "exp",
        }
    }
}

/// Masking rule for [`Graph::attention`].
#[derive(Clone, Debug, Default)]
pub struct AttentionMask {
    /// Query `i` may only attend to keys `j <= i`.
    pub causal: bool,
    /// Keys flagged `false` are excluded (padding).
    pub key_valid: Option<Arc<[bool]>>,
}

impl AttentionMask {
    #[inline]
    fn allows(&self, i: usize, j: usize) -> bool {
        (!self.causal || j <= i) && self.key_valid.as_ref().is_none_or(|v| v[j])
    }

    #[inline]
    fn key_range(&self, i: usize, keys: usize) -> std::ops::Range<usize> {
        if self.causal {
            0..keys.min(i + 1)
        } else {
            0..keys
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    MatMulNT { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    AddRow { x: Var, bias: Var },
    Scale { x: Var, c: f64 },
    AddScalar { x: Var },
    ScaleBy { x: Var, s: Var },
    Unary { x: Var, f: Unary },
    Softmax { x: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    MaskMul { x: Var, mask: Arc<[f64]> },
    ConcatCols { parts: Vec<Var> },
    SliceCols { x: Var, start: usize },
    Attention { q: Var, k: Var, v: Var, probs: Vec<f64>, scale: f64, mask: AttentionMask },
    Sum { x: Var },
    SurvivalNll { s: Var, coef: Arc<[f64]>, event: usize, fail_coef: f64, eps: f64 },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Accumulated gradient; populated for leaves only.
    grad: Option<Vec<f64>>,
}

/// Recording tape. Single-writer; `Send` so it can move between threads.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    checked: bool,
}

type Result<T> = std::result::Result<T, NumError>;

fn shape_err(op: &'static str, detail: String) -> NumError {
    NumError::Shape { op, detail }
}

/// `Σ coef[t]·(−ln s_t) + fail_coef·(−ln(1 − s_event))` over `t < event`,
/// with every probability clamped to `[eps, 1 − eps]` first.
pub fn clamped_survival_nll(s: &[f64], coef: &[f64], event: usize, fail_coef: f64, eps: f64) -> f64 {
    let clamp = |p: f64| p.clamp(eps, 1.0 - eps);
    let mut total = 0.0;
    for t in 0..event {
        total += coef[t] * -clamp(s[t]).ln();
    }
    total + fail_coef * -(1.0 - clamp(s[event])).ln()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph that validates finiteness (and log domains) after every op.
    pub fn checked() -> Self {
        Self { nodes: Vec::new(), checked: true }
    }

    pub fn is_checked(&self) -> bool {
        self.checked
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if self.checked && !value.is_finite() {
            return Err(NumError::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad, grad: None });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Trainable leaf; receives a gradient on `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true, grad: None });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false, grad: None });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that is validated in checked mode.
    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        self.leaf(value, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf after `backward`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        if self.checked && !value.is_finite() {
            return Err(NumError::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Ok(Var(self.nodes.len() - 1))
    }

    fn matrix_dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = &self.nodes[v.0].value;
        if t.shape().len() != 2 {
            return Err(shape_err(op, format!("expected a matrix, got shape {:?}", t.shape())));
        }
        Ok((t.shape()[0], t.shape()[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m}x{k}] x [{k2}x{n}]")));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b }, rg, "matmul")
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul_nt")?;
        let (n, k2) = self.matrix_dims(b, "matmul_nt")?;
        if k != k2 {
            return Err(shape_err("matmul_nt", format!("[{m}x{k}] x [{n}x{k2}]^T")));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNT { a, b }, rg, "matmul_nt")
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data: Vec<f64> = if ta.shape() == tb.shape() {
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect()
        } else if tb.numel() == 1 {
            let y = tb.data()[0];
            ta.data().iter().map(|&x| f(x, y)).collect()
        } else if ta.numel() == 1 {
            let x = ta.data()[0];
            tb.data().iter().map(|&y| f(x, y)).collect()
        } else {
            return Err(shape_err(name, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        };
        let shape = if ta.numel() == 1 && tb.numel() != 1 { tb.shape() } else { ta.shape() };
        Tensor::new(shape.to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Add { a, b }, rg, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Sub { a, b }, rg, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Mul { a, b }, rg, "mul")
    }

    /// Adds a length-`n` bias to every row of an `[.., n]` tensor.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let n = tx.cols();
        if tb.numel() != n {
            return Err(shape_err("add_row", format!("bias of {} for width {}", tb.numel(), n)));
        }
        let b = tb.data();
        let data: Vec<f64> = tx.data().iter().enumerate().map(|(i, &v)| v + b[i % n]).collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x, bias]);
        self.push(t, Op::AddRow { x, bias }, rg, "add_row")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let tx = self.value(x);
        let t = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|v| v * c).collect())?;
        let rg = self.rg(&[x]);
        self.push(t, Op::Scale { x, c }, rg, "scale")
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let tx = self.value(x);
        let t = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|v| v + c).collect())?;
        let rg = self.rg(&[x]);
        self.push(t, Op::AddScalar { x }, rg, "add_scalar")
    }

    /// Multiplies `x` by the single value held in `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(shape_err("scale_by", format!("scale has shape {:?}", self.value(s).shape())));
        }
        let c = self.scalar_value(s);
        let tx = self.value(x);
        let t = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|v| v * c).collect())?;
        let rg = self.rg(&[x, s]);
        self.push(t, Op::ScaleBy { x, s }, rg, "scale_by")
    }

    pub fn unary(&mut self, x: Var, f: Unary) -> Result<Var> {
        let tx = self.value(x);
        if self.checked && f == Unary::Log && tx.data().iter().any(|&v| v <= 0.0) {
            return Err(NumError::Domain { op: "log", detail: "non-positive input".into() });
        }
        let t = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|&v| f.apply(v)).collect())?;
        let rg = self.rg(&[x]);
        self.push(t, Op::Unary { x, f }, rg, f.name())
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Log)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Exp)
    }

    /// Row-wise softmax over the last dimension. Entries with `mask == false`
    /// get probability zero; a row with no admissible entry is all zeros.
    pub fn softmax_lastdim(&mut self, x: Var, mask: Option<Arc<[bool]>>) -> Result<Var> {
        let tx = self.value(x);
        if tx.cols() == 0 {
            return Err(shape_err("softmax", "empty last dimension".into()));
        }
        if let Some(m) = &mask {
            if m.len() != tx.numel() {
                return Err(shape_err("softmax", "mask shape".into()));
            }
        }
        let (rows, cols) = (tx.rows(), tx.cols());
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = tx.row(r);
            let keep = |j: usize| mask.as_ref().is_none_or(|m| m[r * cols + j]);
            let mut max = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if keep(j) && v > max {
                    max = v;
                }
            }
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if keep(j) {
                    let e = (v - max).exp();
                    out[r * cols + j] = e;
                    sum += e;
                }
            }
            for o in &mut out[r * cols..(r + 1) * cols] {
                *o /= sum;
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        self.push(t, Op::Softmax { x }, rg, "softmax")
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let tx = self.value(x);
        let d = tx.cols();
        if d == 0 || self.value(gain).numel() != d || self.value(bias).numel() != d {
            return Err(shape_err("layer_norm", format!("width {d}")));
        }
        let rows = tx.rows();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = vec![0.0; rows * d];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let xh = (row[j] - mean) * rs;
                xhat[r * d + j] = xh;
                out[r * d + j] = xh * g[j] + b[j];
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gain, bias]);
        self.push(t, Op::LayerNorm { x, gain, bias, xhat, rstd }, rg, "layer_norm")
    }

    /// Elementwise product with a constant tensor of the same shape
    /// (dropout masks, token masks).
    pub fn mask_mul(&mut self, x: Var, mask: Arc<[f64]>) -> Result<Var> {
        let tx = self.value(x);
        if mask.len() != tx.numel() {
            return Err(shape_err("mask_mul", format!("{} vs {}", mask.len(), tx.numel())));
        }
        let data = tx.data().iter().zip(mask.iter()).map(|(a, m)| a * m).collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        self.push(t, Op::MaskMul { x, mask }, rg, "mask_mul")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(*parts.first().ok_or_else(|| shape_err("concat", "no inputs".into()))?).rows();
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.matrix_dims(p, "concat")?;
            if r != rows {
                return Err(shape_err("concat", format!("row count {r} vs {rows}")));
            }
            total += c;
        }
        let mut out = vec![0.0; rows * total];
        let mut off = 0;
        for &p in parts {
            let tp = self.value(p);
            let c = tp.cols();
            for r in 0..rows {
                out[r * total + off..r * total + off + c].copy_from_slice(tp.row(r));
            }
            off += c;
        }
        let t = Tensor::new(vec![rows, total], out)?;
        let rg = self.rg(parts);
        self.push(t, Op::ConcatCols { parts: parts.to_vec() }, rg, "concat")
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(x, "slice_cols")?;
        if start + len > cols {
            return Err(shape_err("slice_cols", format!("{start}+{len} > {cols}")));
        }
        let tx = self.value(x);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&tx.row(r)[start..start + len]);
        }
        let t = Tensor::new(vec![rows, len], out)?;
        let rg = self.rg(&[x]);
        self.push(t, Op::SliceCols { x, start }, rg, "slice_cols")
    }

    /// Fused scaled dot-product attention for one head:
    /// `softmax(scale · q kᵀ, mask) · v`. Masked entries are never read.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, scale: f64, mask: AttentionMask) -> Result<Var> {
        let (tq, dh) = self.matrix_dims(q, "attention")?;
        let (tk, dk) = self.matrix_dims(k, "attention")?;
        let (tv, dv) = self.matrix_dims(v, "attention")?;
        if dk != dh || tv != tk {
            return Err(shape_err("attention", format!("q [{tq}x{dh}], k [{tk}x{dk}], v [{tv}x{dv}]")));
        }
        if mask.key_valid.as_ref().is_some_and(|m| m.len() != tk) {
            return Err(shape_err("attention", "key mask length".into()));
        }
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; tq * tk];
        let mut out = vec![0.0; tq * dv];
        for i in 0..tq {
            let qi = &qd[i * dh..(i + 1) * dh];
            let prow = &mut probs[i * tk..(i + 1) * tk];
            let mut max = f64::NEG_INFINITY;
            for j in mask.key_range(i, tk) {
                if mask.allows(i, j) {
                    let s = scale * dot(qi, &kd[j * dh..(j + 1) * dh]);
                    prow[j] = s;
                    if s > max {
                        max = s;
                    }
                }
            }
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut sum = 0.0;
            for j in mask.key_range(i, tk) {
                if mask.allows(i, j) {
                    let e = (prow[j] - max).exp();
                    prow[j] = e;
                    sum += e;
                }
            }
            let orow = &mut out[i * dv..(i + 1) * dv];
            for j in mask.key_range(i, tk) {
                if mask.allows(i, j) {
                    prow[j] /= sum;
                    let p = prow[j];
                    for (o, &vv) in orow.iter_mut().zip(&vd[j * dv..(j + 1) * dv]) {
                        *o += p * vv;
                    }
                }
            }
        }
        let t = Tensor::new(vec![tq, dv], out)?;
        let rg = self.rg(&[q, k, v]);
        self.push(t, Op::Attention { q, k, v, probs, scale, mask }, rg, "attention")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg, "sum")
    }

    /// Fused clamped survival negative log-likelihood, see
    /// [`clamped_survival_nll`]. `s` holds one probability per interval.
    pub fn survival_nll(&mut self, s: Var, coef: Arc<[f64]>, event: usize, fail_coef: f64, eps: f64) -> Result<Var> {
        let ts = self.value(s);
        if event >= ts.numel() || coef.len() < event {
            return Err(shape_err(
                "survival_nll",
                format!("event {event} with {} intervals and {} coefficients", ts.numel(), coef.len()),
            ));
        }
        let value = clamped_survival_nll(ts.data(), &coef, event, fail_coef, eps);
        let rg = self.rg(&[s]);
        self.push(Tensor::scalar(value), Op::SurvivalNll { s, coef, event, fail_coef, eps }, rg, "survival_nll")
    }

    /// Reverse pass from a scalar `loss`. Leaf gradients accumulate across
    /// calls until [`Graph::zero_grad`]; intermediate gradients do not persist.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(NumError::Usage("loss variable is not on this graph".into()));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(NumError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                match &mut self.nodes[i].grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        let wants = |v: Var| nodes[v.0].requires_grad;
        fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()])
        }
        // Accumulates `g` (shaped like the output) into a possibly-broadcast operand.
        let reduce_into = |grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64], sign: f64| {
            let dst = slot(grads, nodes, v);
            if dst.len() == g.len() {
                dst.iter_mut().zip(g).for_each(|(d, x)| *d += sign * x);
            } else {
                dst[0] += sign * g.iter().sum::<f64>();
            }
        };

        match &nodes[i].op {
            Op::Leaf => unreachable!(),
            Op::MatMul { a, b } => {
                let (m, k) = (val(*a).rows(), val(*a).cols());
                let n = val(*b).cols();
                if wants(*a) {
                    gemm_nt(g, val(*b).data(), slot(grads, nodes, *a), m, n, k);
                }
                if wants(*b) {
                    gemm_tn(val(*a).data(), g, slot(grads, nodes, *b), m, k, n);
                }
            }
            Op::MatMulNT { a, b } => {
                let (m, k) = (val(*a).rows(), val(*a).cols());
                let n = val(*b).rows();
                if wants(*a) {
                    gemm_nn(g, val(*b).data(), slot(grads, nodes, *a), m, n, k);
                }
                if wants(*b) {
                    gemm_tn(g, val(*a).data(), slot(grads, nodes, *b), m, n, k);
                }
            }
            Op::Add { a, b } => {
                if wants(*a) {
                    reduce_into(grads, *a, g, 1.0);
                }
                if wants(*b) {
                    reduce_into(grads, *b, g, 1.0);
                }
            }
            Op::Sub { a, b } => {
                if wants(*a) {
                    reduce_into(grads, *a, g, 1.0);
                }
                if wants(*b) {
                    reduce_into(grads, *b, g, -1.0);
                }
            }
            Op::Mul { a, b } => {
                let (ta, tb) = (val(*a), val(*b));
                let at = |t: &Tensor, idx: usize| if t.numel() == 1 { t.data()[0] } else { t.data()[idx] };
                if wants(*a) {
                    let ga: Vec<f64> = g.iter().enumerate().map(|(j, x)| x * at(tb, j)).collect();
                    reduce_into(grads, *a, &ga, 1.0);
                }
                if wants(*b) {
                    let gb: Vec<f64> = g.iter().enumerate().map(|(j, x)| x * at(ta, j)).collect();
                    reduce_into(grads, *b, &gb, 1.0);
                }
            }
            Op::AddRow { x, bias } => {
                if wants(*x) {
                    slot(grads, nodes, *x).iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
                if wants(*bias) {
                    let n = val(*bias).numel();
                    let db = slot(grads, nodes, *bias);
                    for (j, v) in g.iter().enumerate() {
                        db[j % n] += v;
                    }
                }
            }
            Op::Scale { x, c } => {
                if wants(*x) {
                    slot(grads, nodes, *x).iter_mut().zip(g).for_each(|(d, v)| *d += c * v);
                }
            }
            Op::AddScalar { x } => {
                if wants(*x) {
                    slot(grads, nodes, *x).iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
            }
            Op::ScaleBy { x, s } => {
                let c = val(*s).data()[0];
                if wants(*x) {
                    slot(grads, nodes, *x).iter_mut().zip(g).for_each(|(d, v)| *d += c * v);
                }
                if wants(*s) {
                    let ds: f64 = g.iter().zip(val(*x).data()).map(|(a, b)| a * b).sum();
                    slot(grads, nodes, *s)[0] += ds;
                }
            }
            Op::Unary { x, f } => {
                if wants(*x) {
                    let (xs, ys) = (val(*x).data(), nodes[i].value.data());
                    let dx = slot(grads, nodes, *x);
                    for j in 0..g.len() {
                        dx[j] += g[j] * f.derivative(xs[j], ys[j]);
                    }
                }
            }
            Op::Softmax { x } => {
                if wants(*x) {
                    let y = &nodes[i].value;
                    let cols = y.cols();
                    let dx = slot(grads, nodes, *x);
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = &g[r * cols..(r + 1) * cols];
                        let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            dx[r * cols + j] += yr[j] * (gr[j] - inner);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let d = val(*gain).numel();
                let rows = rstd.len();
                let gv = val(*gain).data();
                if wants(*gain) {
                    let dg = slot(grads, nodes, *gain);
                    for r in 0..rows {
                        for j in 0..d {
                            dg[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if wants(*bias) {
                    let db = slot(grads, nodes, *bias);
                    for r in 0..rows {
                        for j in 0..d {
                            db[j] += g[r * d + j];
                        }
                    }
                }
                if wants(*x) {
                    let dx = slot(grads, nodes, *x);
                    let mut dxhat = vec![0.0; d];
                    for r in 0..rows {
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..d {
                            dxhat[j] = g[r * d + j] * gv[j];
                            mean_d += dxhat[j];
                            mean_dx += dxhat[j] * xhat[r * d + j];
                        }
                        mean_d /= d as f64;
                        mean_dx /= d as f64;
                        for j in 0..d {
                            dx[r * d + j] += rstd[r] * (dxhat[j] - mean_d - xhat[r * d + j] * mean_dx);
                        }
                    }
                }
            }
            Op::MaskMul { x, mask } => {
                if wants(*x) {
                    let dx = slot(grads, nodes, *x);
                    for j in 0..g.len() {
                        dx[j] += g[j] * mask[j];
                    }
                }
            }
            Op::ConcatCols { parts } => {
                let total = nodes[i].value.cols();
                let rows = nodes[i].value.rows();
                let mut off = 0;
                for &p in parts {
                    let c = val(p).cols();
                    if wants(p) {
                        let dp = slot(grads, nodes, p);
                        for r in 0..rows {
                            for j in 0..c {
                                dp[r * c + j] += g[r * total + off + j];
                            }
                        }
                    }
                    off += c;
                }
            }
            Op::SliceCols { x, start } => {
                if wants(*x) {
                    let cols = val(*x).cols();
                    let len = nodes[i].value.cols();
                    let dx = slot(grads, nodes, *x);
                    for r in 0..nodes[i].value.rows() {
                        for j in 0..len {
                            dx[r * cols + start + j] += g[r * len + j];
                        }
                    }
                }
            }
            Op::Attention { q, k, v, probs, scale, mask } => {
                let (tq, dh) = (val(*q).rows(), val(*q).cols());
                let tk = val(*k).rows();
                let dv = val(*v).cols();
                let (qd, kd, vd) = (val(*q).data(), val(*k).data(), val(*v).data());
                let mut dq = vec![0.0; tq * dh];
                let mut dk = vec![0.0; tk * dh];
                let mut dvv = vec![0.0; tk * dv];
                let mut ds = vec![0.0; tk];
                for r in 0..tq {
                    let go = &g[r * dv..(r + 1) * dv];
                    let prow = &probs[r * tk..(r + 1) * tk];
                    let mut inner = 0.0;
                    for j in mask.key_range(r, tk) {
                        if mask.allows(r, j) {
                            let dp = dot(go, &vd[j * dv..(j + 1) * dv]);
                            ds[j] = dp;
                            inner += dp * prow[j];
                            for (d, &o) in dvv[j * dv..(j + 1) * dv].iter_mut().zip(go) {
                                *d += prow[j] * o;
                            }
                        }
                    }
                    let qr = &qd[r * dh..(r + 1) * dh];
                    for j in mask.key_range(r, tk) {
                        if mask.allows(r, j) {
                            let s = scale * prow[j] * (ds[j] - inner);
                            let kj = &kd[j * dh..(j + 1) * dh];
                            for c in 0..dh {
                                dq[r * dh + c] += s * kj[c];
                                dk[j * dh + c] += s * qr[c];
                            }
                        }
                    }
                }
                for (var, d) in [(*q, dq), (*k, dk), (*v, dvv)] {
                    if wants(var) {
                        slot(grads, nodes, var).iter_mut().zip(&d).for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::Sum { x } => {
                if wants(*x) {
                    let g0 = g[0];
                    slot(grads, nodes, *x).iter_mut().for_each(|d| *d += g0);
                }
            }
            Op::SurvivalNll { s, coef, event, fail_coef, eps } => {
                if wants(*s) {
                    let g0 = g[0];
                    let sv = val(*s).data();
                    let lo = *eps;
                    let hi = 1.0 - eps;
                    let ds = slot(grads, nodes, *s);
                    for t in 0..*event {
                        let p = sv[t];
                        if (lo..=hi).contains(&p) {
                            ds[t] += g0 * -coef[t] / p;
                        }
                    }
                    let p = sv[*event];
                    if (lo..=hi).contains(&p) {
                        ds[*event] += g0 * fail_coef / (1.0 - p);
                    }
                }
            }
        }
    }
}
