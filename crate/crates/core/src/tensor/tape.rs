//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its output value and enough saved
//! state to run its backward rule. Nodes are only ever appended, so the tape
//! is in topological order by construction and [`Tape::backward`] is a single
//! reverse sweep.

use super::fft::dft_rows;
use super::gemm::gemm;
use super::{rows_last, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// A complex value held as two real nodes of equal shape.
#[derive(Clone, Copy, Debug)]
pub struct ComplexVar {
    pub re: Var,
    pub im: Var,
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul {
        a: Var,
        b: Var,
        shared: bool,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Sum(Var),
    Mean(Var),
    SumAxis {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
        scale: f64,
    },
    MaxAxis {
        x: Var,
        argmax: Vec<usize>,
    },
    Reshape(Var),
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    Concat {
        xs: Vec<Var>,
        outer: usize,
        widths: Vec<usize>,
    },
    Gather {
        x: Var,
        idx: Vec<Vec<usize>>,
        n: usize,
        d: usize,
    },
    Scatter {
        vis: Var,
        fill: Var,
        idx: Vec<Vec<usize>>,
        n: usize,
        d: usize,
    },
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Conv1d {
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
    },
    ConvTranspose1d {
        x: Var,
        w: Var,
        stride: usize,
    },
    DftRe(Var),
    DftIm(Var),
    IdftReal {
        re: Var,
        im: Var,
        residual: f64,
    },
    BceLogits {
        logits: Var,
        target: Vec<f64>,
    },
    CoxLoss {
        risk: Var,
        times: Vec<f64>,
        events: Vec<bool>,
    },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Records operations and replays them in reverse to compute gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn dim_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension(format!("{what}: shapes {a:?} and {b:?} are incompatible"))
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` laid out against `out`, with 0 on broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        let o = i + rank - shape.len();
        if shape[i] == out[o] && shape[i] != 1 {
            strides[o] = acc;
        }
        acc *= shape[i];
    }
    strides
}

/// Walks every output index of `shape`, tracking two strided input offsets.
fn walk(shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let rank = shape.len();
    let total: usize = shape.iter().product();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..total {
        f(o, ia, ib);
        let mut d = rank;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < shape[d] {
                break;
            }
            ia -= sa[d] * shape[d];
            ib -= sb[d] * shape[d];
            idx[d] = 0;
        }
    }
}

fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let u = C * (x + 0.044_715 * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044_715 * x * x);
    (y, dy)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn conv_out_len(t: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (t + 2 * pad).checked_sub(k).map(|r| r / stride + 1)
}

/// Unfolds one `[cin × t]` input into `[cin·k × t_out]` columns.
fn im2col(x: &[f64], cin: usize, t: usize, k: usize, stride: usize, pad: usize, t_out: usize) -> Vec<f64> {
    let mut cols = vec![0.0; cin * k * t_out];
    for c in 0..cin {
        for kk in 0..k {
            let row = &mut cols[(c * k + kk) * t_out..(c * k + kk + 1) * t_out];
            for (o, slot) in row.iter_mut().enumerate() {
                let pos = (o * stride + kk) as isize - pad as isize;
                if pos >= 0 && (pos as usize) < t {
                    *slot = x[c * t + pos as usize];
                }
            }
        }
    }
    cols
}

fn col2im_add(cols: &[f64], dx: &mut [f64], cin: usize, t: usize, k: usize, stride: usize, pad: usize, t_out: usize) {
    for c in 0..cin {
        for kk in 0..k {
            let row = &cols[(c * k + kk) * t_out..(c * k + kk + 1) * t_out];
            for (o, &v) in row.iter().enumerate() {
                let pos = (o * stride + kk) as isize - pad as isize;
                if pos >= 0 && (pos as usize) < t {
                    dx[c * t + pos as usize] += v;
                }
            }
        }
    }
}

/// Cox partial log-likelihood (Breslow ties), negated and averaged over events.
/// Returns the loss and its gradient with respect to the risks.
fn cox_loss_and_grad(risk: &[f64], times: &[f64], events: &[bool]) -> (f64, Vec<f64>) {
    let n = risk.len();
    let n_events = events.iter().filter(|&&e| e).count();
    let mut grad = vec![0.0; n];
    if n_events == 0 {
        return (0.0, grad);
    }
    let shift = risk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = risk.iter().map(|r| (r - shift).exp()).collect();
    let mut loss = 0.0;
    for i in 0..n {
        if !events[i] {
            continue;
        }
        let mut denom = 0.0;
        for j in 0..n {
            if times[j] >= times[i] {
                denom += w[j];
            }
        }
        loss -= risk[i] - shift - denom.ln();
        grad[i] -= 1.0;
        for j in 0..n {
            if times[j] >= times[i] {
                grad[j] += w[j] / denom;
            }
        }
    }
    let scale = 1.0 / n_events as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    (loss * scale, grad)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Adds an input tensor. Gradients accumulate on leaves across calls
    /// to [`Tape::backward`] until [`Tape::zero_grad`].
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass (accumulated, for leaves).
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_parts(self.shape(v).to_vec(), g.clone()))
    }

    /// Largest discarded imaginary magnitude of an inverse-DFT node.
    pub fn imag_residual(&self, v: Var) -> Option<f64> {
        match self.nodes[v.0].op {
            Op::IdftReal { residual, .. } => Some(residual),
            _ => None,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    // ---- elementwise ------------------------------------------------------

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, Vec<usize>)> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let out = broadcast_shape(&sa, &sb).ok_or_else(|| dim_err(what, &sa, &sb))?;
        let xa = self.value(a).data();
        let xb = self.value(b).data();
        let total: usize = out.iter().product();
        let mut data = vec![0.0; total];
        if sa == sb {
            for i in 0..total {
                data[i] = f(xa[i], xb[i]);
            }
        } else if sb.iter().product::<usize>() == 1 {
            let y = xb[0];
            for i in 0..total {
                data[i] = f(xa[i], y);
            }
        } else {
            let str_a = broadcast_strides(&sa, &out);
            let str_b = broadcast_strides(&sb, &out);
            walk(&out, &str_a, &str_b, |o, ia, ib| data[o] = f(xa[ia], xb[ib]));
        }
        Ok((Tensor::from_parts(out.clone(), data), out))
    }

    /// Elementwise sum with trailing-axis broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x);
        let t = Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|a| a * c).collect());
        self.push(t, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x);
        let t = Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|a| a + c).collect());
        self.push(t, Op::AddScalar(x), &[x])
    }

    /// `1 - x`, used for complementary fusion weights.
    pub fn one_minus(&mut self, x: Var) -> Var {
        let n = self.scale(x, -1.0);
        self.add_scalar(n, 1.0)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let v = self.value(x);
        let t = Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|&a| f(a)).collect());
        self.push(t, op, &[x])
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Gelu(x), |a| gelu_parts(a).0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |a| a.max(0.0))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.mul(x, x)
    }

    // ---- linear algebra ---------------------------------------------------

    /// `a[..., m, k] · b` where `b` is either a shared `[k, n]` matrix or a
    /// batch `[..., k, n]` with the same leading extents as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(dim_err("matmul needs rank >= 2", &sa, &sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(dim_err("matmul inner extents differ", &sa, &sb));
        }
        let lead = &sa[..sa.len() - 2];
        let batch: usize = lead.iter().product();
        let shared = sb.len() == 2;
        if !shared && &sb[..sb.len() - 2] != lead {
            return Err(dim_err("matmul batch extents differ", &sa, &sb));
        }
        let mut out_shape = lead.to_vec();
        out_shape.extend([m, n]);
        let mut data = vec![0.0; batch * m * n];
        let xa = self.value(a).data();
        let xb = self.value(b).data();
        if shared {
            gemm(batch * m, k, n, xa, false, xb, false, &mut data, false);
        } else {
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &xa[i * m * k..(i + 1) * m * k],
                    false,
                    &xb[i * k * n..(i + 1) * k * n],
                    false,
                    &mut data[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
        }
        let t = Tensor::from_parts(out_shape, data);
        Ok(self.push(
            t,
            Op::MatMul {
                a,
                b,
                shared,
                batch,
                m,
                k,
                n,
            },
            &[a, b],
        ))
    }

    /// `x · w + b` with `w: [in, out]` and `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    // ---- reductions -------------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s: f64 = v.data().iter().sum::<f64>() / v.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    fn axis_split(&self, x: Var, axis: usize) -> Result<(usize, usize, usize, Vec<usize>)> {
        let shape = self.shape(x);
        if axis >= shape.len() {
            return Err(Error::Dimension(format!("axis {axis} out of range for {shape:?}")));
        }
        let outer = shape[..axis].iter().product();
        let inner = shape[axis + 1..].iter().product();
        let mut out: Vec<usize> = shape.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &d)| d).collect();
        if out.is_empty() {
            out.push(1);
        }
        Ok((outer, shape[axis], inner, out))
    }

    fn reduce_axis(&mut self, x: Var, axis: usize, scale: f64) -> Result<Var> {
        let (outer, len, inner, out) = self.axis_split(x, axis)?;
        let scale = if scale.is_nan() { 1.0 / len as f64 } else { scale };
        let src = self.value(x).data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let row = &src[(o * len + l) * inner..(o * len + l + 1) * inner];
                let dst = &mut data[o * inner..(o + 1) * inner];
                for (d, s) in dst.iter_mut().zip(row) {
                    *d += s;
                }
            }
        }
        data.iter_mut().for_each(|v| *v *= scale);
        let t = Tensor::from_parts(out, data);
        Ok(self.push(
            t,
            Op::SumAxis {
                x,
                outer,
                len,
                inner,
                scale,
            },
            &[x],
        ))
    }

    /// Sum over one axis, which is removed from the shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, 1.0)
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, f64::NAN)
    }

    /// Max over one axis; ties route the gradient to the first maximum.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (outer, len, inner, out) = self.axis_split(x, axis)?;
        let src = self.value(x).data();
        let mut data = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    let at = (o * len + l) * inner + i;
                    let slot = o * inner + i;
                    if src[at] > data[slot] {
                        data[slot] = src[at];
                        argmax[slot] = at;
                    }
                }
            }
        }
        let t = Tensor::from_parts(out, data);
        Ok(self.push(t, Op::MaxAxis { x, argmax }, &[x]))
    }

    // ---- layout -----------------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::Dimension(format!("invalid permutation {axes:?} for shape {shape:?}")));
        }
        let in_strides = contiguous_strides(&shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let sa: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let zeros = vec![0; axes.len()];
        let src = self.value(x).data();
        let mut data = vec![0.0; src.len()];
        walk(&out_shape, &sa, &zeros, |o, ia, _| data[o] = src[ia]);
        let t = Tensor::from_parts(out_shape, data);
        Ok(self.push(t, Op::Permute { x, axes: axes.to_vec() }, &[x]))
    }

    /// Swaps two axes.
    pub fn transpose(&mut self, x: Var, a: usize, b: usize) -> Result<Var> {
        let mut axes: Vec<usize> = (0..self.shape(x).len()).collect();
        if a >= axes.len() || b >= axes.len() {
            return Err(Error::Dimension(format!("transpose axes {a},{b} out of range")));
        }
        axes.swap(a, b);
        self.permute(x, &axes)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*xs.first().ok_or_else(|| Error::Usage("concat of nothing".into()))?).to_vec();
        if axis >= first.len() {
            return Err(Error::Dimension(format!("axis {axis} out of range for {first:?}")));
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut widths = Vec::with_capacity(xs.len());
        let mut total_len = 0;
        for &x in xs {
            let s = self.shape(x);
            if s.len() != first.len() || s[..axis] != first[..axis] || s[axis + 1..] != first[axis + 1..] {
                return Err(dim_err("concat", &first, s));
            }
            widths.push(s[axis] * inner);
            total_len += s[axis];
        }
        let row: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * row);
        for o in 0..outer {
            for (&x, &w) in xs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(x).data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first;
        shape[axis] = total_len;
        let t = Tensor::from_parts(shape, data);
        Ok(self.push(t, Op::Concat { xs: xs.to_vec(), outer, widths }, xs))
    }

    /// Selects rows per batch entry: `x[B, n, d]` → `[B, k, d]`.
    pub fn gather_rows(&mut self, x: Var, idx: &[Vec<usize>]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || idx.len() != s[0] {
            return Err(Error::Dimension(format!("gather_rows: shape {s:?} with {} index lists", idx.len())));
        }
        let (n, d) = (s[1], s[2]);
        let k = idx.first().map_or(0, Vec::len);
        if k == 0 || idx.iter().any(|l| l.len() != k || l.iter().any(|&i| i >= n)) {
            return Err(Error::Dimension("gather_rows: ragged, empty or out-of-range indices".into()));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(s[0] * k * d);
        for (b, list) in idx.iter().enumerate() {
            for &i in list {
                data.extend_from_slice(&src[(b * n + i) * d..(b * n + i + 1) * d]);
            }
        }
        let t = Tensor::from_parts(vec![s[0], k, d], data);
        Ok(self.push(t, Op::Gather { x, idx: idx.to_vec(), n, d }, &[x]))
    }

    /// Inverse of [`Tape::gather_rows`]: places `vis[B, k, d]` at positions
    /// `idx` of a length-`n` sequence and fills the rest with `fill[d]`.
    pub fn scatter_rows(&mut self, vis: Var, fill: Var, idx: &[Vec<usize>], n: usize) -> Result<Var> {
        let s = self.shape(vis).to_vec();
        let fs = self.shape(fill).to_vec();
        if s.len() != 3 || idx.len() != s[0] || fs.iter().product::<usize>() != s[2] {
            return Err(dim_err("scatter_rows", &s, &fs));
        }
        let (k, d) = (s[1], s[2]);
        if idx.iter().any(|l| l.len() != k || l.iter().any(|&i| i >= n)) {
            return Err(Error::Dimension("scatter_rows: bad index lists".into()));
        }
        let src = self.value(vis).data();
        let token = self.value(fill).data();
        let mut data = Vec::with_capacity(s[0] * n * d);
        for _ in 0..s[0] * n {
            data.extend_from_slice(token);
        }
        for (b, list) in idx.iter().enumerate() {
            for (j, &i) in list.iter().enumerate() {
                data[(b * n + i) * d..(b * n + i + 1) * d].copy_from_slice(&src[(b * k + j) * d..(b * k + j + 1) * d]);
            }
        }
        let t = Tensor::from_parts(vec![s[0], n, d], data);
        Ok(self.push(
            t,
            Op::Scatter {
                vis,
                fill,
                idx: idx.to_vec(),
                n,
                d,
            },
            &[vis, fill],
        ))
    }

    // ---- normalisation ----------------------------------------------------

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let (rows, d) = rows_last(v.shape());
        let mut data = v.data().to_vec();
        for r in 0..rows {
            let row = &mut data[r * d..(r + 1) * d];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for e in row.iter_mut() {
                *e = (*e - m).exp();
                s += *e;
            }
            row.iter_mut().for_each(|e| *e /= s);
        }
        let t = Tensor::from_parts(v.shape().to_vec(), data);
        self.push(t, Op::Softmax(x), &[x])
    }

    /// Layer normalisation over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let v = self.value(x);
        let (rows, d) = rows_last(v.shape());
        if self.value(gamma).numel() != d || self.value(beta).numel() != d {
            return Err(dim_err("layer_norm affine", v.shape(), self.shape(gamma)));
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let src = v.data();
        let mut xhat = vec![0.0; rows * d];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for i in 0..d {
                let h = (row[i] - mean) * rs;
                xhat[r * d + i] = h;
                out[r * d + i] = h * g[i] + b[i];
            }
        }
        let t = Tensor::from_parts(v.shape().to_vec(), out);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    // ---- convolution ------------------------------------------------------

    fn as_batched(shape: &[usize]) -> Option<(usize, usize, usize)> {
        match *shape {
            [c, t] => Some((1, c, t)),
            [b, c, t] => Some((b, c, t)),
            _ => None,
        }
    }

    /// 1-D cross-correlation: `x[B, C_in, T]` (or `[C_in, T]`) with
    /// `w[C_out, C_in, K]`, zero padding on both ends.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let (bsz, cin, t) = Self::as_batched(&sx).ok_or_else(|| dim_err("conv1d input rank", &sx, &sw))?;
        if sw.len() != 3 || sw[1] != cin || stride == 0 {
            return Err(dim_err("conv1d weight", &sx, &sw));
        }
        let (cout, k) = (sw[0], sw[2]);
        let t_out = conv_out_len(t, k, stride, pad).ok_or_else(|| {
            Error::Dimension(format!("conv1d kernel {k} exceeds padded input {}", t + 2 * pad))
        })?;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![0.0; bsz * cout * t_out];
        for b in 0..bsz {
            let cols = im2col(&xv[b * cin * t..(b + 1) * cin * t], cin, t, k, stride, pad, t_out);
            gemm(cout, cin * k, t_out, wv, false, &cols, false, &mut out[b * cout * t_out..(b + 1) * cout * t_out], false);
        }
        let shape = if sx.len() == 2 { vec![cout, t_out] } else { vec![bsz, cout, t_out] };
        let t = Tensor::from_parts(shape, out);
        Ok(self.push(t, Op::Conv1d { x, w, stride, pad }, &[x, w]))
    }

    /// Transposed 1-D convolution without padding: `x[B, C_in, L]` with
    /// `w[C_in, C_out, K]` gives `[B, C_out, (L-1)·stride + K]`.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let (bsz, cin, l) = Self::as_batched(&sx).ok_or_else(|| dim_err("conv_transpose1d input rank", &sx, &sw))?;
        if sw.len() != 3 || sw[0] != cin || stride == 0 {
            return Err(dim_err("conv_transpose1d weight", &sx, &sw));
        }
        let (cout, k) = (sw[1], sw[2]);
        let l_out = (l - 1) * stride + k;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![0.0; bsz * cout * l_out];
        let mut cols = vec![0.0; cout * k * l];
        for b in 0..bsz {
            gemm(cout * k, cin, l, wv, true, &xv[b * cin * l..(b + 1) * cin * l], false, &mut cols, false);
            let dst = &mut out[b * cout * l_out..(b + 1) * cout * l_out];
            for co in 0..cout {
                for kk in 0..k {
                    for p in 0..l {
                        dst[co * l_out + p * stride + kk] += cols[(co * k + kk) * l + p];
                    }
                }
            }
        }
        let shape = if sx.len() == 2 { vec![cout, l_out] } else { vec![bsz, cout, l_out] };
        let t = Tensor::from_parts(shape, out);
        Ok(self.push(t, Op::ConvTranspose1d { x, w, stride }, &[x, w]))
    }

    // ---- spectral ---------------------------------------------------------

    fn spectral(&self, x: Var) -> (Vec<f64>, Vec<f64>) {
        let v = self.value(x);
        let (rows, n) = rows_last(v.shape());
        let mut re = vec![0.0; rows * n];
        let mut im = vec![0.0; rows * n];
        dft_rows(v.data(), None, &mut re, &mut im, n, false);
        (re, im)
    }

    /// Forward DFT of a real input along its last axis.
    pub fn dft_forward(&mut self, x: Var) -> ComplexVar {
        let (re, im) = self.spectral(x);
        let shape = self.shape(x).to_vec();
        let re = self.push(Tensor::from_parts(shape.clone(), re), Op::DftRe(x), &[x]);
        let im = self.push(Tensor::from_parts(shape, im), Op::DftIm(x), &[x]);
        ComplexVar { re, im }
    }

    /// Real part of the inverse DFT (scaled by `1/n`) along the last axis.
    /// The magnitude of the dropped imaginary part is kept on the node, see
    /// [`Tape::imag_residual`].
    pub fn dft_inverse(&mut self, z: ComplexVar) -> Result<Var> {
        let shape = self.shape(z.re).to_vec();
        if shape != self.shape(z.im) {
            return Err(dim_err("dft_inverse parts", &shape, self.shape(z.im)));
        }
        let (rows, n) = rows_last(&shape);
        let mut re = vec![0.0; rows * n];
        let mut im = vec![0.0; rows * n];
        dft_rows(self.value(z.re).data(), Some(self.value(z.im).data()), &mut re, &mut im, n, true);
        let scale = 1.0 / n as f64;
        re.iter_mut().for_each(|v| *v *= scale);
        let residual = im.iter().fold(0.0f64, |m, v| m.max((v * scale).abs()));
        if residual > 1e-6 {
            log::trace!("inverse DFT dropped imaginary residual up to {residual:.3e}");
        }
        let t = Tensor::from_parts(shape, re);
        Ok(self.push(
            t,
            Op::IdftReal {
                re: z.re,
                im: z.im,
                residual,
            },
            &[z.re, z.im],
        ))
    }

    /// Complex Hadamard product with broadcasting.
    pub fn complex_mul(&mut self, a: ComplexVar, b: ComplexVar) -> Result<ComplexVar> {
        let rr = self.mul(a.re, b.re)?;
        let ii = self.mul(a.im, b.im)?;
        let ri = self.mul(a.re, b.im)?;
        let ir = self.mul(a.im, b.re)?;
        Ok(ComplexVar {
            re: self.sub(rr, ii)?,
            im: self.add(ri, ir)?,
        })
    }

    // ---- fused losses -----------------------------------------------------

    /// Mean binary cross-entropy between `logits` and a same-shape target.
    pub fn bce_with_logits(&mut self, logits: Var, target: &Tensor) -> Result<Var> {
        let v = self.value(logits);
        if v.shape() != target.shape() {
            return Err(dim_err("bce_with_logits", v.shape(), target.shape()));
        }
        let n = v.numel() as f64;
        let loss: f64 = v
            .data()
            .iter()
            .zip(target.data())
            .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceLogits {
                logits,
                target: target.data().to_vec(),
            },
            &[logits],
        ))
    }

    /// Negative Cox partial log-likelihood with Breslow tie handling,
    /// averaged over events. `risk` holds one score per subject.
    pub fn cox_loss(&mut self, risk: Var, times: &[f64], events: &[bool]) -> Result<Var> {
        let r = self.value(risk).data();
        if r.len() != times.len() || r.len() != events.len() {
            return Err(Error::Dimension(format!(
                "cox_loss: {} risks, {} times, {} events",
                r.len(),
                times.len(),
                events.len()
            )));
        }
        let (loss, _) = cox_loss_and_grad(r, times, events);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CoxLoss {
                risk,
                times: times.to_vec(),
                events: events.to_vec(),
            },
            &[risk],
        ))
    }

    // ---- backward ---------------------------------------------------------

    fn slot(&mut self, v: Var) -> &mut Vec<f64> {
        let n = self.nodes[v.0].value.numel();
        self.grads[v.0].get_or_insert_with(|| vec![0.0; n])
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn acc_scaled(&mut self, v: Var, g: &[f64], c: f64) {
        if self.wants(v) {
            let s = self.slot(v);
            for (d, x) in s.iter_mut().zip(g) {
                *d += c * x;
            }
        }
    }

    /// Reduces a broadcast-shaped gradient `g` back onto input `v`.
    fn acc_broadcast(&mut self, v: Var, out_shape: &[usize], g: &[f64], other: Option<(&[f64], &[usize])>) {
        if !self.wants(v) {
            return;
        }
        let shape = self.shape(v).to_vec();
        let sv = broadcast_strides(&shape, out_shape);
        let (od, so) = match other {
            Some((d, s)) => (d, broadcast_strides(s, out_shape)),
            None => (&[][..], vec![0; out_shape.len()]),
        };
        let same = shape.as_slice() == out_shape;
        let slot = self.slot(v);
        if same && other.is_none() {
            for (d, x) in slot.iter_mut().zip(g) {
                *d += x;
            }
            return;
        }
        walk(out_shape, &sv, &so, |o, iv, io| {
            let factor = if od.is_empty() { 1.0 } else { od[io] };
            slot[iv] += g[o] * factor;
        });
    }

    /// Runs the reverse sweep from a scalar `loss`. Leaf gradients
    /// accumulate across calls; intermediate gradients are recomputed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        for (node, g) in self.nodes.iter().zip(self.grads.iter_mut()) {
            if !matches!(node.op, Op::Leaf) {
                *g = None;
            }
        }
        if !self.wants(loss) {
            return Ok(());
        }
        self.slot(loss)[0] += 1.0;
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.backward_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, g: &[f64]) {
        // Temporarily move the op out so saved state can be borrowed while
        // gradient slots of earlier nodes are written.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let out_shape = self.nodes[i].value.shape().to_vec();
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc_broadcast(*a, &out_shape, g, None);
                self.acc_broadcast(*b, &out_shape, g, None);
            }
            Op::Sub(a, b) => {
                self.acc_broadcast(*a, &out_shape, g, None);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                self.acc_broadcast(*b, &out_shape, &neg, None);
            }
            Op::Mul(a, b) => {
                let va = self.value(*a).clone();
                let vb = self.value(*b).clone();
                self.acc_broadcast(*a, &out_shape, g, Some((vb.data(), vb.shape())));
                self.acc_broadcast(*b, &out_shape, g, Some((va.data(), va.shape())));
            }
            Op::Scale(x, c) => self.acc_scaled(*x, g, *c),
            Op::AddScalar(x) | Op::Reshape(x) => self.acc_scaled(*x, g, 1.0),
            &Op::MatMul {
                a,
                b,
                shared,
                batch,
                m,
                k,
                n,
            } => {
                if self.wants(a) {
                    let vb = self.value(b).data().to_vec();
                    let slot = self.slot(a);
                    if shared {
                        gemm(batch * m, n, k, g, false, &vb, true, slot, true);
                    } else {
                        for t in 0..batch {
                            gemm(
                                m,
                                n,
                                k,
                                &g[t * m * n..(t + 1) * m * n],
                                false,
                                &vb[t * k * n..(t + 1) * k * n],
                                true,
                                &mut slot[t * m * k..(t + 1) * m * k],
                                true,
                            );
                        }
                    }
                }
                if self.wants(b) {
                    let va = self.value(a).data().to_vec();
                    let slot = self.slot(b);
                    if shared {
                        gemm(k, batch * m, n, &va, true, g, false, slot, true);
                    } else {
                        for t in 0..batch {
                            gemm(
                                k,
                                m,
                                n,
                                &va[t * m * k..(t + 1) * m * k],
                                true,
                                &g[t * m * n..(t + 1) * m * n],
                                false,
                                &mut slot[t * k * n..(t + 1) * k * n],
                                true,
                            );
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if self.wants(*x) {
                    let s = self.slot(*x);
                    s.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(x) => {
                if self.wants(*x) {
                    let s = self.slot(*x);
                    let c = g[0] / s.len() as f64;
                    s.iter_mut().for_each(|d| *d += c);
                }
            }
            &Op::SumAxis {
                x,
                outer,
                len,
                inner,
                scale,
            } => {
                if self.wants(x) {
                    let s = self.slot(x);
                    for o in 0..outer {
                        for l in 0..len {
                            for j in 0..inner {
                                s[(o * len + l) * inner + j] += scale * g[o * inner + j];
                            }
                        }
                    }
                }
            }
            Op::MaxAxis { x, argmax } => {
                if self.wants(*x) {
                    let s = self.slot(*x);
                    for (slot, &at) in argmax.iter().enumerate() {
                        s[at] += g[slot];
                    }
                }
            }
            Op::Permute { x, axes } => {
                if self.wants(*x) {
                    let in_shape = self.shape(*x).to_vec();
                    let in_strides = contiguous_strides(&in_shape);
                    let sa: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
                    let zeros = vec![0; axes.len()];
                    let s = self.slot(*x);
                    walk(&out_shape, &sa, &zeros, |o, ia, _| s[ia] += g[o]);
                }
            }
            Op::Concat { xs, outer, widths } => {
                let row: usize = widths.iter().sum();
                let mut offset = 0;
                for (&x, &w) in xs.iter().zip(widths) {
                    if self.wants(x) {
                        let s = self.slot(x);
                        for o in 0..*outer {
                            for j in 0..w {
                                s[o * w + j] += g[o * row + offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::Gather { x, idx, n, d } => {
                if self.wants(*x) {
                    let (n, d) = (*n, *d);
                    let k = idx[0].len();
                    let s = self.slot(*x);
                    for (b, list) in idx.iter().enumerate() {
                        for (j, &p) in list.iter().enumerate() {
                            for c in 0..d {
                                s[(b * n + p) * d + c] += g[(b * k + j) * d + c];
                            }
                        }
                    }
                }
            }
            Op::Scatter { vis, fill, idx, n, d } => {
                let (n, d) = (*n, *d);
                let k = idx[0].len();
                let mut visible = vec![false; idx.len() * n];
                for (b, list) in idx.iter().enumerate() {
                    for &p in list {
                        visible[b * n + p] = true;
                    }
                }
                if self.wants(*vis) {
                    let s = self.slot(*vis);
                    for (b, list) in idx.iter().enumerate() {
                        for (j, &p) in list.iter().enumerate() {
                            for c in 0..d {
                                s[(b * k + j) * d + c] += g[(b * n + p) * d + c];
                            }
                        }
                    }
                }
                if self.wants(*fill) {
                    let s = self.slot(*fill);
                    for (r, &seen) in visible.iter().enumerate() {
                        if !seen {
                            for c in 0..d {
                                s[c] += g[r * d + c];
                            }
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                if self.wants(*x) {
                    let y = self.nodes[i].value.data().to_vec();
                    let (rows, d) = rows_last(&out_shape);
                    let s = self.slot(*x);
                    for r in 0..rows {
                        let yr = &y[r * d..(r + 1) * d];
                        let gr = &g[r * d..(r + 1) * d];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            s[r * d + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let (rows, d) = rows_last(&out_shape);
                if self.wants(*x) {
                    let gm = self.value(*gamma).data().to_vec();
                    let s = self.slot(*x);
                    for r in 0..rows {
                        let h = &xhat[r * d..(r + 1) * d];
                        let gr = &g[r * d..(r + 1) * d];
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..d {
                            let dh = gr[j] * gm[j];
                            mean_dh += dh;
                            mean_dh_h += dh * h[j];
                        }
                        mean_dh /= d as f64;
                        mean_dh_h /= d as f64;
                        for j in 0..d {
                            let dh = gr[j] * gm[j];
                            s[r * d + j] += rstd[r] * (dh - mean_dh - h[j] * mean_dh_h);
                        }
                    }
                }
                if self.wants(*gamma) {
                    let s = self.slot(*gamma);
                    for r in 0..rows {
                        for j in 0..d {
                            s[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if self.wants(*beta) {
                    let s = self.slot(*beta);
                    for r in 0..rows {
                        for j in 0..d {
                            s[j] += g[r * d + j];
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                if self.wants(*x) {
                    let xv = self.value(*x).data().to_vec();
                    let s = self.slot(*x);
                    for j in 0..s.len() {
                        s[j] += g[j] * gelu_parts(xv[j]).1;
                    }
                }
            }
            Op::Sigmoid(x) => {
                if self.wants(*x) {
                    let y = self.nodes[i].value.data().to_vec();
                    let s = self.slot(*x);
                    for j in 0..s.len() {
                        s[j] += g[j] * y[j] * (1.0 - y[j]);
                    }
                }
            }
            Op::Relu(x) => {
                if self.wants(*x) {
                    let xv = self.value(*x).data().to_vec();
                    let s = self.slot(*x);
                    for j in 0..s.len() {
                        if xv[j] > 0.0 {
                            s[j] += g[j];
                        }
                    }
                }
            }
            Op::Exp(x) => {
                if self.wants(*x) {
                    let y = self.nodes[i].value.data().to_vec();
                    let s = self.slot(*x);
                    for j in 0..s.len() {
                        s[j] += g[j] * y[j];
                    }
                }
            }
            &Op::Conv1d { x, w, stride, pad } => {
                let sx = self.shape(x).to_vec();
                let (bsz, cin, t) = Self::as_batched(&sx).expect("validated in forward");
                let sw = self.shape(w).to_vec();
                let (cout, k) = (sw[0], sw[2]);
                let t_out = *out_shape.last().expect("rank >= 2");
                let xv = self.value(x).data().to_vec();
                let wv = self.value(w).data().to_vec();
                let want_x = self.wants(x);
                let want_w = self.wants(w);
                let mut dcols = vec![0.0; cin * k * t_out];
                for b in 0..bsz {
                    let gb = &g[b * cout * t_out..(b + 1) * cout * t_out];
                    if want_w {
                        let cols = im2col(&xv[b * cin * t..(b + 1) * cin * t], cin, t, k, stride, pad, t_out);
                        gemm(cout, t_out, cin * k, gb, false, &cols, true, self.slot(w), true);
                    }
                    if want_x {
                        gemm(cin * k, cout, t_out, &wv, true, gb, false, &mut dcols, false);
                        let s = self.slot(x);
                        col2im_add(&dcols, &mut s[b * cin * t..(b + 1) * cin * t], cin, t, k, stride, pad, t_out);
                    }
                }
            }
            &Op::ConvTranspose1d { x, w, stride } => {
                let sx = self.shape(x).to_vec();
                let (bsz, cin, l) = Self::as_batched(&sx).expect("validated in forward");
                let sw = self.shape(w).to_vec();
                let (cout, k) = (sw[1], sw[2]);
                let l_out = *out_shape.last().expect("rank >= 2");
                let xv = self.value(x).data().to_vec();
                let wv = self.value(w).data().to_vec();
                let want_x = self.wants(x);
                let want_w = self.wants(w);
                let mut dcols = vec![0.0; cout * k * l];
                for b in 0..bsz {
                    let gb = &g[b * cout * l_out..(b + 1) * cout * l_out];
                    for co in 0..cout {
                        for kk in 0..k {
                            for p in 0..l {
                                dcols[(co * k + kk) * l + p] = gb[co * l_out + p * stride + kk];
                            }
                        }
                    }
                    if want_x {
                        let s = self.slot(x);
                        gemm(cin, cout * k, l, &wv, false, &dcols, false, &mut s[b * cin * l..(b + 1) * cin * l], true);
                    }
                    if want_w {
                        gemm(cin, l, cout * k, &xv[b * cin * l..(b + 1) * cin * l], false, &dcols, true, self.slot(w), true);
                    }
                }
            }
            Op::DftRe(x) | Op::DftIm(x) => {
                if self.wants(*x) {
                    let (rows, n) = rows_last(&out_shape);
                    let mut re = vec![0.0; rows * n];
                    let mut im = vec![0.0; rows * n];
                    dft_rows(g, None, &mut re, &mut im, n, false);
                    let part = if matches!(op, Op::DftRe(_)) { re } else { im };
                    self.acc_scaled(*x, &part, 1.0);
                }
            }
            &Op::IdftReal { re, im, .. } => {
                let (rows, n) = rows_last(&out_shape);
                let mut gr = vec![0.0; rows * n];
                let mut gi = vec![0.0; rows * n];
                dft_rows(g, None, &mut gr, &mut gi, n, false);
                let scale = 1.0 / n as f64;
                self.acc_scaled(re, &gr, scale);
                self.acc_scaled(im, &gi, scale);
            }
            Op::BceLogits { logits, target } => {
                if self.wants(*logits) {
                    let xv = self.value(*logits).data().to_vec();
                    let c = g[0] / xv.len() as f64;
                    let s = self.slot(*logits);
                    for j in 0..xv.len() {
                        s[j] += c * (sigmoid(xv[j]) - target[j]);
                    }
                }
            }
            Op::CoxLoss { risk, times, events } => {
                if self.wants(*risk) {
                    let r = self.value(*risk).data().to_vec();
                    let (_, grad) = cox_loss_and_grad(&r, times, events);
                    self.acc_scaled(*risk, &grad, g[0]);
                }
            }
        }
        self.nodes[i].op = op;
    }
}
