//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so reverse insertion order is a valid topological order
//! for the backward sweep.

use std::collections::HashMap;

use rand::{Rng, RngCore};

use super::params::{ParamId, ParameterStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    MulRows(Var, Var),
    ScaleBy(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    GatherRows(Var, Vec<usize>),
    Scatter(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Narrow(Var, usize, usize),
    Sum(Var),
    Mean(Var, usize),
    Max(Var, Vec<usize>),
    Dot(Var, Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Gelu(Var),
    Relu(Var),
    Sqrt(Var),
    Clamp(Var, f64, f64),
    Log1mClamped(Var, f64),
    Softmax(Var),
    LayerNorm(Var, Vec<f64>),
    Cosine(Var, Var),
    Dropout(Var, Vec<f64>),
    StraightThrough(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a scalar with respect to each parameter reached by the graph.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    entries: Vec<(ParamId, Vec<f64>)>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.entries
            .iter()
            .find(|(pid, _)| *pid == id)
            .map(|(_, g)| g.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.entries.iter().map(|(id, g)| (*id, g.as_slice()))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, g)| g.iter().all(|v| v.is_finite()))
    }
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s: Vec<usize> = shape.to_vec();
    s.remove(axis);
    if s.is_empty() {
        vec![1]
    } else {
        s
    }
}

/// c[m×n] += a[m×k] · b[k×n]
fn mm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// c[m×k] += a[m×n] · b[k×n]ᵀ
fn mm_nt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b[j * n..(j + 1) * n];
            c[i * k + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// c[k×n] += a[m×k]ᵀ · b[m×n]
fn mm_tn_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const LAYER_NORM_EPS: f64 = 1e-5;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn item(&self, v: Var) -> Result<f64> {
        self.value(v).item()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, x: Var, data: Vec<f64>, op: Op) -> Var {
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push(Tensor::new(shape, data).expect("unary shape"), op, needs)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Brings a parameter into the graph; repeated calls return the same node.
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id), true);
        self.params.insert(id, v);
        v
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn binary_elementwise(&mut self, op_name: &'static str, a: Var, b: Var, f: fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(op_name, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, data)?, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a vector to every row along the last dimension of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x);
        let d = *xs.last().expect("non-empty shape");
        if self.value(bias).numel() != d {
            return Err(Error::shape(
                "add_bias",
                format!("bias of {} values for last dimension {d}", self.value(bias).numel()),
            ));
        }
        let b = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .chunks(d)
            .flat_map(|row| row.iter().zip(b).map(|(v, bv)| v + bv))
            .collect();
        let shape = xs.to_vec();
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(Tensor::new(shape, data)?, Op::AddBias(x, bias), needs))
    }

    /// Scales row `i` of `x` by `factors[i]`.
    pub fn mul_rows(&mut self, x: Var, factors: Var) -> Result<Var> {
        let rows = self.value(x).rows();
        if self.value(factors).numel() != rows {
            return Err(Error::shape(
                "mul_rows",
                format!("{} factors for {rows} rows", self.value(factors).numel()),
            ));
        }
        let w = self.value(x).row_len();
        let f = self.value(factors).data();
        let data = self
            .value(x)
            .data()
            .chunks(w)
            .zip(f)
            .flat_map(|(row, s)| row.iter().map(move |v| v * s))
            .collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x) || self.needs(factors);
        Ok(self.push(Tensor::new(shape, data)?, Op::MulRows(x, factors), needs))
    }

    /// Multiplies every element of `x` by the single value held in `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.value(s).item().map_err(|_| Error::shape("scale_by", "scale must hold one value"))?;
        let data = self.value(x).data().iter().map(|v| v * sv).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x) || self.needs(s);
        Ok(self.push(Tensor::new(shape, data)?, Op::ScaleBy(x, s), needs))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let data = self.value(x).data().iter().map(|v| v * c).collect();
        self.unary(x, data, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let data = self.value(x).data().iter().map(|v| v + c).collect();
        self.unary(x, data, Op::AddScalar(x))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: Var) -> Var {
        let n = self.neg(x);
        self.add_scalar(n, 1.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        mm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), needs))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::shape("transpose", format!("expected a matrix, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let src = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::matrix(c, r, out)?, Op::Transpose(x), needs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape.to_vec())?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Reshape(x), needs))
    }

    /// Selects rows (leading-dimension slices) of `x` by index.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let src = self.value(x);
        let rows = src.rows();
        let w = src.row_len();
        if indices.is_empty() {
            return Err(Error::invalid("gather_rows needs at least one index"));
        }
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            if i >= rows {
                return Err(Error::IndexOutOfRange { index: i, len: rows });
            }
            data.extend_from_slice(src.row(i));
        }
        let mut shape = src.shape().to_vec();
        shape[0] = indices.len();
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::GatherRows(x, indices.to_vec()), needs))
    }

    /// Places the values of the vector `src` at `positions` in a vector of
    /// length `len`, filling every other slot with `fill`.
    pub fn scatter(&mut self, src: Var, positions: &[usize], len: usize, fill: f64) -> Result<Var> {
        let s = self.value(src);
        if s.numel() != positions.len() {
            return Err(Error::shape(
                "scatter",
                format!("{} values for {} positions", s.numel(), positions.len()),
            ));
        }
        let mut data = vec![fill; len];
        for (&p, &v) in positions.iter().zip(s.data()) {
            if p >= len {
                return Err(Error::IndexOutOfRange { index: p, len });
            }
            data[p] = v;
        }
        let needs = self.needs(src);
        Ok(self.push(Tensor::vector(data)?, Op::Scatter(src, positions.to_vec()), needs))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} for shape {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{s:?} vs {base:?} along axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis];
                let chunk = len * inner;
                data.extend_from_slice(&self.value(p).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(parts.to_vec(), axis), needs))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape(
                "narrow",
                format!("[{start}, {}) along axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, full, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(out_shape, data)?, Op::Narrow(x, axis, start), needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("mean", format!("axis {axis} for shape {shape:?}")));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += src[(o * len + l) * inner + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= len as f64);
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(reduced_shape(&shape, axis), out)?, Op::Mean(x, axis), needs))
    }

    /// Maximum along `axis`; the gradient goes to the first maximal element.
    pub fn max(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("max", format!("axis {axis} for shape {shape:?}")));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let slot = o * inner + i;
                for l in 0..len {
                    let idx = (o * len + l) * inner + i;
                    if l == 0 || src[idx] > out[slot] {
                        out[slot] = src[idx];
                        arg[slot] = idx;
                    }
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(reduced_shape(&shape, axis), out)?,
            Op::Max(x, arg),
            needs,
        ))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).numel() != self.value(b).numel() {
            return Err(Error::shape(
                "dot",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let s = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .sum();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b), needs))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let data = self.value(x).data().iter().map(|&v| f(v)).collect();
        self.unary(x, data, op)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.map(x, f64::ln, Op::Log(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.map(x, gelu, Op::Gelu(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.map(x, f64::sqrt, Op::Sqrt(x))
    }

    /// Elementwise clamp; the gradient passes only where `lo <= x <= hi`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.map(x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    /// `ln(1 - min(p, cap))`, evaluated with `ln_1p`.
    pub fn log1m_clamped(&mut self, p: Var, cap: f64) -> Var {
        self.map(p, |v| (-v.min(cap)).ln_1p(), Op::Log1mClamped(p, cap))
    }

    /// Softmax along the last dimension, max-subtracted. Entries equal to
    /// `-inf` receive zero mass; a row made only of `-inf` is rejected.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().expect("non-empty shape");
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(d) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if m == f64::NEG_INFINITY || m.is_nan() {
                return Err(Error::NonFinite("softmax row has no finite entry".into()));
            }
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax(x), needs))
    }

    /// Normalises each row along the last dimension to zero mean, unit variance.
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().expect("non-empty shape");
        let mut out = self.value(x).data().to_vec();
        let mut inv_std = Vec::with_capacity(out.len() / d);
        for row in out.chunks_mut(d) {
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mu) * is);
            inv_std.push(is);
        }
        let needs = self.needs(x);
        self.push(Tensor::new(shape, out).expect("layer_norm shape"), Op::LayerNorm(x, inv_std), needs)
    }

    /// Cosine similarity of two equally sized tensors; zero if either is zero.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).numel() != self.value(b).numel() {
            return Err(Error::shape(
                "cosine",
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let na = av.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = bv.iter().map(|v| v * v).sum::<f64>().sqrt();
        let c = if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            av.iter().zip(bv).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
        };
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(c), Op::Cosine(a, b), needs))
    }

    /// Inverted dropout keeping each element with probability `keep`.
    /// Passing no randomness source (inference) makes this the identity.
    pub fn dropout(&mut self, x: Var, keep: f64, rng: Option<&mut dyn RngCore>) -> Result<Var> {
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(Error::invalid(format!("keep probability {keep} not in (0, 1]")));
        }
        let rng = match rng {
            Some(r) if keep < 1.0 => r,
            _ => return Ok(x),
        };
        let n = self.value(x).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let data = self.value(x).data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        Ok(self.unary(x, data, Op::Dropout(x, mask)))
    }

    /// Straight-through scaling of rows of `t` by `s`.
    ///
    /// The forward value is exactly `t`. The backward pass treats the output
    /// as `t ⊙ s` (row `r` scaled by `s[r]`): `grad(s[r]) += t_r · up_r` and
    /// `grad(t_r) += s[r] · up_r`.
    pub fn straight_through_scale(&mut self, t: Var, s: Var) -> Result<Var> {
        let rows = if self.value(t).rank() == 1 { 1 } else { self.value(t).rows() };
        if self.value(s).numel() != rows {
            return Err(Error::shape(
                "straight_through_scale",
                format!("{} scales for {rows} rows", self.value(s).numel()),
            ));
        }
        let value = self.value(t).clone();
        let needs = self.needs(t) || self.needs(s);
        Ok(self.push(value, Op::StraightThrough(t, s), needs))
    }

    /// Reverse sweep from the scalar `loss`, returning parameter gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(up) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backward_node(node, &up, &mut grads)?;
            if let Op::Param(id) = node.op {
                out.entries.push((id, up));
            }
        }
        out.entries.sort_by_key(|(id, _)| *id);
        Ok(out)
    }

    /// Convenience: backward and accumulate into the store's gradient buffers.
    pub fn backward_into(&self, loss: Var, store: &mut ParameterStore) -> Result<()> {
        let g = self.backward(loss)?;
        store.accumulate(&g);
        Ok(())
    }

    fn buf<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn backward_node(&self, node: &Node, up: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let val = |v: Var| self.nodes[v.0].value.data();
        let out = node.value.data();
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(g) = self.buf(grads, v) {
                        g.iter_mut().zip(up).for_each(|(g, u)| *g += u);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(g) = self.buf(grads, *a) {
                    g.iter_mut().zip(up).for_each(|(g, u)| *g += u);
                }
                if let Some(g) = self.buf(grads, *b) {
                    g.iter_mut().zip(up).for_each(|(g, u)| *g -= u);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if let Some(g) = self.buf(grads, *a) {
                    for i in 0..g.len() {
                        g[i] += up[i] * bv[i];
                    }
                }
                if let Some(g) = self.buf(grads, *b) {
                    for i in 0..g.len() {
                        g[i] += up[i] * av[i];
                    }
                }
            }
            Op::AddBias(x, b) => {
                if let Some(g) = self.buf(grads, *x) {
                    g.iter_mut().zip(up).for_each(|(g, u)| *g += u);
                }
                if let Some(g) = self.buf(grads, *b) {
                    let d = g.len();
                    for row in up.chunks(d) {
                        g.iter_mut().zip(row).for_each(|(g, u)| *g += u);
                    }
                }
            }
            Op::MulRows(x, f) => {
                let (xv, fv) = (val(*x), val(*f));
                let w = xv.len() / fv.len();
                if let Some(g) = self.buf(grads, *x) {
                    for (r, s) in fv.iter().enumerate() {
                        for c in 0..w {
                            g[r * w + c] += up[r * w + c] * s;
                        }
                    }
                }
                if let Some(g) = self.buf(grads, *f) {
                    for r in 0..fv.len() {
                        g[r] += (0..w).map(|c| up[r * w + c] * xv[r * w + c]).sum::<f64>();
                    }
                }
            }
            Op::ScaleBy(x, s) => {
                let (xv, sv) = (val(*x), val(*s)[0]);
                if let Some(g) = self.buf(grads, *x) {
                    g.iter_mut().zip(up).for_each(|(g, u)| *g += u * sv);
                }
                if let Some(g) = self.buf(grads, *s) {
                    g[0] += up.iter().zip(xv).map(|(u, v)| u * v).sum::<f64>();
                }
            }
            Op::Scale(x, c) => {
                if let Some(g) = self.buf(grads, *x) {
                    g.iter_mut().zip(up).for_each(|(g, u)| *g += u * c);
                }
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                if let Some(g) = self.buf(grads, *x) {
                    g.iter_mut().zip(up).for_each(|(g, u)| *g += u);
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (av, bv) = (val(*a), val(*b));
                if let Some(g) = self.buf(grads, *a) {
                    mm_nt_acc(up, bv, g, m, n, k);
                }
                if let Some(g) = self.buf(grads, *b) {
                    mm_tn_acc(av, up, g, m, k, n);
                }
            }
            Op::Transpose(x) => {
                let s = self.nodes[x.0].value.shape();
                let (r, c) = (s[0], s[1]);
                if let Some(g) = self.buf(grads, *x) {
                    for i in 0..r {
                        for j in 0..c {
                            g[i * c + j] += up[j * r + i];
                        }
                    }
                }
            }
            Op::GatherRows(x, idx) => {
                let w = self.nodes[x.0].value.row_len();
                if let Some(g) = self.buf(grads, *x) {
                    for (o, &i) in idx.iter().enumerate() {
                        let dst = &mut g[i * w..(i + 1) * w];
                        dst.iter_mut()
                            .zip(&up[o * w..(o + 1) * w])
                            .for_each(|(g, u)| *g += u);
                    }
                }
            }
            Op::Scatter(src, pos) => {
                if let Some(g) = self.buf(grads, *src) {
                    for (j, &p) in pos.iter().enumerate() {
                        g[j] += up[p];
                    }
                }
            }
            Op::Concat(parts, axis) => {
                let shape = node.value.shape();
                let (outer, total, inner) = split_axis(shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.shape()[*axis];
                    if let Some(g) = self.buf(grads, p) {
                        for o in 0..outer {
                            let src = &up[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            let dst = &mut g[o * len * inner..(o + 1) * len * inner];
                            dst.iter_mut().zip(src).for_each(|(g, u)| *g += u);
                        }
                    }
                    offset += len;
                }
            }
            Op::Narrow(x, axis, start) => {
                let full_shape = self.nodes[x.0].value.shape();
                let (outer, full, inner) = split_axis(full_shape, *axis);
                let len = node.value.shape()[*axis];
                if let Some(g) = self.buf(grads, *x) {
                    for o in 0..outer {
                        let base = o * full * inner + start * inner;
                        let dst = &mut g[base..base + len * inner];
                        let src = &up[o * len * inner..(o + 1) * len * inner];
                        dst.iter_mut().zip(src).for_each(|(g, u)| *g += u);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(g) = self.buf(grads, *x) {
                    g.iter_mut().for_each(|g| *g += up[0]);
                }
            }
            Op::Mean(x, axis) => {
                let (outer, len, inner) = split_axis(self.nodes[x.0].value.shape(), *axis);
                if let Some(g) = self.buf(grads, *x) {
                    let scale = 1.0 / len as f64;
                    for o in 0..outer {
                        for l in 0..len {
                            for i in 0..inner {
                                g[(o * len + l) * inner + i] += up[o * inner + i] * scale;
                            }
                        }
                    }
                }
            }
            Op::Max(x, arg) => {
                if let Some(g) = self.buf(grads, *x) {
                    for (slot, &idx) in arg.iter().enumerate() {
                        g[idx] += up[slot];
                    }
                }
            }
            Op::Dot(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if let Some(g) = self.buf(grads, *a) {
                    g.iter_mut().zip(bv).for_each(|(g, v)| *g += up[0] * v);
                }
                if let Some(g) = self.buf(grads, *b) {
                    g.iter_mut().zip(av).for_each(|(g, v)| *g += up[0] * v);
                }
            }
            Op::Exp(x) => self.elementwise_back(grads, *x, up, |i, _| out[i]),
            Op::Log(x) => {
                let xv = val(*x);
                self.elementwise_back(grads, *x, up, |i, _| 1.0 / xv[i])
            }
            Op::Tanh(x) => self.elementwise_back(grads, *x, up, |i, _| 1.0 - out[i] * out[i]),
            Op::Sigmoid(x) => self.elementwise_back(grads, *x, up, |i, _| out[i] * (1.0 - out[i])),
            Op::Gelu(x) => {
                let xv = val(*x);
                self.elementwise_back(grads, *x, up, |i, _| gelu_grad(xv[i]))
            }
            Op::Relu(x) => {
                let xv = val(*x);
                self.elementwise_back(grads, *x, up, |i, _| if xv[i] > 0.0 { 1.0 } else { 0.0 })
            }
            Op::Sqrt(x) => self.elementwise_back(grads, *x, up, |i, _| 0.5 / out[i]),
            Op::Clamp(x, lo, hi) => {
                let xv = val(*x);
                self.elementwise_back(grads, *x, up, |i, _| {
                    if xv[i] >= *lo && xv[i] <= *hi {
                        1.0
                    } else {
                        0.0
                    }
                })
            }
            Op::Log1mClamped(p, cap) => {
                let pv = val(*p);
                self.elementwise_back(grads, *p, up, |i, _| {
                    if pv[i] < *cap {
                        -1.0 / (1.0 - pv[i])
                    } else {
                        0.0
                    }
                })
            }
            Op::Softmax(x) => {
                let d = *node.value.shape().last().expect("shape");
                if let Some(g) = self.buf(grads, *x) {
                    for r in 0..out.len() / d {
                        let y = &out[r * d..(r + 1) * d];
                        let u = &up[r * d..(r + 1) * d];
                        let s: f64 = y.iter().zip(u).map(|(a, b)| a * b).sum();
                        for c in 0..d {
                            g[r * d + c] += y[c] * (u[c] - s);
                        }
                    }
                }
            }
            Op::LayerNorm(x, inv_std) => {
                let d = *node.value.shape().last().expect("shape");
                if let Some(g) = self.buf(grads, *x) {
                    for (r, is) in inv_std.iter().enumerate() {
                        let y = &out[r * d..(r + 1) * d];
                        let u = &up[r * d..(r + 1) * d];
                        let mu = u.iter().sum::<f64>() / d as f64;
                        let muy = u.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for c in 0..d {
                            g[r * d + c] += is * (u[c] - mu - y[c] * muy);
                        }
                    }
                }
            }
            Op::Cosine(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let na = av.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nb = bv.iter().map(|v| v * v).sum::<f64>().sqrt();
                if na > 0.0 && nb > 0.0 {
                    let c = out[0];
                    if let Some(g) = self.buf(grads, *a) {
                        for i in 0..g.len() {
                            g[i] += up[0] * (bv[i] / (na * nb) - c * av[i] / (na * na));
                        }
                    }
                    if let Some(g) = self.buf(grads, *b) {
                        for i in 0..g.len() {
                            g[i] += up[0] * (av[i] / (na * nb) - c * bv[i] / (nb * nb));
                        }
                    }
                }
            }
            Op::Dropout(x, mask) => self.elementwise_back(grads, *x, up, |i, _| mask[i]),
            Op::StraightThrough(t, s) => {
                let (tv, sv) = (val(*t), val(*s));
                let w = tv.len() / sv.len();
                if let Some(g) = self.buf(grads, *s) {
                    for r in 0..sv.len() {
                        g[r] += (0..w).map(|c| tv[r * w + c] * up[r * w + c]).sum::<f64>();
                    }
                }
                if let Some(g) = self.buf(grads, *t) {
                    for r in 0..sv.len() {
                        for c in 0..w {
                            g[r * w + c] += sv[r] * up[r * w + c];
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn elementwise_back(
        &self,
        grads: &mut [Option<Vec<f64>>],
        x: Var,
        up: &[f64],
        deriv: impl Fn(usize, f64) -> f64,
    ) {
        if let Some(g) = self.buf(grads, x) {
            for i in 0..g.len() {
                g[i] += up[i] * deriv(i, up[i]);
            }
        }
    }
}
