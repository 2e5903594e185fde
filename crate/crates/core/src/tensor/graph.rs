//! Tape-based reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the tape in reverse from a scalar root and
//! accumulates the gradient of each node into its parents. Parameters enter
//! the graph through [`Graph::param`], which memoizes one leaf per
//! [`ParamId`] so that repeated use accumulates into a single gradient.
//!
//! Shapes are never broadcast implicitly: every operation validates its
//! operands and reports a [`Error::Shape`] on mismatch. Any operation whose
//! output contains NaN or infinity fails with [`Error::NonFinite`].

use std::collections::HashMap;

use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, trans_b: bool },
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Softmax(Var),
    ReGlu(Var),
    MaskMul(Var, Vec<f64>),
    Gather { table: Var, index: Vec<usize> },
    Repeat { x: Var, times: usize },
    Concat { parts: Vec<Var>, axis: usize },
    Select { x: Var, axis: usize, index: Vec<usize> },
    Reshape(Var),
    SplitHeads { x: Var, heads: usize },
    MergeHeads { x: Var, heads: usize },
    RowDot(Var, Var),
    Sum(Var),
    Mean(Var),
    PoissonDeviance { log_mu: Var, y: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation; one per forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: HashMap<ParamId, Var>,
}

impl Gradients {
    /// Only leaves (variables and parameters) keep their gradient.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn for_param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id).and_then(|v| self.wrt(*v))
    }

    /// Gradients aligned with the ids of `store`; `None` for parameters the
    /// root does not depend on.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Option<Tensor>> {
        store.ids().map(|id| self.for_param(id).cloned()).collect()
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `c (+)= a * b` for strided row-major operands.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // Safety: strides describe views lying within the slices, checked by
    // callers through shape validation.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(op_name(&op).to_string()));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf that receives a gradient without being tied to a store.
    pub fn variable(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(v) = self.params.get(&id) {
            return Ok(*v);
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, true)?;
        self.params.insert(id, v);
        Ok(v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("add", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Add(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mul", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.value(a).map(|v| v * c);
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, c), rg)
    }

    /// `x + b` with `b` (any shape holding `last_dim(x)` values) added to every row.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xt, bt) = (self.value(x), self.value(b));
        let d = xt.last_dim();
        if bt.len() != d {
            return Err(Error::shape(
                "add_row",
                format!("row vector of {} for last dim {d}", bt.len()),
            ));
        }
        let bd = bt.data();
        let data = xt
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + bd[i % d])
            .collect();
        let t = Tensor::new(xt.shape().to_vec(), data)?;
        let rg = self.rg(&[x, b]);
        self.push(t, Op::AddRow(x, b), rg)
    }

    /// `x * g` with `g` multiplied into every row.
    pub fn mul_row(&mut self, x: Var, g: Var) -> Result<Var> {
        let (xt, gt) = (self.value(x), self.value(g));
        let d = xt.last_dim();
        if gt.len() != d {
            return Err(Error::shape(
                "mul_row",
                format!("row vector of {} for last dim {d}", gt.len()),
            ));
        }
        let gd = gt.data();
        let data = xt
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * gd[i % d])
            .collect();
        let t = Tensor::new(xt.shape().to_vec(), data)?;
        let rg = self.rg(&[x, g]);
        self.push(t, Op::MulRow(x, g), rg)
    }

    /// `x [..., k] @ w [k, n] -> [..., n]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xt, wt) = (self.value(x), self.value(w));
        if wt.shape().len() != 2 || xt.shape().is_empty() || xt.last_dim() != wt.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} @ {:?}", xt.shape(), wt.shape()),
            ));
        }
        let (m, k, n) = (xt.leading(), wt.shape()[0], wt.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            xt.data(),
            (k as isize, 1),
            wt.data(),
            (n as isize, 1),
            &mut out,
            false,
        );
        let mut shape = xt.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let t = Tensor::new(shape, out)?;
        let rg = self.rg(&[x, w]);
        self.push(t, Op::MatMul(x, w), rg)
    }

    /// Dense layer `x @ w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_row(h, b)
    }

    /// `a [B, m, k] @ b [B, k, n]`, or `a @ b^T` with `b [B, n, k]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        let (sa, sb) = (at.shape(), bt.shape());
        let bad = || Error::shape("batch_matmul", format!("{sa:?} x {sb:?} (trans_b={trans_b})"));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(bad());
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(bad());
        }
        let (ad, bd) = (at.data(), bt.data());
        let mut out = vec![0.0; batch * m * n];
        for s in 0..batch {
            let a0 = &ad[s * m * k..(s + 1) * m * k];
            let b0 = &bd[s * k * n..(s + 1) * k * n];
            let c0 = &mut out[s * m * n..(s + 1) * m * n];
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for p in 0..k {
                        let bv = if trans_b { b0[j * k + p] } else { b0[p * n + j] };
                        acc += a0[i * k + p] * bv;
                    }
                    c0[i * n + j] = acc;
                }
            }
        }
        let t = Tensor::new(vec![batch, m, n], out)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::BatchMatMul { a, b, trans_b }, rg)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(f64::tanh);
        let rg = self.rg(&[x]);
        self.push(t, Op::Tanh(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(&[x]);
        self.push(t, Op::Relu(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(f64::exp);
        let rg = self.rg(&[x]);
        self.push(t, Op::Exp(x), rg)
    }

    /// Normalizes each row over the last axis to zero mean and unit
    /// variance, with `eps` inside the square root. No affine part.
    pub fn normalize(&mut self, x: Var, eps: f64) -> Result<Var> {
        let xt = self.value(x);
        let d = xt.last_dim();
        if d == 0 || xt.shape().is_empty() {
            return Err(Error::shape("layer_norm", "zero-length normalization axis"));
        }
        let rows = xt.leading();
        let mut out = vec![0.0; xt.len()];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xt.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            for (o, v) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let t = Tensor::new(xt.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        self.push(t, Op::LayerNorm { x, inv_std }, rg)
    }

    /// Softmax over the last axis, computed after subtracting the row max.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let d = xt.last_dim();
        if d == 0 {
            return Err(Error::shape("softmax", "empty axis"));
        }
        let mut out = vec![0.0; xt.len()];
        for r in 0..xt.leading() {
            let row = xt.row(r);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let o = &mut out[r * d..(r + 1) * d];
            let mut z = 0.0;
            for (oi, v) in o.iter_mut().zip(row) {
                *oi = (v - mx).exp();
                z += *oi;
            }
            o.iter_mut().for_each(|v| *v /= z);
        }
        let t = Tensor::new(xt.shape().to_vec(), out)?;
        let rg = self.rg(&[x]);
        self.push(t, Op::Softmax(x), rg)
    }

    /// Splits the last axis into halves `(a, b)` and returns `a * relu(b)`.
    pub fn reglu(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        let d = xt.last_dim();
        if d % 2 != 0 || xt.shape().is_empty() {
            return Err(Error::shape("reglu", format!("last dim {d} is odd")));
        }
        let m = d / 2;
        let mut out = Vec::with_capacity(xt.len() / 2);
        for r in 0..xt.leading() {
            let row = xt.row(r);
            out.extend((0..m).map(|j| row[j] * row[m + j].max(0.0)));
        }
        let mut shape = xt.shape().to_vec();
        *shape.last_mut().unwrap() = m;
        let t = Tensor::new(shape, out)?;
        let rg = self.rg(&[x]);
        self.push(t, Op::ReGlu(x), rg)
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mask_mul(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let xt = self.value(x);
        if mask.len() != xt.len() {
            return Err(Error::shape("mask_mul", format!("{} vs {}", mask.len(), xt.len())));
        }
        let data = xt.data().iter().zip(&mask).map(|(a, b)| a * b).collect();
        let t = Tensor::new(xt.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        self.push(t, Op::MaskMul(x, mask), rg)
    }

    /// Rows of `table [S, d]` selected by `index`, giving `[index.len(), d]`.
    pub fn gather(&mut self, table: Var, index: Vec<usize>, name: &str) -> Result<Var> {
        let tt = self.value(table);
        if tt.shape().len() != 2 {
            return Err(Error::shape("gather", format!("table shape {:?}", tt.shape())));
        }
        let (s, d) = (tt.shape()[0], tt.shape()[1]);
        let mut out = Vec::with_capacity(index.len() * d);
        for &i in &index {
            if i >= s {
                return Err(Error::Lookup {
                    table: name.to_string(),
                    index: i,
                    size: s,
                });
            }
            out.extend_from_slice(tt.row(i));
        }
        let t = Tensor::new(vec![index.len(), d], out)?;
        let rg = self.rg(&[table]);
        self.push(t, Op::Gather { table, index }, rg)
    }

    /// Stacks `times` copies of `x` along a new leading axis.
    pub fn repeat(&mut self, x: Var, times: usize) -> Result<Var> {
        let xt = self.value(x);
        let mut data = Vec::with_capacity(xt.len() * times);
        for _ in 0..times {
            data.extend_from_slice(xt.data());
        }
        let mut shape = vec![times];
        shape.extend_from_slice(xt.shape());
        let t = Tensor::new(shape, data)?;
        let rg = self.rg(&[x]);
        self.push(t, Op::Repeat { x, times }, rg)
    }

    /// Concatenation along `axis`; all other axes must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no parts"))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} for {base:?}")));
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut total = 0;
        for p in parts {
            let s = self.value(*p).shape();
            if s.len() != base.len()
                || s[..axis] != base[..axis]
                || s[axis + 1..] != base[axis + 1..]
            {
                return Err(Error::shape("concat", format!("{s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let len = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let t = Tensor::new(shape, out)?;
        let rg = self.rg(parts);
        self.push(
            t,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        )
    }

    /// Picks entries `index` along `axis` (repeats allowed).
    pub fn select(&mut self, x: Var, axis: usize, index: Vec<usize>) -> Result<Var> {
        let xt = self.value(x);
        let s = xt.shape();
        if axis >= s.len() || index.iter().any(|&i| i >= s[axis]) {
            return Err(Error::shape("select", format!("index {index:?} on axis {axis} of {s:?}")));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let len = s[axis];
        let mut out = Vec::with_capacity(outer * index.len() * inner);
        for o in 0..outer {
            for &i in &index {
                let start = (o * len + i) * inner;
                out.extend_from_slice(&xt.data()[start..start + inner]);
            }
        }
        let mut shape = s.to_vec();
        shape[axis] = index.len();
        let t = Tensor::new(shape, out)?;
        let rg = self.rg(&[x]);
        self.push(t, Op::Select { x, axis, index }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(&[x]);
        self.push(t, Op::Reshape(x), rg)
    }

    /// `[B, T, h*dk] -> [B*h, T, dk]`.
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let xt = self.value(x);
        let s = xt.shape();
        if s.len() != 3 || heads == 0 || s[2] % heads != 0 {
            return Err(Error::shape("split_heads", format!("{s:?} into {heads} heads")));
        }
        let (b, t, dk) = (s[0], s[1], s[2] / heads);
        let mut out = vec![0.0; xt.len()];
        let xd = xt.data();
        for bi in 0..b {
            for ti in 0..t {
                for h in 0..heads {
                    let src = ((bi * t + ti) * heads + h) * dk;
                    let dst = ((bi * heads + h) * t + ti) * dk;
                    out[dst..dst + dk].copy_from_slice(&xd[src..src + dk]);
                }
            }
        }
        let tt = Tensor::new(vec![b * heads, t, dk], out)?;
        let rg = self.rg(&[x]);
        self.push(tt, Op::SplitHeads { x, heads }, rg)
    }

    /// `[B*h, T, dk] -> [B, T, h*dk]`.
    pub fn merge_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let xt = self.value(x);
        let s = xt.shape();
        if s.len() != 3 || heads == 0 || s[0] % heads != 0 {
            return Err(Error::shape("merge_heads", format!("{s:?} from {heads} heads")));
        }
        let (b, t, dk) = (s[0] / heads, s[1], s[2]);
        let mut out = vec![0.0; xt.len()];
        let xd = xt.data();
        for bi in 0..b {
            for ti in 0..t {
                for h in 0..heads {
                    let dst = ((bi * t + ti) * heads + h) * dk;
                    let src = ((bi * heads + h) * t + ti) * dk;
                    out[dst..dst + dk].copy_from_slice(&xd[src..src + dk]);
                }
            }
        }
        let tt = Tensor::new(vec![b, t, heads * dk], out)?;
        let rg = self.rg(&[x]);
        self.push(tt, Op::MergeHeads { x, heads }, rg)
    }

    /// Row-wise inner product over the last axis, keeping it as size 1.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        same_shape("row_dot", at, bt)?;
        let out: Vec<f64> = (0..at.leading())
            .map(|r| at.row(r).iter().zip(bt.row(r)).map(|(p, q)| p * q).sum())
            .collect();
        let mut shape = at.shape().to_vec();
        if let Some(last) = shape.last_mut() {
            *last = 1;
        }
        let t = Tensor::new(shape, out)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::RowDot(a, b), rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let t = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(t, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xt = self.value(x);
        if xt.is_empty() {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let t = Tensor::scalar(xt.sum() / xt.len() as f64);
        let rg = self.rg(&[x]);
        self.push(t, Op::Mean(x), rg)
    }

    /// Mean Poisson deviance `2 (y ln(y/mu) - y + mu)` with `mu = exp(log_mu)`.
    pub fn poisson_deviance(&mut self, log_mu: Var, y: Vec<f64>) -> Result<Var> {
        let lt = self.value(log_mu);
        if lt.len() != y.len() || y.is_empty() {
            return Err(Error::shape(
                "poisson_deviance",
                format!("{} predictions for {} responses", lt.len(), y.len()),
            ));
        }
        let total: f64 = lt
            .data()
            .iter()
            .zip(&y)
            .map(|(&eta, &yi)| crate::training::deviance::unit_deviance_log(yi, eta))
            .sum();
        let t = Tensor::scalar(total / y.len() as f64);
        let rg = self.rg(&[log_mu]);
        self.push(t, Op::PoissonDeviance { log_mu, y }, rg)
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::filled(self.value(root).shape(), 1.0));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let d = gd.iter().zip(bv.data()).map(|(p, q)| p * q).collect();
                    self.accumulate(grads, *a, Tensor::new(av.shape().to_vec(), d).unwrap());
                }
                if self.wants(*b) {
                    let d = gd.iter().zip(av.data()).map(|(p, q)| p * q).collect();
                    self.accumulate(grads, *b, Tensor::new(bv.shape().to_vec(), d).unwrap());
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|v| v * c)),
            Op::AddRow(x, b) => {
                if self.wants(*x) {
                    self.accumulate(grads, *x, g.clone());
                }
                if self.wants(*b) {
                    let bv = self.value(*b);
                    let d = bv.len();
                    let mut gb = vec![0.0; d];
                    for (i, v) in gd.iter().enumerate() {
                        gb[i % d] += v;
                    }
                    self.accumulate(grads, *b, Tensor::new(bv.shape().to_vec(), gb).unwrap());
                }
            }
            Op::MulRow(x, s) => {
                let (xv, sv) = (self.value(*x), self.value(*s));
                let d = sv.len();
                if self.wants(*x) {
                    let sd = sv.data();
                    let gx = gd.iter().enumerate().map(|(i, v)| v * sd[i % d]).collect();
                    self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), gx).unwrap());
                }
                if self.wants(*s) {
                    let mut gs = vec![0.0; d];
                    for (i, (v, xi)) in gd.iter().zip(xv.data()).enumerate() {
                        gs[i % d] += v * xi;
                    }
                    self.accumulate(grads, *s, Tensor::new(sv.shape().to_vec(), gs).unwrap());
                }
            }
            Op::MatMul(x, w) => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (m, k, n) = (xv.leading(), wv.shape()[0], wv.shape()[1]);
                if self.wants(*x) {
                    let mut gx = vec![0.0; m * k];
                    gemm(m, n, k, gd, (n as isize, 1), wv.data(), (1, n as isize), &mut gx, false);
                    self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), gx).unwrap());
                }
                if self.wants(*w) {
                    let mut gw = vec![0.0; k * n];
                    gemm(k, m, n, xv.data(), (1, k as isize), gd, (n as isize, 1), &mut gw, false);
                    self.accumulate(grads, *w, Tensor::new(vec![k, n], gw).unwrap());
                }
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (batch, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let n = y.shape()[2];
                let (ad, bd) = (av.data(), bv.data());
                let bidx = |j: usize, p: usize| if *trans_b { j * k + p } else { p * n + j };
                if self.wants(*a) {
                    let mut ga = vec![0.0; av.len()];
                    for s in 0..batch {
                        let (g0, b0) = (&gd[s * m * n..], &bd[s * k * n..]);
                        for i in 0..m {
                            for p in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += g0[i * n + j] * b0[bidx(j, p)];
                                }
                                ga[s * m * k + i * k + p] = acc;
                            }
                        }
                    }
                    self.accumulate(grads, *a, Tensor::new(av.shape().to_vec(), ga).unwrap());
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; bv.len()];
                    for s in 0..batch {
                        let (g0, a0) = (&gd[s * m * n..], &ad[s * m * k..]);
                        let gb0 = &mut gb[s * k * n..(s + 1) * k * n];
                        for i in 0..m {
                            for j in 0..n {
                                let gij = g0[i * n + j];
                                for p in 0..k {
                                    gb0[bidx(j, p)] += a0[i * k + p] * gij;
                                }
                            }
                        }
                    }
                    self.accumulate(grads, *b, Tensor::new(bv.shape().to_vec(), gb).unwrap());
                }
            }
            Op::Tanh(x) => {
                let d = gd.iter().zip(y.data()).map(|(g, t)| g * (1.0 - t * t)).collect();
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), d).unwrap());
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let d = gd
                    .iter()
                    .zip(xv.data())
                    .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), d).unwrap());
            }
            Op::Exp(x) => {
                let d = gd.iter().zip(y.data()).map(|(g, e)| g * e).collect();
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), d).unwrap());
            }
            Op::LayerNorm { x, inv_std } => {
                let d = y.last_dim();
                let mut gx = vec![0.0; y.len()];
                for (r, is) in inv_std.iter().enumerate() {
                    let yr = y.row(r);
                    let gr = &gd[r * d..(r + 1) * d];
                    let mg = gr.iter().sum::<f64>() / d as f64;
                    let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        gx[r * d + j] = is * (gr[j] - mg - yr[j] * mgy);
                    }
                }
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), gx).unwrap());
            }
            Op::Softmax(x) => {
                let d = y.last_dim();
                let mut gx = vec![0.0; y.len()];
                for r in 0..y.leading() {
                    let yr = y.row(r);
                    let gr = &gd[r * d..(r + 1) * d];
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        gx[r * d + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), gx).unwrap());
            }
            Op::ReGlu(x) => {
                let xv = self.value(*x);
                let m = y.last_dim();
                let mut gx = vec![0.0; xv.len()];
                for r in 0..y.leading() {
                    let xr = xv.row(r);
                    for j in 0..m {
                        let gj = gd[r * m + j];
                        let (a, b) = (xr[j], xr[m + j]);
                        gx[r * 2 * m + j] = gj * b.max(0.0);
                        gx[r * 2 * m + m + j] = if b > 0.0 { gj * a } else { 0.0 };
                    }
                }
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), gx).unwrap());
            }
            Op::MaskMul(x, mask) => {
                let d = gd.iter().zip(mask).map(|(g, m)| g * m).collect();
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), d).unwrap());
            }
            Op::Gather { table, index } => {
                let tv = self.value(*table);
                let d = tv.shape()[1];
                let mut gt = vec![0.0; tv.len()];
                for (r, &i) in index.iter().enumerate() {
                    for j in 0..d {
                        gt[i * d + j] += gd[r * d + j];
                    }
                }
                self.accumulate(grads, *table, Tensor::new(tv.shape().to_vec(), gt).unwrap());
            }
            Op::Repeat { x, times } => {
                let xv = self.value(*x);
                let n = xv.len();
                let mut gx = vec![0.0; n];
                for t in 0..*times {
                    for (a, b) in gx.iter_mut().zip(&gd[t * n..(t + 1) * n]) {
                        *a += b;
                    }
                }
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), gx).unwrap());
            }
            Op::Concat { parts, axis } => {
                let s = y.shape();
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let total = s[*axis];
                let mut offset = 0;
                for p in parts {
                    let pv = self.value(*p);
                    let len = pv.shape()[*axis] * inner;
                    if self.wants(*p) {
                        let mut gp = Vec::with_capacity(pv.len());
                        for o in 0..outer {
                            let start = o * total * inner + offset;
                            gp.extend_from_slice(&gd[start..start + len]);
                        }
                        self.accumulate(grads, *p, Tensor::new(pv.shape().to_vec(), gp).unwrap());
                    }
                    offset += len;
                }
            }
            Op::Select { x, axis, index } => {
                let xv = self.value(*x);
                let s = xv.shape();
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let len = s[*axis];
                let mut gx = vec![0.0; xv.len()];
                let mut src = 0;
                for o in 0..outer {
                    for &i in index {
                        let start = (o * len + i) * inner;
                        for j in 0..inner {
                            gx[start + j] += gd[src + j];
                        }
                        src += inner;
                    }
                }
                self.accumulate(grads, *x, Tensor::new(s.to_vec(), gx).unwrap());
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, g.clone().reshaped(shape).unwrap());
            }
            Op::SplitHeads { x, heads } => {
                let xv = self.value(*x);
                let s = xv.shape();
                let (b, t, dk) = (s[0], s[1], s[2] / heads);
                let mut gx = vec![0.0; xv.len()];
                for bi in 0..b {
                    for ti in 0..t {
                        for h in 0..*heads {
                            let dst = ((bi * t + ti) * heads + h) * dk;
                            let src = ((bi * heads + h) * t + ti) * dk;
                            gx[dst..dst + dk].copy_from_slice(&gd[src..src + dk]);
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(s.to_vec(), gx).unwrap());
            }
            Op::MergeHeads { x, heads } => {
                let xv = self.value(*x);
                let s = xv.shape();
                let (b, t, dk) = (s[0] / heads, s[1], s[2]);
                let mut gx = vec![0.0; xv.len()];
                for bi in 0..b {
                    for ti in 0..t {
                        for h in 0..*heads {
                            let src = ((bi * t + ti) * heads + h) * dk;
                            let dst = ((bi * heads + h) * t + ti) * dk;
                            gx[dst..dst + dk].copy_from_slice(&gd[src..src + dk]);
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(s.to_vec(), gx).unwrap());
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let d = av.last_dim();
                let scaled = |other: &Tensor| {
                    let data = other
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, v)| v * gd[i / d])
                        .collect();
                    Tensor::new(other.shape().to_vec(), data).unwrap()
                };
                if self.wants(*a) {
                    self.accumulate(grads, *a, scaled(bv));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, scaled(av));
                }
            }
            Op::Sum(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, Tensor::filled(&shape, gd[0]));
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let c = gd[0] / xv.len() as f64;
                self.accumulate(grads, *x, Tensor::filled(xv.shape(), c));
            }
            Op::PoissonDeviance { log_mu, y: resp } => {
                let lv = self.value(*log_mu);
                let c = 2.0 * gd[0] / resp.len() as f64;
                let d = lv
                    .data()
                    .iter()
                    .zip(resp)
                    .map(|(eta, yi)| c * (eta.exp() - yi))
                    .collect();
                self.accumulate(grads, *log_mu, Tensor::new(lv.shape().to_vec(), d).unwrap());
            }
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::AddRow(..) => "add_row",
        Op::MulRow(..) => "mul_row",
        Op::MatMul(..) => "matmul",
        Op::BatchMatMul { .. } => "batch_matmul",
        Op::Tanh(_) => "tanh",
        Op::Relu(_) => "relu",
        Op::Exp(_) => "exp",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Softmax(_) => "softmax",
        Op::ReGlu(_) => "reglu",
        Op::MaskMul(..) => "dropout",
        Op::Gather { .. } => "gather",
        Op::Repeat { .. } => "repeat",
        Op::Concat { .. } => "concat",
        Op::Select { .. } => "select",
        Op::Reshape(_) => "reshape",
        Op::SplitHeads { .. } => "split_heads",
        Op::MergeHeads { .. } => "merge_heads",
        Op::RowDot(..) => "row_dot",
        Op::Sum(_) => "sum",
        Op::Mean(_) => "mean",
        Op::PoissonDeviance { .. } => "poisson_deviance",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn root_is_parameter_itself() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::scalar(3.0));
        let mut g = Graph::new();
        let p = g.param(&store, id).unwrap();
        let grads = g.backward(p).unwrap();
        assert_eq!(grads.for_param(id).unwrap().data(), &[1.0]);
    }

    #[test]
    fn sum_of_squares_gradient_is_twice_the_vector() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::vector(vec![1.0, -2.0, 0.5]));
        let mut g = Graph::new();
        let p = g.param(&store, id).unwrap();
        let sq = g.mul(p, p).unwrap();
        let s = g.sum(sq).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.for_param(id).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::new();
        let v = g.variable(Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(matches!(g.backward(v), Err(Error::Contract(_))));
    }

    #[test]
    fn graph_without_parameters_yields_no_param_grads() {
        let store = ParamStore::new();
        let mut g = Graph::new();
        let c = g.constant(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let s = g.sum(c).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.param_grads(&store).is_empty());
        assert!(grads.wrt(c).is_none());
    }

    #[test]
    fn shape_mismatch_is_an_error_not_a_broadcast() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let b = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
        assert!(matches!(g.add(a, b), Err(Error::Shape { .. })));
        let w = g.constant(Tensor::zeros(&[3, 2])).unwrap();
        assert!(g.matmul(a, w).is_err());
    }

    #[test]
    fn overflow_surfaces_as_non_finite() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::scalar(1000.0)).unwrap();
        assert!(matches!(g.exp(a), Err(Error::NonFinite(_))));
    }

    #[test]
    fn gather_accumulates_repeated_rows() {
        let mut store = ParamStore::new();
        let id = store.add("table", Tensor::from_fn(&[5, 2], |i| i as f64));
        let mut g = Graph::new();
        let t = g.param(&store, id).unwrap();
        let rows = g.gather(t, vec![3, 1, 3], "table").unwrap();
        let s = g.sum(rows).unwrap();
        let grads = g.backward(s).unwrap();
        let gt = grads.for_param(id).unwrap();
        assert_eq!(gt.row(3), &[2.0, 2.0]);
        assert_eq!(gt.row(1), &[1.0, 1.0]);
        assert_eq!(gt.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn gather_out_of_range_is_lookup_error() {
        let mut g = Graph::new();
        let t = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        assert!(matches!(
            g.gather(t, vec![2], "region"),
            Err(Error::Lookup { index: 2, size: 2, .. })
        ));
    }

    #[test]
    fn split_and_merge_heads_are_inverse() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[2, 3, 8], |i| i as f64)).unwrap();
        let s = g.split_heads(x, 4).unwrap();
        assert_eq!(g.value(s).shape(), &[8, 3, 2]);
        let m = g.merge_heads(s, 4).unwrap();
        assert_eq!(g.value(m), g.value(x));
    }
}
