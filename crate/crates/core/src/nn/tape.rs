use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc};
use super::{NnError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which axis of a `[A, B, D]` tensor a set reduction runs over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SetAxis {
    /// `out[a, d] = sum_b w[a, b, d] * v[b, d]`
    Second,
    /// `out[b, d] = sum_a w[a, b, d] * v[a, d]`
    First,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax { x: Var, axis: usize },
    CrossEntropy { logits: Var, targets: Vec<usize> },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    GatherRows { x: Var, idx: Vec<usize> },
    ScatterAddRows { x: Var, idx: Vec<usize> },
    SegmentMax { x: Var, argmax: Vec<usize> },
    ConcatRows(Vec<Var>),
    PairwiseDiff(Var, Var),
    WeightedSetSum { w: Var, v: Var, axis: SetAxis },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    // cached forward intermediates (softmax probabilities for cross-entropy)
    aux: Vec<f64>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
///
/// Only values that (transitively) depend on a `requires_grad` leaf carry
/// a gradient.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Record of a forward computation, replayed in reverse by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, detail: alloc::string::String) -> NnError {
    NnError::ShapeMismatch { op, detail }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad, aux: Vec::new() });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a constant input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, w: Var) -> Result<Var, NnError> {
        let (sa, sw) = (self.shape(a), self.shape(w));
        if sa.len() != 2 || sw.len() != 2 || sa[1] != sw[0] {
            return Err(mismatch("matmul", format!("{:?} x {:?}", sa, sw)));
        }
        let (rows, inner, cols) = (sa[0], sa[1], sw[1]);
        let mut out = vec![0.0; rows * cols];
        matmul_acc(self.value(a).data(), self.value(w).data(), &mut out, rows, inner, cols);
        let rg = self.rg(&[a, w]);
        Ok(self.push(Tensor::new(&[rows, cols], out)?, Op::MatMul(a, w), rg))
    }

    /// `x[B, D] + b[D]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, NnError> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(mismatch("add_bias", format!("{:?} + {:?}", sx, sb)));
        }
        let cols = sb[0];
        let bias = self.value(b).data();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(cols.max(1)) {
            for (o, &bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let rg = self.rg(&[x, b]);
        Ok(self.push(out, Op::AddBias(x, b), rg))
    }

    /// `y = x W + b`
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NnError> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    fn zip_with(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, NnError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(name, format!("{:?} vs {:?}", sa, sb)));
        }
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(sa, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = self.zip_with(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = self.zip_with(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = self.zip_with(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let v = self.value(x);
        let out = Tensor::new(v.shape(), v.data().iter().map(|&e| e * factor).collect()).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, factor), rg)
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let v = self.value(x);
        let out = Tensor::new(v.shape(), v.data().iter().map(|&e| f(e)).collect()).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(out, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, Op::Relu(x), |e| if e > 0.0 { e } else { 0.0 })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, Op::Tanh(x), libm::tanh)
    }

    /// Softmax along `axis`; every slice along that axis sums to one.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, NnError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(mismatch("softmax", format!("axis {} of {:?}", axis, shape)));
        }
        let (outer, len, inner) = axis_extents(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |t: usize| (o * len + t) * inner + i;
                let mut max = f64::NEG_INFINITY;
                for t in 0..len {
                    max = max.max(src[at(t)]);
                }
                let mut total = 0.0;
                for t in 0..len {
                    let e = libm::exp(src[at(t)] - max);
                    out[at(t)] = e;
                    total += e;
                }
                for t in 0..len {
                    out[at(t)] /= total;
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Softmax { x, axis }, rg))
    }

    /// Softmax over the last dimension.
    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var, NnError> {
        let rank = self.shape(x).len();
        if rank == 0 {
            return Err(mismatch("softmax", "scalar input".into()));
        }
        self.softmax(x, rank - 1)
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, NnError> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != targets.len() || targets.is_empty() {
            return Err(mismatch("cross_entropy", format!("logits {:?}, {} targets", shape, targets.len())));
        }
        let classes = shape[1];
        if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
            return Err(NnError::TargetOutOfRange { target: bad, classes });
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; src.len()];
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = &src[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|&v| libm::exp(v - max)).sum();
            let log_z = max + libm::log(total);
            for (p, &v) in probs[r * classes..(r + 1) * classes].iter_mut().zip(row) {
                *p = libm::exp(v - log_z);
            }
            loss += log_z - row[t];
        }
        loss /= targets.len() as f64;
        let rg = self.rg(&[logits]);
        let v = self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, targets: targets.to_vec() }, rg);
        self.nodes[v.0].aux = probs;
        Ok(v)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = v.len().max(1) as f64;
        let s: f64 = v.data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s / n), Op::Mean(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NnError> {
        let out = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Selects rows of a 2-D tensor; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var, NnError> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(mismatch("gather_rows", format!("{:?}", shape)));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= shape[0]) {
            return Err(mismatch("gather_rows", format!("row {} of {}", bad, shape[0])));
        }
        let cols = shape[1];
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            out.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(&[idx.len(), cols], out)?, Op::GatherRows { x, idx: idx.to_vec() }, rg))
    }

    /// `out[idx[m]] += x[m]` into a `[rows, D]` zero tensor.
    pub fn scatter_add_rows(&mut self, x: Var, idx: &[usize], rows: usize) -> Result<Var, NnError> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || shape[0] != idx.len() {
            return Err(mismatch("scatter_add_rows", format!("{:?} with {} indices", shape, idx.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(mismatch("scatter_add_rows", format!("row {} of {}", bad, rows)));
        }
        let cols = shape[1];
        let src = self.value(x).data();
        let mut out = vec![0.0; rows * cols];
        for (m, &i) in idx.iter().enumerate() {
            for (o, &s) in out[i * cols..(i + 1) * cols].iter_mut().zip(&src[m * cols..(m + 1) * cols]) {
                *o += s;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(&[rows, cols], out)?, Op::ScatterAddRows { x, idx: idx.to_vec() }, rg))
    }

    /// Channel-wise max over contiguous row segments `offsets[s]..offsets[s + 1]`.
    pub fn segment_max(&mut self, x: Var, offsets: &[usize]) -> Result<Var, NnError> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || offsets.is_empty() || *offsets.last().unwrap() != shape[0] {
            return Err(mismatch("segment_max", format!("{:?} with offsets ending {:?}", shape, offsets.last())));
        }
        let cols = shape[1];
        let segments = offsets.len() - 1;
        let src = self.value(x).data();
        let mut out = vec![0.0; segments * cols];
        let mut argmax = vec![0usize; segments * cols];
        for s in 0..segments {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            if lo >= hi {
                return Err(NnError::EmptySegment(s));
            }
            for c in 0..cols {
                let mut best = lo;
                for r in lo + 1..hi {
                    if src[r * cols + c] > src[best * cols + c] {
                        best = r;
                    }
                }
                out[s * cols + c] = src[best * cols + c];
                argmax[s * cols + c] = best;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(&[segments, cols], out)?, Op::SegmentMax { x, argmax }, rg))
    }

    /// Stacks 2-D tensors with equal width on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let Some(&first) = parts.first() else {
            return Err(mismatch("concat_rows", "no inputs".into()));
        };
        let cols = self.value(first).cols();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.shape().len() != 2 || v.cols() != cols {
                return Err(mismatch("concat_rows", format!("{:?} vs width {}", v.shape(), cols)));
            }
            rows += v.rows();
            out.extend_from_slice(v.data());
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(&[rows, cols], out)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// `out[i, j, :] = a[i, :] - b[j, :]` for `a: [A, D]`, `b: [B, D]`.
    pub fn pairwise_diff(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(mismatch("pairwise_diff", format!("{:?} vs {:?}", sa, sb)));
        }
        let (na, nb, d) = (sa[0], sb[0], sa[1]);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(na * nb * d);
        for i in 0..na {
            let ai = &av[i * d..(i + 1) * d];
            for j in 0..nb {
                out.extend(ai.iter().zip(&bv[j * d..(j + 1) * d]).map(|(x, y)| x - y));
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(&[na, nb, d], out)?, Op::PairwiseDiff(a, b), rg))
    }

    /// Channel-wise weighted sum over one set axis of `w: [A, B, D]`.
    pub fn weighted_set_sum(&mut self, w: Var, v: Var, axis: SetAxis) -> Result<Var, NnError> {
        let (sw, sv) = (self.shape(w).to_vec(), self.shape(v).to_vec());
        let ok = sw.len() == 3
            && sv.len() == 2
            && sv[1] == sw[2]
            && match axis {
                SetAxis::Second => sv[0] == sw[1],
                SetAxis::First => sv[0] == sw[0],
            };
        if !ok {
            return Err(mismatch("weighted_set_sum", format!("{:?} with {:?}", sw, sv)));
        }
        let (na, nb, d) = (sw[0], sw[1], sw[2]);
        let (wv, vv) = (self.value(w).data(), self.value(v).data());
        let out_rows = match axis {
            SetAxis::Second => na,
            SetAxis::First => nb,
        };
        let mut out = vec![0.0; out_rows * d];
        for i in 0..na {
            for j in 0..nb {
                let wrow = &wv[(i * nb + j) * d..(i * nb + j + 1) * d];
                let (o, src) = match axis {
                    SetAxis::Second => (i, j),
                    SetAxis::First => (j, i),
                };
                let vrow = &vv[src * d..(src + 1) * d];
                for ((acc, &wl), &vl) in out[o * d..(o + 1) * d].iter_mut().zip(wrow).zip(vrow) {
                    *acc += wl * vl;
                }
            }
        }
        let rg = self.rg(&[w, v]);
        Ok(self.push(Tensor::new(&[out_rows, d], out)?, Op::WeightedSetSum { w, v, axis }, rg))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NnError> {
        if self.value(loss).len() != 1 {
            return Err(mismatch("backward", format!("non-scalar loss {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, g.data(), &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = &self.nodes[v.0];
            if !n.requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(n.value.shape()));
            f(slot.data_mut());
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, w) => {
                let (sa, sw) = (self.shape(*a), self.shape(*w));
                let (rows, inner, cols) = (sa[0], sa[1], sw[1]);
                let (av, wv) = (self.value(*a).data(), self.value(*w).data());
                acc(*a, &mut |ga| matmul_bt_acc(g, wv, ga, rows, inner, cols));
                acc(*w, &mut |gw| matmul_at_acc(av, g, gw, rows, inner, cols));
            }
            Op::AddBias(x, b) => {
                let cols = self.shape(*b)[0].max(1);
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(o, &v)| *o += v));
                acc(*b, &mut |gb| {
                    for row in g.chunks(cols) {
                        gb.iter_mut().zip(row).for_each(|(o, &v)| *o += v);
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, &v)| *o += v));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, &v)| *o += v));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, &v)| *o += v));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, &v)| *o -= v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |ga| {
                    for ((o, &gv), &y) in ga.iter_mut().zip(g).zip(bv) {
                        *o += gv * y;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, &gv), &x) in gb.iter_mut().zip(g).zip(av) {
                        *o += gv * x;
                    }
                });
            }
            Op::Scale(x, k) => acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(o, &v)| *o += v * k)),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                acc(*x, &mut |gx| {
                    for ((o, &gv), &xi) in gx.iter_mut().zip(g).zip(xv) {
                        if xi > 0.0 {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => acc(*x, &mut |gx| {
                for ((o, &gv), &y) in gx.iter_mut().zip(g).zip(out) {
                    *o += gv * y * (1.0 - y);
                }
            }),
            Op::Tanh(x) => acc(*x, &mut |gx| {
                for ((o, &gv), &y) in gx.iter_mut().zip(g).zip(out) {
                    *o += gv * (1.0 - y * y);
                }
            }),
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = axis_extents(node.value.shape(), *axis);
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |t: usize| (o * len + t) * inner + i;
                            let dot: f64 = (0..len).map(|t| g[at(t)] * out[at(t)]).sum();
                            for t in 0..len {
                                gx[at(t)] += out[at(t)] * (g[at(t)] - dot);
                            }
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, targets } => {
                let classes = self.shape(*logits)[1];
                let scale = g[0] / targets.len() as f64;
                let probs = &node.aux;
                acc(*logits, &mut |gl| {
                    for (r, &t) in targets.iter().enumerate() {
                        for c in 0..classes {
                            let onehot = if c == t { 1.0 } else { 0.0 };
                            gl[r * classes + c] += scale * (probs[r * classes + c] - onehot);
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |gx| gx.iter_mut().for_each(|o| *o += g[0])),
            Op::Mean(x) => {
                let n = self.value(*x).len().max(1) as f64;
                acc(*x, &mut |gx| gx.iter_mut().for_each(|o| *o += g[0] / n));
            }
            Op::Reshape(x) => acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(o, &v)| *o += v)),
            Op::GatherRows { x, idx } => {
                let cols = self.value(*x).cols();
                acc(*x, &mut |gx| {
                    for (m, &i) in idx.iter().enumerate() {
                        for (o, &v) in gx[i * cols..(i + 1) * cols].iter_mut().zip(&g[m * cols..(m + 1) * cols]) {
                            *o += v;
                        }
                    }
                });
            }
            Op::ScatterAddRows { x, idx } => {
                let cols = self.value(*x).cols();
                acc(*x, &mut |gx| {
                    for (m, &i) in idx.iter().enumerate() {
                        for (o, &v) in gx[m * cols..(m + 1) * cols].iter_mut().zip(&g[i * cols..(i + 1) * cols]) {
                            *o += v;
                        }
                    }
                });
            }
            Op::SegmentMax { x, argmax } => {
                let cols = self.value(*x).cols();
                acc(*x, &mut |gx| {
                    for (k, &src_row) in argmax.iter().enumerate() {
                        gx[src_row * cols + k % cols] += g[k];
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    acc(p, &mut |gp| gp.iter_mut().zip(&g[offset..offset + len]).for_each(|(o, &v)| *o += v));
                    offset += len;
                }
            }
            Op::PairwiseDiff(a, b) => {
                let (na, d) = (self.shape(*a)[0], self.shape(*a)[1]);
                let nb = self.shape(*b)[0];
                acc(*a, &mut |ga| {
                    for i in 0..na {
                        for j in 0..nb {
                            let src = &g[(i * nb + j) * d..(i * nb + j + 1) * d];
                            ga[i * d..(i + 1) * d].iter_mut().zip(src).for_each(|(o, &v)| *o += v);
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..na {
                        for j in 0..nb {
                            let src = &g[(i * nb + j) * d..(i * nb + j + 1) * d];
                            gb[j * d..(j + 1) * d].iter_mut().zip(src).for_each(|(o, &v)| *o -= v);
                        }
                    }
                });
            }
            Op::WeightedSetSum { w, v, axis } => {
                let sw = self.shape(*w);
                let (na, nb, d) = (sw[0], sw[1], sw[2]);
                let (wv, vv) = (self.value(*w).data(), self.value(*v).data());
                let pick = |i: usize, j: usize| match axis {
                    SetAxis::Second => (i, j),
                    SetAxis::First => (j, i),
                };
                acc(*w, &mut |gw| {
                    for i in 0..na {
                        for j in 0..nb {
                            let (o, src) = pick(i, j);
                            let base = (i * nb + j) * d;
                            for l in 0..d {
                                gw[base + l] += g[o * d + l] * vv[src * d + l];
                            }
                        }
                    }
                });
                acc(*v, &mut |gv| {
                    for i in 0..na {
                        for j in 0..nb {
                            let (o, src) = pick(i, j);
                            let base = (i * nb + j) * d;
                            for l in 0..d {
                                gv[src * d + l] += g[o * d + l] * wv[base + l];
                            }
                        }
                    }
                });
            }
        }
    }
}
