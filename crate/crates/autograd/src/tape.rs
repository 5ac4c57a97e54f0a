//! Reverse-mode gradient tape.
//!
//! Every operation appends a node holding its forward value. Nodes whose inputs
//! all lack `requires_grad` are pure values and are skipped by [`Tape::backward`].
//! Reductions run in a fixed sequential order so forward values are bitwise
//! reproducible.

use crate::error::{invalid, mismatch, Result, TensorError};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::sparse::SparseMatrix;
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use std::sync::Arc;

/// Handle to a node on a [`Tape`]. Only valid for the tape that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op<T> {
    Leaf(Option<ParamId>),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Reshape(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Cos(Var),
    Softmax { input: Var, axis: usize },
    Sum { input: Var, axis: usize },
    Mean { input: Var, axis: usize },
    SumAll(Var),
    MeanAll(Var),
    Conv1d { input: Var, weight: Var, bias: Var, stride: usize },
    MaxPool1d { input: Var, argmax: Vec<usize> },
    SpMM { matrix: Arc<SparseMatrix<T>>, input: Var },
    GatherRows { input: Var, rows: Vec<Option<usize>> },
    Bce { pred: Var, labels: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// `(outer, dim, inner)` sizes around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A value that never receives gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf(None), false)
    }

    /// A free leaf whose gradient is reported through [`Gradients::wrt`].
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf(None), true)
    }

    /// A parameter leaf; its gradient is reported through [`Gradients::param`].
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Leaf(Some(id)), true)
    }

    /// Reads a parameter as a constant (no gradient).
    pub fn param_const(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Leaf(None), false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &y) in orow.iter_mut().zip(brow) {
                    *o = *o + x * y;
                }
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn zip_same(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op_name, self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `a[.., j] + bias[j]`, broadcasting a vector over all leading axes.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        let last = sa.last().copied().unwrap_or(1);
        if sb.len() != 1 || sb[0] != last {
            return Err(mismatch("add_bias", sa, sb));
        }
        let bv = self.value(bias).data();
        let data = self
            .value(a)
            .data()
            .chunks(last)
            .flat_map(|row| row.iter().zip(bv).map(|(&x, &b)| x + b))
            .collect();
        let value = Tensor::new(sa.to_vec(), data)?;
        let rg = self.rg(&[a, bias]);
        Ok(self.push(value, Op::AddBias(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).map(|x| x * c);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(invalid("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(mismatch("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let (_, d, _) = split_axis(self.shape(v), axis);
                let chunk = d * inner;
                data.extend_from_slice(&self.value(v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(inputs);
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(invalid(
                "slice",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, d, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * d * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Slice { input: a, axis, start }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| T::one() / (T::one() + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.cos(), Op::Cos(a))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(invalid("softmax", format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, d, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| o * d * inner + k * inner + i;
                let mut max = T::neg_infinity();
                for k in 0..d {
                    max = max.max(src[at(k)]);
                }
                let mut total = T::zero();
                for k in 0..d {
                    let e = (src[at(k)] - max).exp();
                    out[at(k)] = e;
                    total = total + e;
                }
                for k in 0..d {
                    out[at(k)] = out[at(k)] / total;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Softmax { input: a, axis }, rg))
    }

    fn reduce_axis(&mut self, a: Var, axis: usize, mean: bool) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(invalid("sum", format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, d, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..d {
                let row = &src[o * d * inner + k * inner..o * d * inner + (k + 1) * inner];
                for (acc, &x) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc = *acc + x;
                }
            }
        }
        if mean {
            let n = T::lit(d as f64);
            out.iter_mut().for_each(|x| *x = *x / n);
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let value = Tensor::new(out_shape, out)?;
        let rg = self.rg(&[a]);
        let op = if mean {
            Op::Mean { input: a, axis }
        } else {
            Op::Sum { input: a, axis }
        };
        Ok(self.push(value, op, rg))
    }

    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, false)
    }

    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(a, axis, true)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let total = self
            .value(a)
            .data()
            .iter()
            .fold(T::zero(), |acc, &x| acc + x);
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(total), Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let src = self.value(a).data();
        let total = src.iter().fold(T::zero(), |acc, &x| acc + x);
        let n = T::lit(src.len().max(1) as f64);
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(total / n), Op::MeanAll(a), rg)
    }

    /// 1-D convolution: input `[C_in, L]`, weight `[C_out, C_in, K]`, bias `[C_out]`,
    /// output `[C_out, (L - K) / stride + 1]`.
    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Var, stride: usize) -> Result<Var> {
        let (si, sw, sb) = (self.shape(input), self.shape(weight), self.shape(bias));
        if stride == 0 {
            return Err(invalid("conv1d", "stride must be positive"));
        }
        if si.len() != 2 || sw.len() != 3 || sw[1] != si[0] {
            return Err(mismatch("conv1d", si, sw));
        }
        if sb.len() != 1 || sb[0] != sw[0] {
            return Err(mismatch("conv1d", sw, sb));
        }
        let (c_in, len) = (si[0], si[1]);
        let (c_out, kernel) = (sw[0], sw[2]);
        if kernel == 0 || kernel > len {
            return Err(invalid(
                "conv1d",
                format!("kernel {kernel} does not fit input length {len}"),
            ));
        }
        let l_out = (len - kernel) / stride + 1;
        let (x, w, b) = (
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let mut out = vec![T::zero(); c_out * l_out];
        for co in 0..c_out {
            for l in 0..l_out {
                let mut acc = b[co];
                for ci in 0..c_in {
                    let wrow = &w[(co * c_in + ci) * kernel..(co * c_in + ci + 1) * kernel];
                    let xrow = &x[ci * len + l * stride..ci * len + l * stride + kernel];
                    for (&wk, &xk) in wrow.iter().zip(xrow) {
                        acc = acc + wk * xk;
                    }
                }
                out[co * l_out + l] = acc;
            }
        }
        let value = Tensor::new(vec![c_out, l_out], out)?;
        let rg = self.rg(&[input, weight, bias]);
        Ok(self.push(
            value,
            Op::Conv1d {
                input,
                weight,
                bias,
                stride,
            },
            rg,
        ))
    }

    /// Non-overlapping max pooling over the last axis of `[C, L]`; a trailing
    /// partial window is dropped. Ties keep the first maximum.
    pub fn maxpool1d(&mut self, input: Var, width: usize) -> Result<Var> {
        let s = self.shape(input);
        if s.len() != 2 || width == 0 || s[1] < width {
            return Err(invalid(
                "maxpool1d",
                format!("width {width} does not fit input {s:?}"),
            ));
        }
        let (c, len) = (s[0], s[1]);
        let l_out = len / width;
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(c * l_out);
        let mut argmax = Vec::with_capacity(c * l_out);
        for ch in 0..c {
            for j in 0..l_out {
                let start = ch * len + j * width;
                let mut best = start;
                for k in start + 1..start + width {
                    if x[k] > x[best] {
                        best = k;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
        let value = Tensor::new(vec![c, l_out], out)?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::MaxPool1d { input, argmax }, rg))
    }

    /// Sparse-constant times dense: `matrix [n × m] · input [m × c]`.
    pub fn spmm(&mut self, matrix: Arc<SparseMatrix<T>>, input: Var) -> Result<Var> {
        let s = self.shape(input);
        if s.len() != 2 || s[0] != matrix.cols() {
            return Err(mismatch("spmm", &[matrix.rows(), matrix.cols()], s));
        }
        let c = s[1];
        let x = self.value(input).data();
        let mut out = vec![T::zero(); matrix.rows() * c];
        for i in 0..matrix.rows() {
            let orow = &mut out[i * c..(i + 1) * c];
            for (j, w) in matrix.row_entries(i) {
                for (o, &xv) in orow.iter_mut().zip(&x[j * c..(j + 1) * c]) {
                    *o = *o + w * xv;
                }
            }
        }
        let value = Tensor::new(vec![matrix.rows(), c], out)?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::SpMM { matrix, input }, rg))
    }

    /// Picks rows of a matrix; `None` produces a zero row.
    pub fn gather_rows(&mut self, input: Var, rows: Vec<Option<usize>>) -> Result<Var> {
        let s = self.shape(input);
        if s.len() != 2 {
            return Err(invalid("gather_rows", format!("expected a matrix, got {s:?}")));
        }
        let (n, c) = (s[0], s[1]);
        if let Some(bad) = rows.iter().flatten().find(|&&r| r >= n) {
            return Err(invalid("gather_rows", format!("row {bad} out of range for {n} rows")));
        }
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(rows.len() * c);
        for r in &rows {
            match r {
                Some(r) => out.extend_from_slice(&x[r * c..(r + 1) * c]),
                None => out.extend(std::iter::repeat_n(T::zero(), c)),
            }
        }
        let value = Tensor::new(vec![rows.len(), c], out)?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::GatherRows { input, rows }, rg))
    }

    /// Mean binary cross-entropy of probabilities against 0/1 labels.
    ///
    /// Probabilities are clamped to `[ε, 1 − ε]` with `ε = 1e-7` for the value;
    /// the gradient is evaluated at the clamped point and passed straight through
    /// the clamp so saturated wrong predictions still receive a signal.
    pub fn bce(&mut self, pred: Var, labels: &[T]) -> Result<Var> {
        let p = self.value(pred).data();
        if p.len() != labels.len() || p.is_empty() {
            return Err(mismatch("bce", self.shape(pred), &[labels.len()]));
        }
        let total = p.iter().zip(labels).fold(T::zero(), |acc, (&p, &y)| {
            let pc = clamp_prob(p);
            acc - (y * pc.ln() + (T::one() - y) * (T::one() - pc).ln())
        });
        let value = Tensor::scalar(total / T::lit(p.len() as f64));
        let rg = self.rg(&[pred]);
        Ok(self.push(
            value,
            Op::Bce {
                pred,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Runs reverse accumulation from a scalar `loss`, returns leaf gradients and
    /// clears the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(TensorError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients {
            params: Vec::new(),
            leaves: BTreeMap::new(),
        };
        let mut param_acc: BTreeMap<ParamId, (Vec<usize>, Vec<T>)> = BTreeMap::new();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads, &mut out, &mut param_acc, i)?;
        }
        for (id, (shape, g)) in param_acc {
            out.params.push((id, Tensor::new(shape, g)?));
        }
        self.nodes.clear();
        Ok(out)
    }

    fn backprop_node(
        &self,
        node: &Node<T>,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
        out: &mut Gradients<T>,
        param_acc: &mut BTreeMap<ParamId, (Vec<usize>, Vec<T>)>,
        index: usize,
    ) -> Result<()> {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if nodes[v.0].requires_grad {
                let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()]);
                f(buf);
            }
        };
        match &node.op {
            Op::Leaf(param) => match param {
                Some(id) => {
                    let (_, entry) = param_acc
                        .entry(*id)
                        .or_insert_with(|| (node.value.shape().to_vec(), vec![T::zero(); g.len()]));
                    add_into(entry, g);
                }
                None => {
                    out.leaves
                        .insert(index, Tensor::new(node.value.shape().to_vec(), g.to_vec())?);
                }
            },
            Op::MatMul(a, b) => {
                let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = T::zero();
                            for j in 0..n {
                                s = s + g[i * n + j] * bv[p * n + j];
                            }
                            ga[i * k + p] = ga[i * k + p] + s;
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..m {
                        for p in 0..k {
                            let x = av[i * k + p];
                            for j in 0..n {
                                gb[p * n + j] = gb[p * n + j] + x * g[i * n + j];
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(x, &y)| *x = *x - y));
            }
            Op::Mul(a, b) => {
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                acc(*a, &mut |ga| {
                    for ((x, &gy), &bb) in ga.iter_mut().zip(g).zip(bv) {
                        *x = *x + gy * bb;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((x, &gy), &aa) in gb.iter_mut().zip(g).zip(av) {
                        *x = *x + gy * aa;
                    }
                });
            }
            Op::AddBias(a, bias) => {
                acc(*a, &mut |ga| add_into(ga, g));
                let width = nodes[bias.0].value.len();
                acc(*bias, &mut |gb| {
                    for row in g.chunks(width) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Scale(a, c) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, &y)| *x = *x + *c * y));
            }
            Op::Concat { inputs, axis } => {
                let out_shape = node.value.shape();
                let (outer, total, inner) = split_axis(out_shape, *axis);
                let mut offset = 0;
                for &v in inputs {
                    let d = nodes[v.0].value.shape()[*axis];
                    acc(v, &mut |gv| {
                        for o in 0..outer {
                            let src = o * total * inner + offset * inner;
                            add_into(
                                &mut gv[o * d * inner..(o + 1) * d * inner],
                                &g[src..src + d * inner],
                            );
                        }
                    });
                    offset += d;
                }
            }
            Op::Slice { input, axis, start } => {
                let in_shape = nodes[input.0].value.shape();
                let (outer, d, inner) = split_axis(in_shape, *axis);
                let len = node.value.shape()[*axis];
                acc(*input, &mut |gi| {
                    for o in 0..outer {
                        let dst = o * d * inner + start * inner;
                        add_into(
                            &mut gi[dst..dst + len * inner],
                            &g[o * len * inner..(o + 1) * len * inner],
                        );
                    }
                });
            }
            Op::Reshape(a) => acc(*a, &mut |ga| add_into(ga, g)),
            Op::Sigmoid(a) => {
                let y = node.value.data();
                acc(*a, &mut |ga| {
                    for ((x, &gy), &yy) in ga.iter_mut().zip(g).zip(y) {
                        *x = *x + gy * yy * (T::one() - yy);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                acc(*a, &mut |ga| {
                    for ((x, &gy), &yy) in ga.iter_mut().zip(g).zip(y) {
                        *x = *x + gy * (T::one() - yy * yy);
                    }
                });
            }
            Op::Relu(a) => {
                let xin = nodes[a.0].value.data();
                acc(*a, &mut |ga| {
                    for ((x, &gy), &xi) in ga.iter_mut().zip(g).zip(xin) {
                        if xi > T::zero() {
                            *x = *x + gy;
                        }
                    }
                });
            }
            Op::Cos(a) => {
                let xin = nodes[a.0].value.data();
                acc(*a, &mut |ga| {
                    for ((x, &gy), &xi) in ga.iter_mut().zip(g).zip(xin) {
                        *x = *x - gy * xi.sin();
                    }
                });
            }
            Op::Softmax { input, axis } => {
                let (outer, d, inner) = split_axis(node.value.shape(), *axis);
                let y = node.value.data();
                acc(*input, &mut |gi| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |k: usize| o * d * inner + k * inner + i;
                            let mut dot = T::zero();
                            for k in 0..d {
                                dot = dot + g[at(k)] * y[at(k)];
                            }
                            for k in 0..d {
                                gi[at(k)] = gi[at(k)] + y[at(k)] * (g[at(k)] - dot);
                            }
                        }
                    }
                });
            }
            Op::Sum { input, axis } | Op::Mean { input, axis } => {
                let (outer, d, inner) = split_axis(nodes[input.0].value.shape(), *axis);
                let factor = if matches!(node.op, Op::Mean { .. }) {
                    T::one() / T::lit(d as f64)
                } else {
                    T::one()
                };
                acc(*input, &mut |gi| {
                    for o in 0..outer {
                        for k in 0..d {
                            for i in 0..inner {
                                let dst = o * d * inner + k * inner + i;
                                gi[dst] = gi[dst] + factor * g[o * inner + i];
                            }
                        }
                    }
                });
            }
            Op::SumAll(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x = *x + g[0])),
            Op::MeanAll(a) => {
                let n = T::lit(nodes[a.0].value.len().max(1) as f64);
                acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x = *x + g[0] / n));
            }
            Op::Conv1d {
                input,
                weight,
                bias,
                stride,
            } => {
                let si = nodes[input.0].value.shape();
                let sw = nodes[weight.0].value.shape();
                let (c_in, len) = (si[0], si[1]);
                let (c_out, kernel) = (sw[0], sw[2]);
                let l_out = node.value.shape()[1];
                let x = nodes[input.0].value.data();
                let w = nodes[weight.0].value.data();
                acc(*input, &mut |gx| {
                    for co in 0..c_out {
                        for l in 0..l_out {
                            let gy = g[co * l_out + l];
                            for ci in 0..c_in {
                                for k in 0..kernel {
                                    let xi = ci * len + l * stride + k;
                                    gx[xi] = gx[xi] + gy * w[(co * c_in + ci) * kernel + k];
                                }
                            }
                        }
                    }
                });
                acc(*weight, &mut |gw| {
                    for co in 0..c_out {
                        for l in 0..l_out {
                            let gy = g[co * l_out + l];
                            for ci in 0..c_in {
                                for k in 0..kernel {
                                    let wi = (co * c_in + ci) * kernel + k;
                                    gw[wi] = gw[wi] + gy * x[ci * len + l * stride + k];
                                }
                            }
                        }
                    }
                });
                acc(*bias, &mut |gb| {
                    for co in 0..c_out {
                        for l in 0..l_out {
                            gb[co] = gb[co] + g[co * l_out + l];
                        }
                    }
                });
            }
            Op::MaxPool1d { input, argmax } => {
                acc(*input, &mut |gi| {
                    for (&src, &gy) in argmax.iter().zip(g) {
                        gi[src] = gi[src] + gy;
                    }
                });
            }
            Op::SpMM { matrix, input } => {
                let c = node.value.shape()[1];
                acc(*input, &mut |gi| {
                    for i in 0..matrix.rows() {
                        let grow = &g[i * c..(i + 1) * c];
                        for (j, w) in matrix.row_entries(i) {
                            for (x, &gy) in gi[j * c..(j + 1) * c].iter_mut().zip(grow) {
                                *x = *x + w * gy;
                            }
                        }
                    }
                });
            }
            Op::GatherRows { input, rows } => {
                let c = node.value.shape()[1];
                acc(*input, &mut |gi| {
                    for (k, r) in rows.iter().enumerate() {
                        if let Some(r) = r {
                            add_into(&mut gi[r * c..(r + 1) * c], &g[k * c..(k + 1) * c]);
                        }
                    }
                });
            }
            Op::Bce { pred, labels } => {
                let p = nodes[pred.0].value.data();
                let n = T::lit(p.len() as f64);
                acc(*pred, &mut |gp| {
                    for ((x, &pp), &y) in gp.iter_mut().zip(p).zip(labels) {
                        let pc = clamp_prob(pp);
                        let d = (-y / pc + (T::one() - y) / (T::one() - pc)) / n;
                        *x = *x + g[0] * d;
                    }
                });
            }
        }
        Ok(())
    }
}

pub const BCE_EPS: f64 = 1e-7;

fn clamp_prob<T: Scalar>(p: T) -> T {
    let eps = T::lit(BCE_EPS);
    p.max(eps).min(T::one() - eps)
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}
