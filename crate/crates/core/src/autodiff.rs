//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends one node holding its forward value and the rule
//! needed to push gradients back to its inputs. Inputs always precede the
//! nodes that consume them, so a single reverse sweep over the node list is
//! a valid topological traversal.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    ScaleRows(Var, Var),
    Affine(Var, f64),
    MulConst(Var, Vec<f64>),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SoftmaxRows(Var),
    LogEps(Var, f64),
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    Row(Var, usize),
    SliceCols(Var, usize),
    Reshape(Var),
    Gather(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations and replays them in reverse to compute gradients.
///
/// A tape supports exactly one backward pass. A second call to
/// [`Tape::backward`] is rejected.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
    param_lookup: Vec<Option<Var>>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the loss with respect to `v`, after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Records a leaf. Its gradient is tracked iff `t.requires_grad`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad;
        let mut value = t;
        value.grad = None;
        self.push(value, Op::Leaf, rg)
    }

    /// Records a constant (never differentiated).
    pub fn constant(&mut self, t: Tensor) -> Var {
        let mut value = t;
        value.requires_grad = false;
        value.grad = None;
        self.push(value, Op::Leaf, false)
    }

    /// Leaf bound to a parameter of `store`. Repeated calls for the same id
    /// return the same handle, so fan-out accumulates into one gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let idx = id.index();
        if let Some(Some(v)) = self.param_lookup.get(idx) {
            return *v;
        }
        let mut value = store.get(id).clone();
        value.grad = None;
        let v = self.push(value, Op::Leaf, true);
        if self.param_lookup.len() <= idx {
            self.param_lookup.resize(idx + 1, None);
        }
        self.param_lookup[idx] = Some(v);
        self.params.push((id, v));
        v
    }

    /// Matrix product. A 1-D left operand of length `k` is treated as `1×k`
    /// and yields a 1-D result.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        let (m, k) = match at.shape() {
            [k] => (1, *k),
            [m, k] => (*m, *k),
            _ => return Err(dim_err("matmul", at, bt)),
        };
        let n = match bt.shape() {
            [kb, n] if *kb == k => *n,
            _ => return Err(dim_err("matmul", at, bt)),
        };
        let mut out = vec![0.0; m * n];
        matmul_acc(at.data(), bt.data(), &mut out, m, k, n);
        let shape = if at.shape().len() == 1 { vec![n] } else { vec![m, n] };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let at = self.value(a);
        let [m, n] = *at.shape() else {
            return Err(dim_err("transpose", at, at));
        };
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = at.data()[i * n + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(vec![n, m], out), Op::Transpose(a), rg))
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(dim_err(name, at, bt));
        }
        let out: Vec<f64> = at.data().iter().zip(bt.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = at.shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(shape, out), op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds the vector `b` to every row of `x` (bias broadcast).
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xt, bt) = (self.value(x), self.value(b));
        let c = xt.cols();
        if bt.len() != c {
            return Err(dim_err("add_row", xt, bt));
        }
        let mut out = xt.data().to_vec();
        for row in out.chunks_mut(c) {
            row.iter_mut().zip(bt.data()).for_each(|(o, &v)| *o += v);
        }
        let shape = xt.shape().to_vec();
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(Tensor::from_parts(shape, out), Op::AddRow(x, b), rg))
    }

    /// Multiplies row `i` of `x` by `s[i]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xt, st) = (self.value(x), self.value(s));
        if st.len() != xt.rows() {
            return Err(dim_err("scale_rows", xt, st));
        }
        let c = xt.cols();
        let mut out = xt.data().to_vec();
        for (row, &w) in out.chunks_mut(c).zip(st.data()) {
            row.iter_mut().for_each(|o| *o *= w);
        }
        let shape = xt.shape().to_vec();
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(Tensor::from_parts(shape, out), Op::ScaleRows(x, s), rg))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let xt = self.value(x);
        let out = xt.data().iter().map(|&v| scale * v + shift).collect();
        let shape = xt.shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor::from_parts(shape, out), Op::Affine(x, scale), rg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    /// `1 - x`, elementwise.
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 1.0)
    }

    /// Elementwise product with a constant buffer.
    pub fn mul_const(&mut self, x: Var, c: Vec<f64>) -> Result<Var> {
        let xt = self.value(x);
        if c.len() != xt.len() {
            return Err(Error::Dimension {
                op: "mul_const",
                left: xt.shape().to_vec(),
                right: vec![c.len()],
            });
        }
        let out = xt.data().iter().zip(&c).map(|(a, b)| a * b).collect();
        let shape = xt.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(shape, out), Op::MulConst(x, c), rg))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let xt = self.value(x);
        let out = xt.data().iter().map(|&v| f(v)).collect();
        let shape = xt.shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor::from_parts(shape, out), op, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// `ln(x + eps)`, elementwise.
    pub fn log_eps(&mut self, x: Var, eps: f64) -> Var {
        self.map(x, |v| (v + eps).ln(), Op::LogEps(x, eps))
    }

    /// Softmax over the last axis, stabilised by subtracting the row max.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let c = xt.cols();
        let mut out = xt.data().to_vec();
        for row in out.chunks_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        let shape = xt.shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor::from_parts(shape, out), Op::SoftmaxRows(x), rg)
    }

    /// Concatenation along the last axis. All parts must have the same
    /// number of rows; 1-D parts give a 1-D result.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::usage("concat of zero tensors"))?;
        let rows = self.value(first).rows();
        let all_1d = parts.iter().all(|&p| self.shape(p).len() == 1);
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            let ok = t.rows() == rows && (all_1d || t.shape().len() == 2);
            if !ok {
                return Err(dim_err("concat", self.value(first), t));
            }
            widths.push(t.cols());
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let shape = if all_1d { vec![total] } else { vec![rows, total] };
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::from_parts(shape, out), Op::Concat(parts.to_vec()), rg))
    }

    /// Stacks equal-length vectors into the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = *rows
            .first()
            .ok_or_else(|| Error::usage("stack of zero tensors"))?;
        let d = self.value(first).len();
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            let t = self.value(r);
            if t.len() != d {
                return Err(dim_err("stack_rows", self.value(first), t));
            }
            out.extend_from_slice(t.data());
        }
        let rg = rows.iter().any(|&r| self.rg(r));
        Ok(self.push(
            Tensor::from_parts(vec![rows.len(), d], out),
            Op::StackRows(rows.to_vec()),
            rg,
        ))
    }

    /// Row `i` of a matrix, as a 1-D tensor.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let xt = self.value(x);
        if xt.shape().len() != 2 || i >= xt.rows() {
            return Err(Error::Dimension {
                op: "row",
                left: xt.shape().to_vec(),
                right: vec![i],
            });
        }
        let out = xt.row(i).to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(vec![out.len()], out), Op::Row(x, i), rg))
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xt = self.value(x);
        let c = xt.cols();
        if len == 0 || start + len > c {
            return Err(Error::Dimension {
                op: "slice_cols",
                left: xt.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let mut out = Vec::with_capacity(xt.rows() * len);
        for r in 0..xt.rows() {
            out.extend_from_slice(&xt.row(r)[start..start + len]);
        }
        let mut shape = xt.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(shape, out), Op::SliceCols(x, start), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xt = self.value(x);
        if shape.iter().product::<usize>() != xt.len() || shape.contains(&0) {
            return Err(Error::Dimension {
                op: "reshape",
                left: xt.shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        let out = xt.data().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(shape.to_vec(), out), Op::Reshape(x), rg))
    }

    /// Embedding lookup: row `ids[i]` of `table` becomes row `i` of the output.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        if tt.shape().len() != 2 || ids.is_empty() || ids.iter().any(|&i| i >= tt.rows()) {
            return Err(Error::Dimension {
                op: "gather_rows",
                left: tt.shape().to_vec(),
                right: ids.to_vec(),
            });
        }
        let d = tt.cols();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(tt.row(i));
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), d], out),
            Op::Gather(table, ids.to_vec()),
            rg,
        ))
    }

    /// Picks `x[i, idx[i]]` for every row, giving a 1-D tensor.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xt = self.value(x);
        let c = xt.cols();
        if idx.len() != xt.rows() || idx.iter().any(|&j| j >= c) {
            return Err(Error::Dimension {
                op: "pick",
                left: xt.shape().to_vec(),
                right: idx.to_vec(),
            });
        }
        let out: Vec<f64> = idx.iter().enumerate().map(|(r, &j)| xt.data()[r * c + j]).collect();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_parts(vec![out.len()], out),
            Op::Pick(x, idx.to_vec()),
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Inverted dropout. The identity when `training` is false; otherwise
    /// each element is zeroed with probability `rate` and survivors are
    /// scaled by `1 / (1 - rate)`.
    pub fn dropout(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut crate::rng::Rng,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask = (0..self.value(x).len())
            .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
            .collect();
        self.mul_const(x, mask)
    }

    /// Runs the reverse sweep from the scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::usage("backward already ran on this tape"));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        let val = |v: Var| &nodes[v.0].value;
        let wants = |v: Var| nodes[v.0].requires_grad;
        fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> &'a mut [f64] {
            grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()])
        }

        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (at, bt) = (val(*a), val(*b));
                let k = bt.shape()[0];
                let n = bt.shape()[1];
                let m = at.len() / k;
                if wants(*a) {
                    matmul_nt_acc(g, bt.data(), slot(grads, nodes, *a), m, k, n);
                }
                if wants(*b) {
                    matmul_tn_acc(at.data(), g, slot(grads, nodes, *b), m, k, n);
                }
            }
            Op::Transpose(a) => {
                if wants(*a) {
                    let (m, n) = (val(*a).shape()[0], val(*a).shape()[1]);
                    let ga = slot(grads, nodes, *a);
                    for r in 0..m {
                        for c in 0..n {
                            ga[r * n + c] += g[c * m + r];
                        }
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(nodes[i].op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if wants(*a) {
                    slot(grads, nodes, *a).iter_mut().zip(g).for_each(|(o, v)| *o += v);
                }
                if wants(*b) {
                    slot(grads, nodes, *b).iter_mut().zip(g).for_each(|(o, v)| *o += sign * v);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bd = val(*b).data();
                    let ga = slot(grads, nodes, *a);
                    for j in 0..g.len() {
                        ga[j] += g[j] * bd[j];
                    }
                }
                if wants(*b) {
                    let ad = val(*a).data();
                    let gb = slot(grads, nodes, *b);
                    for j in 0..g.len() {
                        gb[j] += g[j] * ad[j];
                    }
                }
            }
            Op::AddRow(x, b) => {
                if wants(*x) {
                    slot(grads, nodes, *x).iter_mut().zip(g).for_each(|(o, v)| *o += v);
                }
                if wants(*b) {
                    let c = out.cols();
                    let gb = slot(grads, nodes, *b);
                    for row in g.chunks(c) {
                        gb.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                    }
                }
            }
            Op::ScaleRows(x, s) => {
                let c = out.cols();
                if wants(*x) {
                    let sd = val(*s).data();
                    let gx = slot(grads, nodes, *x);
                    for (r, (gr, grow)) in gx.chunks_mut(c).zip(g.chunks(c)).enumerate() {
                        gr.iter_mut().zip(grow).for_each(|(o, v)| *o += v * sd[r]);
                    }
                }
                if wants(*s) {
                    let xd = val(*x).data();
                    let gs = slot(grads, nodes, *s);
                    for (r, (xrow, grow)) in xd.chunks(c).zip(g.chunks(c)).enumerate() {
                        gs[r] += xrow.iter().zip(grow).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
            Op::Affine(x, s) => {
                if wants(*x) {
                    slot(grads, nodes, *x).iter_mut().zip(g).for_each(|(o, v)| *o += s * v);
                }
            }
            Op::MulConst(x, c) => {
                if wants(*x) {
                    let gx = slot(grads, nodes, *x);
                    for j in 0..g.len() {
                        gx[j] += g[j] * c[j];
                    }
                }
            }
            Op::Sigmoid(x) => {
                if wants(*x) {
                    let y = out.data();
                    let gx = slot(grads, nodes, *x);
                    for j in 0..g.len() {
                        gx[j] += g[j] * y[j] * (1.0 - y[j]);
                    }
                }
            }
            Op::Tanh(x) => {
                if wants(*x) {
                    let y = out.data();
                    let gx = slot(grads, nodes, *x);
                    for j in 0..g.len() {
                        gx[j] += g[j] * (1.0 - y[j] * y[j]);
                    }
                }
            }
            Op::Relu(x) => {
                if wants(*x) {
                    let xd = val(*x).data();
                    let gx = slot(grads, nodes, *x);
                    for j in 0..g.len() {
                        if xd[j] > 0.0 {
                            gx[j] += g[j];
                        }
                    }
                }
            }
            Op::LogEps(x, eps) => {
                if wants(*x) {
                    let xd = val(*x).data();
                    let gx = slot(grads, nodes, *x);
                    for j in 0..g.len() {
                        gx[j] += g[j] / (xd[j] + eps);
                    }
                }
            }
            Op::SoftmaxRows(x) => {
                if wants(*x) {
                    let c = out.cols();
                    let gx = slot(grads, nodes, *x);
                    for ((yrow, grow), gxrow) in
                        out.data().chunks(c).zip(g.chunks(c)).zip(gx.chunks_mut(c))
                    {
                        let dot: f64 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                        for j in 0..c {
                            gxrow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let total = out.cols();
                let rows = out.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if wants(p) {
                        let gp = slot(grads, nodes, p);
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + w];
                            gp[r * w..(r + 1) * w]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(o, v)| *o += v);
                        }
                    }
                    offset += w;
                }
            }
            Op::StackRows(rows) => {
                let d = out.cols();
                for (r, &p) in rows.iter().enumerate() {
                    if wants(p) {
                        slot(grads, nodes, p)
                            .iter_mut()
                            .zip(&g[r * d..(r + 1) * d])
                            .for_each(|(o, v)| *o += v);
                    }
                }
            }
            Op::Row(x, r) => {
                if wants(*x) {
                    let d = g.len();
                    slot(grads, nodes, *x)[r * d..(r + 1) * d]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(o, v)| *o += v);
                }
            }
            Op::SliceCols(x, start) => {
                if wants(*x) {
                    let c = val(*x).cols();
                    let w = out.cols();
                    let gx = slot(grads, nodes, *x);
                    for (r, grow) in g.chunks(w).enumerate() {
                        gx[r * c + start..r * c + start + w]
                            .iter_mut()
                            .zip(grow)
                            .for_each(|(o, v)| *o += v);
                    }
                }
            }
            Op::Reshape(x) => {
                if wants(*x) {
                    slot(grads, nodes, *x).iter_mut().zip(g).for_each(|(o, v)| *o += v);
                }
            }
            Op::Gather(table, ids) => {
                if wants(*table) {
                    let d = out.cols();
                    let gt = slot(grads, nodes, *table);
                    for (r, &id) in ids.iter().enumerate() {
                        gt[id * d..(id + 1) * d]
                            .iter_mut()
                            .zip(&g[r * d..(r + 1) * d])
                            .for_each(|(o, v)| *o += v);
                    }
                }
            }
            Op::Pick(x, idx) => {
                if wants(*x) {
                    let c = val(*x).cols();
                    let gx = slot(grads, nodes, *x);
                    for (r, &j) in idx.iter().enumerate() {
                        gx[r * c + j] += g[r];
                    }
                }
            }
            Op::Sum(x) => {
                if wants(*x) {
                    slot(grads, nodes, *x).iter_mut().for_each(|o| *o += g[0]);
                }
            }
        }
    }

    /// Adds the gradient of every parameter leaf into `store`.
    pub fn write_param_grads(&self, store: &mut ParamStore) -> Result<()> {
        if !self.backward_done {
            return Err(Error::usage("write_param_grads before backward"));
        }
        for &(id, v) in &self.params {
            let len = store.get(id).len();
            match self.grad(v) {
                Some(g) => store.get_mut(id).accumulate_grad(g),
                // parameter used but off the loss path: contributes zero
                None => store.get_mut(id).accumulate_grad(&vec![0.0; len]),
            }
        }
        Ok(())
    }

    /// Parameters touched by this tape, in first-use order.
    pub fn params(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params.iter().map(|&(id, _)| id)
    }
}
