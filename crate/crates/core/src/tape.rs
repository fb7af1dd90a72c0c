//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tape`] records every operation of a forward pass as a node; calling
//! [`Tape::backward`] replays the nodes in reverse and pushes gradients back
//! through each operation's rule, accumulating into the [`ParamStore`] at
//! parameter leaves. One training step owns one tape; tapes are never shared.
//!
//! Broadcasting is deliberately limited to equal shapes plus explicit scalar
//! and row variants — enough for BPTT through spiking MLPs and for the losses.

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

type UnaryFn = Box<dyn Fn(f64) -> f64>;

enum Op {
    Leaf,
    Param(ParamId),
    Affine { x: Var, w: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    Relu(Var),
    Concat(Vec<Var>),
    SliceCols { x: Var, from: usize, to: usize },
    AddRow { x: Var, row: Var },
    SumAll(Var),
    MeanAll(Var),
    SumAxis { x: Var, axis: usize },
    MeanAxis { x: Var, axis: usize },
    SoftmaxCe { logits: Var, labels: Vec<usize> },
    LogSoftmax(Var),
    Mse(Var, Var),
    MseScalar(Var, f64),
    Custom { x: Var, backward: UnaryFn },
}

struct Node {
    value: Tensor,
    grad: Tensor,
    op: Op,
}

/// y[b,o] = sum_i x[b,i]*w[o,i] + b[o].
///
/// Shared by the tape op and the no-grad forward paths so both produce
/// bit-identical values (fixed ascending accumulation order).
pub(crate) fn affine_kernel(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (batch, inputs) = (x.rows(), x.cols());
    let outputs = w.rows();
    let mut out = vec![0.0; batch * outputs];
    for bi in 0..batch {
        let xrow = x.row(bi);
        let orow = &mut out[bi * outputs..(bi + 1) * outputs];
        for (o, dst) in orow.iter_mut().enumerate() {
            let wrow = w.row(o);
            let mut acc = 0.0;
            for i in 0..inputs {
                acc += xrow[i] * wrow[i];
            }
            *dst = acc + b.data()[o];
        }
    }
    Tensor::new(vec![batch, outputs], out).expect("affine shape")
}

/// Row-wise softmax with max-subtraction.
pub(crate) fn softmax_rows(logits: &Tensor) -> Tensor {
    let (rows, cols) = (logits.rows(), logits.cols());
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = logits.row(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let dst = &mut out[r * cols..(r + 1) * cols];
        let mut z = 0.0;
        for (d, &x) in dst.iter_mut().zip(row) {
            *d = (x - m).exp();
            z += *d;
        }
        for d in dst.iter_mut() {
            *d /= z;
        }
    }
    Tensor::new(vec![rows, cols], out).expect("softmax shape")
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Gradient at a node after the most recent `backward` call.
    pub fn grad(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].grad
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let shape = value.shape().to_vec();
        self.nodes.push(Node {
            value,
            grad: Tensor::zeros(&shape),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Record a constant input (gradients reach it but nothing consumes them).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Record a parameter leaf; `backward` accumulates its gradient into the
    /// store (respecting the parameter's mask).
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id))
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xt, wt, bt) = (self.value(x), self.value(w), self.value(b));
        if xt.rank() != 2 || wt.rank() != 2 || bt.rank() != 1 {
            return Err(Error::Dimension(format!(
                "affine expects x[B,I], w[O,I], b[O]; got {:?}, {:?}, {:?}",
                xt.shape(),
                wt.shape(),
                bt.shape()
            )));
        }
        if xt.cols() != wt.cols() || wt.rows() != bt.len() {
            return Err(Error::Dimension(format!(
                "affine inner dims disagree: x {:?}, w {:?}, b {:?}",
                xt.shape(),
                wt.shape(),
                bt.shape()
            )));
        }
        let out = affine_kernel(xt, wt, bt);
        Ok(self.push(out, Op::Affine { x, w, b }))
    }

    fn binary_elementwise(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
        name: &str,
    ) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if !at.same_shape(bt) {
            return Err(Error::Dimension(format!(
                "{name}: shapes {:?} and {:?} differ",
                at.shape(),
                bt.shape()
            )));
        }
        let data = at
            .data()
            .iter()
            .zip(bt.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(at.shape().to_vec(), data)?;
        Ok(self.push(out, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, |x, y| x - y, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddScalar(a))
    }

    /// Elementwise scale by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| c * x);
        self.push(out, Op::MulScalar(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(out, Op::Relu(a))
    }

    /// Concatenate rank-2 tensors along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Usage("concat of zero tensors".into()));
        }
        let rows = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 2 || t.rows() != rows {
                return Err(Error::Dimension(format!(
                    "concat: incompatible shape {:?}",
                    t.shape()
                )));
            }
            total += t.cols();
        }
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for &p in parts {
            let t = self.value(p);
            let c = t.cols();
            for r in 0..rows {
                data[r * total + offset..r * total + offset + c].copy_from_slice(t.row(r));
            }
            offset += c;
        }
        let out = Tensor::new(vec![rows, total], data)?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Columns [from, to) of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: Var, from: usize, to: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 || from >= to || to > t.cols() {
            return Err(Error::Dimension(format!(
                "slice_cols [{from},{to}) on shape {:?}",
                t.shape()
            )));
        }
        let rows = t.rows();
        let mut data = Vec::with_capacity(rows * (to - from));
        for r in 0..rows {
            data.extend_from_slice(&t.row(r)[from..to]);
        }
        let out = Tensor::new(vec![rows, to - from], data)?;
        Ok(self.push(out, Op::SliceCols { x, from, to }))
    }

    /// Add a length-C row vector to every row of a [B,C] tensor.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xt, rt) = (self.value(x), self.value(row));
        if xt.rank() != 2 || rt.rank() != 1 || xt.cols() != rt.len() {
            return Err(Error::Dimension(format!(
                "add_row: {:?} + {:?}",
                xt.shape(),
                rt.shape()
            )));
        }
        let cols = xt.cols();
        let mut data = xt.data().to_vec();
        for r in 0..xt.rows() {
            for c in 0..cols {
                data[r * cols + c] += rt.data()[c];
            }
        }
        let out = Tensor::new(xt.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddRow { x, row }))
    }

    fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        (outer, len, inner)
    }

    fn reduce(&mut self, x: Var, axis: Option<usize>, mean: bool) -> Result<Var> {
        let t = self.value(x);
        match axis {
            None => {
                let mut acc = 0.0;
                for &v in t.data() {
                    acc += v;
                }
                if mean {
                    acc /= t.len() as f64;
                }
                let op = if mean { Op::MeanAll(x) } else { Op::SumAll(x) };
                Ok(self.push(Tensor::scalar(acc), op))
            }
            Some(a) => {
                if a >= t.rank() {
                    return Err(Error::Dimension(format!(
                        "reduce axis {a} out of range for shape {:?}",
                        t.shape()
                    )));
                }
                let (outer, len, inner) = Self::axis_split(t.shape(), a);
                let mut out_shape = t.shape().to_vec();
                out_shape.remove(a);
                let mut data = vec![0.0; outer * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let mut acc = 0.0;
                        for k in 0..len {
                            acc += t.data()[(o * len + k) * inner + i];
                        }
                        data[o * inner + i] = if mean { acc / len as f64 } else { acc };
                    }
                }
                let out = Tensor::new(out_shape, data)?;
                let op = if mean {
                    Op::MeanAxis { x, axis: a }
                } else {
                    Op::SumAxis { x, axis: a }
                };
                Ok(self.push(out, op))
            }
        }
    }

    pub fn sum(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(x, axis, false)
    }

    pub fn mean(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        self.reduce(x, axis, true)
    }

    /// Mean of several same-shaped vars (left fold, then scale by 1/n).
    pub fn mean_of(&mut self, vars: &[Var]) -> Result<Var> {
        if vars.is_empty() {
            return Err(Error::Usage("mean_of zero vars".into()));
        }
        let mut acc = vars[0];
        for &v in &vars[1..] {
            acc = self.add(acc, v)?;
        }
        if vars.len() == 1 {
            return Ok(acc);
        }
        Ok(self.scale(acc, 1.0 / vars.len() as f64))
    }

    /// Mean over the batch of -log softmax(logits)[label], max-stabilized.
    pub fn softmax_ce(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        if t.rank() != 2 {
            return Err(Error::Dimension(format!(
                "softmax_ce expects [B,C] logits, got {:?}",
                t.shape()
            )));
        }
        let (rows, cols) = (t.rows(), t.cols());
        if labels.len() != rows {
            return Err(Error::Dimension(format!(
                "softmax_ce: {} labels for batch {}",
                labels.len(),
                rows
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= cols) {
            return Err(Error::Label(format!(
                "label {bad} out of range for {cols} classes"
            )));
        }
        let mut loss = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = t.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&x| (x - m).exp()).sum();
            loss += -(row[y] - m - z.ln());
        }
        loss /= rows as f64;
        if !loss.is_finite() {
            return Err(Error::Data("non-finite cross-entropy loss".into()));
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Row-wise log softmax.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 {
            return Err(Error::Dimension(format!(
                "log_softmax expects rank 2, got {:?}",
                t.shape()
            )));
        }
        let (rows, cols) = (t.rows(), t.cols());
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = t.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&x| (x - m).exp()).sum();
            let lse = m + z.ln();
            for c in 0..cols {
                data[r * cols + c] = row[c] - lse;
            }
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(out, Op::LogSoftmax(x)))
    }

    /// Mean squared difference between two same-shaped tensors.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if !at.same_shape(bt) {
            return Err(Error::Dimension(format!(
                "mse: shapes {:?} and {:?} differ",
                at.shape(),
                bt.shape()
            )));
        }
        let n = at.len() as f64;
        let mut acc = 0.0;
        for (&x, &y) in at.data().iter().zip(bt.data()) {
            let d = x - y;
            acc += d * d;
        }
        Ok(self.push(Tensor::scalar(acc / n), Op::Mse(a, b)))
    }

    /// Mean squared difference against a scalar target.
    pub fn mse_scalar(&mut self, a: Var, target: f64) -> Var {
        let at = self.value(a);
        let n = at.len() as f64;
        let mut acc = 0.0;
        for &x in at.data() {
            let d = x - target;
            acc += d * d;
        }
        self.push(Tensor::scalar(acc / n), Op::MseScalar(a, target))
    }

    /// Elementwise op with caller-supplied forward and backward functions.
    /// The backward pass multiplies the upstream gradient by `backward(input)`.
    pub fn custom_grad(
        &mut self,
        x: Var,
        forward: impl Fn(f64) -> f64,
        backward: impl Fn(f64) -> f64 + 'static,
    ) -> Var {
        let out = self.value(x).map(&forward);
        self.push(
            out,
            Op::Custom {
                x,
                backward: Box::new(backward),
            },
        )
    }

    /// Reverse pass from a scalar loss. Node gradients are reset first, so
    /// repeated calls accumulate identical contributions into the store.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        for n in &mut self.nodes {
            n.grad.data_mut().fill(0.0);
        }
        self.nodes[loss.0].grad.data_mut()[0] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => store.accumulate_grad(*id, &node.grad),
                Op::Affine { x, w, b } => {
                    let dy = &node.grad;
                    let xv = before[x.0].value.clone();
                    let wv = before[w.0].value.clone();
                    let (batch, inputs) = (xv.rows(), xv.cols());
                    let outputs = wv.rows();
                    {
                        let dx = before[x.0].grad.data_mut();
                        for bi in 0..batch {
                            for o in 0..outputs {
                                let g = dy.get2(bi, o);
                                if g != 0.0 {
                                    let wrow = wv.row(o);
                                    for ii in 0..inputs {
                                        dx[bi * inputs + ii] += g * wrow[ii];
                                    }
                                }
                            }
                        }
                    }
                    {
                        let dw = before[w.0].grad.data_mut();
                        for bi in 0..batch {
                            let xrow = xv.row(bi);
                            for o in 0..outputs {
                                let g = dy.get2(bi, o);
                                if g != 0.0 {
                                    for ii in 0..inputs {
                                        dw[o * inputs + ii] += g * xrow[ii];
                                    }
                                }
                            }
                        }
                    }
                    {
                        let db = before[b.0].grad.data_mut();
                        for bi in 0..batch {
                            for o in 0..outputs {
                                db[o] += dy.get2(bi, o);
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    let g = node.grad.clone();
                    add_into(&mut before[a.0].grad, g.data(), 1.0);
                    add_into(&mut before[b.0].grad, g.data(), 1.0);
                }
                Op::Sub(a, b) => {
                    let g = node.grad.clone();
                    add_into(&mut before[a.0].grad, g.data(), 1.0);
                    add_into(&mut before[b.0].grad, g.data(), -1.0);
                }
                Op::Mul(a, b) => {
                    let g = node.grad.clone();
                    let av = before[a.0].value.clone();
                    let bv = before[b.0].value.clone();
                    for (i, dst) in before[a.0].grad.data_mut().iter_mut().enumerate() {
                        *dst += g.data()[i] * bv.data()[i];
                    }
                    for (i, dst) in before[b.0].grad.data_mut().iter_mut().enumerate() {
                        *dst += g.data()[i] * av.data()[i];
                    }
                }
                Op::AddScalar(a) => {
                    let g = node.grad.clone();
                    add_into(&mut before[a.0].grad, g.data(), 1.0);
                }
                Op::MulScalar(a, c) => {
                    let g = node.grad.clone();
                    let c = *c;
                    add_into(&mut before[a.0].grad, g.data(), c);
                }
                Op::Relu(a) => {
                    let g = node.grad.clone();
                    let av = before[a.0].value.clone();
                    for (i, dst) in before[a.0].grad.data_mut().iter_mut().enumerate() {
                        if av.data()[i] > 0.0 {
                            *dst += g.data()[i];
                        }
                    }
                }
                Op::Concat(parts) => {
                    let g = node.grad.clone();
                    let rows = g.rows();
                    let total = g.cols();
                    let parts = parts.clone();
                    let mut offset = 0;
                    for p in parts {
                        let c = before[p.0].value.cols();
                        let dst = before[p.0].grad.data_mut();
                        for r in 0..rows {
                            for k in 0..c {
                                dst[r * c + k] += g.data()[r * total + offset + k];
                            }
                        }
                        offset += c;
                    }
                }
                Op::SliceCols { x, from, to } => {
                    let g = node.grad.clone();
                    let (from, to) = (*from, *to);
                    let cols = before[x.0].value.cols();
                    let width = to - from;
                    let dst = before[x.0].grad.data_mut();
                    for r in 0..g.rows() {
                        for k in 0..width {
                            dst[r * cols + from + k] += g.data()[r * width + k];
                        }
                    }
                }
                Op::AddRow { x, row } => {
                    let g = node.grad.clone();
                    add_into(&mut before[x.0].grad, g.data(), 1.0);
                    let cols = g.cols();
                    let dr = before[row.0].grad.data_mut();
                    for r in 0..g.rows() {
                        for c in 0..cols {
                            dr[c] += g.data()[r * cols + c];
                        }
                    }
                }
                Op::SumAll(a) => {
                    let g = node.grad.item();
                    for dst in before[a.0].grad.data_mut() {
                        *dst += g;
                    }
                }
                Op::MeanAll(a) => {
                    let g = node.grad.item();
                    let n = before[a.0].value.len() as f64;
                    for dst in before[a.0].grad.data_mut() {
                        *dst += g / n;
                    }
                }
                Op::SumAxis { x, axis } | Op::MeanAxis { x, axis } => {
                    let is_mean = matches!(node.op, Op::MeanAxis { .. });
                    let g = node.grad.clone();
                    let shape = before[x.0].value.shape().to_vec();
                    let (outer, len, inner) = Self::axis_split(&shape, *axis);
                    let scale = if is_mean { 1.0 / len as f64 } else { 1.0 };
                    let dst = before[x.0].grad.data_mut();
                    for o in 0..outer {
                        for k in 0..len {
                            for i in 0..inner {
                                dst[(o * len + k) * inner + i] += g.data()[o * inner + i] * scale;
                            }
                        }
                    }
                }
                Op::SoftmaxCe { logits, labels } => {
                    let g = node.grad.item();
                    let lv = before[logits.0].value.clone();
                    let p = softmax_rows(&lv);
                    let rows = lv.rows();
                    let cols = lv.cols();
                    let labels = labels.clone();
                    let dst = before[logits.0].grad.data_mut();
                    let inv_b = 1.0 / rows as f64;
                    for r in 0..rows {
                        for c in 0..cols {
                            let indicator = if c == labels[r] { 1.0 } else { 0.0 };
                            dst[r * cols + c] += g * (p.get2(r, c) - indicator) * inv_b;
                        }
                    }
                }
                Op::LogSoftmax(x) => {
                    let g = node.grad.clone();
                    let logp = node.value.clone();
                    let (rows, cols) = (logp.rows(), logp.cols());
                    let dst = before[x.0].grad.data_mut();
                    for r in 0..rows {
                        let mut rowsum = 0.0;
                        for c in 0..cols {
                            rowsum += g.data()[r * cols + c];
                        }
                        for c in 0..cols {
                            let p = logp.data()[r * cols + c].exp();
                            dst[r * cols + c] += g.data()[r * cols + c] - p * rowsum;
                        }
                    }
                }
                Op::Mse(a, b) => {
                    let g = node.grad.item();
                    let av = before[a.0].value.clone();
                    let bv = before[b.0].value.clone();
                    let n = av.len() as f64;
                    for (i, dst) in before[a.0].grad.data_mut().iter_mut().enumerate() {
                        *dst += g * 2.0 * (av.data()[i] - bv.data()[i]) / n;
                    }
                    for (i, dst) in before[b.0].grad.data_mut().iter_mut().enumerate() {
                        *dst -= g * 2.0 * (av.data()[i] - bv.data()[i]) / n;
                    }
                }
                Op::MseScalar(a, target) => {
                    let g = node.grad.item();
                    let t = *target;
                    let av = before[a.0].value.clone();
                    let n = av.len() as f64;
                    for (i, dst) in before[a.0].grad.data_mut().iter_mut().enumerate() {
                        *dst += g * 2.0 * (av.data()[i] - t) / n;
                    }
                }
                Op::Custom { x, backward } => {
                    let g = node.grad.clone();
                    let xv = before[x.0].value.clone();
                    for (i, dst) in before[x.0].grad.data_mut().iter_mut().enumerate() {
                        *dst += g.data()[i] * backward(xv.data()[i]);
                    }
                }
            }
        }
        Ok(())
    }
}

fn add_into(dst: &mut Tensor, src: &[f64], scale: f64) {
    for (d, &s) in dst.data_mut().iter_mut().zip(src) {
        *d += scale * s;
    }
}
