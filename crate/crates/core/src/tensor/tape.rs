use super::{axis_extents, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    /// Same-shape addition, or a trailing-dimension bias broadcast of `rhs`.
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softplus(Var),
    Abs(Var),
    Map {
        x: Var,
        deriv: fn(f64) -> f64,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    SumAxis {
        x: Var,
        axis: usize,
    },
    Sum(Var),
    Scale(Var, f64),
    Transpose(Var),
    Reshape(Var),
    Gather {
        table: Var,
        indices: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Define-by-run computation record.
///
/// Nodes are appended in evaluation order, so the vector is already
/// topologically sorted and backward is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
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

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

/// `a[m x k] * b[k x n]`
fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
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

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite output from {name}")));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// An input that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Constant,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Tensor::new(vec![m, n], data)?, Op::MatMul(a, b), "matmul")
    }

    fn broadcastable(lhs: &[usize], rhs: &[usize]) -> bool {
        lhs == rhs || (rhs.len() == 1 && lhs.last() == Some(&rhs[0]))
    }

    /// Elementwise sum. `b` may also be a 1-D bias matching the last
    /// dimension of `a`, in which case it is added to every row.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !Self::broadcastable(sa, sb) {
            return Err(shape_err("add", sa, sb));
        }
        let bv = self.value(b).data();
        let n = bv.len();
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv[i % n])
            .collect();
        let shape = sa.to_vec();
        self.push(Tensor::new(shape, data)?, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("sub", sa, sb));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let shape = sa.to_vec();
        self.push(Tensor::new(shape, data)?, Op::Sub(a, b), "sub")
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("mul", sa, sb));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = sa.to_vec();
        self.push(Tensor::new(shape, data)?, Op::Mul(a, b), "mul")
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op, name: &'static str) -> Result<Var> {
        let v = self.value(x);
        let data = v.data().iter().map(|&e| f(e)).collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        self.push(t, op, name)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, sigmoid, Op::Sigmoid(x), "sigmoid")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::tanh, Op::Tanh(x), "tanh")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |e| e.max(0.0), Op::Relu(x), "relu")
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, softplus, Op::Softplus(x), "softplus")
    }

    /// Absolute value; the subgradient at 0 is taken as 0.
    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::abs, Op::Abs(x), "abs")
    }

    /// Elementwise `f` with caller-supplied derivative `deriv`.
    pub fn map(&mut self, x: Var, f: fn(f64) -> f64, deriv: fn(f64) -> f64) -> Result<Var> {
        self.unary(x, f, Op::Map { x, deriv }, "map")
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.unary(x, |e| e * factor, Op::Scale(x, factor), "scale")
    }

    /// Softmax along `axis`, with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = self.value(x);
        let shape = v.shape().to_vec();
        if axis >= shape.len() {
            return Err(shape_err("softmax", &shape, &[axis]));
        }
        let (outer, len, inner) = axis_extents(&shape, axis);
        let src = v.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| src[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..len {
                    let e = (src[idx(k)] - max).exp();
                    out[idx(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    out[idx(k)] /= total;
                }
            }
        }
        self.push(Tensor::new(shape, out)?, Op::Softmax { x, axis }, "softmax")
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err("concat", &base, &[axis]));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_extents(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let op = Op::Concat {
            inputs: inputs.to_vec(),
            axis,
        };
        self.push(Tensor::new(shape, out)?, op, "concat")
    }

    /// `len` entries of `x` along `axis`, starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(shape_err("slice", &shape, &[axis, start, len]));
        }
        let (outer, full, inner) = axis_extents(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        self.push(Tensor::new(new_shape, out)?, Op::Slice { x, axis, start }, "slice")
    }

    /// Sum along `axis`; the axis is removed from the shape.
    pub fn reduce_sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(shape_err("reduce_sum", &shape, &[axis]));
        }
        let (outer, len, inner) = axis_extents(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += src[(o * len + k) * inner + i];
                }
            }
        }
        let mut new_shape = shape;
        new_shape.remove(axis);
        if new_shape.is_empty() {
            new_shape.push(1);
        }
        self.push(Tensor::new(new_shape, out)?, Op::SumAxis { x, axis }, "reduce_sum")
    }

    /// Sum of every entry, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(x), "sum")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(shape_err("transpose", &shape, &[]));
        }
        let data = transpose_raw(self.value(x).data(), shape[0], shape[1]);
        self.push(Tensor::new(vec![shape[1], shape[0]], data)?, Op::Transpose(x), "transpose")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if shape.iter().product::<usize>() != v.numel() {
            return Err(shape_err("reshape", v.shape(), shape));
        }
        let t = Tensor::new(shape.to_vec(), v.data().to_vec())?;
        self.push(t, Op::Reshape(x), "reshape")
    }

    /// Rows `indices` of a 2-D `table`, stacked as `[indices.len() x cols]`.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.shape().len() != 2 {
            return Err(shape_err("gather", t.shape(), &[]));
        }
        let rows = t.rows();
        let mut out = Vec::with_capacity(indices.len() * t.cols());
        for &i in indices {
            if i >= rows {
                return Err(Error::index("embedding row", i, rows));
            }
            out.extend_from_slice(t.row_slice(i));
        }
        let shape = vec![indices.len(), t.cols()];
        let op = Op::Gather {
            table,
            indices: indices.to_vec(),
        };
        self.push(Tensor::new(shape, out)?, op, "gather")
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let gd = g.data();
        let accum = |grads: &mut [Option<Tensor>], v: Var, delta: Vec<f64>| {
            let slot = &mut grads[v.0];
            match slot {
                Some(t) => {
                    for (a, d) in t.data_mut().iter_mut().zip(delta) {
                        *a += d;
                    }
                }
                None => {
                    let shape = self.shape(v).to_vec();
                    *slot = Some(Tensor { shape, data: delta });
                }
            }
        };
        let elementwise = |f: &dyn Fn(usize) -> f64| -> Vec<f64> {
            gd.iter().enumerate().map(|(k, g)| g * f(k)).collect()
        };

        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.wants(*a) {
                    let bt = transpose_raw(bv.data(), k, n);
                    accum(grads, *a, matmul_raw(gd, &bt, m, n, k));
                }
                if self.wants(*b) {
                    let at = transpose_raw(av.data(), m, k);
                    accum(grads, *b, matmul_raw(&at, gd, k, m, n));
                }
            }
            Op::Add(a, b) => {
                accum(grads, *a, gd.to_vec());
                if self.wants(*b) {
                    let n = self.value(*b).numel();
                    let mut db = vec![0.0; n];
                    for (k, gv) in gd.iter().enumerate() {
                        db[k % n] += gv;
                    }
                    accum(grads, *b, db);
                }
            }
            Op::Sub(a, b) => {
                accum(grads, *a, gd.to_vec());
                accum(grads, *b, gd.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                accum(grads, *a, elementwise(&|k| bv[k]));
                accum(grads, *b, elementwise(&|k| av[k]));
            }
            Op::Sigmoid(x) => {
                let y = out.data();
                accum(grads, *x, elementwise(&|k| y[k] * (1.0 - y[k])));
            }
            Op::Tanh(x) => {
                let y = out.data();
                accum(grads, *x, elementwise(&|k| 1.0 - y[k] * y[k]));
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                accum(grads, *x, elementwise(&|k| if xv[k] > 0.0 { 1.0 } else { 0.0 }));
            }
            Op::Softplus(x) => {
                let xv = self.value(*x).data();
                accum(grads, *x, elementwise(&|k| sigmoid(xv[k])));
            }
            Op::Abs(x) => {
                let xv = self.value(*x).data();
                let sign = |v: f64| {
                    if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                };
                accum(grads, *x, elementwise(&|k| sign(xv[k])));
            }
            Op::Map { x, deriv } => {
                let xv = self.value(*x).data();
                accum(grads, *x, elementwise(&|k| deriv(xv[k])));
            }
            Op::Scale(x, factor) => {
                accum(grads, *x, gd.iter().map(|v| v * factor).collect());
            }
            Op::Softmax { x, axis } => {
                let y = out.data();
                let (outer, len, inner) = axis_extents(out.shape(), *axis);
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for n in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + n;
                        let dot: f64 = (0..len).map(|k| y[idx(k)] * gd[idx(k)]).sum();
                        for k in 0..len {
                            dx[idx(k)] = y[idx(k)] * (gd[idx(k)] - dot);
                        }
                    }
                }
                accum(grads, *x, dx);
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = axis_extents(out.shape(), *axis);
                let mut parts: Vec<Vec<f64>> = inputs
                    .iter()
                    .map(|v| Vec::with_capacity(self.value(*v).numel()))
                    .collect();
                let mut offset = 0;
                for _ in 0..outer {
                    for (p, v) in inputs.iter().enumerate() {
                        let chunk = self.shape(*v)[*axis] * inner;
                        parts[p].extend_from_slice(&gd[offset..offset + chunk]);
                        offset += chunk;
                    }
                }
                for (v, part) in inputs.iter().zip(parts) {
                    accum(grads, *v, part);
                }
            }
            Op::Slice { x, axis, start } => {
                let src_shape = self.shape(*x);
                let (outer, full, inner) = axis_extents(src_shape, *axis);
                let len = out.shape()[*axis];
                let mut dx = vec![0.0; self.value(*x).numel()];
                for o in 0..outer {
                    let dst = (o * full + start) * inner;
                    let srcpos = o * len * inner;
                    dx[dst..dst + len * inner].copy_from_slice(&gd[srcpos..srcpos + len * inner]);
                }
                accum(grads, *x, dx);
            }
            Op::SumAxis { x, axis } => {
                let (outer, len, inner) = axis_extents(self.shape(*x), *axis);
                let mut dx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for k in 0..len {
                        for n in 0..inner {
                            dx[(o * len + k) * inner + n] = gd[o * inner + n];
                        }
                    }
                }
                accum(grads, *x, dx);
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                accum(grads, *x, vec![gd[0]; n]);
            }
            Op::Transpose(x) => {
                let s = out.shape();
                accum(grads, *x, transpose_raw(gd, s[0], s[1]));
            }
            Op::Reshape(x) => accum(grads, *x, gd.to_vec()),
            Op::Gather { table, indices } => {
                let t = self.value(*table);
                let cols = t.cols();
                let mut dt = vec![0.0; t.numel()];
                for (r, &idx) in indices.iter().enumerate() {
                    for c in 0..cols {
                        dt[idx * cols + c] += gd[r * cols + c];
                    }
                }
                accum(grads, *table, dt);
            }
        }
    }

    /// Constants never need a gradient; skip the work for them.
    fn wants(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Constant)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn activation_values_at_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.0]));
        let s = tape.sigmoid(x).unwrap();
        let t = tape.tanh(x).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5]);
        assert_eq!(tape.value(t).data(), &[0.0]);
    }

    #[test]
    fn softmax_uniform_for_equal_logits() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![3.0; 4]));
        let y = tape.softmax(x, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[0.25; 4]);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1000.0, 1000.0]));
        let y = tape.softmax(x, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn matmul_hand_example() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let b = tape.leaf(Tensor::matrix(3, 2, vec![7., 8., 9., 10., 11., 12.]).unwrap());
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[58., 64., 139., 154.]);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("[2, 3]"));
        let bias = tape.constant(Tensor::zeros(&[4]));
        assert!(tape.add(a, bias).is_err());
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![f64::MAX]));
        assert!(matches!(tape.scale(x, 10.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn gradient_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, -2.0, 5.0]));
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn gradient_of_square_sum() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn untouched_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let unused = tape.leaf(Tensor::zeros(&[2, 2]));
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(unused), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn bias_broadcast_gradient_sums_rows() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[3, 2]));
        let b = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let y = tape.add(x, b).unwrap();
        assert_eq!(tape.value(y).data(), &[1., 2., 1., 2., 1., 2.]);
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(b).data(), &[3.0, 3.0]);
    }

    #[test]
    fn concat_slice_roundtrip_values() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::matrix(2, 1, vec![1., 2.]).unwrap());
        let b = tape.leaf(Tensor::matrix(2, 2, vec![3., 4., 5., 6.]).unwrap());
        let c = tape.concat(&[a, b], 1).unwrap();
        approx(tape.value(c).data(), &[1., 3., 4., 2., 5., 6.], 0.0);
        let s = tape.slice(c, 1, 1, 2).unwrap();
        assert_eq!(tape.value(s), tape.value(b));
        let r = tape.concat(&[a, a], 0).unwrap();
        assert_eq!(tape.shape(r), &[4, 1]);
    }

    #[test]
    fn reduce_sum_over_rows_and_columns() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let r0 = tape.reduce_sum(x, 0).unwrap();
        let r1 = tape.reduce_sum(x, 1).unwrap();
        assert_eq!(tape.value(r0).data(), &[5., 7., 9.]);
        assert_eq!(tape.value(r1).data(), &[6., 15.]);
    }

    #[test]
    fn gather_scatters_gradient_into_rows() {
        let mut tape = Tape::new();
        let t = tape.leaf(Tensor::identity(3));
        let r = tape.gather(t, &[1, 1]).unwrap();
        let s = tape.sum(r).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(t).data(), &[0., 0., 0., 2., 2., 2., 0., 0., 0.]);
        assert!(tape.gather(t, &[3]).is_err());
    }

    #[test]
    fn abs_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![-2.0, 0.0, 3.0]));
        let a = tape.abs(x).unwrap();
        let s = tape.sum(a).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).data(), &[-1.0, 0.0, 1.0]);
    }
}
