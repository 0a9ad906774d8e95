use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    MatMul(Var, Var),
    Transpose(Var),
    AddRow(Var, Var),
    Concat(Vec<Var>, usize),
    Reshape(Var),
    Gather(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    Exp(Var),
    Ln(Var),
    Tanh(Var),
    Cos(Var),
    AcosClamped(Var, f64),
    Min(Var, Var),
    Softmax(Var, usize),
    LogSumExp(Var),
    LogSumExpAxis(Var, usize),
    CosineSimilarity(Var, Var),
    CosineMatrix(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Append-only record of a forward computation.
///
/// Parents always precede their children, so walking node ids downward from
/// the loss is a reverse topological order. Gradients accumulate across
/// `backward` calls until [`Tape::zero_grad`].
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

/// Iteration helper over the 1-D lines of a rank-1 or rank-2 tensor along an axis.
#[derive(Clone, Copy)]
struct Lines {
    count: usize,
    len: usize,
    cols: usize,
    axis: usize,
}

impl Lines {
    fn new(op: &'static str, shape: &[usize], axis: usize) -> Result<Self> {
        let (rows, cols) = match shape {
            [n] if axis == 0 => return Ok(Self { count: 1, len: *n, cols: *n, axis: 1 }),
            [r, c] if axis < 2 => (*r, *c),
            _ => {
                return Err(Error::ShapeMismatch {
                    op,
                    detail: format!("axis {} invalid for shape {:?}", axis, shape),
                })
            }
        };
        Ok(if axis == 1 {
            Self { count: rows, len: cols, cols, axis }
        } else {
            Self { count: cols, len: rows, cols, axis }
        })
    }

    #[inline]
    fn index(&self, line: usize, k: usize) -> usize {
        if self.axis == 1 {
            line * self.cols + k
        } else {
            k * self.cols + line
        }
    }

    fn reduced_shape(&self, shape: &[usize]) -> Vec<usize> {
        match shape {
            [_] => vec![1],
            [r, c] => {
                if self.axis == 1 {
                    vec![*r, 1]
                } else {
                    vec![1, *c]
                }
            }
            _ => unreachable!(),
        }
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch { op, detail: format!("{:?} vs {:?}", a, b) }
}

fn elementwise_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if a.shape() == b.shape() || (a.len() == 1 && b.len() == 1) {
        Ok(a.shape().to_vec())
    } else {
        Err(mismatch(op, a.shape(), b.shape()))
    }
}

fn norm(xs: &[f64]) -> f64 {
    libm::sqrt(xs.iter().map(|x| x * x).sum())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + libm::log(xs.map(|x| libm::exp(x - max)).sum::<f64>())
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, var: Var) -> f64 {
        self.nodes[var.0].value.data()[0]
    }

    /// Accumulated gradient for `var`, if any backward pass reached it.
    pub fn grad(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn leaf_scalar(&mut self, value: f64) -> Var {
        self.leaf(Tensor::scalar(value))
    }

    fn push(&mut self, name: &'static str, op: Op, value: Tensor) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node { op, value });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.val(a), self.val(b));
        let shape = elementwise_shape("add", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        self.push("add", Op::Add(a, b), Tensor::new(shape, data)?)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.val(a), self.val(b));
        let shape = elementwise_shape("sub", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
        self.push("sub", Op::Sub(a, b), Tensor::new(shape, data)?)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.val(a), self.val(b));
        let shape = elementwise_shape("mul", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        self.push("mul", Op::Mul(a, b), Tensor::new(shape, data)?)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let value = self.val(a).map(|v| v * factor);
        self.push("scale", Op::Scale(a, factor), value)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    /// `a + constant`, elementwise.
    pub fn offset(&mut self, a: Var, constant: f64) -> Result<Var> {
        let value = self.val(a).map(|v| v + constant);
        self.push("offset", Op::Offset(a), value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.val(a), self.val(b));
        let ((m, k), (k2, n)) = match (x.dims2(), y.dims2()) {
            (Some(p), Some(q)) if p.1 == q.0 => (p, q),
            _ => return Err(mismatch("matmul", x.shape(), y.shape())),
        };
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let xv = x.data()[i * k + p];
                if xv == 0.0 {
                    continue;
                }
                let yrow = &y.data()[p * n..(p + 1) * n];
                for (o, yv) in out[i * n..(i + 1) * n].iter_mut().zip(yrow) {
                    *o += xv * yv;
                }
            }
        }
        debug_assert_eq!(k, k2);
        self.push("matmul", Op::MatMul(a, b), Tensor::matrix(m, n, out)?)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let x = self.val(a);
        let (r, c) = x.dims2().ok_or_else(|| mismatch("transpose", x.shape(), &[0, 0]))?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x.data()[i * c + j];
            }
        }
        self.push("transpose", Op::Transpose(a), Tensor::matrix(c, r, out)?)
    }

    /// Adds a row vector (`[n]` or `[1, n]`) to every row of an `m × n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.val(a), self.val(row));
        let (m, n) = x.dims2().ok_or_else(|| mismatch("add_row", x.shape(), r.shape()))?;
        if r.len() != n {
            return Err(mismatch("add_row", x.shape(), r.shape()));
        }
        let mut out = x.data().to_vec();
        for i in 0..m {
            for (o, b) in out[i * n..(i + 1) * n].iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        self.push("add_row", Op::AddRow(a, row), Tensor::matrix(m, n, out)?)
    }

    /// Concatenates along `axis`; rank-0 inputs are treated as `[1]`.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::ShapeMismatch { op: "concat", detail: "no inputs".into() });
        }
        let shapes: Vec<Vec<usize>> = parts
            .iter()
            .map(|&p| {
                let s = self.val(p).shape();
                if s.is_empty() {
                    vec![1]
                } else {
                    s.to_vec()
                }
            })
            .collect();
        let first = &shapes[0];
        if axis >= first.len() {
            return Err(Error::ShapeMismatch {
                op: "concat",
                detail: format!("axis {} out of range for {:?}", axis, first),
            });
        }
        for s in &shapes[1..] {
            let compatible = s.len() == first.len()
                && s.iter().zip(first).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(mismatch("concat", first, s));
            }
        }
        let outer: usize = first[..axis].iter().product();
        let trailing: usize = first[axis + 1..].iter().product();
        let mut out_shape = first.clone();
        out_shape[axis] = shapes.iter().map(|s| s[axis]).sum();
        let mut out = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for (p, s) in parts.iter().zip(&shapes) {
                let chunk = s[axis] * trailing;
                out.extend_from_slice(&self.val(*p).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        self.push("concat", Op::Concat(parts.to_vec(), axis), Tensor::new(out_shape, out)?)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let x = self.val(a);
        if shape.iter().product::<usize>() != x.len() {
            return Err(mismatch("reshape", x.shape(), shape));
        }
        let value = x.with_shape(shape.to_vec());
        self.push("reshape", Op::Reshape(a), value)
    }

    /// Picks flat elements of `a` by index into a tensor of `shape`.
    pub fn gather(&mut self, a: Var, indices: &[usize], shape: &[usize]) -> Result<Var> {
        let x = self.val(a);
        if shape.iter().product::<usize>() != indices.len() {
            return Err(mismatch("gather", &[indices.len()], shape));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= x.len()) {
            return Err(Error::ShapeMismatch {
                op: "gather",
                detail: format!("index {} out of bounds for {} elements", bad, x.len()),
            });
        }
        let data = indices.iter().map(|&i| x.data()[i]).collect();
        let value = Tensor::new(shape.to_vec(), data)?;
        self.push("gather", Op::Gather(a, indices.to_vec()), value)
    }

    /// Scalar element `(row, col)` of a matrix.
    pub fn element(&mut self, a: Var, row: usize, col: usize) -> Result<Var> {
        let cols = self
            .val(a)
            .dims2()
            .ok_or_else(|| mismatch("element", self.val(a).shape(), &[row, col]))?
            .1;
        self.gather(a, &[row * cols + col], &[])
    }

    /// Rows of a matrix, in the given order, as a new `len × cols` matrix.
    pub fn rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let cols = self
            .val(a)
            .dims2()
            .ok_or_else(|| mismatch("rows", self.val(a).shape(), &[rows.len()]))?
            .1;
        let idx: Vec<usize> = rows.iter().flat_map(|&r| (0..cols).map(move |c| r * cols + c)).collect();
        self.gather(a, &idx, &[rows.len(), cols])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.val(a).data().iter().sum();
        self.push("sum", Op::Sum(a), Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.val(a);
        if x.is_empty() {
            return Err(Error::ShapeMismatch { op: "mean", detail: "empty input".into() });
        }
        let s = x.data().iter().sum::<f64>() / x.len() as f64;
        self.push("mean", Op::Mean(a), Tensor::scalar(s))
    }

    /// Sum over one axis of a rank-1/rank-2 tensor, keeping the reduced axis as size 1.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.val(a);
        let lines = Lines::new("sum_axis", x.shape(), axis)?;
        let out = (0..lines.count)
            .map(|l| (0..lines.len).map(|k| x.data()[lines.index(l, k)]).sum())
            .collect();
        let value = Tensor::new(lines.reduced_shape(x.shape()), out)?;
        self.push("sum_axis", Op::SumAxis(a, axis), value)
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let n = {
            let x = self.val(a);
            Lines::new("mean_axis", x.shape(), axis)?.len
        };
        let s = self.sum_axis(a, axis)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.val(a).map(libm::exp);
        self.push("exp", Op::Exp(a), value)
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let value = self.val(a).map(libm::log);
        self.push("ln", Op::Ln(a), value)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.val(a).map(libm::tanh);
        self.push("tanh", Op::Tanh(a), value)
    }

    pub fn cos(&mut self, a: Var) -> Result<Var> {
        let value = self.val(a).map(libm::cos);
        self.push("cos", Op::Cos(a), value)
    }

    /// `arccos(clamp(x, -1 + eps, 1 - eps))`; zero gradient where the clamp is active.
    pub fn acos_clamped(&mut self, a: Var, eps: f64) -> Result<Var> {
        let value = self.val(a).map(|x| libm::acos(x.clamp(-1.0 + eps, 1.0 - eps)));
        self.push("acos_clamped", Op::AcosClamped(a, eps), value)
    }

    /// Elementwise minimum. Ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.val(a), self.val(b));
        let shape = elementwise_shape("min", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| if p <= q { p } else { q }).collect();
        self.push("min", Op::Min(a, b), Tensor::new(shape, data)?)
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.val(a);
        let lines = Lines::new("softmax", x.shape(), axis)?;
        let mut out = vec![0.0; x.len()];
        for l in 0..lines.count {
            let lse = log_sum_exp((0..lines.len).map(|k| x.data()[lines.index(l, k)]));
            for k in 0..lines.len {
                let i = lines.index(l, k);
                out[i] = libm::exp(x.data()[i] - lse);
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        self.push("softmax", Op::Softmax(a, axis), value)
    }

    /// `ln Σ exp(x)` over every element.
    pub fn log_sum_exp(&mut self, a: Var) -> Result<Var> {
        let x = self.val(a);
        if x.is_empty() {
            return Err(Error::ShapeMismatch { op: "log_sum_exp", detail: "empty input".into() });
        }
        let v = log_sum_exp(x.data().iter().copied());
        self.push("log_sum_exp", Op::LogSumExp(a), Tensor::scalar(v))
    }

    /// Log-sum-exp along one axis, keeping the reduced axis as size 1.
    pub fn log_sum_exp_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.val(a);
        let lines = Lines::new("log_sum_exp_axis", x.shape(), axis)?;
        let out = (0..lines.count)
            .map(|l| log_sum_exp((0..lines.len).map(|k| x.data()[lines.index(l, k)])))
            .collect();
        let value = Tensor::new(lines.reduced_shape(x.shape()), out)?;
        self.push("log_sum_exp_axis", Op::LogSumExpAxis(a, axis), value)
    }

    /// Cosine similarity of two equally sized tensors, flattened.
    pub fn cosine_similarity(&mut self, u: Var, v: Var) -> Result<Var> {
        let (x, y) = (self.val(u), self.val(v));
        if x.len() != y.len() {
            return Err(mismatch("cosine_similarity", x.shape(), y.shape()));
        }
        let (nx, ny) = (norm(x.data()), norm(y.data()));
        if nx == 0.0 || ny == 0.0 {
            return Err(Error::ZeroNorm { context: String::from("cosine_similarity") });
        }
        let c = dot(x.data(), y.data()) / (nx * ny);
        self.push("cosine_similarity", Op::CosineSimilarity(u, v), Tensor::scalar(c))
    }

    /// Pairwise row cosines: entry `(i, j)` is `cos(a_i, b_j)`.
    pub fn cosine_matrix(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.val(a), self.val(b));
        let ((m, d), (n, d2)) = match (x.dims2(), y.dims2()) {
            (Some(p), Some(q)) if p.1 == q.1 => (p, q),
            _ => return Err(mismatch("cosine_matrix", x.shape(), y.shape())),
        };
        debug_assert_eq!(d, d2);
        let xn: Vec<f64> = (0..m).map(|i| norm(x.row(i))).collect();
        let yn: Vec<f64> = (0..n).map(|j| norm(y.row(j))).collect();
        if let Some(i) = xn.iter().position(|&v| v == 0.0) {
            return Err(Error::ZeroNorm { context: format!("cosine_matrix left row {}", i) });
        }
        if let Some(j) = yn.iter().position(|&v| v == 0.0) {
            return Err(Error::ZeroNorm { context: format!("cosine_matrix right row {}", j) });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = dot(x.row(i), y.row(j)) / (xn[i] * yn[j]);
            }
        }
        self.push("cosine_matrix", Op::CosineMatrix(a, b), Tensor::matrix(m, n, out)?)
    }

    /// Reverse pass from a scalar node, adding into the accumulated gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = &self.nodes[loss.0].value;
        if root.len() != 1 {
            return Err(Error::NotScalar { shape: root.shape().to_vec() });
        }
        let mut local: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        local[loss.0] = Some(Tensor::full(root.shape(), 1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = local[id].take() else { continue };
            self.propagate(id, &g, &mut local);
            match &mut self.grads[id] {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &Tensor, local: &mut [Option<Tensor>]) {
        fn acc(local: &mut [Option<Tensor>], v: Var, shape: &[usize], f: impl FnOnce(&mut [f64])) {
            let slot = local[v.0].get_or_insert_with(|| Tensor::zeros(shape));
            f(slot.data_mut());
        }

        let node = &self.nodes[id];
        let out = &node.value;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(local, v, self.val(v).shape(), |d| {
                        d.iter_mut().zip(gd).for_each(|(x, g)| *x += g)
                    });
                }
            }
            Op::Sub(a, b) => {
                acc(local, *a, self.val(*a).shape(), |d| d.iter_mut().zip(gd).for_each(|(x, g)| *x += g));
                acc(local, *b, self.val(*b).shape(), |d| d.iter_mut().zip(gd).for_each(|(x, g)| *x -= g));
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (self.val(*a).data(), self.val(*b).data());
                acc(local, *a, self.val(*a).shape(), |d| {
                    for i in 0..d.len() {
                        d[i] += gd[i] * xb[i];
                    }
                });
                acc(local, *b, self.val(*b).shape(), |d| {
                    for i in 0..d.len() {
                        d[i] += gd[i] * xa[i];
                    }
                });
            }
            Op::Scale(a, c) => {
                acc(local, *a, self.val(*a).shape(), |d| d.iter_mut().zip(gd).for_each(|(x, g)| *x += c * g));
            }
            Op::Offset(a) | Op::Reshape(a) => {
                acc(local, *a, self.val(*a).shape(), |d| d.iter_mut().zip(gd).for_each(|(x, g)| *x += g));
            }
            Op::MatMul(a, b) => {
                let (xa, xb) = (self.val(*a), self.val(*b));
                let (m, k) = xa.dims2().unwrap();
                let n = xb.dims2().unwrap().1;
                acc(local, *a, xa.shape(), |d| {
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += gd[i * n + j] * xb.data()[p * n + j];
                            }
                            d[i * k + p] += s;
                        }
                    }
                });
                acc(local, *b, xb.shape(), |d| {
                    for i in 0..m {
                        for p in 0..k {
                            let av = xa.data()[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                d[p * n + j] += av * gd[i * n + j];
                            }
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (r, c) = self.val(*a).dims2().unwrap();
                acc(local, *a, self.val(*a).shape(), |d| {
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] += gd[j * r + i];
                        }
                    }
                });
            }
            Op::AddRow(a, row) => {
                let (m, n) = out.dims2().unwrap();
                acc(local, *a, self.val(*a).shape(), |d| d.iter_mut().zip(gd).for_each(|(x, g)| *x += g));
                acc(local, *row, self.val(*row).shape(), |d| {
                    for i in 0..m {
                        for j in 0..n {
                            d[j] += gd[i * n + j];
                        }
                    }
                });
            }
            Op::Concat(parts, axis) => {
                let out_shape = out.shape();
                let outer: usize = out_shape[..*axis].iter().product();
                let trailing: usize = out_shape[axis + 1..].iter().product();
                let total = out_shape[*axis] * trailing;
                let mut offset = 0;
                for &p in parts {
                    let shape = self.val(p).shape();
                    let width = if shape.is_empty() { 1 } else { shape[*axis] } * trailing;
                    acc(local, p, shape, |d| {
                        for o in 0..outer {
                            let src = &gd[o * total + offset..o * total + offset + width];
                            for (x, g) in d[o * width..(o + 1) * width].iter_mut().zip(src) {
                                *x += g;
                            }
                        }
                    });
                    offset += width;
                }
            }
            Op::Gather(a, idx) => {
                acc(local, *a, self.val(*a).shape(), |d| {
                    for (k, &i) in idx.iter().enumerate() {
                        d[i] += gd[k];
                    }
                });
            }
            Op::Sum(a) => {
                acc(local, *a, self.val(*a).shape(), |d| d.iter_mut().for_each(|x| *x += gd[0]));
            }
            Op::Mean(a) => {
                let n = self.val(*a).len() as f64;
                acc(local, *a, self.val(*a).shape(), |d| d.iter_mut().for_each(|x| *x += gd[0] / n));
            }
            Op::SumAxis(a, axis) => {
                let lines = Lines::new("sum_axis", self.val(*a).shape(), *axis).unwrap();
                acc(local, *a, self.val(*a).shape(), |d| {
                    for l in 0..lines.count {
                        for k in 0..lines.len {
                            d[lines.index(l, k)] += gd[l];
                        }
                    }
                });
            }
            Op::Exp(a) => {
                let y = out.data();
                acc(local, *a, self.val(*a).shape(), |d| {
                    for i in 0..d.len() {
                        d[i] += gd[i] * y[i];
                    }
                });
            }
            Op::Ln(a) => {
                let x = self.val(*a).data();
                acc(local, *a, self.val(*a).shape(), |d| {
                    for i in 0..d.len() {
                        d[i] += gd[i] / x[i];
                    }
                });
            }
            Op::Tanh(a) => {
                let y = out.data();
                acc(local, *a, self.val(*a).shape(), |d| {
                    for i in 0..d.len() {
                        d[i] += gd[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            Op::Cos(a) => {
                let x = self.val(*a).data();
                acc(local, *a, self.val(*a).shape(), |d| {
                    for i in 0..d.len() {
                        d[i] -= gd[i] * libm::sin(x[i]);
                    }
                });
            }
            Op::AcosClamped(a, eps) => {
                let x = self.val(*a).data();
                let bound = 1.0 - eps;
                acc(local, *a, self.val(*a).shape(), |d| {
                    for i in 0..d.len() {
                        if x[i].abs() <= bound {
                            d[i] -= gd[i] / libm::sqrt(1.0 - x[i] * x[i]);
                        }
                    }
                });
            }
            Op::Min(a, b) => {
                let (xa, xb) = (self.val(*a).data(), self.val(*b).data());
                acc(local, *a, self.val(*a).shape(), |d| {
                    for i in 0..d.len() {
                        if xa[i] <= xb[i] {
                            d[i] += gd[i];
                        }
                    }
                });
                acc(local, *b, self.val(*b).shape(), |d| {
                    for i in 0..d.len() {
                        if xa[i] > xb[i] {
                            d[i] += gd[i];
                        }
                    }
                });
            }
            Op::Softmax(a, axis) => {
                let y = out.data();
                let lines = Lines::new("softmax", out.shape(), *axis).unwrap();
                acc(local, *a, self.val(*a).shape(), |d| {
                    for l in 0..lines.count {
                        let dotp: f64 = (0..lines.len).map(|k| {
                            let i = lines.index(l, k);
                            gd[i] * y[i]
                        }).sum();
                        for k in 0..lines.len {
                            let i = lines.index(l, k);
                            d[i] += y[i] * (gd[i] - dotp);
                        }
                    }
                });
            }
            Op::LogSumExp(a) => {
                let x = self.val(*a).data();
                let lse = out.data()[0];
                acc(local, *a, self.val(*a).shape(), |d| {
                    for i in 0..d.len() {
                        d[i] += gd[0] * libm::exp(x[i] - lse);
                    }
                });
            }
            Op::LogSumExpAxis(a, axis) => {
                let x = self.val(*a);
                let lines = Lines::new("log_sum_exp_axis", x.shape(), *axis).unwrap();
                let lse = out.data();
                acc(local, *a, x.shape(), |d| {
                    for l in 0..lines.count {
                        for k in 0..lines.len {
                            let i = lines.index(l, k);
                            d[i] += gd[l] * libm::exp(x.data()[i] - lse[l]);
                        }
                    }
                });
            }
            Op::CosineSimilarity(u, v) => {
                let (x, y) = (self.val(*u).data(), self.val(*v).data());
                let c = out.data()[0];
                let (nx, ny) = (norm(x), norm(y));
                acc(local, *u, self.val(*u).shape(), |d| {
                    for i in 0..d.len() {
                        d[i] += gd[0] * (y[i] / (nx * ny) - c * x[i] / (nx * nx));
                    }
                });
                acc(local, *v, self.val(*v).shape(), |d| {
                    for i in 0..d.len() {
                        d[i] += gd[0] * (x[i] / (nx * ny) - c * y[i] / (ny * ny));
                    }
                });
            }
            Op::CosineMatrix(a, b) => {
                let (xa, xb) = (self.val(*a), self.val(*b));
                let (m, dim) = xa.dims2().unwrap();
                let n = xb.dims2().unwrap().0;
                let an: Vec<f64> = (0..m).map(|i| norm(xa.row(i))).collect();
                let bn: Vec<f64> = (0..n).map(|j| norm(xb.row(j))).collect();
                let c = out.data();
                let mut ga = vec![0.0; m * dim];
                let mut gb = vec![0.0; n * dim];
                for i in 0..m {
                    for j in 0..n {
                        let gij = gd[i * n + j];
                        if gij == 0.0 {
                            continue;
                        }
                        let cij = c[i * n + j];
                        let (ra, rb) = (xa.row(i), xb.row(j));
                        let inv = 1.0 / (an[i] * bn[j]);
                        for k in 0..dim {
                            ga[i * dim + k] += gij * (rb[k] * inv - cij * ra[k] / (an[i] * an[i]));
                            gb[j * dim + k] += gij * (ra[k] * inv - cij * rb[k] / (bn[j] * bn[j]));
                        }
                    }
                }
                acc(local, *a, xa.shape(), |d| d.iter_mut().zip(&ga).for_each(|(x, g)| *x += g));
                acc(local, *b, xb.shape(), |d| d.iter_mut().zip(&gb).for_each(|(x, g)| *x += g));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn cosine_of_vector_with_itself_is_one() {
        let mut tape = Tape::new();
        let u = tape.leaf(Tensor::vector(vec![0.3, -1.2, 2.5]));
        let c = tape.cosine_similarity(u, u).unwrap();
        assert!(approx(tape.scalar(c), 1.0, 1e-15));
    }

    #[test]
    fn acos_derivative_at_zero_is_minus_one() {
        let mut tape = Tape::new();
        let x = tape.leaf_scalar(0.0);
        let y = tape.acos_clamped(x, 1e-6).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().data()[0], -1.0);
    }

    #[test]
    fn acos_gradient_vanishes_on_clamp() {
        let mut tape = Tape::new();
        let x = tape.leaf_scalar(1.0);
        let y = tape.acos_clamped(x, 1e-6).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().data()[0], 0.0);
        assert!(approx(tape.scalar(y), libm::acos(1.0 - 1e-6), 0.0));
    }

    #[test]
    fn min_routes_ties_to_first_argument() {
        let mut tape = Tape::new();
        let a = tape.leaf_scalar(0.5);
        let b = tape.leaf_scalar(0.5);
        let m = tape.min(a, b).unwrap();
        tape.backward(m).unwrap();
        assert_eq!(tape.grad(a).unwrap().data()[0], 1.0);
        assert_eq!(tape.grad(b).unwrap().data()[0], 0.0);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[2, 3]));
        assert!(matches!(tape.matmul(a, b), Err(Error::ShapeMismatch { op: "matmul", .. })));
        let c = tape.leaf(Tensor::zeros(&[3]));
        assert!(matches!(tape.add(a, c), Err(Error::ShapeMismatch { op: "add", .. })));
    }

    #[test]
    fn non_finite_forward_names_the_op() {
        let mut tape = Tape::new();
        let a = tape.leaf_scalar(0.0);
        assert_eq!(tape.ln(a), Err(Error::NonFinite { op: "ln" }));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(a), Err(Error::NotScalar { .. })));
    }

    #[test]
    fn repeated_backward_accumulates_and_reset_is_idempotent() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, -2.0]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        tape.backward(s).unwrap();
        let once = tape.grad(x).unwrap().clone();
        tape.backward(s).unwrap();
        let twice = tape.grad(x).unwrap().clone();
        assert_eq!(twice.data(), &[4.0, -8.0]);
        assert_eq!(once.data(), &[2.0, -4.0]);
        tape.zero_grad();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &once);
    }

    #[test]
    fn concat_along_columns() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap());
        let b = tape.leaf(Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let w = tape.leaf(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let p = tape.mul(c, w).unwrap();
        let s = tape.sum(p).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[1.0, 4.0]);
        assert_eq!(tape.grad(b).unwrap().data(), &[2.0, 3.0, 5.0, 6.0]);
    }
}
