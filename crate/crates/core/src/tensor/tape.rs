//! Operation tape for reverse-mode differentiation.
//!
//! Every op appends a node holding its forward value and the handles of its
//! operands. `backward` walks the nodes in exact reverse order of recording
//! and accumulates gradients additively, so a value used twice receives the
//! sum of both contributions.

use super::{Result, Tensor, TensorError};

/// Stabiliser in `x / (||x|| + eps)`.
pub const L2_EPS: f64 = 1e-8;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    MulRows(Var, Var),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    Softmax(Var),
    L2Normalize(Var),
    Sigmoid(Var),
    Tanh(Var),
    Ln(Var),
    Embedding { table: Var, ids: Vec<usize> },
    Scale(Var, f64),
    Sum(Var),
    Renormalize(Var),
    Transpose(Var),
    Reshape(Var),
    Slice { x: Var, start: usize },
    Row(Var, usize),
    Select(Var, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Single-threaded recording of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar output with respect to every recorded value.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn mismatch(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::ShapeMismatch { op, detail: detail.into() }
}

/// View of a rank-1 or rank-2 operand as (rows, cols).
fn as_matrix(t: &Tensor, left: bool) -> Result<(usize, usize)> {
    match t.shape() {
        [n] if left => Ok((1, *n)),
        [n] => Ok((*n, 1)),
        [r, c] => Ok((*r, *c)),
        s => Err(mismatch("matmul", format!("rank {} operand", s.len()))),
    }
}

fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_data(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

fn softmax_rows(data: &mut [f64], cols: usize) {
    for row in data.chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
}

fn add_into(slot: &mut Option<Tensor>, grad: Tensor) {
    match slot {
        Some(existing) => {
            for (e, g) in existing.data_mut().iter_mut().zip(grad.data()) {
                *e += g;
            }
        }
        None => *slot = Some(grad),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool, name: &'static str) -> Result<Var> {
        value.ensure_finite(name)?;
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Matrix product. Rank-1 operands act as a row vector on the left and
    /// a column vector on the right; the result drops those unit axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = as_matrix(ta, true)?;
        let (k2, n) = as_matrix(tb, false)?;
        if k != k2 {
            return Err(mismatch("matmul", format!("{:?} x {:?}", ta.shape(), tb.shape())));
        }
        let data = gemm(ta.data(), tb.data(), m, k, n);
        let shape = match (ta.rank(), tb.rank()) {
            (2, 2) => vec![m, n],
            (2, 1) => vec![m],
            (1, 2) => vec![n],
            _ => vec![],
        };
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(shape, data)?, Op::MatMul(a, b), needs, "matmul")
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(mismatch(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(shape, data)?, Op::Add(a, b), needs, "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::new(shape, data)?, Op::Mul(a, b), needs, "elementwise_mul")
    }

    /// Multiplies every row of the matrix `a` elementwise by the vector `v`.
    pub fn mul_rows(&mut self, a: Var, v: Var) -> Result<Var> {
        let (ta, tv) = (self.value(a), self.value(v));
        if ta.rank() != 2 || tv.rank() != 1 || ta.shape()[1] != tv.len() {
            return Err(mismatch("mul_rows", format!("{:?} by {:?}", ta.shape(), tv.shape())));
        }
        let cols = tv.len();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x * tv.data()[i % cols])
            .collect();
        let shape = ta.shape().to_vec();
        let needs = self.needs(a) || self.needs(v);
        self.push(Tensor::new(shape, data)?, Op::MulRows(a, v), needs, "mul_rows")
    }

    /// Concatenation along the last axis; leading axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| mismatch("concat", "no operands"))?;
        let lead = self.value(*first).shape()[..self.value(*first).rank().saturating_sub(1)].to_vec();
        let outer: usize = lead.iter().product();
        let mut width = 0;
        for p in parts {
            let t = self.value(*p);
            if t.rank() == 0 || t.shape()[..t.rank() - 1] != lead[..] {
                return Err(mismatch("concat", format!("operand shape {:?}", t.shape())));
            }
            width += t.last_dim();
        }
        let mut data = Vec::with_capacity(outer * width);
        for r in 0..outer {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let mut shape = lead;
        shape.push(width);
        let needs = parts.iter().any(|p| self.needs(*p));
        self.push(Tensor::new(shape, data)?, Op::Concat(parts.to_vec()), needs, "concat")
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let first = rows.first().ok_or_else(|| mismatch("stack", "no operands"))?;
        let width = self.value(*first).len();
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            let t = self.value(*r);
            if t.rank() != 1 || t.len() != width {
                return Err(mismatch("stack", format!("row shape {:?}", t.shape())));
            }
            data.extend_from_slice(t.data());
        }
        let needs = rows.iter().any(|r| self.needs(*r));
        self.push(Tensor::matrix(rows.len(), width, data)?, Op::Stack(rows.to_vec()), needs, "stack")
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() == 0 || t.is_empty() {
            return Err(mismatch("softmax", "needs a non-empty last axis"));
        }
        let cols = t.last_dim();
        let mut out = t.clone();
        softmax_rows(out.data_mut(), cols);
        let needs = self.needs(x);
        self.push(out, Op::Softmax(x), needs, "softmax")
    }

    /// `x / (||x||_2 + eps)` over the last axis.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let cols = t.last_dim();
        let mut out = t.clone();
        for row in out.data_mut().chunks_mut(cols) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in row.iter_mut() {
                *v /= norm + L2_EPS;
            }
        }
        let needs = self.needs(x);
        self.push(out, Op::L2Normalize(x), needs, "l2_normalize")
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op, name: &'static str) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|v| f(*v)).collect();
        let shape = t.shape().to_vec();
        let needs = self.needs(x);
        self.push(Tensor::new(shape, data)?, op, needs, name)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(x), "sigmoid")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.map(x, f64::tanh, Op::Tanh(x), "tanh")
    }

    /// Natural logarithm; non-positive inputs are an error.
    pub fn ln(&mut self, x: Var) -> Result<Var> {
        self.map(x, f64::ln, Op::Ln(x), "ln")
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.map(x, |v| v * factor, Op::Scale(x, factor), "scalar_scale")
    }

    /// Rows `ids` of a `[V, E]` table, as a `[ids.len(), E]` matrix.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(mismatch("embedding_lookup", format!("table shape {:?}", t.shape())));
        }
        let (vocab, width) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * width);
        for &id in ids {
            if id >= vocab {
                return Err(TensorError::IndexOutOfRange { op: "embedding_lookup", index: id, len: vocab });
            }
            data.extend_from_slice(t.row(id));
        }
        let needs = self.needs(table);
        let value = Tensor::matrix(ids.len(), width, data)?;
        self.push(value, Op::Embedding { table, ids: ids.to_vec() }, needs, "embedding_lookup")
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(total), Op::Sum(x), needs, "sum")
    }

    /// `x / sum(x)` for a vector.
    pub fn renormalize(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 1 {
            return Err(mismatch("renormalize", format!("shape {:?}", t.shape())));
        }
        let total: f64 = t.data().iter().sum();
        let data = t.data().iter().map(|v| v / total).collect();
        let needs = self.needs(x);
        self.push(Tensor::vector(data), Op::Renormalize(x), needs, "renormalize")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = match t.shape() {
            [r, c] => (*r, *c),
            s => return Err(mismatch("transpose", format!("shape {:?}", s))),
        };
        let value = Tensor::matrix(cols, rows, transpose_data(t.data(), rows, cols))?;
        let needs = self.needs(x);
        self.push(value, Op::Transpose(x), needs, "transpose")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.len() {
            return Err(mismatch("reshape", format!("{:?} to {:?}", t.shape(), shape)));
        }
        let value = t.clone().reshaped(shape.to_vec());
        let needs = self.needs(x);
        self.push(value, Op::Reshape(x), needs, "reshape")
    }

    /// Entries `[start, start + len)` of a vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 1 || start + len > t.len() {
            return Err(mismatch("slice", format!("[{start}, {}) of {:?}", start + len, t.shape())));
        }
        let value = Tensor::vector(t.data()[start..start + len].to_vec());
        let needs = self.needs(x);
        self.push(value, Op::Slice { x, start }, needs, "slice")
    }

    /// Row `i` of a matrix, as a vector.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 || i >= t.shape()[0] {
            return Err(TensorError::IndexOutOfRange { op: "row", index: i, len: t.shape().first().copied().unwrap_or(0) });
        }
        let value = Tensor::vector(t.row(i).to_vec());
        let needs = self.needs(x);
        self.push(value, Op::Row(x, i), needs, "row")
    }

    /// Entry `i` of a vector, as a scalar.
    pub fn select(&mut self, x: Var, i: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 1 || i >= t.len() {
            return Err(TensorError::IndexOutOfRange { op: "select", index: i, len: t.len() });
        }
        let value = Tensor::scalar(t.data()[i]);
        let needs = self.needs(x);
        self.push(value, Op::Select(x, i), needs, "select")
    }

    /// Gradients of the single-element `output` with respect to every value.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(mismatch("backward", format!("output shape {:?} is not scalar", out.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::filled(out.shape(), 1.0));
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            g.ensure_finite("backward")?;
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn send(&self, grads: &mut [Option<Tensor>], to: Var, grad: Tensor) {
        if self.needs(to) {
            add_into(&mut grads[to.0], grad);
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = as_matrix(ta, true).expect("checked forward");
                let (_, n) = as_matrix(tb, false).expect("checked forward");
                if self.needs(*a) {
                    let bt = transpose_data(tb.data(), k, n);
                    let da = gemm(g.data(), &bt, m, n, k);
                    self.send(grads, *a, Tensor::new(ta.shape().to_vec(), da).expect("shape"));
                }
                if self.needs(*b) {
                    let at = transpose_data(ta.data(), m, k);
                    let db = gemm(&at, g.data(), k, m, n);
                    self.send(grads, *b, Tensor::new(tb.shape().to_vec(), db).expect("shape"));
                }
            }
            Op::Add(a, b) => {
                self.send(grads, *a, g.clone());
                self.send(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let d = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                    self.send(grads, *a, Tensor::new(ta.shape().to_vec(), d).expect("shape"));
                }
                if self.needs(*b) {
                    let d = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    self.send(grads, *b, Tensor::new(tb.shape().to_vec(), d).expect("shape"));
                }
            }
            Op::MulRows(a, v) => {
                let (ta, tv) = (self.value(*a), self.value(*v));
                let cols = tv.len();
                if self.needs(*a) {
                    let d = g.data().iter().enumerate().map(|(i, x)| x * tv.data()[i % cols]).collect();
                    self.send(grads, *a, Tensor::new(ta.shape().to_vec(), d).expect("shape"));
                }
                if self.needs(*v) {
                    let mut d = vec![0.0; cols];
                    for (i, (gv, av)) in g.data().iter().zip(ta.data()).enumerate() {
                        d[i % cols] += gv * av;
                    }
                    self.send(grads, *v, Tensor::vector(d));
                }
            }
            Op::Concat(parts) => {
                let width = y.last_dim();
                let outer = y.len() / width.max(1);
                let mut offset = 0;
                for p in parts {
                    let t = self.value(*p);
                    let w = t.last_dim();
                    if self.needs(*p) {
                        let mut d = Vec::with_capacity(t.len());
                        for r in 0..outer {
                            d.extend_from_slice(&g.data()[r * width + offset..r * width + offset + w]);
                        }
                        self.send(grads, *p, Tensor::new(t.shape().to_vec(), d).expect("shape"));
                    }
                    offset += w;
                }
            }
            Op::Stack(rows) => {
                for (i, r) in rows.iter().enumerate() {
                    if self.needs(*r) {
                        self.send(grads, *r, Tensor::vector(g.row(i).to_vec()));
                    }
                }
            }
            Op::Softmax(x) => {
                let cols = y.last_dim();
                let mut d = vec![0.0; y.len()];
                for ((dr, yr), gr) in d.chunks_mut(cols).zip(y.data().chunks(cols)).zip(g.data().chunks(cols)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, yv), gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                self.send(grads, *x, Tensor::new(y.shape().to_vec(), d).expect("shape"));
            }
            Op::L2Normalize(x) => {
                let tx = self.value(*x);
                let cols = y.last_dim();
                let mut d = vec![0.0; y.len()];
                for ((dr, xr), gr) in d.chunks_mut(cols).zip(tx.data().chunks(cols)).zip(g.data().chunks(cols)) {
                    let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let denom = norm + L2_EPS;
                    let dot: f64 = xr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    let coupling = if norm > 0.0 { dot / (denom * denom * norm) } else { 0.0 };
                    for ((o, xv), gv) in dr.iter_mut().zip(xr).zip(gr) {
                        *o = gv / denom - xv * coupling;
                    }
                }
                self.send(grads, *x, Tensor::new(y.shape().to_vec(), d).expect("shape"));
            }
            Op::Sigmoid(x) => {
                let d = g.data().iter().zip(y.data()).map(|(gv, s)| gv * s * (1.0 - s)).collect();
                self.send(grads, *x, Tensor::new(y.shape().to_vec(), d).expect("shape"));
            }
            Op::Tanh(x) => {
                let d = g.data().iter().zip(y.data()).map(|(gv, t)| gv * (1.0 - t * t)).collect();
                self.send(grads, *x, Tensor::new(y.shape().to_vec(), d).expect("shape"));
            }
            Op::Ln(x) => {
                let tx = self.value(*x);
                let d = g.data().iter().zip(tx.data()).map(|(gv, xv)| gv / xv).collect();
                self.send(grads, *x, Tensor::new(y.shape().to_vec(), d).expect("shape"));
            }
            Op::Embedding { table, ids } => {
                let tt = self.value(*table);
                let width = tt.last_dim();
                let mut d = Tensor::zeros(tt.shape());
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut d.data_mut()[id * width..(id + 1) * width];
                    for (o, gv) in dst.iter_mut().zip(g.row(r)) {
                        *o += gv;
                    }
                }
                self.send(grads, *table, d);
            }
            Op::Scale(x, factor) => {
                let d = g.data().iter().map(|v| v * factor).collect();
                self.send(grads, *x, Tensor::new(y.shape().to_vec(), d).expect("shape"));
            }
            Op::Sum(x) => {
                self.send(grads, *x, Tensor::filled(self.value(*x).shape(), g.item()));
            }
            Op::Renormalize(x) => {
                let total: f64 = self.value(*x).data().iter().sum();
                let dot: f64 = g.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
                let d = g.data().iter().map(|gv| (gv - dot) / total).collect();
                self.send(grads, *x, Tensor::vector(d));
            }
            Op::Transpose(x) => {
                let (rows, cols) = (y.shape()[0], y.shape()[1]);
                let d = transpose_data(g.data(), rows, cols);
                self.send(grads, *x, Tensor::matrix(cols, rows, d).expect("shape"));
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.send(grads, *x, g.clone().reshaped(shape));
            }
            Op::Slice { x, start } => {
                let mut d = Tensor::zeros(self.value(*x).shape());
                d.data_mut()[*start..*start + g.len()].copy_from_slice(g.data());
                self.send(grads, *x, d);
            }
            Op::Row(x, i) => {
                let mut d = Tensor::zeros(self.value(*x).shape());
                let cols = d.last_dim();
                d.data_mut()[i * cols..(i + 1) * cols].copy_from_slice(g.data());
                self.send(grads, *x, d);
            }
            Op::Select(x, i) => {
                let mut d = Tensor::zeros(self.value(*x).shape());
                d.data_mut()[*i] = g.item();
                self.send(grads, *x, d);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(data: &[f64]) -> Tensor {
        Tensor::vector(data.to_vec())
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.leaf(v(&[0.0, 0.0, 0.0]));
        let y = tape.softmax(x).unwrap();
        for p in tape.value(y).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn l2_normalize_pythagorean() {
        let mut tape = Tape::new();
        let x = tape.leaf(v(&[3.0, 4.0]));
        let y = tape.l2_normalize(x).unwrap();
        let out = tape.value(y).data();
        assert!((out[0] - 0.6).abs() < 1e-8 && (out[1] - 0.8).abs() < 1e-8);
    }

    #[test]
    fn l2_normalize_zero_maps_to_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(v(&[0.0, 0.0]));
        let y = tape.l2_normalize(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0]);
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).unwrap().is_finite());
    }

    #[test]
    fn elementwise_mul_example() {
        let mut tape = Tape::new();
        let a = tape.leaf(v(&[1.0, 0.0]));
        let b = tape.leaf(v(&[0.5, 0.7]));
        let c = tape.mul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[0.5, 0.0]);
    }

    #[test]
    fn matmul_shapes() {
        let mut tape = Tape::new();
        let m = tape.leaf(Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let x = tape.leaf(v(&[1.0, 0.0, -1.0]));
        let y = tape.matmul(m, x).unwrap();
        assert_eq!(tape.value(y).data(), &[-2.0, -2.0]);
        let r = tape.leaf(v(&[1.0, 1.0]));
        let z = tape.matmul(r, m).unwrap();
        assert_eq!(tape.value(z).shape(), &[3]);
        assert_eq!(tape.value(z).data(), &[5.0, 7.0, 9.0]);
        assert!(tape.matmul(x, x).is_ok());
        assert!(matches!(tape.matmul(m, m), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn shared_value_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(v(&[2.0]));
        let y = tape.mul(x, x).unwrap();
        let z = tape.add(y, x).unwrap();
        let s = tape.sum(z).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[5.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(v(&[1.0, 2.0]));
        let c = tape.constant(v(&[3.0, 4.0]));
        let y = tape.mul(x, c).unwrap();
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn concat_splits_gradient_without_loss() {
        let mut tape = Tape::new();
        let a = tape.leaf(v(&[1.0, -2.0]));
        let b = tape.leaf(v(&[0.5]));
        let w = tape.constant(v(&[0.3, -1.1, 2.5]));
        let c = tape.concat(&[a, b]).unwrap();
        let p = tape.mul(c, w).unwrap();
        let s = tape.sum(p).unwrap();
        let g = tape.backward(s).unwrap();
        let parent = 0.3f64.powi(2) + 1.1f64.powi(2) + 2.5f64.powi(2);
        let children = g.get(a).unwrap().norm_sq() + g.get(b).unwrap().norm_sq();
        assert!((parent - children).abs() < 1e-12);
    }

    #[test]
    fn ln_of_zero_is_non_finite() {
        let mut tape = Tape::new();
        let x = tape.leaf(v(&[0.0]));
        assert_eq!(tape.ln(x), Err(TensorError::NonFiniteValue { op: "ln" }));
    }

    #[test]
    fn index_errors() {
        let mut tape = Tape::new();
        let t = tape.leaf(Tensor::zeros(&[3, 2]));
        assert!(matches!(tape.embedding(t, &[3]), Err(TensorError::IndexOutOfRange { .. })));
        assert!(tape.row(t, 3).is_err());
        let x = tape.leaf(v(&[1.0]));
        assert!(tape.select(x, 1).is_err());
        assert!(tape.slice(x, 0, 2).is_err());
    }

    #[test]
    fn backward_needs_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(v(&[1.0, 2.0]));
        assert!(tape.backward(x).is_err());
    }
}
