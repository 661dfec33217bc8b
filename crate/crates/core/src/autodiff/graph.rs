use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Exp,
    Log,
    Abs,
    Relu,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
}

/// Forward operation that produced a node.
#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    /// Gradient barrier: the value is copied, nothing flows back to the input.
    Detach(Var),
    Unary(UnaryOp, Var),
    Binary(BinaryOp, Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    MatMul(Var, Var),
    /// `[rows, n] + [n]`, broadcasting the vector over rows.
    AddRow(Var, Var),
    Reduce(ReduceOp, Var, Option<usize>),
    /// Log-softmax along the last axis.
    LogSoftmax(Var),
    /// Picks `input[r, idx[r]]` for each row (or `input[idx[0]]` for a vector).
    Gather(Var, Vec<usize>),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only tape of tensor operations with reverse-mode differentiation.
///
/// Nodes are stored in creation order, which is a topological order, so
/// backward is a single reverse sweep. The tape is rebuilt for every forward
/// pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf; receives a gradient on [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn op(&self, v: Var) -> &Op {
        &self.nodes[v.0].op
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn is_barrier(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Detach(_))
    }

    /// Gradient deposited by the last call to [`Graph::backward`], if the
    /// node was reachable and requires a gradient.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient or zeros shaped like the node.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()))
    }

    pub fn detach(&mut self, a: Var) -> Var {
        let value = self.value(a).clone();
        self.push(value, Op::Detach(a), false)
    }

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Result<Var> {
        let x = self.value(a);
        let value = match op {
            UnaryOp::Neg => x.map(|v| -v),
            UnaryOp::Exp => x.map(f64::exp),
            UnaryOp::Log => {
                if let Some(bad) = x.data().iter().find(|&&v| v <= 0.0) {
                    return Err(Error::Domain {
                        op: "log",
                        detail: format!("non-positive input {bad}"),
                    });
                }
                x.map(f64::ln)
            }
            UnaryOp::Abs => x.map(f64::abs),
            UnaryOp::Relu => x.map(|v| v.max(0.0)),
            UnaryOp::Square => x.map(|v| v * v),
        };
        let rg = self.requires_grad(a);
        Ok(self.push(value, Op::Unary(op, a), rg))
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() && x.numel() != 1 && y.numel() != 1 {
            return Err(Error::ShapeMismatch {
                op: binary_name(op),
                left: x.shape().to_vec(),
                right: y.shape().to_vec(),
            });
        }
        if op == BinaryOp::Div && y.data().contains(&0.0) {
            return Err(Error::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        let shape = if x.shape() == y.shape() || y.numel() == 1 && x.numel() != 1 {
            x.shape().to_vec()
        } else if x.numel() == 1 && y.numel() != 1 {
            y.shape().to_vec()
        } else {
            // both single-element with differing shapes
            x.shape().to_vec()
        };
        let n = shape.iter().product::<usize>();
        let (xd, yd) = (x.data(), y.data());
        let xs = |i: usize| if xd.len() == 1 { xd[0] } else { xd[i] };
        let ys = |i: usize| if yd.len() == 1 { yd[0] } else { yd[i] };
        let f: fn(f64, f64) -> f64 = match op {
            BinaryOp::Add => |p, q| p + q,
            BinaryOp::Sub => |p, q| p - q,
            BinaryOp::Mul => |p, q| p * q,
            BinaryOp::Div => |p, q| p / q,
        };
        let data = (0..n).map(|i| f(xs(i), ys(i))).collect();
        let value = Tensor::new(shape, data)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(value, Op::Binary(op, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Neg, a).expect("neg is total")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Exp, a).expect("exp is total")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, a)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Abs, a).expect("abs is total")
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Relu, a).expect("relu is total")
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Square, a).expect("square is total")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|v| v * factor);
        let rg = self.requires_grad(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Var {
        let value = self.value(a).map(|v| v + offset);
        let rg = self.requires_grad(a);
        self.push(value, Op::AddScalar(a, offset), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.ndim() != 2 || y.ndim() != 2 || x.shape()[1] != y.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: x.shape().to_vec(),
                right: y.shape().to_vec(),
            });
        }
        let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
        let out = matmul_raw(x.data(), y.data(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if x.ndim() != 2 || r.ndim() != 1 || x.shape()[1] != r.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                left: x.shape().to_vec(),
                right: r.shape().to_vec(),
            });
        }
        let cols = r.numel();
        let rd = r.data();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + rd[i % cols])
            .collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.requires_grad(a) || self.requires_grad(row);
        Ok(self.push(value, Op::AddRow(a, row), rg))
    }

    pub fn reduce(&mut self, op: ReduceOp, a: Var, axis: Option<usize>) -> Result<Var> {
        let x = self.value(a);
        let value = match axis {
            None => {
                let s: f64 = x.data().iter().sum();
                let v = match op {
                    ReduceOp::Sum => s,
                    ReduceOp::Mean => s / x.numel() as f64,
                };
                Tensor::scalar(v)
            }
            Some(ax) => {
                if ax >= x.ndim() {
                    return Err(Error::InvalidAxis {
                        axis: ax,
                        shape: x.shape().to_vec(),
                    });
                }
                let (outer, len, inner) = axis_split(x.shape(), ax);
                let mut out = vec![0.0; outer * inner];
                let d = x.data();
                for o in 0..outer {
                    for j in 0..len {
                        let base = (o * len + j) * inner;
                        for i in 0..inner {
                            out[o * inner + i] += d[base + i];
                        }
                    }
                }
                if op == ReduceOp::Mean {
                    out.iter_mut().for_each(|v| *v /= len as f64);
                }
                let mut shape = x.shape().to_vec();
                shape.remove(ax);
                Tensor::new(shape, out)?
            }
        };
        let rg = self.requires_grad(a);
        Ok(self.push(value, Op::Reduce(op, a, axis), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.reduce(ReduceOp::Sum, a, None).expect("full reduction")
    }

    pub fn mean(&mut self, a: Var) -> Var {
        self.reduce(ReduceOp::Mean, a, None).expect("full reduction")
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.ndim() == 0 || x.numel() == 0 {
            return Err(Error::InvalidTensor("log_softmax of empty tensor".into()));
        }
        let cols = *x.shape().last().unwrap();
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(cols) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.requires_grad(a);
        Ok(self.push(value, Op::LogSoftmax(a), rg))
    }

    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let (rows, cols) = match x.shape() {
            [c] => (1, *c),
            [r, c] => (*r, *c),
            s => {
                return Err(Error::InvalidTensor(format!(
                    "gather expects 1-D or 2-D input, got {s:?}"
                )))
            }
        };
        if indices.len() != rows {
            return Err(Error::ShapeMismatch {
                op: "gather",
                left: x.shape().to_vec(),
                right: vec![indices.len()],
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= cols) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: cols,
            });
        }
        let data: Vec<f64> = indices
            .iter()
            .enumerate()
            .map(|(r, &c)| x.data()[r * cols + c])
            .collect();
        let value = if x.ndim() == 1 {
            Tensor::scalar(data[0])
        } else {
            Tensor::vector(data)
        };
        let rg = self.requires_grad(a);
        Ok(self.push(value, Op::Gather(a, indices.to_vec()), rg))
    }

    /// Reverse sweep from a scalar `loss`. Previous gradients are discarded;
    /// within one sweep, contributions from multiple uses of a node add up.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if self.requires_grad(loss) {
            grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        }
        for i in (0..=loss.0).rev() {
            let Some(upstream) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &upstream, &mut grads);
            grads[i] = Some(upstream);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, up: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let u = up.data();
        match &node.op {
            Op::Leaf | Op::Detach(_) => {}
            Op::Unary(op, a) => {
                let x = self.value(*a).data();
                let y = node.value.data();
                let g: Vec<f64> = match op {
                    UnaryOp::Neg => u.iter().map(|v| -v).collect(),
                    UnaryOp::Exp => u.iter().zip(y).map(|(g, e)| g * e).collect(),
                    UnaryOp::Log => u.iter().zip(x).map(|(g, v)| g / v).collect(),
                    // subgradient at 0 is 0
                    UnaryOp::Abs => u.iter().zip(x).map(|(g, v)| g * sign(*v)).collect(),
                    UnaryOp::Relu => u
                        .iter()
                        .zip(x)
                        .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                        .collect(),
                    UnaryOp::Square => u.iter().zip(x).map(|(g, v)| 2.0 * g * v).collect(),
                };
                self.accumulate(*a, g, grads);
            }
            Op::Binary(op, a, b) => {
                let x = self.value(*a).data();
                let y = self.value(*b).data();
                let xs = |k: usize| if x.len() == 1 { x[0] } else { x[k] };
                let ys = |k: usize| if y.len() == 1 { y[0] } else { y[k] };
                let n = u.len();
                let (ga, gb): (Vec<f64>, Vec<f64>) = match op {
                    BinaryOp::Add => (u.to_vec(), u.to_vec()),
                    BinaryOp::Sub => (u.to_vec(), u.iter().map(|v| -v).collect()),
                    BinaryOp::Mul => (
                        (0..n).map(|k| u[k] * ys(k)).collect(),
                        (0..n).map(|k| u[k] * xs(k)).collect(),
                    ),
                    BinaryOp::Div => (
                        (0..n).map(|k| u[k] / ys(k)).collect(),
                        (0..n).map(|k| -u[k] * xs(k) / (ys(k) * ys(k))).collect(),
                    ),
                };
                let ga = if x.len() == 1 && n != 1 {
                    vec![ga.iter().sum()]
                } else {
                    ga
                };
                let gb = if y.len() == 1 && n != 1 {
                    vec![gb.iter().sum()]
                } else {
                    gb
                };
                self.accumulate(*a, ga, grads);
                self.accumulate(*b, gb, grads);
            }
            Op::Scale(a, f) => self.accumulate(*a, u.iter().map(|v| v * f).collect(), grads),
            Op::AddScalar(a, _) => self.accumulate(*a, u.to_vec(), grads),
            Op::MatMul(a, b) => {
                let x = self.value(*a);
                let y = self.value(*b);
                let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
                if self.requires_grad(*a) {
                    // upstream [m,n] · yᵀ [n,k]
                    let mut ga = vec![0.0; m * k];
                    let yd = y.data();
                    for r in 0..m {
                        for j in 0..n {
                            let g = u[r * n + j];
                            if g == 0.0 {
                                continue;
                            }
                            for c in 0..k {
                                ga[r * k + c] += g * yd[c * n + j];
                            }
                        }
                    }
                    self.accumulate(*a, ga, grads);
                }
                if self.requires_grad(*b) {
                    // xᵀ [k,m] · upstream [m,n]
                    let mut gb = vec![0.0; k * n];
                    let xd = x.data();
                    for r in 0..m {
                        for c in 0..k {
                            let xv = xd[r * k + c];
                            if xv == 0.0 {
                                continue;
                            }
                            let dst = &mut gb[c * n..(c + 1) * n];
                            let src = &u[r * n..(r + 1) * n];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += xv * s;
                            }
                        }
                    }
                    self.accumulate(*b, gb, grads);
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(*a, u.to_vec(), grads);
                if self.requires_grad(*row) {
                    let cols = self.value(*row).numel();
                    let mut g = vec![0.0; cols];
                    for (k, v) in u.iter().enumerate() {
                        g[k % cols] += v;
                    }
                    self.accumulate(*row, g, grads);
                }
            }
            Op::Reduce(op, a, axis) => {
                let x = self.value(*a);
                let g = match axis {
                    None => {
                        let s = match op {
                            ReduceOp::Sum => u[0],
                            ReduceOp::Mean => u[0] / x.numel() as f64,
                        };
                        vec![s; x.numel()]
                    }
                    Some(ax) => {
                        let (outer, len, inner) = axis_split(x.shape(), *ax);
                        let div = match op {
                            ReduceOp::Sum => 1.0,
                            ReduceOp::Mean => len as f64,
                        };
                        let mut g = vec![0.0; x.numel()];
                        for o in 0..outer {
                            for j in 0..len {
                                for t in 0..inner {
                                    g[(o * len + j) * inner + t] = u[o * inner + t] / div;
                                }
                            }
                        }
                        g
                    }
                };
                self.accumulate(*a, g, grads);
            }
            Op::LogSoftmax(a) => {
                let y = node.value.data();
                let cols = *node.value.shape().last().unwrap();
                let mut g = vec![0.0; y.len()];
                for ((gr, yr), ur) in g
                    .chunks_mut(cols)
                    .zip(y.chunks(cols))
                    .zip(u.chunks(cols))
                {
                    let total: f64 = ur.iter().sum();
                    for c in 0..cols {
                        gr[c] = ur[c] - yr[c].exp() * total;
                    }
                }
                self.accumulate(*a, g, grads);
            }
            Op::Gather(a, idx) => {
                let x = self.value(*a);
                let cols = *x.shape().last().unwrap();
                let mut g = vec![0.0; x.numel()];
                for (r, &c) in idx.iter().enumerate() {
                    g[r * cols + c] += u[r];
                }
                self.accumulate(*a, g, grads);
            }
        }
    }

    fn accumulate(&self, target: Var, g: Vec<f64>, grads: &mut [Option<Tensor>]) {
        if !self.requires_grad(target) {
            return;
        }
        match &mut grads[target.0] {
            Some(existing) => existing
                .data_mut()
                .iter_mut()
                .zip(g)
                .for_each(|(e, v)| *e += v),
            slot @ None => {
                let shape = self.value(target).shape().to_vec();
                *slot = Some(Tensor::new(shape, g).expect("gradient shape matches value"));
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn binary_name(op: BinaryOp) -> &'static str {
    match op {
        BinaryOp::Add => "add",
        BinaryOp::Sub => "sub",
        BinaryOp::Mul => "mul",
        BinaryOp::Div => "div",
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn matmul_raw(x: &[f64], y: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for r in 0..m {
        let dst = &mut out[r * n..(r + 1) * n];
        for c in 0..k {
            let xv = x[r * k + c];
            if xv == 0.0 {
                continue;
            }
            for (d, yv) in dst.iter_mut().zip(&y[c * n..(c + 1) * n]) {
                *d += xv * yv;
            }
        }
    }
    out
}
