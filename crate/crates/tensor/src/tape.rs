//! Reverse-mode differentiation over a linear record of primitive
//! applications.
//!
//! Every primitive appends one node to the tape. Nodes only ever reference
//! earlier nodes, so replaying the tape backwards visits consumers before
//! producers.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};

use crate::error::{Result, TensorError};
use crate::kernels;
use crate::real::Real;
use crate::rng::Stream;
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive catalog accepted by [`Tape::apply`].
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    MatMul,
    Add,
    Sub,
    Mul,
    Concat { axis: usize },
    Slice { axis: usize, start: usize, end: usize },
    Embedding { indices: Vec<usize> },
    Softmax,
    CausalSoftmax,
    Sigmoid,
    Tanh,
    Gelu,
    LayerNorm { eps: f64 },
    Dropout { rate: f64, seed: u64 },
    Mean,
    Sum,
    Scale(f64),
    Transpose,
    Reshape(Vec<usize>),
    Log { floor: f64 },
}

/// Name-level view of [`Primitive`], used when primitives are selected by
/// name (configuration, test tables).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrimitiveKind {
    MatMul,
    Add,
    Sub,
    Mul,
    Concat,
    Slice,
    Embedding,
    Softmax,
    CausalSoftmax,
    Sigmoid,
    Tanh,
    Gelu,
    LayerNorm,
    Dropout,
    Mean,
    Sum,
    Scale,
    Transpose,
    Reshape,
    Log,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 20] = [
        PrimitiveKind::MatMul,
        PrimitiveKind::Add,
        PrimitiveKind::Sub,
        PrimitiveKind::Mul,
        PrimitiveKind::Concat,
        PrimitiveKind::Slice,
        PrimitiveKind::Embedding,
        PrimitiveKind::Softmax,
        PrimitiveKind::CausalSoftmax,
        PrimitiveKind::Sigmoid,
        PrimitiveKind::Tanh,
        PrimitiveKind::Gelu,
        PrimitiveKind::LayerNorm,
        PrimitiveKind::Dropout,
        PrimitiveKind::Mean,
        PrimitiveKind::Sum,
        PrimitiveKind::Scale,
        PrimitiveKind::Transpose,
        PrimitiveKind::Reshape,
        PrimitiveKind::Log,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveKind::MatMul => "matmul",
            PrimitiveKind::Add => "add",
            PrimitiveKind::Sub => "sub",
            PrimitiveKind::Mul => "mul",
            PrimitiveKind::Concat => "concat",
            PrimitiveKind::Slice => "slice",
            PrimitiveKind::Embedding => "embedding",
            PrimitiveKind::Softmax => "softmax",
            PrimitiveKind::CausalSoftmax => "causal_softmax",
            PrimitiveKind::Sigmoid => "sigmoid",
            PrimitiveKind::Tanh => "tanh",
            PrimitiveKind::Gelu => "gelu",
            PrimitiveKind::LayerNorm => "layer_norm",
            PrimitiveKind::Dropout => "dropout",
            PrimitiveKind::Mean => "mean",
            PrimitiveKind::Sum => "sum",
            PrimitiveKind::Scale => "scale",
            PrimitiveKind::Transpose => "transpose",
            PrimitiveKind::Reshape => "reshape",
            PrimitiveKind::Log => "log",
        }
    }
}

impl fmt::Display for PrimitiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PrimitiveKind {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self> {
        PrimitiveKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| TensorError::UnknownPrimitive(s.to_string()))
    }
}

impl Primitive {
    pub fn kind(&self) -> PrimitiveKind {
        match self {
            Primitive::MatMul => PrimitiveKind::MatMul,
            Primitive::Add => PrimitiveKind::Add,
            Primitive::Sub => PrimitiveKind::Sub,
            Primitive::Mul => PrimitiveKind::Mul,
            Primitive::Concat { .. } => PrimitiveKind::Concat,
            Primitive::Slice { .. } => PrimitiveKind::Slice,
            Primitive::Embedding { .. } => PrimitiveKind::Embedding,
            Primitive::Softmax => PrimitiveKind::Softmax,
            Primitive::CausalSoftmax => PrimitiveKind::CausalSoftmax,
            Primitive::Sigmoid => PrimitiveKind::Sigmoid,
            Primitive::Tanh => PrimitiveKind::Tanh,
            Primitive::Gelu => PrimitiveKind::Gelu,
            Primitive::LayerNorm { .. } => PrimitiveKind::LayerNorm,
            Primitive::Dropout { .. } => PrimitiveKind::Dropout,
            Primitive::Mean => PrimitiveKind::Mean,
            Primitive::Sum => PrimitiveKind::Sum,
            Primitive::Scale(_) => PrimitiveKind::Scale,
            Primitive::Transpose => PrimitiveKind::Transpose,
            Primitive::Reshape(_) => PrimitiveKind::Reshape,
            Primitive::Log { .. } => PrimitiveKind::Log,
        }
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add { lhs: Var, rhs: Var, bias: bool },
    Sub(Var, Var),
    Mul(Var, Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Embedding { table: Var, indices: Vec<usize> },
    Softmax { input: Var },
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    LayerNorm { input: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Dropout { input: Var, mask: Vec<T> },
    Mean(Var),
    Sum(Var),
    Scale(Var, T),
    Transpose(Var),
    Reshape(Var),
    Log { input: Var, floor: T },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradient buffers keyed by node.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

/// Single-threaded recording of primitive applications.
#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn invalid(op: &'static str, reason: impl Into<String>) -> TensorError {
    TensorError::InvalidArgument {
        op,
        reason: reason.into(),
    }
}

/// Splits `shape` around `axis` into (outer, extent, inner) element counts.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if cfg!(debug_assertions) && !value.is_finite() {
            return Err(TensorError::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        // Nothing downstream can need the saved state of a constant subgraph.
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Applies a catalog primitive by description.
    pub fn apply(&mut self, prim: &Primitive, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(invalid(
                    prim.kind().name(),
                    format!("expected {n} inputs, got {}", inputs.len()),
                ))
            }
        };
        match prim {
            Primitive::MatMul => {
                arity(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            Primitive::Add => {
                arity(2)?;
                self.add(inputs[0], inputs[1])
            }
            Primitive::Sub => {
                arity(2)?;
                self.sub(inputs[0], inputs[1])
            }
            Primitive::Mul => {
                arity(2)?;
                self.mul(inputs[0], inputs[1])
            }
            Primitive::Concat { axis } => self.concat(inputs, *axis),
            Primitive::Slice { axis, start, end } => {
                arity(1)?;
                self.slice(inputs[0], *axis, *start, *end)
            }
            Primitive::Embedding { indices } => {
                arity(1)?;
                self.embedding(inputs[0], indices)
            }
            Primitive::Softmax => {
                arity(1)?;
                self.softmax(inputs[0])
            }
            Primitive::CausalSoftmax => {
                arity(1)?;
                self.causal_softmax(inputs[0])
            }
            Primitive::Sigmoid => {
                arity(1)?;
                self.sigmoid(inputs[0])
            }
            Primitive::Tanh => {
                arity(1)?;
                self.tanh(inputs[0])
            }
            Primitive::Gelu => {
                arity(1)?;
                self.gelu(inputs[0])
            }
            Primitive::LayerNorm { eps } => {
                arity(3)?;
                self.layer_norm(inputs[0], inputs[1], inputs[2], *eps)
            }
            Primitive::Dropout { rate, seed } => {
                arity(1)?;
                let mut rng = Stream::seed_from_u64(*seed);
                self.dropout(inputs[0], *rate, &mut rng)
            }
            Primitive::Mean => {
                arity(1)?;
                self.mean(inputs[0])
            }
            Primitive::Sum => {
                arity(1)?;
                self.sum(inputs[0])
            }
            Primitive::Scale(s) => {
                arity(1)?;
                self.scale(inputs[0], *s)
            }
            Primitive::Transpose => {
                arity(1)?;
                self.transpose(inputs[0])
            }
            Primitive::Reshape(shape) => {
                arity(1)?;
                self.reshape(inputs[0], shape.clone())
            }
            Primitive::Log { floor } => {
                arity(1)?;
                self.log(inputs[0], *floor)
            }
        }
    }

    /// `(m×k) · (k×n) → (m×n)`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(mismatch("matmul", av.shape(), bv.shape()));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_acc(av.data(), bv.data(), &mut out, m, k, n);
        let value = Tensor::from_vec([m, n], out);
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    /// Elementwise sum. `b` may also be a bias whose shape equals the trailing
    /// dimensions of `a`; no other broadcasting is supported.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let bias = if av.shape() == bv.shape() {
            false
        } else if bv.rank() < av.rank() && av.shape().ends_with(bv.shape()) {
            true
        } else {
            return Err(mismatch("add", av.shape(), bv.shape()));
        };
        let bd = bv.data();
        let period = bd.len();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bd[i % period])
            .collect();
        let value = Tensor::from_vec(av.shape(), data);
        self.push("add", value, Op::Add { lhs: a, rhs: b, bias }, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch("sub", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x - y).collect();
        let value = Tensor::from_vec(av.shape(), data);
        self.push("sub", value, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch("mul", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::from_vec(av.shape(), data);
        self.push("mul", value, Op::Mul(a, b), &[a, b])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(invalid("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut extent = 0;
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
            extent += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = extent;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let value = Tensor::from_vec(shape, data);
        self.push(
            "concat",
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        )
    }

    /// Keeps indices `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() || start >= end || end > xv.shape()[axis] {
            return Err(invalid(
                "slice",
                format!("range {start}..{end} on axis {axis} of {:?}", xv.shape()),
            ));
        }
        let (outer, extent, inner) = axis_split(xv.shape(), axis);
        let width = (end - start) * inner;
        let mut data = Vec::with_capacity(outer * width);
        for o in 0..outer {
            let base = o * extent * inner + start * inner;
            data.extend_from_slice(&xv.data()[base..base + width]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = end - start;
        let value = Tensor::from_vec(shape, data);
        self.push("slice", value, Op::Slice { input: x, axis, start }, &[x])
    }

    /// Gathers rows of a 2-D table.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.rank() != 2 {
            return Err(invalid("embedding", format!("table must be 2-D, got {:?}", tv.shape())));
        }
        if indices.is_empty() {
            return Err(invalid("embedding", "no indices"));
        }
        let (rows, d) = (tv.shape()[0], tv.shape()[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(invalid("embedding", format!("index {bad} out of range for {rows} rows")));
        }
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(tv.row(i));
        }
        let value = Tensor::from_vec([indices.len(), d], data);
        self.push(
            "embedding",
            value,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
            &[table],
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let data = kernels::softmax_rows(xv.data(), xv.cols(), false);
        let value = Tensor::from_vec(xv.shape(), data);
        self.push("softmax", value, Op::Softmax { input: x }, &[x])
    }

    /// Row softmax of a square score matrix where row `i` only sees
    /// columns `0..=i`.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || xv.shape()[0] != xv.shape()[1] {
            return Err(invalid("causal_softmax", format!("needs a square matrix, got {:?}", xv.shape())));
        }
        let data = kernels::softmax_rows(xv.data(), xv.cols(), true);
        let value = Tensor::from_vec(xv.shape(), data);
        self.push("causal_softmax", value, Op::Softmax { input: x }, &[x])
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::from_vec(xv.shape(), data);
        self.push(name, value, op, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, kernels::sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary("tanh", x, T::tanh, Op::Tanh(x))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary("gelu", x, kernels::gelu, Op::Gelu(x))
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn log(&mut self, x: Var, floor: f64) -> Result<Var> {
        let f = T::of(floor);
        self.unary("log", x, move |v| v.max(f).ln(), Op::Log { input: x, floor: f })
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let k = T::of(s);
        self.unary("scale", x, move |v| v * k, Op::Scale(x, k))
    }

    /// Normalizes over the last axis, then applies `gamma` and `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.cols();
        for p in [gamma, beta] {
            let s = self.shape(p);
            if s != [d] {
                return Err(mismatch("layer_norm", xv.shape(), s));
            }
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xv.rows();
        let eps = T::of(eps);
        let n = T::of(d as f64);
        let mut xhat = vec![T::zero(); xv.numel()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.numel()];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::from_vec(xv.shape(), out);
        self.push(
            "layer_norm",
            value,
            Op::LayerNorm {
                input: x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        )
    }

    /// Inverted dropout: kept entries are scaled by `1/(1-rate)`.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(invalid("dropout", format!("rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            let value = self.value(x).clone();
            let mask = vec![T::one(); value.numel()];
            return self.push("dropout", value, Op::Dropout { input: x, mask }, &[x]);
        }
        let xv = self.value(x);
        let keep = T::of(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..xv.numel())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::from_vec(xv.shape(), data);
        self.push("dropout", value, Op::Dropout { input: x, mask }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.data().iter().copied().sum::<T>() / T::of(xv.numel() as f64);
        self.push("mean", Tensor::scalar(s), Op::Mean(x), &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(invalid("transpose", format!("needs a 2-D tensor, got {:?}", xv.shape())));
        }
        let (r, c) = (xv.shape()[0], xv.shape()[1]);
        let value = Tensor::from_vec([c, r], kernels::transpose(xv.data(), r, c));
        self.push("transpose", value, Op::Transpose(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        self.push("reshape", value, Op::Reshape(x), &[x])
    }

    /// Back-propagates from a scalar `loss`. Every node that requires a
    /// gradient receives a buffer; nodes the loss does not depend on get
    /// zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| {
                if !node.requires_grad {
                    return None;
                }
                Some(match g {
                    Some(g) => Tensor::from_vec(node.value.shape(), g),
                    None => Tensor::zeros(node.value.shape()),
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], var: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        let buf = grads[var.0].get_or_insert_with(|| vec![T::zero(); self.nodes[var.0].value.numel()]);
        f(buf);
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                self.accumulate(grads, *a, |ga| kernels::matmul_nt_acc(g, bv.data(), ga, m, k, n));
                self.accumulate(grads, *b, |gb| kernels::matmul_tn_acc(av.data(), g, gb, m, k, n));
            }
            Op::Add { lhs, rhs, bias } => {
                self.accumulate(grads, *lhs, |ga| add_into(ga, g));
                self.accumulate(grads, *rhs, |gb| {
                    if *bias {
                        let p = gb.len();
                        for (i, &v) in g.iter().enumerate() {
                            gb[i % p] += v;
                        }
                    } else {
                        add_into(gb, g);
                    }
                });
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                self.accumulate(grads, *b, |gb| {
                    for (o, &v) in gb.iter_mut().zip(g) {
                        *o -= v;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * bv[i];
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for i in 0..gb.len() {
                        gb[i] += g[i] * av[i];
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let (outer, _, inner) = axis_split(shape, *axis);
                let row = shape[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let block = self.shape(v)[*axis] * inner;
                    self.accumulate(grads, v, |gv| {
                        for o in 0..outer {
                            add_into(
                                &mut gv[o * block..(o + 1) * block],
                                &g[o * row + offset..o * row + offset + block],
                            );
                        }
                    });
                    offset += block;
                }
            }
            Op::Slice { input, axis, start } => {
                let (outer, extent, inner) = axis_split(self.shape(*input), *axis);
                let width = node.value.shape()[*axis] * inner;
                self.accumulate(grads, *input, |gx| {
                    for o in 0..outer {
                        let base = o * extent * inner + start * inner;
                        add_into(&mut gx[base..base + width], &g[o * width..(o + 1) * width]);
                    }
                });
            }
            Op::Embedding { table, indices } => {
                let d = self.value(*table).cols();
                self.accumulate(grads, *table, |gt| {
                    for (r, &i) in indices.iter().enumerate() {
                        add_into(&mut gt[i * d..(i + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::Softmax { input } => {
                let y = node.value.data();
                let c = node.value.cols();
                self.accumulate(grads, *input, |gx| {
                    for r in 0..y.len() / c {
                        let (yr, gr) = (&y[r * c..(r + 1) * c], &g[r * c..(r + 1) * c]);
                        let dotp = kernels::dot(yr, gr);
                        for j in 0..c {
                            gx[r * c + j] += yr[j] * (gr[j] - dotp);
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                self.accumulate(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        gx[i] += g[i] * y[i] * (T::one() - y[i]);
                    }
                });
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                self.accumulate(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        gx[i] += g[i] * (T::one() - y[i] * y[i]);
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        gx[i] += g[i] * kernels::gelu_grad(xv[i]);
                    }
                });
            }
            Op::Log { input, floor } => {
                let xv = self.value(*input).data();
                self.accumulate(grads, *input, |gx| {
                    for i in 0..gx.len() {
                        if xv[i] > *floor {
                            gx[i] += g[i] / xv[i];
                        }
                    }
                });
            }
            Op::Scale(x, k) => {
                self.accumulate(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        gx[i] += g[i] * *k;
                    }
                });
            }
            Op::LayerNorm {
                input,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = node.value.cols();
                let rows = rstd.len();
                let gv = self.value(*gamma).data();
                self.accumulate(grads, *gamma, |gg| {
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                });
                self.accumulate(grads, *beta, |gb| {
                    for r in 0..rows {
                        add_into(gb, &g[r * d..(r + 1) * d]);
                    }
                });
                let n = T::of(d as f64);
                self.accumulate(grads, *input, |gx| {
                    for r in 0..rows {
                        let xr = &xhat[r * d..(r + 1) * d];
                        let dh: Vec<T> = (0..d).map(|j| g[r * d + j] * gv[j]).collect();
                        let mean_dh = dh.iter().copied().sum::<T>() / n;
                        let mean_dh_x = kernels::dot(&dh, xr) / n;
                        for j in 0..d {
                            gx[r * d + j] += rstd[r] * (dh[j] - mean_dh - xr[j] * mean_dh_x);
                        }
                    }
                });
            }
            Op::Dropout { input, mask } => {
                self.accumulate(grads, *input, |gx| {
                    for i in 0..gx.len() {
                        gx[i] += g[i] * mask[i];
                    }
                });
            }
            Op::Sum(x) => {
                self.accumulate(grads, *x, |gx| {
                    for v in gx.iter_mut() {
                        *v += g[0];
                    }
                });
            }
            Op::Mean(x) => {
                let n = T::of(self.value(*x).numel() as f64);
                self.accumulate(grads, *x, |gx| {
                    for v in gx.iter_mut() {
                        *v += g[0] / n;
                    }
                });
            }
            Op::Transpose(x) => {
                let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                let gt = kernels::transpose(g, r, c);
                self.accumulate(grads, *x, |gx| add_into(gx, &gt));
            }
            Op::Reshape(x) => {
                self.accumulate(grads, *x, |gx| add_into(gx, g));
            }
        }
    }
}

#[inline]
fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
