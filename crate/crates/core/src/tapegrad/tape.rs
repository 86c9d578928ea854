use std::sync::Arc;

use crate::scalar::Scalar;

use super::special;
use super::{TapeError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Exp,
    Log,
    Tanh,
    LogGamma,
    Digamma,
}

/// GAT convention.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu(_) => "leaky_relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Exp => "exp",
            Activation::Log => "log",
            Activation::Tanh => "tanh",
            Activation::LogGamma => "log_gamma",
            Activation::Digamma => "digamma",
        }
    }

    fn check_domain<S: Scalar>(self, x: &Tensor<S>) -> Result<(), TapeError> {
        let needs_positive = matches!(
            self,
            Activation::Log | Activation::LogGamma | Activation::Digamma
        );
        if needs_positive {
            if let Some(bad) = x.data().iter().find(|&&v| !(v > S::zero())) {
                return Err(TapeError::Domain {
                    op: self.name(),
                    detail: format!("requires strictly positive input, got {bad}"),
                });
            }
        }
        Ok(())
    }

    fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Relu => x.max(S::zero()),
            Activation::LeakyRelu(slope) => {
                if x > S::zero() {
                    x
                } else {
                    x * S::lit(slope)
                }
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Exp => x.exp(),
            Activation::Log => x.ln(),
            Activation::Tanh => x.tanh(),
            Activation::LogGamma => special::log_gamma_unchecked(x),
            Activation::Digamma => special::digamma_unchecked(x),
        }
    }

    /// Derivative given input `x` and output `y`. At exactly 0 the rectifiers
    /// take their left derivative.
    fn derivative<S: Scalar>(self, x: S, y: S) -> S {
        match self {
            Activation::Relu => {
                if x > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::LeakyRelu(slope) => {
                if x > S::zero() {
                    S::one()
                } else {
                    S::lit(slope)
                }
            }
            Activation::Sigmoid => y * (S::one() - y),
            Activation::Exp => y,
            Activation::Log => S::one() / x,
            Activation::Tanh => S::one() - y * y,
            Activation::LogGamma => special::digamma_unchecked(x),
            Activation::Digamma => special::trigamma_unchecked(x),
        }
    }
}

pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Backward rule for [`Tape::custom`]: receives the inputs, the output and
/// the output gradient; returns one gradient per input.
pub type CustomBackward<S> =
    Arc<dyn Fn(&[&Tensor<S>], &Tensor<S>, &Tensor<S>) -> Vec<Tensor<S>> + Send + Sync>;

#[derive(Clone)]
enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    OuterAdd(Var, Var),
    Scale(Var, S),
    AddScalar(Var),
    Unary(Var, Activation),
    RowSoftmax(Var),
    SumPool(Var),
    Sum(Var),
    Transpose(Var),
    SliceRows(Var, usize),
    ConcatCols(Var, Var),
    ScatterSymmetric(Var, Arc<Vec<(usize, usize)>>),
    NormalizeAdjacency(Var, Vec<S>),
    Custom(&'static str, Vec<Var>, CustomBackward<S>),
}

impl<S> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::OuterAdd(..) => "outer_add",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Unary(_, act) => act.name(),
            Op::RowSoftmax(..) => "row_softmax",
            Op::SumPool(..) => "sum_pool",
            Op::Sum(..) => "sum",
            Op::Transpose(..) => "transpose",
            Op::SliceRows(..) => "slice_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::ScatterSymmetric(..) => "scatter_symmetric",
            Op::NormalizeAdjacency(..) => "normalize_adjacency",
            Op::Custom(name, ..) => name,
        }
    }
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
}

/// Define-by-run recording of tensor operations.
///
/// Every op appends a node whose inputs already exist, so node order is a
/// topological order and backward is a single reverse sweep.
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
    shapes: Vec<Vec<usize>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient with respect to `var`; zeros when the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor<S> {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let shape = &self.shapes[var.0];
                Tensor::new(shape.clone(), vec![S::zero(); shape.iter().product()])
                    .expect("shape product matches")
            }
        }
    }

    pub fn is_reachable(&self, var: Var) -> bool {
        self.grads[var.0].is_some()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<S> {
        &self.nodes[var.0].value
    }

    pub fn op_name(&self, var: Var) -> &'static str {
        self.nodes[var.0].op.name()
    }

    /// Records an input tensor. Gradients are tracked if the tensor was
    /// created with [`Tensor::with_grad`].
    pub fn leaf(&mut self, value: Tensor<S>) -> Var {
        let needs_grad = value.requires_grad();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value.with_grad())
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        let mut value = value;
        if value.requires_grad() {
            value = Tensor::new(value.shape().to_vec(), value.into_data()).expect("valid shape");
        }
        self.leaf(value)
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, inputs: &[Var]) -> Result<Var, TapeError> {
        if cfg!(debug_assertions) && !value.is_finite() {
            return Err(TapeError::NonFinite { op: op.name() });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TapeError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(TapeError::Dimension {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(value, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a, b), &[a, b])
    }

    /// Adds a `[1, d]` row to every row of an `[n, d]` tensor (bias add).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TapeError> {
        let (n, d) = self.value(a).dims()?;
        let (r, d2) = self.value(row).dims()?;
        if r != 1 || d != d2 {
            return Err(TapeError::Dimension {
                op: "add_row",
                left: vec![n, d],
                right: vec![r, d2],
            });
        }
        let rv = self.value(row).data().to_vec();
        let mut value = self.value(a).clone();
        for chunk in value.data_mut().chunks_mut(d) {
            for (x, &b) in chunk.iter_mut().zip(&rv) {
                *x = *x + b;
            }
        }
        self.push(value, Op::AddRow(a, row), &[a, row])
    }

    /// `out[i][j] = col[i] + row[j]` for a `[n, 1]` column and `[1, m]` row.
    pub fn outer_add(&mut self, col: Var, row: Var) -> Result<Var, TapeError> {
        let (n, c1) = self.value(col).dims()?;
        let (r1, m) = self.value(row).dims()?;
        if c1 != 1 || r1 != 1 {
            return Err(TapeError::Dimension {
                op: "outer_add",
                left: vec![n, c1],
                right: vec![r1, m],
            });
        }
        let cv = self.value(col).data();
        let rv = self.value(row).data();
        let mut data = Vec::with_capacity(n * m);
        for &c in cv {
            data.extend(rv.iter().map(|&r| c + r));
        }
        let value = Tensor::matrix(n, m, data)?;
        self.push(value, Op::OuterAdd(col, row), &[col, row])
    }

    pub fn scale(&mut self, a: Var, factor: S) -> Result<Var, TapeError> {
        let value = self.value(a).map(|x| x * factor);
        self.push(value, Op::Scale(a, factor), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, offset: S) -> Result<Var, TapeError> {
        let value = self.value(a).map(|x| x + offset);
        self.push(value, Op::AddScalar(a), &[a])
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Result<Var, TapeError> {
        kind.check_domain(self.value(a))?;
        let value = self.value(a).map(|x| kind.apply(x));
        self.push(value, Op::Unary(a, kind), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TapeError> {
        self.activation(a, Activation::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TapeError> {
        self.activation(a, Activation::Sigmoid)
    }

    /// Softmax over each row; entries where `mask` is false are exactly zero.
    pub fn row_softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var, TapeError> {
        let (n, m) = self.value(a).dims()?;
        if let Some(mask) = mask {
            if mask.len() != n * m {
                return Err(TapeError::Dimension {
                    op: "row_softmax",
                    left: vec![n, m],
                    right: vec![mask.len()],
                });
            }
        }
        let x = self.value(a).data();
        let mut out = vec![S::zero(); n * m];
        for i in 0..n {
            let keep = |j: usize| mask.is_none_or(|mk| mk[i * m + j]);
            let row = &x[i * m..(i + 1) * m];
            let max = (0..m)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(None, |acc: Option<S>, v| Some(acc.map_or(v, |a| a.max(v))))
                .ok_or(TapeError::DegenerateRow { row: i })?;
            let mut total = S::zero();
            for j in (0..m).filter(|&j| keep(j)) {
                let e = (row[j] - max).exp();
                out[i * m + j] = e;
                total = total + e;
            }
            for j in (0..m).filter(|&j| keep(j)) {
                out[i * m + j] = out[i * m + j] / total;
            }
        }
        let value = Tensor::matrix(n, m, out)?;
        self.push(value, Op::RowSoftmax(a), &[a])
    }

    /// Column sums of an `[n, d]` tensor: `[1, d]`.
    pub fn sum_pool(&mut self, a: Var) -> Result<Var, TapeError> {
        let (n, d) = self.value(a).dims()?;
        if n == 0 {
            return Err(TapeError::Dimension {
                op: "sum_pool",
                left: vec![n, d],
                right: vec![],
            });
        }
        let mut out = vec![S::zero(); d];
        for chunk in self.value(a).data().chunks(d) {
            for (o, &x) in out.iter_mut().zip(chunk) {
                *o = *o + x;
            }
        }
        self.push(Tensor::row(out), Op::SumPool(a), &[a])
    }

    /// Sum of all entries as a `[1, 1]` scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var, TapeError> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TapeError> {
        self.value(a).dims()?;
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a), &[a])
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TapeError> {
        let (n, d) = self.value(a).dims()?;
        if start + len > n {
            return Err(TapeError::Dimension {
                op: "slice_rows",
                left: vec![n, d],
                right: vec![start, len],
            });
        }
        let data = self.value(a).data()[start * d..(start + len) * d].to_vec();
        let value = Tensor::matrix(len, d, data)?;
        self.push(value, Op::SliceRows(a, start), &[a])
    }

    /// `[a | b]` for matrices with the same row count.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let (n, da) = self.value(a).dims()?;
        let (nb, db) = self.value(b).dims()?;
        if n != nb {
            return Err(TapeError::Dimension {
                op: "concat_cols",
                left: vec![n, da],
                right: vec![nb, db],
            });
        }
        let mut data = Vec::with_capacity(n * (da + db));
        for i in 0..n {
            data.extend_from_slice(&self.value(a).data()[i * da..(i + 1) * da]);
            data.extend_from_slice(&self.value(b).data()[i * db..(i + 1) * db]);
        }
        let value = Tensor::matrix(n, da + db, data)?;
        self.push(value, Op::ConcatCols(a, b), &[a, b])
    }

    /// Places `values[e]` (an `[E, 1]` column) at both `(i, j)` and `(j, i)` of
    /// an otherwise zero `n × n` matrix, for each `pairs[e] = (i, j)`, `i ≠ j`.
    pub fn scatter_symmetric(
        &mut self,
        values: Var,
        pairs: Arc<Vec<(usize, usize)>>,
        n: usize,
    ) -> Result<Var, TapeError> {
        let (e, c) = self.value(values).dims()?;
        if c != 1 || e != pairs.len() {
            return Err(TapeError::Dimension {
                op: "scatter_symmetric",
                left: vec![e, c],
                right: vec![pairs.len(), 1],
            });
        }
        let mut out = Tensor::zeros(n, n);
        for (idx, &(i, j)) in pairs.iter().enumerate() {
            if i >= n || j >= n || i == j {
                return Err(TapeError::Domain {
                    op: "scatter_symmetric",
                    detail: format!("invalid pair ({i}, {j}) for n = {n}"),
                });
            }
            let v = self.value(values).data()[idx];
            out.set(i, j, v);
            out.set(j, i, v);
        }
        self.push(out, Op::ScatterSymmetric(values, pairs), &[values])
    }

    /// `D̂^{-1/2} (A + I) D̂^{-1/2}` with `D̂` the row sums of `A + I`.
    pub fn normalize_adjacency(&mut self, a: Var) -> Result<Var, TapeError> {
        let (value, inv_sqrt) = normalized_with_scaling(self.value(a))?;
        self.push(value, Op::NormalizeAdjacency(a, inv_sqrt), &[a])
    }

    /// Records an op with a caller-supplied backward rule.
    pub fn custom(
        &mut self,
        name: &'static str,
        inputs: &[Var],
        value: Tensor<S>,
        backward: CustomBackward<S>,
    ) -> Result<Var, TapeError> {
        self.push(value, Op::Custom(name, inputs.to_vec(), backward), inputs)
    }

    /// Reverse sweep from a `[1, 1]` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>, TapeError> {
        let shape = self.value(loss).shape();
        if shape.iter().product::<usize>() != 1 {
            return Err(TapeError::NonScalarLoss {
                shape: shape.to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        let seed = Tensor::new(shape.to_vec(), vec![S::one()])?;
        grads[loss.0] = Some(seed);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        // Only grads of nodes that need them are meaningful.
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.needs_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn propagate(
        &self,
        node: &Node<S>,
        g: &Tensor<S>,
        grads: &mut [Option<Tensor<S>>],
    ) -> Result<(), TapeError> {
        let mut acc = |var: Var, delta: Tensor<S>| {
            if !self.nodes[var.0].needs_grad {
                return;
            }
            match &mut grads[var.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    acc(*a, g.matmul(&val(*b).transpose())?);
                }
                if self.nodes[b.0].needs_grad {
                    acc(*b, val(*a).transpose().matmul(g)?);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(val(*b), |x, y| x * y));
                acc(*b, g.zip_map(val(*a), |x, y| x * y));
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                let d = g.cols();
                let mut col_sums = vec![S::zero(); d];
                for chunk in g.data().chunks(d) {
                    for (o, &x) in col_sums.iter_mut().zip(chunk) {
                        *o = *o + x;
                    }
                }
                acc(*row, Tensor::row(col_sums));
            }
            Op::OuterAdd(col, row) => {
                let (n, m) = g.dims()?;
                let mut dc = vec![S::zero(); n];
                let mut dr = vec![S::zero(); m];
                for i in 0..n {
                    for j in 0..m {
                        let x = g.at(i, j);
                        dc[i] = dc[i] + x;
                        dr[j] = dr[j] + x;
                    }
                }
                acc(*col, Tensor::column(dc));
                acc(*row, Tensor::row(dr));
            }
            Op::Scale(a, factor) => acc(*a, g.map(|x| x * *factor)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Unary(a, kind) => {
                let x = val(*a);
                let y = &node.value;
                let mut d = x.zip_map(y, |xi, yi| kind.derivative(xi, yi));
                for (di, &gi) in d.data_mut().iter_mut().zip(g.data()) {
                    *di = *di * gi;
                }
                acc(*a, d);
            }
            Op::RowSoftmax(a) => {
                let (n, m) = g.dims()?;
                let y = &node.value;
                let mut d = Tensor::zeros(n, m);
                for i in 0..n {
                    let dot: S = (0..m).map(|j| g.at(i, j) * y.at(i, j)).sum();
                    for j in 0..m {
                        d.set(i, j, y.at(i, j) * (g.at(i, j) - dot));
                    }
                }
                acc(*a, d);
            }
            Op::SumPool(a) => {
                let (n, d) = val(*a).dims()?;
                let mut data = Vec::with_capacity(n * d);
                for _ in 0..n {
                    data.extend_from_slice(g.data());
                }
                acc(*a, Tensor::matrix(n, d, data)?);
            }
            Op::Sum(a) => {
                let gv = g.item();
                acc(*a, val(*a).map(|_| gv));
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::SliceRows(a, start) => {
                let (n, d) = val(*a).dims()?;
                let mut full = Tensor::zeros(n, d);
                let rows = g.rows();
                full.data_mut()[start * d..(start + rows) * d].copy_from_slice(g.data());
                acc(*a, full);
            }
            Op::ConcatCols(a, b) => {
                let (n, da) = val(*a).dims()?;
                let db = val(*b).cols();
                let mut ga = Vec::with_capacity(n * da);
                let mut gb = Vec::with_capacity(n * db);
                for row in g.data().chunks(da + db) {
                    ga.extend_from_slice(&row[..da]);
                    gb.extend_from_slice(&row[da..]);
                }
                acc(*a, Tensor::matrix(n, da, ga)?);
                acc(*b, Tensor::matrix(n, db, gb)?);
            }
            Op::ScatterSymmetric(values, pairs) => {
                let dv = pairs.iter().map(|&(i, j)| g.at(i, j) + g.at(j, i)).collect();
                acc(*values, Tensor::column(dv));
            }
            Op::NormalizeAdjacency(a, r) => {
                acc(*a, normalize_backward(val(*a), r, g));
            }
            Op::Custom(_, inputs, backward) => {
                let ins: Vec<&Tensor<S>> = inputs.iter().map(|v| val(*v)).collect();
                let deltas = backward(&ins, &node.value, g);
                for (v, delta) in inputs.iter().zip(deltas) {
                    acc(*v, delta);
                }
            }
        }
        Ok(())
    }
}

/// Forward normalization also returning `d_i^{-1/2}` for the backward pass.
pub(crate) fn normalized_with_scaling<S: Scalar>(
    adj: &Tensor<S>,
) -> Result<(Tensor<S>, Vec<S>), TapeError> {
    let (n, m) = adj.dims()?;
    if n != m {
        return Err(TapeError::Dimension {
            op: "normalize_adjacency",
            left: vec![n, m],
            right: vec![m, n],
        });
    }
    let mut inv_sqrt = Vec::with_capacity(n);
    for i in 0..n {
        let degree: S = (0..n).map(|j| adj.at(i, j)).sum::<S>() + S::one();
        if !(degree > S::zero()) {
            return Err(TapeError::DegenerateDegree { node: i });
        }
        inv_sqrt.push(S::one() / degree.sqrt());
    }
    let mut out = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let a_hat = adj.at(i, j) + if i == j { S::one() } else { S::zero() };
            out.set(i, j, inv_sqrt[i] * a_hat * inv_sqrt[j]);
        }
    }
    Ok((out, inv_sqrt))
}

fn normalize_backward<S: Scalar>(adj: &Tensor<S>, r: &[S], g: &Tensor<S>) -> Tensor<S> {
    let n = r.len();
    let a_hat = |i: usize, j: usize| adj.at(i, j) + if i == j { S::one() } else { S::zero() };
    // dL/dr_i collects both appearances of r_i (row and column scaling)
    let mut dr = vec![S::zero(); n];
    for i in 0..n {
        let mut s = S::zero();
        for j in 0..n {
            s = s + g.at(i, j) * a_hat(i, j) * r[j] + g.at(j, i) * a_hat(j, i) * r[j];
        }
        dr[i] = s;
    }
    // r_i = d_i^{-1/2}  =>  dr_i/dd_i = -r_i^3 / 2, and d_i = Σ_j Â_ij
    let half = S::lit(0.5);
    let q: Vec<S> = (0..n).map(|i| -half * r[i] * r[i] * r[i] * dr[i]).collect();
    let mut out = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, g.at(i, j) * r[i] * r[j] + q[i]);
        }
    }
    out
}
