use std::collections::BTreeMap;
use std::sync::Arc;

use super::{Matrix, TensorError};

/// Floor applied inside [`OpKind::Log`].
pub const LOG_FLOOR: f64 = 1e-12;

const NORM_FLOOR: f64 = 1e-12;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds understood by [`Tape::record`].
///
/// Index-carrying variants share their index buffers through `Arc` so
/// that recording large sparse ops does not copy edge lists.
#[derive(Clone, Debug)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    ScalarMul(f64),
    Hadamard,
    /// Stacks all inputs vertically; column counts must agree.
    ConcatRows,
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
    Exp,
    /// Natural log with inputs floored at [`LOG_FLOOR`].
    Log,
    RowSoftmax,
    /// `m x n -> m x 1`.
    RowSum,
    SumAll,
    L2NormSq,
    /// Sum of elementwise products of two same-shape inputs.
    Dot,
    Transpose,
    SliceRows {
        start: usize,
        end: usize,
    },
    /// Scales every row to unit L2 norm; zero rows stay zero.
    NormalizeRows,
    /// `m x n` plus a `1 x n` row added to every row.
    AddRowBroadcast,
    /// `m x n` with row `i` scaled by entry `i` of an `m x 1` column.
    MulColBroadcast,
    /// Output row `k` is input row `index[k]`.
    GatherRows(Arc<[usize]>),
    /// Input row `k` is added into output row `index[k]`.
    ScatterAddRows {
        index: Arc<[usize]>,
        rows: usize,
    },
    /// Softmax of an `E x 1` column within groups sharing a segment id.
    SegmentSoftmax(Arc<[usize]>),
    /// `sum_e <x[src_e], x[dst_e]>` as a scalar.
    EdgeInnerSum {
        src: Arc<[usize]>,
        dst: Arc<[usize]>,
    },
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::ScalarMul(_) => "scalar_mul",
            OpKind::Hadamard => "hadamard",
            OpKind::ConcatRows => "concat_rows",
            OpKind::Relu => "relu",
            OpKind::LeakyRelu(_) => "leaky_relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::RowSoftmax => "row_softmax",
            OpKind::RowSum => "row_sum",
            OpKind::SumAll => "sum_all",
            OpKind::L2NormSq => "l2norm_sq",
            OpKind::Dot => "dot",
            OpKind::Transpose => "transpose",
            OpKind::SliceRows { .. } => "slice_rows",
            OpKind::NormalizeRows => "normalize_rows",
            OpKind::AddRowBroadcast => "add_row_broadcast",
            OpKind::MulColBroadcast => "mul_col_broadcast",
            OpKind::GatherRows(_) => "gather_rows",
            OpKind::ScatterAddRows { .. } => "scatter_add_rows",
            OpKind::SegmentSoftmax(_) => "segment_softmax",
            OpKind::EdgeInnerSum { .. } => "edge_inner_sum",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::ConcatRows => None,
            OpKind::MatMul
            | OpKind::Add
            | OpKind::Sub
            | OpKind::Hadamard
            | OpKind::Dot
            | OpKind::AddRowBroadcast
            | OpKind::MulColBroadcast => Some(2),
            _ => Some(1),
        }
    }
}

#[derive(Clone, Debug)]
enum Origin {
    Param,
    Constant,
    Op { kind: OpKind, inputs: Vec<Var> },
}

#[derive(Clone, Debug)]
struct Node {
    value: Matrix,
    origin: Origin,
    requires_grad: bool,
}

/// Gradients of a scalar with respect to every parameter leaf of a tape.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    map: BTreeMap<Var, Matrix>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.map.get(&var)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Var, &Matrix)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Append-only record of tensor operations for reverse-mode differentiation.
///
/// Every operation's inputs are recorded before it, so the node order is a
/// topological order and [`Tape::backward`] walks it in reverse.
#[derive(Clone, Debug, Default)]
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

    /// Registers a trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Origin::Param, true)
    }

    /// Registers a leaf that never receives gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Origin::Constant, false)
    }

    /// Copies `var` into a constant leaf, cutting gradient flow.
    pub fn detach(&mut self, var: Var) -> Var {
        let value = self.nodes[var.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> [usize; 2] {
        self.nodes[var.0].value.shape()
    }

    pub fn is_param(&self, var: Var) -> bool {
        matches!(self.nodes[var.0].origin, Origin::Param)
    }

    fn push(&mut self, value: Matrix, origin: Origin, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            origin,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Evaluates `kind` on `inputs` and appends it to the tape.
    pub fn record(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var, TensorError> {
        if let Some(n) = kind.arity() {
            if inputs.len() != n {
                return Err(TensorError::Arity {
                    op: kind.name(),
                    expected: n,
                    got: inputs.len(),
                });
            }
        } else if inputs.is_empty() {
            return Err(TensorError::Arity {
                op: kind.name(),
                expected: 1,
                got: 0,
            });
        }
        for v in inputs {
            if v.0 >= self.nodes.len() {
                return Err(TensorError::ForeignVar(v.0));
            }
        }
        let values: Vec<&Matrix> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let out = forward(&kind, &values)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(
            out,
            Origin::Op {
                kind,
                inputs: inputs.to_vec(),
            },
            requires_grad,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.record(OpKind::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.record(OpKind::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.record(OpKind::Sub, &[a, b])
    }
    pub fn scalar_mul(&mut self, a: Var, s: f64) -> Result<Var, TensorError> {
        self.record(OpKind::ScalarMul(s), &[a])
    }
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.record(OpKind::Hadamard, &[a, b])
    }
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        self.record(OpKind::ConcatRows, parts)
    }
    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.record(OpKind::Relu, &[a])
    }
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var, TensorError> {
        self.record(OpKind::LeakyRelu(slope), &[a])
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        self.record(OpKind::Sigmoid, &[a])
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        self.record(OpKind::Tanh, &[a])
    }
    pub fn exp(&mut self, a: Var) -> Result<Var, TensorError> {
        self.record(OpKind::Exp, &[a])
    }
    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        self.record(OpKind::Log, &[a])
    }
    pub fn row_softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        self.record(OpKind::RowSoftmax, &[a])
    }
    pub fn row_sum(&mut self, a: Var) -> Result<Var, TensorError> {
        self.record(OpKind::RowSum, &[a])
    }
    pub fn sum_all(&mut self, a: Var) -> Result<Var, TensorError> {
        self.record(OpKind::SumAll, &[a])
    }
    pub fn l2norm_sq(&mut self, a: Var) -> Result<Var, TensorError> {
        self.record(OpKind::L2NormSq, &[a])
    }
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.record(OpKind::Dot, &[a, b])
    }
    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        self.record(OpKind::Transpose, &[a])
    }
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, TensorError> {
        self.record(OpKind::SliceRows { start, end }, &[a])
    }
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        self.record(OpKind::NormalizeRows, &[a])
    }
    pub fn add_row_broadcast(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        self.record(OpKind::AddRowBroadcast, &[a, row])
    }
    pub fn mul_col_broadcast(&mut self, a: Var, col: Var) -> Result<Var, TensorError> {
        self.record(OpKind::MulColBroadcast, &[a, col])
    }
    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var, TensorError> {
        self.record(OpKind::GatherRows(index), &[a])
    }
    pub fn scatter_add_rows(
        &mut self,
        a: Var,
        index: Arc<[usize]>,
        rows: usize,
    ) -> Result<Var, TensorError> {
        self.record(OpKind::ScatterAddRows { index, rows }, &[a])
    }
    pub fn segment_softmax(&mut self, a: Var, segments: Arc<[usize]>) -> Result<Var, TensorError> {
        self.record(OpKind::SegmentSoftmax(segments), &[a])
    }
    pub fn edge_inner_sum(
        &mut self,
        a: Var,
        src: Arc<[usize]>,
        dst: Arc<[usize]>,
    ) -> Result<Var, TensorError> {
        self.record(OpKind::EdgeInnerSum { src, dst }, &[a])
    }

    /// Reverse pass from a `1 x 1` output.
    ///
    /// Returns gradients for every parameter leaf that `output` depends on
    /// (parameters it does not depend on get zero matrices). The tape is not
    /// mutated, so repeated calls give identical results.
    pub fn backward(&self, output: Var) -> Result<Gradients, TensorError> {
        if output.0 >= self.nodes.len() {
            return Err(TensorError::ForeignVar(output.0));
        }
        let shape = self.nodes[output.0].value.shape();
        if shape != [1, 1] {
            return Err(TensorError::NotScalar(shape));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Origin::Op { kind, inputs } = &node.origin else {
                continue;
            };
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let values: Vec<&Matrix> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let input_grads = local_backward(kind, &values, &node.value, &upstream);
            for (input, g) in inputs.iter().zip(input_grads) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }

        let mut map = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if matches!(node.origin, Origin::Param) {
                let g = grads
                    .get_mut(idx)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Matrix::zeros(node.value.rows(), node.value.cols()));
                map.insert(Var(idx), g);
            }
        }
        Ok(Gradients { map })
    }
}

fn mismatch(kind: &OpKind, left: &Matrix, right: &Matrix) -> TensorError {
    TensorError::ShapeMismatch {
        op: kind.name(),
        left: left.shape(),
        right: right.shape(),
    }
}

fn check_index(kind: &OpKind, index: &[usize], bound: usize) -> Result<(), TensorError> {
    if let Some(&bad) = index.iter().find(|&&i| i >= bound) {
        return Err(TensorError::IndexOutOfRange {
            op: kind.name(),
            index: bad,
            bound,
        });
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in values.iter_mut() {
        *v /= total;
    }
}

fn forward(kind: &OpKind, x: &[&Matrix]) -> Result<Matrix, TensorError> {
    let a = x[0];
    let out = match kind {
        OpKind::MatMul => a.matmul(x[1]).map_err(|_| mismatch(kind, a, x[1]))?,
        OpKind::Add | OpKind::Sub | OpKind::Hadamard | OpKind::Dot => {
            let b = x[1];
            if a.shape() != b.shape() {
                return Err(mismatch(kind, a, b));
            }
            let zipped = a.data().iter().zip(b.data());
            match kind {
                OpKind::Add => {
                    Matrix::from_vec(a.rows(), a.cols(), zipped.map(|(p, q)| p + q).collect())?
                }
                OpKind::Sub => {
                    Matrix::from_vec(a.rows(), a.cols(), zipped.map(|(p, q)| p - q).collect())?
                }
                OpKind::Hadamard => {
                    Matrix::from_vec(a.rows(), a.cols(), zipped.map(|(p, q)| p * q).collect())?
                }
                _ => Matrix::scalar(zipped.map(|(p, q)| p * q).sum()),
            }
        }
        OpKind::ScalarMul(s) => a.scale(*s),
        OpKind::ConcatRows => {
            let cols = a.cols();
            let mut data = Vec::new();
            let mut rows = 0;
            for m in x {
                if m.cols() != cols {
                    return Err(mismatch(kind, a, m));
                }
                rows += m.rows();
                data.extend_from_slice(m.data());
            }
            Matrix::from_vec(rows, cols, data)?
        }
        OpKind::Relu => a.map(|v| v.max(0.0)),
        OpKind::LeakyRelu(slope) => a.map(|v| if v > 0.0 { v } else { slope * v }),
        OpKind::Sigmoid => a.map(sigmoid),
        OpKind::Tanh => a.map(f64::tanh),
        OpKind::Exp => a.map(f64::exp),
        OpKind::Log => a.map(|v| v.max(LOG_FLOOR).ln()),
        OpKind::RowSoftmax => {
            let mut out = a.clone();
            for r in 0..out.rows() {
                softmax_in_place(out.row_mut(r));
            }
            out
        }
        OpKind::RowSum => Matrix::column((0..a.rows()).map(|r| a.row(r).iter().sum()).collect()),
        OpKind::SumAll => Matrix::scalar(a.data().iter().sum()),
        OpKind::L2NormSq => Matrix::scalar(a.data().iter().map(|v| v * v).sum()),
        OpKind::Transpose => a.transpose(),
        OpKind::SliceRows { start, end } => {
            if start > end || *end > a.rows() {
                return Err(TensorError::IndexOutOfRange {
                    op: kind.name(),
                    index: *end,
                    bound: a.rows(),
                });
            }
            a.slice_rows(*start, *end)
        }
        OpKind::NormalizeRows => {
            let mut out = a.clone();
            for r in 0..out.rows() {
                let row = out.row_mut(r);
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm < NORM_FLOOR {
                    row.iter_mut().for_each(|v| *v = 0.0);
                } else {
                    row.iter_mut().for_each(|v| *v /= norm);
                }
            }
            out
        }
        OpKind::AddRowBroadcast => {
            let b = x[1];
            if b.rows() != 1 || b.cols() != a.cols() {
                return Err(mismatch(kind, a, b));
            }
            let mut out = a.clone();
            for r in 0..out.rows() {
                for (o, bv) in out.row_mut(r).iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
            out
        }
        OpKind::MulColBroadcast => {
            let c = x[1];
            if c.cols() != 1 || c.rows() != a.rows() {
                return Err(mismatch(kind, a, c));
            }
            let mut out = a.clone();
            for r in 0..out.rows() {
                let s = c.get(r, 0);
                out.row_mut(r).iter_mut().for_each(|v| *v *= s);
            }
            out
        }
        OpKind::GatherRows(index) => {
            check_index(kind, index, a.rows())?;
            let mut data = Vec::with_capacity(index.len() * a.cols());
            for &i in index.iter() {
                data.extend_from_slice(a.row(i));
            }
            Matrix::from_vec(index.len(), a.cols(), data)?
        }
        OpKind::ScatterAddRows { index, rows } => {
            if index.len() != a.rows() {
                return Err(TensorError::IndexLength {
                    op: kind.name(),
                    expected: a.rows(),
                    got: index.len(),
                });
            }
            check_index(kind, index, *rows)?;
            let mut out = Matrix::zeros(*rows, a.cols());
            for (k, &i) in index.iter().enumerate() {
                for (o, v) in out.row_mut(i).iter_mut().zip(a.row(k)) {
                    *o += v;
                }
            }
            out
        }
        OpKind::SegmentSoftmax(segments) => {
            if a.cols() != 1 || segments.len() != a.rows() {
                return Err(TensorError::IndexLength {
                    op: kind.name(),
                    expected: a.rows(),
                    got: segments.len(),
                });
            }
            let n_seg = segments.iter().copied().max().map_or(0, |m| m + 1);
            let mut max = vec![f64::NEG_INFINITY; n_seg];
            for (k, &s) in segments.iter().enumerate() {
                max[s] = max[s].max(a.get(k, 0));
            }
            let mut total = vec![0.0; n_seg];
            let mut out = a.clone();
            for (k, &s) in segments.iter().enumerate() {
                let e = (a.get(k, 0) - max[s]).exp();
                out.set(k, 0, e);
                total[s] += e;
            }
            for (k, &s) in segments.iter().enumerate() {
                out.set(k, 0, out.get(k, 0) / total[s]);
            }
            out
        }
        OpKind::EdgeInnerSum { src, dst } => {
            if src.len() != dst.len() {
                return Err(TensorError::IndexLength {
                    op: kind.name(),
                    expected: src.len(),
                    got: dst.len(),
                });
            }
            check_index(kind, src, a.rows())?;
            check_index(kind, dst, a.rows())?;
            let total = src
                .iter()
                .zip(dst.iter())
                .map(|(&i, &j)| {
                    a.row(i)
                        .iter()
                        .zip(a.row(j))
                        .map(|(p, q)| p * q)
                        .sum::<f64>()
                })
                .sum();
            Matrix::scalar(total)
        }
    };
    Ok(out)
}

/// Gradients of the op's inputs given the upstream gradient `g`.
fn local_backward(kind: &OpKind, x: &[&Matrix], y: &Matrix, g: &Matrix) -> Vec<Matrix> {
    let a = x[0];
    let elementwise = |f: &dyn Fn(usize) -> f64| -> Matrix {
        let data = (0..a.len()).map(f).collect();
        Matrix::from_vec(a.rows(), a.cols(), data).expect("same shape")
    };
    match kind {
        OpKind::MatMul => {
            let b = x[1];
            let ga = g.matmul(&b.transpose()).expect("shapes checked on forward");
            let gb = a.transpose().matmul(g).expect("shapes checked on forward");
            vec![ga, gb]
        }
        OpKind::Add => vec![g.clone(), g.clone()],
        OpKind::Sub => vec![g.clone(), g.scale(-1.0)],
        OpKind::ScalarMul(s) => vec![g.scale(*s)],
        OpKind::Hadamard => {
            let b = x[1];
            let ga = elementwise(&|i| g.data()[i] * b.data()[i]);
            let gb = elementwise(&|i| g.data()[i] * a.data()[i]);
            vec![ga, gb]
        }
        OpKind::Dot => {
            let s = g.item();
            vec![x[1].scale(s), a.scale(s)]
        }
        OpKind::ConcatRows => {
            let mut start = 0;
            x.iter()
                .map(|m| {
                    let part = g.slice_rows(start, start + m.rows());
                    start += m.rows();
                    part
                })
                .collect()
        }
        OpKind::Relu => vec![elementwise(&|i| {
            if a.data()[i] > 0.0 {
                g.data()[i]
            } else {
                0.0
            }
        })],
        OpKind::LeakyRelu(slope) => vec![elementwise(&|i| {
            if a.data()[i] > 0.0 {
                g.data()[i]
            } else {
                slope * g.data()[i]
            }
        })],
        OpKind::Sigmoid => vec![elementwise(&|i| {
            let s = y.data()[i];
            g.data()[i] * s * (1.0 - s)
        })],
        OpKind::Tanh => vec![elementwise(&|i| {
            let t = y.data()[i];
            g.data()[i] * (1.0 - t * t)
        })],
        OpKind::Exp => vec![elementwise(&|i| g.data()[i] * y.data()[i])],
        OpKind::Log => vec![elementwise(&|i| {
            let v = a.data()[i];
            if v > LOG_FLOOR {
                g.data()[i] / v
            } else {
                0.0
            }
        })],
        OpKind::RowSoftmax => {
            let mut out = Matrix::zeros(a.rows(), a.cols());
            for r in 0..a.rows() {
                let yr = y.row(r);
                let gr = g.row(r);
                let inner: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                for (o, (yv, gv)) in out.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                    *o = yv * (gv - inner);
                }
            }
            vec![out]
        }
        OpKind::RowSum => {
            let mut out = Matrix::zeros(a.rows(), a.cols());
            for r in 0..a.rows() {
                let gv = g.get(r, 0);
                out.row_mut(r).iter_mut().for_each(|v| *v = gv);
            }
            vec![out]
        }
        OpKind::SumAll => vec![Matrix::filled(a.rows(), a.cols(), g.item())],
        OpKind::L2NormSq => vec![a.scale(2.0 * g.item())],
        OpKind::Transpose => vec![g.transpose()],
        OpKind::SliceRows { start, end } => {
            let mut out = Matrix::zeros(a.rows(), a.cols());
            let cols = a.cols();
            out.data_mut()[start * cols..end * cols].copy_from_slice(g.data());
            vec![out]
        }
        OpKind::NormalizeRows => {
            let mut out = Matrix::zeros(a.rows(), a.cols());
            for r in 0..a.rows() {
                let norm = a.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm < NORM_FLOOR {
                    continue;
                }
                let yr = y.row(r);
                let gr = g.row(r);
                let inner: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                for (o, (yv, gv)) in out.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                    *o = (gv - yv * inner) / norm;
                }
            }
            vec![out]
        }
        OpKind::AddRowBroadcast => {
            let mut gb = Matrix::zeros(1, a.cols());
            for r in 0..g.rows() {
                for (o, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                    *o += v;
                }
            }
            vec![g.clone(), gb]
        }
        OpKind::MulColBroadcast => {
            let c = x[1];
            let mut ga = g.clone();
            let mut gc = Matrix::zeros(c.rows(), 1);
            for r in 0..a.rows() {
                let s = c.get(r, 0);
                ga.row_mut(r).iter_mut().for_each(|v| *v *= s);
                let d: f64 = g.row(r).iter().zip(a.row(r)).map(|(p, q)| p * q).sum();
                gc.set(r, 0, d);
            }
            vec![ga, gc]
        }
        OpKind::GatherRows(index) => {
            let mut out = Matrix::zeros(a.rows(), a.cols());
            for (k, &i) in index.iter().enumerate() {
                for (o, v) in out.row_mut(i).iter_mut().zip(g.row(k)) {
                    *o += v;
                }
            }
            vec![out]
        }
        OpKind::ScatterAddRows { index, .. } => {
            let mut out = Matrix::zeros(a.rows(), a.cols());
            for (k, &i) in index.iter().enumerate() {
                out.row_mut(k).copy_from_slice(g.row(i));
            }
            vec![out]
        }
        OpKind::SegmentSoftmax(segments) => {
            let n_seg = segments.iter().copied().max().map_or(0, |m| m + 1);
            let mut inner = vec![0.0; n_seg];
            for (k, &s) in segments.iter().enumerate() {
                inner[s] += y.get(k, 0) * g.get(k, 0);
            }
            let mut out = Matrix::zeros(a.rows(), 1);
            for (k, &s) in segments.iter().enumerate() {
                out.set(k, 0, y.get(k, 0) * (g.get(k, 0) - inner[s]));
            }
            vec![out]
        }
        OpKind::EdgeInnerSum { src, dst } => {
            let s = g.item();
            let mut out = Matrix::zeros(a.rows(), a.cols());
            for (&i, &j) in src.iter().zip(dst.iter()) {
                for c in 0..a.cols() {
                    let gi = s * a.get(j, c);
                    let gj = s * a.get(i, c);
                    out.row_mut(i)[c] += gi;
                    out.row_mut(j)[c] += gj;
                }
            }
            vec![out]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let x = Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0], vec![4.0, 0.0]]).unwrap();
        let i = tape.constant(Matrix::identity(3));
        let xv = tape.constant(x.clone());
        let y = tape.matmul(i, xv).unwrap();
        assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::row_vector(vec![0.0, 0.0]));
        let y = tape.row_softmax(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn l2norm_sq_of_three_four() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::row_vector(vec![3.0, 4.0]));
        let y = tape.l2norm_sq(x).unwrap();
        assert_eq!(tape.value(y).item(), 25.0);
    }

    #[test]
    fn square_derivative() {
        let mut tape = Tape::new();
        let x = tape.param(Matrix::scalar(3.0));
        let y = tape.hadamard(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn softmax_row_sums_have_zero_gradient() {
        let mut tape = Tape::new();
        let x =
            tape.param(Matrix::from_rows(&[vec![0.3, -1.2, 2.0], vec![0.0, 0.5, 0.1]]).unwrap());
        let s = tape.row_softmax(x).unwrap();
        let total = tape.sum_all(s).unwrap();
        let g = tape.backward(total).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn leaky_relu_negative_branch_scales_upstream() {
        let mut tape = Tape::new();
        let x = tape.param(Matrix::scalar(-2.0));
        let y = tape.leaky_relu(x, 0.2).unwrap();
        let z = tape.scalar_mul(y, 5.0).unwrap();
        let g = tape.backward(z).unwrap();
        assert!(close(g.get(x).unwrap().item(), 0.2 * 5.0));
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Matrix::zeros(2, 3));
        let b = tape.constant(Matrix::zeros(2, 3));
        let err = tape.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            TensorError::ShapeMismatch {
                op: "matmul",
                left: [2, 3],
                right: [2, 3]
            }
        );
        assert!(err.to_string().contains("[2, 3]"));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let a = tape.param(Matrix::zeros(2, 1));
        let b = tape.relu(a).unwrap();
        assert_eq!(
            tape.backward(b).unwrap_err(),
            TensorError::NotScalar([2, 1])
        );
    }

    #[test]
    fn detached_input_gets_no_gradient_flow() {
        let mut tape = Tape::new();
        let x = tape.param(Matrix::scalar(2.0));
        let d = tape.detach(x);
        let y = tape.hadamard(x, d).unwrap();
        let g = tape.backward(y).unwrap();
        // d/dx (x * const) = const
        assert_eq!(g.get(x).unwrap().item(), 2.0);
    }

    #[test]
    fn constants_are_not_reported() {
        let mut tape = Tape::new();
        let c = tape.constant(Matrix::scalar(1.0));
        let p = tape.param(Matrix::scalar(1.0));
        let y = tape.add(c, p).unwrap();
        let g = tape.backward(y).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn segment_softmax_normalises_each_group() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::column(vec![1.0, 2.0, 0.5, 0.5, -1.0]));
        let seg: Arc<[usize]> = Arc::from(vec![0, 0, 1, 1, 2]);
        let y = tape.segment_softmax(x, seg).unwrap();
        let v = tape.value(y).data().to_vec();
        assert!(close(v[0] + v[1], 1.0));
        assert!(close(v[2], 0.5));
        assert!(close(v[4], 1.0));
    }
}
