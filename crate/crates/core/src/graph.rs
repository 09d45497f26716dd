//! Eager reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a Wengert tape: every builder call evaluates its op
//! immediately, caches the value on the new node and records how to
//! propagate gradients. Node ids are handed out in evaluation order, so the
//! tape order is a valid topological order by construction and
//! [`Graph::backward`] simply walks it in reverse.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // float methods when built without std
use num_traits::Float;

use crate::error::{numeric, structural, Result};
use crate::rng::Rng;
use crate::tensor::{matmul_a_bt_acc, matmul_at_b_acc, matmul_into, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamId(pub usize);

/// Named trainable tensors. Graphs copy values out of the store when a
/// parameter is first referenced, so the store can be updated freely once
/// a graph is done.
#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    AddScalar(NodeId),
    MulScalar(NodeId, f64),
    Neg(NodeId),
    Relu(NodeId),
    Softplus(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sqrt(NodeId),
    Square(NodeId),
    Clamp(NodeId, f64, f64),
    SoftmaxRows(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    BatchNorm {
        input: NodeId,
        inv_std: Vec<f64>,
    },
    Dropout {
        input: NodeId,
        mask: Vec<f64>,
    },
    ConcatCols(Vec<NodeId>),
    SliceCols {
        input: NodeId,
        start: usize,
    },
    GatherCols {
        input: NodeId,
        index: Vec<usize>,
    },
    Embedding {
        table: NodeId,
        index: Vec<usize>,
    },
    KnotsFromBins {
        input: NodeId,
        bound: f64,
    },
    PadCols {
        input: NodeId,
        left: usize,
    },
    Select {
        mask: Vec<bool>,
        on_true: NodeId,
        on_false: NodeId,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::AddScalar(..) => "add_scalar",
            Op::MulScalar(..) => "mul_scalar",
            Op::Neg(..) => "neg",
            Op::Relu(..) => "relu",
            Op::Softplus(..) => "softplus",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sqrt(..) => "sqrt",
            Op::Square(..) => "square",
            Op::Clamp(..) => "clamp",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Dropout { .. } => "dropout",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::GatherCols { .. } => "gather_cols",
            Op::Embedding { .. } => "embedding",
            Op::KnotsFromBins { .. } => "knots_from_bins",
            Op::PadCols { .. } => "pad_cols",
            Op::Select { .. } => "select",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Per-column statistics observed by a train-mode batch-norm node.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: BTreeMap<ParamId, NodeId>,
    batch_stats: BTreeMap<NodeId, BatchStats>,
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn batch_stats(&self, id: NodeId) -> Option<&BatchStats> {
        self.batch_stats.get(&id)
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<NodeId> {
        let id = NodeId(self.nodes.len());
        if let Some(i) = value.values().iter().position(|v| !v.is_finite()) {
            return Err(numeric!(
                "node {} ({}) produced non-finite value {} at row {}, column {}",
                id.0,
                op.name(),
                value.values()[i],
                i / value.cols().max(1),
                i % value.cols().max(1)
            ));
        }
        let requires_grad = match &op {
            Op::Constant => false,
            Op::Param => true,
            other => inputs_of(other).iter().any(|i| self.nodes[i.0].requires_grad),
        };
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(id)
    }

    fn v(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> Result<NodeId> {
        let value = self.v(a).map(f);
        self.push(op, value)
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if !self.v(a).same_shape(self.v(b)) {
            return Err(structural!(
                "{what}: shape mismatch {:?} vs {:?}",
                self.v(a).shape(),
                self.v(b).shape()
            ));
        }
        Ok(())
    }

    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(Op::Constant, value)
    }

    /// Leaf for a trainable tensor; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<NodeId> {
        if let Some(&node) = self.param_nodes.get(&id) {
            return Ok(node);
        }
        let node = self.push(Op::Param, store.get(id).clone())?;
        self.param_nodes.insert(id, node);
        Ok(node)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.v(a), self.v(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(structural!(
                "matmul: incompatible shapes {:?} x {:?}",
                ta.shape(),
                tb.shape()
            ));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = vec![0.0; m * n];
        matmul_into(ta.values(), tb.values(), &mut out, m, k, n);
        let value = Tensor::matrix(m, n, out)?;
        self.push(Op::MatMul(a, b), value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let value = self.v(a).zip_map(self.v(b), |x, y| x + y);
        self.push(Op::Add(a, b), value)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "sub")?;
        let value = self.v(a).zip_map(self.v(b), |x, y| x - y);
        self.push(Op::Sub(a, b), value)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let value = self.v(a).zip_map(self.v(b), |x, y| x * y);
        self.push(Op::Mul(a, b), value)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "div")?;
        let value = self.v(a).zip_map(self.v(b), |x, y| x / y);
        self.push(Op::Div(a, b), value)
    }

    fn row_broadcast(&mut self, a: NodeId, row: NodeId, mul: bool) -> Result<NodeId> {
        let (ta, tr) = (self.v(a), self.v(row));
        let c = ta.cols();
        if tr.len() != c || ta.shape().len() != 2 {
            return Err(structural!(
                "row broadcast: {:?} against row {:?}",
                ta.shape(),
                tr.shape()
            ));
        }
        let r = tr.values();
        let mut out = ta.values().to_vec();
        for chunk in out.chunks_mut(c) {
            for (o, &rv) in chunk.iter_mut().zip(r) {
                if mul {
                    *o *= rv;
                } else {
                    *o += rv;
                }
            }
        }
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        let op = if mul { Op::MulRow(a, row) } else { Op::AddRow(a, row) };
        self.push(op, value)
    }

    /// `a + row` with `row` (length = columns of `a`) broadcast over rows.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.row_broadcast(a, row, false)
    }

    /// `a * row` column-wise, `row` broadcast over rows.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.row_broadcast(a, row, true)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn mul_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.unary(a, Op::MulScalar(a, c), |x| x * c)
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Row-wise normalized exponential.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.v(a);
        let c = t.cols();
        let mut out = t.values().to_vec();
        for row in out.chunks_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        self.push(Op::SoftmaxRows(a), value)
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.v(a).values().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.v(a);
        if t.is_empty() {
            return Err(structural!("mean of an empty tensor"));
        }
        let s = t.values().iter().sum::<f64>() / t.len() as f64;
        self.push(Op::Mean(a), Tensor::scalar(s))
    }

    /// Train-mode batch normalization (no affine part): each column is
    /// shifted and scaled by its own batch mean and population variance.
    /// The observed statistics are kept for [`Graph::batch_stats`].
    pub fn batch_norm_train(&mut self, a: NodeId, eps: f64) -> Result<NodeId> {
        let t = self.v(a);
        let (n, c) = (t.rows(), t.cols());
        if t.shape().len() != 2 || n < 2 {
            return Err(structural!(
                "batch_norm in train mode needs a batch of at least 2 rows, got shape {:?}",
                t.shape()
            ));
        }
        let mut mean = vec![0.0; c];
        for row in t.values().chunks(c) {
            for (m, &x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; c];
        for row in t.values().chunks(c) {
            for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut out = t.values().to_vec();
        for row in out.chunks_mut(c) {
            for j in 0..c {
                row[j] = (row[j] - mean[j]) * inv_std[j];
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let id = self.push(Op::BatchNorm { input: a, inv_std }, value)?;
        self.batch_stats.insert(id, BatchStats { mean, var });
        Ok(id)
    }

    /// Inverted dropout: in train mode each entry is zeroed with
    /// probability `p` and survivors are divided by `1 - p`; eval mode and
    /// `p == 0` return the input node unchanged.
    pub fn dropout(&mut self, a: NodeId, p: f64, mode: Mode, rng: &mut Rng) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(crate::error::config_err!("dropout probability {p} not in [0, 1)"));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..self.v(a).len())
            .map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let value = self.v(a).zip_map(&Tensor::vector(mask.clone()), |x, m| x * m);
        self.push(Op::Dropout { input: a, mask }, value)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| structural!("concat_cols of zero tensors"))?;
        let rows = self.v(*first).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.v(p);
            if t.rows() != rows || t.shape().len() != 2 {
                return Err(structural!(
                    "concat_cols: part {:?} does not have {rows} rows",
                    t.shape()
                ));
            }
            total += t.cols();
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.v(p).row(r));
            }
        }
        let value = Tensor::matrix(rows, total, out)?;
        self.push(Op::ConcatCols(parts.to_vec()), value)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let t = self.v(a);
        if start > end || end > t.cols() || t.shape().len() != 2 {
            return Err(structural!(
                "slice_cols {start}..{end} out of range for {:?}",
                t.shape()
            ));
        }
        let rows = t.rows();
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&t.row(r)[start..end]);
        }
        let value = Tensor::matrix(rows, end - start, out)?;
        self.push(Op::SliceCols { input: a, start }, value)
    }

    /// Picks `a[r, index[r]]` for every row, giving a `rows x 1` column.
    pub fn gather_cols(&mut self, a: NodeId, index: Vec<usize>) -> Result<NodeId> {
        let t = self.v(a);
        let c = t.cols();
        if index.len() != t.rows() || index.iter().any(|&i| i >= c) {
            return Err(structural!("gather_cols: {} indices for {:?}", index.len(), t.shape()));
        }
        let out = index.iter().enumerate().map(|(r, &i)| t.get(r, i)).collect();
        let value = Tensor::column(out);
        self.push(Op::GatherCols { input: a, index }, value)
    }

    /// Row lookup into an embedding table (`cardinality x width`).
    pub fn embedding(&mut self, table: NodeId, index: Vec<usize>) -> Result<NodeId> {
        let t = self.v(table);
        let (n, d) = (t.rows(), t.cols());
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(structural!("embedding index {bad} out of range for {n} rows"));
        }
        let mut out = Vec::with_capacity(index.len() * d);
        for &i in &index {
            out.extend_from_slice(t.row(i));
        }
        let value = Tensor::matrix(index.len(), d, out)?;
        self.push(Op::Embedding { table, index }, value)
    }

    /// Turns per-row bin fractions (`rows x M`, each row summing to one)
    /// into `M + 1` knot positions on `[-bound, bound]`. The end knots are
    /// pinned exactly to `-bound` and `bound`.
    pub fn knots_from_bins(&mut self, a: NodeId, bound: f64) -> Result<NodeId> {
        let t = self.v(a);
        let (rows, m) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(rows * (m + 1));
        for r in 0..rows {
            let fr = t.row(r);
            out.push(-bound);
            let mut acc = 0.0;
            for &f in &fr[..m - 1] {
                acc += f;
                out.push(-bound + 2.0 * bound * acc);
            }
            out.push(bound);
        }
        let value = Tensor::matrix(rows, m + 1, out)?;
        self.push(Op::KnotsFromBins { input: a, bound }, value)
    }

    /// Adds `left` and `right` constant columns filled with `value`.
    pub fn pad_cols(&mut self, a: NodeId, left: usize, right: usize, value: f64) -> Result<NodeId> {
        let t = self.v(a);
        let (rows, c) = (t.rows(), t.cols());
        let width = left + c + right;
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            out.extend(core::iter::repeat_n(value, left));
            out.extend_from_slice(t.row(r));
            out.extend(core::iter::repeat_n(value, right));
        }
        let value = Tensor::matrix(rows, width, out)?;
        self.push(Op::PadCols { input: a, left }, value)
    }

    /// Element-wise `mask ? on_true : on_false`.
    pub fn select(&mut self, mask: Vec<bool>, on_true: NodeId, on_false: NodeId) -> Result<NodeId> {
        self.same_shape(on_true, on_false, "select")?;
        if mask.len() != self.v(on_true).len() {
            return Err(structural!("select: mask length {} mismatch", mask.len()));
        }
        let (a, b) = (self.v(on_true), self.v(on_false));
        let out = mask
            .iter()
            .zip(a.values().iter().zip(b.values()))
            .map(|(&m, (&x, &y))| if m { x } else { y })
            .collect();
        let value = Tensor::new(a.shape().to_vec(), out)?;
        self.push(
            Op::Select {
                mask,
                on_true,
                on_false,
            },
            value,
        )
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        let out = &self.nodes[output.0];
        if out.value.len() != 1 {
            return Err(structural!(
                "backward needs a scalar output, node {} has shape {:?}",
                output.0,
                out.value.shape()
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::full(out.value.shape(), 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let mut params = BTreeMap::new();
        for (&pid, &nid) in &self.param_nodes {
            if let Some(g) = &grads[nid.0] {
                params.insert(pid, g.clone());
            }
        }
        Ok(Gradients { nodes: grads, params })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let needs = |id: NodeId| self.nodes[id.0].requires_grad;
        let mut acc = |id: NodeId, t: Tensor| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let y = &node.value;
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.v(*a), self.v(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if needs(*a) {
                    let mut ga = vec![0.0; m * k];
                    matmul_a_bt_acc(g.values(), tb.values(), &mut ga, m, n, k);
                    acc(*a, Tensor::matrix(m, k, ga)?);
                }
                if needs(*b) {
                    let mut gb = vec![0.0; k * n];
                    matmul_at_b_acc(ta.values(), g.values(), &mut gb, m, k, n);
                    acc(*b, Tensor::matrix(k, n, gb)?);
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
                let (ta, tb) = (self.v(*a), self.v(*b));
                if needs(*a) {
                    acc(*a, g.zip_map(tb, |gi, bi| gi * bi));
                }
                if needs(*b) {
                    acc(*b, g.zip_map(ta, |gi, ai| gi * ai));
                }
            }
            Op::Div(a, b) => {
                let tb = self.v(*b);
                if needs(*a) {
                    acc(*a, g.zip_map(tb, |gi, bi| gi / bi));
                }
                if needs(*b) {
                    // d(a/b)/db = -(a/b)/b
                    let t = g.zip_map(y, |gi, yi| gi * yi);
                    acc(*b, t.zip_map(tb, |ti, bi| -ti / bi));
                }
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                if needs(*row) {
                    let c = g.cols();
                    let mut gr = vec![0.0; c];
                    for chunk in g.values().chunks(c) {
                        for (s, &x) in gr.iter_mut().zip(chunk) {
                            *s += x;
                        }
                    }
                    let shape = self.v(*row).shape().to_vec();
                    acc(*row, Tensor::new(shape, gr)?);
                }
            }
            Op::MulRow(a, row) => {
                let ta = self.v(*a);
                let tr = self.v(*row);
                let c = g.cols();
                if needs(*a) {
                    let mut ga = g.values().to_vec();
                    for chunk in ga.chunks_mut(c) {
                        for (x, &r) in chunk.iter_mut().zip(tr.values()) {
                            *x *= r;
                        }
                    }
                    acc(*a, Tensor::new(ta.shape().to_vec(), ga)?);
                }
                if needs(*row) {
                    let mut gr = vec![0.0; c];
                    for (gchunk, achunk) in g.values().chunks(c).zip(ta.values().chunks(c)) {
                        for ((s, &gi), &ai) in gr.iter_mut().zip(gchunk).zip(achunk) {
                            *s += gi * ai;
                        }
                    }
                    acc(*row, Tensor::new(tr.shape().to_vec(), gr)?);
                }
            }
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::MulScalar(a, c) => acc(*a, g.map(|x| x * c)),
            Op::Neg(a) => acc(*a, g.map(|x| -x)),
            Op::Relu(a) => {
                let ta = self.v(*a);
                acc(*a, g.zip_map(ta, |gi, x| if x > 0.0 { gi } else { 0.0 }));
            }
            Op::Softplus(a) => {
                let ta = self.v(*a);
                acc(*a, g.zip_map(ta, |gi, x| gi * sigmoid(x)));
            }
            Op::Exp(a) => acc(*a, g.zip_map(y, |gi, yi| gi * yi)),
            Op::Log(a) => {
                let ta = self.v(*a);
                acc(*a, g.zip_map(ta, |gi, x| gi / x));
            }
            Op::Sqrt(a) => acc(*a, g.zip_map(y, |gi, yi| gi * 0.5 / yi)),
            Op::Square(a) => {
                let ta = self.v(*a);
                acc(*a, g.zip_map(ta, |gi, x| 2.0 * gi * x));
            }
            Op::Clamp(a, lo, hi) => {
                let ta = self.v(*a);
                acc(*a, g.zip_map(ta, |gi, x| if x >= *lo && x <= *hi { gi } else { 0.0 }));
            }
            Op::SoftmaxRows(a) => {
                let c = y.cols();
                let mut ga = Vec::with_capacity(y.len());
                for (yr, gr) in y.values().chunks(c).zip(g.values().chunks(c)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    ga.extend(yr.iter().zip(gr).map(|(yi, gi)| yi * (gi - dot)));
                }
                acc(*a, Tensor::new(y.shape().to_vec(), ga)?);
            }
            Op::Sum(a) => {
                let gs = g.values()[0];
                acc(*a, Tensor::full(self.v(*a).shape(), gs));
            }
            Op::Mean(a) => {
                let ta = self.v(*a);
                let gs = g.values()[0] / ta.len() as f64;
                acc(*a, Tensor::full(ta.shape(), gs));
            }
            Op::BatchNorm { input, inv_std } => {
                // dx = inv_std / N * (N g - sum(g) - xhat * sum(g xhat))
                let c = y.cols();
                let n = y.rows() as f64;
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for (yr, gr) in y.values().chunks(c).zip(g.values().chunks(c)) {
                    for j in 0..c {
                        sum_g[j] += gr[j];
                        sum_gx[j] += gr[j] * yr[j];
                    }
                }
                let mut gx = Vec::with_capacity(y.len());
                for (yr, gr) in y.values().chunks(c).zip(g.values().chunks(c)) {
                    for j in 0..c {
                        gx.push(inv_std[j] / n * (n * gr[j] - sum_g[j] - yr[j] * sum_gx[j]));
                    }
                }
                acc(*input, Tensor::new(y.shape().to_vec(), gx)?);
            }
            Op::Dropout { input, mask } => {
                let gi = g.values().iter().zip(mask).map(|(x, m)| x * m).collect();
                acc(*input, Tensor::new(y.shape().to_vec(), gi)?);
            }
            Op::ConcatCols(parts) => {
                let total = y.cols();
                let mut offset = 0;
                for &p in parts {
                    let tp = self.v(p);
                    let w = tp.cols();
                    if needs(p) && w > 0 {
                        let mut gp = Vec::with_capacity(tp.len());
                        for gr in g.values().chunks(total) {
                            gp.extend_from_slice(&gr[offset..offset + w]);
                        }
                        acc(p, Tensor::new(tp.shape().to_vec(), gp)?);
                    }
                    offset += w;
                }
            }
            Op::SliceCols { input, start } => {
                let ti = self.v(*input);
                let (c, w) = (ti.cols(), y.cols());
                let mut gi = vec![0.0; ti.len()];
                if w > 0 {
                    for (r, gr) in g.values().chunks(w).enumerate() {
                        gi[r * c + start..r * c + start + w].copy_from_slice(gr);
                    }
                }
                acc(*input, Tensor::new(ti.shape().to_vec(), gi)?);
            }
            Op::GatherCols { input, index } => {
                let ti = self.v(*input);
                let c = ti.cols();
                let mut gi = vec![0.0; ti.len()];
                for (r, &i) in index.iter().enumerate() {
                    gi[r * c + i] += g.values()[r];
                }
                acc(*input, Tensor::new(ti.shape().to_vec(), gi)?);
            }
            Op::Embedding { table, index } => {
                let tt = self.v(*table);
                let d = tt.cols();
                let mut gt = vec![0.0; tt.len()];
                for (r, &i) in index.iter().enumerate() {
                    for j in 0..d {
                        gt[i * d + j] += g.values()[r * d + j];
                    }
                }
                acc(*table, Tensor::new(tt.shape().to_vec(), gt)?);
            }
            Op::KnotsFromBins { input, bound } => {
                // knot j (0 < j < M) depends on fractions 0..j
                let ti = self.v(*input);
                let m = ti.cols();
                let mut gi = vec![0.0; ti.len()];
                for (r, gr) in g.values().chunks(m + 1).enumerate() {
                    let mut suffix = 0.0;
                    for i in (0..m).rev() {
                        if i + 1 < m {
                            suffix += gr[i + 1];
                        }
                        gi[r * m + i] = 2.0 * bound * suffix;
                    }
                }
                acc(*input, Tensor::new(ti.shape().to_vec(), gi)?);
            }
            Op::PadCols { input, left } => {
                let ti = self.v(*input);
                let (c, w) = (ti.cols(), y.cols());
                let mut gi = Vec::with_capacity(ti.len());
                for gr in g.values().chunks(w) {
                    gi.extend_from_slice(&gr[*left..*left + c]);
                }
                acc(*input, Tensor::new(ti.shape().to_vec(), gi)?);
            }
            Op::Select {
                mask,
                on_true,
                on_false,
            } => {
                let gt = g
                    .values()
                    .iter()
                    .zip(mask)
                    .map(|(&x, &m)| if m { x } else { 0.0 })
                    .collect();
                let gf = g
                    .values()
                    .iter()
                    .zip(mask)
                    .map(|(&x, &m)| if m { 0.0 } else { x })
                    .collect();
                acc(*on_true, Tensor::new(y.shape().to_vec(), gt)?);
                acc(*on_false, Tensor::new(y.shape().to_vec(), gf)?);
            }
        }
        Ok(())
    }
}

fn inputs_of(op: &Op) -> Vec<NodeId> {
    match op {
        Op::Constant | Op::Param => Vec::new(),
        Op::MatMul(a, b)
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::Div(a, b)
        | Op::AddRow(a, b)
        | Op::MulRow(a, b) => vec![*a, *b],
        Op::AddScalar(a)
        | Op::MulScalar(a, _)
        | Op::Neg(a)
        | Op::Relu(a)
        | Op::Softplus(a)
        | Op::Exp(a)
        | Op::Log(a)
        | Op::Sqrt(a)
        | Op::Square(a)
        | Op::Clamp(a, _, _)
        | Op::SoftmaxRows(a)
        | Op::Sum(a)
        | Op::Mean(a) => vec![*a],
        Op::BatchNorm { input, .. }
        | Op::Dropout { input, .. }
        | Op::SliceCols { input, .. }
        | Op::GatherCols { input, .. }
        | Op::KnotsFromBins { input, .. }
        | Op::PadCols { input, .. } => vec![*input],
        Op::Embedding { table, .. } => vec![*table],
        Op::ConcatCols(parts) => parts.clone(),
        Op::Select { on_true, on_false, .. } => vec![*on_true, *on_false],
    }
}

/// Result of a reverse sweep.
#[derive(Clone, Debug)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    /// Gradient with respect to any node that lies on a path to the output.
    pub fn wrt(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes.get(id.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    /// One gradient tensor per parameter in `store`, zero for parameters the
    /// output does not depend on.
    pub fn for_store(&self, store: &ParamStore) -> Vec<Tensor> {
        store
            .ids()
            .map(|id| {
                self.params
                    .get(&id)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()))
            })
            .collect()
    }
}
