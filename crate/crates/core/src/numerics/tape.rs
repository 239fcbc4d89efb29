//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! Operations evaluate eagerly and record themselves on a [`Tape`] in
//! execution order, so the tape is always topologically sorted. A backward
//! pass walks the records in reverse and produces gradients for the leaves
//! that were marked trainable.
//!
//! One tape serves one loss evaluation; tapes are never shared.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::matrix::Matrix;

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Record {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    RowSoftmax(NodeId),
    Log(NodeId),
    Tanh(NodeId),
    GatherRows(NodeId, Vec<usize>),
    PickPerRow(NodeId, Vec<usize>),
    Mean(NodeId),
    RowL2Normalize(NodeId),
    Transpose(NodeId),
    AppendOnesCol(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    record: Record,
    trainable: bool,
    needs_grad: bool,
}

/// Gradients for the trainable leaves of one backward pass.
#[derive(Debug, Default)]
pub struct Gradients {
    by_node: BTreeMap<usize, Matrix>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.by_node.get(&id.index())
    }

    pub fn len(&self) -> usize {
        self.by_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_node.is_empty()
    }
}

/// Operation recorder for one forward/backward cycle.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    flops: u64,
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

    /// Rough flop count of the recorded forward pass, used by the
    /// deterministic wall-time model.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.index()].value
    }

    fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes.get(id.index()).ok_or_else(|| Error::State {
            message: format!("node {} not recorded on this tape", id.index()),
        })
    }

    fn push(&mut self, value: Matrix, record: Record, trainable: bool, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            record,
            trainable,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.index()].needs_grad
    }

    /// Record a constant input.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Record::Leaf, false, false)
    }

    /// Record a trainable input; it will receive a gradient.
    pub fn trainable(&mut self, value: Matrix) -> NodeId {
        self.push(value, Record::Leaf, true, true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.node(a)?.value.matmul(&self.node(b)?.value)?;
        let (m, k) = self.node(a)?.value.shape();
        let n = value.cols();
        self.flops += (2 * m * k * n) as u64;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Record::MatMul(a, b), false, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.node(a)?.value.add(&self.node(b)?.value)?;
        self.flops += value.len() as u64;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Record::Add(a, b), false, needs))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        if !factor.is_finite() {
            return Err(Error::NonFinite {
                context: "scale factor".to_string(),
            });
        }
        let value = self.node(a)?.value.scale(factor);
        self.flops += value.len() as u64;
        let needs = self.needs(a);
        Ok(self.push(value, Record::Scale(a, factor), false, needs))
    }

    pub fn row_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.node(a)?.value.row_softmax();
        self.flops += 4 * value.len() as u64;
        let needs = self.needs(a);
        Ok(self.push(value, Record::RowSoftmax(a), false, needs))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let input = &self.node(a)?.value;
        if input.data().iter().any(|v| *v <= 0.0) {
            return Err(Error::NonFinite {
                context: "log of non-positive value".to_string(),
            });
        }
        let value = input.map(f64::ln);
        self.flops += value.len() as u64;
        let needs = self.needs(a);
        Ok(self.push(value, Record::Log(a), false, needs))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.node(a)?.value.map(f64::tanh);
        self.flops += value.len() as u64;
        let needs = self.needs(a);
        Ok(self.push(value, Record::Tanh(a), false, needs))
    }

    pub fn gather_rows(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        let value = self.node(a)?.value.gather_rows(indices)?;
        self.flops += value.len() as u64;
        let needs = self.needs(a);
        Ok(self.push(value, Record::GatherRows(a, indices.to_vec()), false, needs))
    }

    pub fn pick_per_row(&mut self, a: NodeId, cols: &[usize]) -> Result<NodeId> {
        let value = self.node(a)?.value.pick_per_row(cols)?;
        self.flops += value.len() as u64;
        let needs = self.needs(a);
        Ok(self.push(value, Record::PickPerRow(a, cols.to_vec()), false, needs))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let value = Matrix::from_vec(1, 1, vec![self.node(a)?.value.mean()])?;
        self.flops += self.node(a)?.value.len() as u64;
        let needs = self.needs(a);
        Ok(self.push(value, Record::Mean(a), false, needs))
    }

    pub fn row_l2_normalize(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.node(a)?.value.row_l2_normalize();
        self.flops += 3 * value.len() as u64;
        let needs = self.needs(a);
        Ok(self.push(value, Record::RowL2Normalize(a), false, needs))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.node(a)?.value.transpose();
        self.flops += value.len() as u64;
        let needs = self.needs(a);
        Ok(self.push(value, Record::Transpose(a), false, needs))
    }

    pub fn append_ones_col(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.node(a)?.value.append_ones_col();
        self.flops += value.len() as u64;
        let needs = self.needs(a);
        Ok(self.push(value, Record::AppendOnesCol(a), false, needs))
    }

    /// Reverse pass from a scalar loss node. Returns gradients for the
    /// trainable leaves only; everything else is internal.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_node = self.node(loss)?;
        if loss_node.value.shape() != (1, 1) {
            return Err(Error::State {
                message: format!(
                    "backward needs a scalar loss, got {}x{}",
                    loss_node.value.rows(),
                    loss_node.value.cols()
                ),
            });
        }

        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.index()] = Some(Matrix::filled(1, 1, 1.0)?);

        for idx in (0..=loss.index()).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad && !matches!(node.record, Record::Leaf) {
                continue;
            }
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            match &node.record {
                Record::Leaf => {
                    grads[idx] = Some(grad);
                    continue;
                }
                Record::MatMul(a, b) => {
                    if self.needs(*a) {
                        let d = grad.matmul(&self.nodes[b.index()].value.transpose())?;
                        self.accumulate(&mut grads, *a, d)?;
                    }
                    if self.needs(*b) {
                        let d = self.nodes[a.index()].value.transpose().matmul(&grad)?;
                        self.accumulate(&mut grads, *b, d)?;
                    }
                }
                Record::Add(a, b) => {
                    if self.needs(*a) {
                        self.accumulate(&mut grads, *a, grad.clone())?;
                    }
                    if self.needs(*b) {
                        self.accumulate(&mut grads, *b, grad)?;
                    }
                }
                Record::Scale(a, factor) => {
                    if self.needs(*a) {
                        self.accumulate(&mut grads, *a, grad.scale(*factor))?;
                    }
                }
                Record::RowSoftmax(a) => {
                    if self.needs(*a) {
                        let p = &node.value;
                        let mut d = grad.hadamard(p)?;
                        for r in 0..p.rows() {
                            let dot: f64 = d.row(r).iter().sum();
                            for c in 0..p.cols() {
                                let v = d.get(r, c) - p.get(r, c) * dot;
                                d.set(r, c, v);
                            }
                        }
                        self.accumulate(&mut grads, *a, d)?;
                    }
                }
                Record::Log(a) => {
                    if self.needs(*a) {
                        let x = &self.nodes[a.index()].value;
                        let d = grad.hadamard(&x.map(|v| 1.0 / v))?;
                        self.accumulate(&mut grads, *a, d)?;
                    }
                }
                Record::Tanh(a) => {
                    if self.needs(*a) {
                        let y = &node.value;
                        let d = grad.hadamard(&y.map(|v| 1.0 - v * v))?;
                        self.accumulate(&mut grads, *a, d)?;
                    }
                }
                Record::GatherRows(a, indices) => {
                    if self.needs(*a) {
                        let src = &self.nodes[a.index()].value;
                        let mut d = Matrix::zeros(src.rows(), src.cols())?;
                        for (out_row, &src_row) in indices.iter().enumerate() {
                            for c in 0..src.cols() {
                                let v = d.get(src_row, c) + grad.get(out_row, c);
                                d.set(src_row, c, v);
                            }
                        }
                        self.accumulate(&mut grads, *a, d)?;
                    }
                }
                Record::PickPerRow(a, cols) => {
                    if self.needs(*a) {
                        let src = &self.nodes[a.index()].value;
                        let mut d = Matrix::zeros(src.rows(), src.cols())?;
                        for (r, &c) in cols.iter().enumerate() {
                            d.set(r, c, grad.get(r, 0));
                        }
                        self.accumulate(&mut grads, *a, d)?;
                    }
                }
                Record::Mean(a) => {
                    if self.needs(*a) {
                        let src = &self.nodes[a.index()].value;
                        let g = grad.get(0, 0) / src.len() as f64;
                        let d = Matrix::filled(src.rows(), src.cols(), g)?;
                        self.accumulate(&mut grads, *a, d)?;
                    }
                }
                Record::RowL2Normalize(a) => {
                    if self.needs(*a) {
                        let x = &self.nodes[a.index()].value;
                        let y = &node.value;
                        let mut d = Matrix::zeros(x.rows(), x.cols())?;
                        for r in 0..x.rows() {
                            let norm = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                            if norm == 0.0 {
                                continue; // zero rows are mapped to zero; no gradient flows
                            }
                            let gy: f64 = grad
                                .row(r)
                                .iter()
                                .zip(y.row(r))
                                .map(|(g, v)| g * v)
                                .sum();
                            for c in 0..x.cols() {
                                d.set(r, c, (grad.get(r, c) - gy * y.get(r, c)) / norm);
                            }
                        }
                        self.accumulate(&mut grads, *a, d)?;
                    }
                }
                Record::Transpose(a) => {
                    if self.needs(*a) {
                        self.accumulate(&mut grads, *a, grad.transpose())?;
                    }
                }
                Record::AppendOnesCol(a) => {
                    if self.needs(*a) {
                        let src = &self.nodes[a.index()].value;
                        let mut d = Matrix::zeros(src.rows(), src.cols())?;
                        for r in 0..src.rows() {
                            for c in 0..src.cols() {
                                d.set(r, c, grad.get(r, c));
                            }
                        }
                        self.accumulate(&mut grads, *a, d)?;
                    }
                }
            }
        }

        let mut out = Gradients::default();
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.trainable {
                if let Some(g) = grads[idx].take() {
                    out.by_node.insert(idx, g);
                }
            }
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], id: NodeId, delta: Matrix) -> Result<()> {
        match &mut grads[id.index()] {
            Some(existing) => existing.axpy(1.0, &delta)?,
            slot @ None => *slot = Some(delta),
        }
        Ok(())
    }
}
