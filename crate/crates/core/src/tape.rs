//! Reverse-mode differentiation over a linear operation tape.
//!
//! Forward passes append primitive operations to the tape; operands are
//! referenced by node index, so topological order holds by
//! construction. `backward` walks the recorded operations once in
//! reverse, accumulating vector-Jacobian products into per-node
//! gradient buffers. A tape supports exactly one backward pass.

use std::fmt;

use crate::tensor::{mm_nn_acc, mm_nt_acc, mm_tn_acc, Tensor};

pub type NodeId = usize;

const RMS_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum TapeError {
    DimMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    TargetOutOfRange { index: usize, target: u32, vocab: usize },
    EmptyBatch,
    NonScalarLoss { shape: Vec<usize> },
    BackwardReuse,
}

impl fmt::Display for TapeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DimMismatch { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes {lhs:?} and {rhs:?}")
            }
            Self::TargetOutOfRange { index, target, vocab } => {
                write!(f, "target id {target} at position {index} outside vocab of {vocab}")
            }
            Self::EmptyBatch => write!(f, "cross-entropy over an empty batch"),
            Self::NonScalarLoss { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            Self::BackwardReuse => write!(f, "tape already consumed by a backward pass"),
        }
    }
}

impl std::error::Error for TapeError {}

#[derive(Debug, Clone)]
enum Op {
    MatMul { a: NodeId, b: NodeId },
    /// `a @ b^T`; `b` is stored row-major as `[n, k]`.
    MatMulNT { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Scale { a: NodeId, c: f64 },
    Relu { a: NodeId },
    /// Row-wise RMS normalization with a learned per-column gain.
    RmsNorm { a: NodeId, gain: NodeId },
    SoftmaxRows { a: NodeId },
    /// Row `i` attends to columns `0..=i`; input must be square.
    CausalSoftmaxRows { a: NodeId },
    ColSlice { a: NodeId, start: usize, len: usize },
    ColConcat { parts: Vec<NodeId> },
    EmbedRows { table: NodeId, ids: Vec<u32> },
    /// Mean negative log-likelihood of `targets` under row softmaxes.
    CrossEntropy { logits: NodeId, targets: Vec<u32> },
    SumAll { a: NodeId },
}

enum Node {
    Leaf,
    Op(Op),
}

/// Append-only record of one forward computation.
pub struct Tape {
    vals: Vec<Tensor>,
    nodes: Vec<Node>,
    op_count: usize,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { vals: Vec::new(), nodes: Vec::new(), op_count: 0, consumed: false }
    }

    /// Number of recorded primitive operations (leaves excluded).
    pub fn op_count(&self) -> usize {
        self.op_count
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.vals[id]
    }

    /// Registers an input value (parameter or constant).
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.vals.push(t);
        self.nodes.push(Node::Leaf);
        self.vals.len() - 1
    }

    fn push(&mut self, op: Op, out: Tensor) -> NodeId {
        self.vals.push(out);
        self.nodes.push(Node::Op(op));
        self.op_count += 1;
        self.vals.len() - 1
    }

    fn dims2(&self, id: NodeId) -> (usize, usize) {
        (self.vals[id].rows(), self.vals[id].cols())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        let (m, k) = self.dims2(a);
        let (k2, n) = self.dims2(b);
        if k != k2 {
            return Err(TapeError::DimMismatch {
                op: "matmul",
                lhs: self.vals[a].shape().to_vec(),
                rhs: self.vals[b].shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        mm_nn_acc(self.vals[a].data(), self.vals[b].data(), m, k, n, &mut out);
        Ok(self.push(Op::MatMul { a, b }, tensor2(m, n, out)))
    }

    /// `a @ b^T` where `a: [m,k]`, `b: [n,k]`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        let (m, k) = self.dims2(a);
        let (n, k2) = self.dims2(b);
        if k != k2 {
            return Err(TapeError::DimMismatch {
                op: "matmul_nt",
                lhs: self.vals[a].shape().to_vec(),
                rhs: self.vals[b].shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        mm_nt_acc(self.vals[a].data(), self.vals[b].data(), m, k, n, &mut out);
        Ok(self.push(Op::MatMulNT { a, b }, tensor2(m, n, out)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        if self.vals[a].shape() != self.vals[b].shape() {
            return Err(TapeError::DimMismatch {
                op: "add",
                lhs: self.vals[a].shape().to_vec(),
                rhs: self.vals[b].shape().to_vec(),
            });
        }
        let out: Vec<f64> = self.vals[a]
            .data()
            .iter()
            .zip(self.vals[b].data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.vals[a].shape().to_vec();
        Ok(self.push(Op::Add { a, b }, raw(shape, out)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let out: Vec<f64> = self.vals[a].data().iter().map(|x| x * c).collect();
        let shape = self.vals[a].shape().to_vec();
        self.push(Op::Scale { a, c }, raw(shape, out))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let out: Vec<f64> = self.vals[a].data().iter().map(|x| x.max(0.0)).collect();
        let shape = self.vals[a].shape().to_vec();
        self.push(Op::Relu { a }, raw(shape, out))
    }

    pub fn rms_norm(&mut self, a: NodeId, gain: NodeId) -> Result<NodeId, TapeError> {
        let (rows, cols) = self.dims2(a);
        if self.vals[gain].len() != cols {
            return Err(TapeError::DimMismatch {
                op: "rms_norm",
                lhs: self.vals[a].shape().to_vec(),
                rhs: self.vals[gain].shape().to_vec(),
            });
        }
        let x = self.vals[a].data();
        let g = self.vals[gain].data();
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            let row = &x[i * cols..(i + 1) * cols];
            let ms = row.iter().map(|v| v * v).sum::<f64>() / cols as f64;
            let inv = 1.0 / (ms + RMS_NORM_EPS).sqrt();
            for j in 0..cols {
                out[i * cols + j] = row[j] * inv * g[j];
            }
        }
        Ok(self.push(Op::RmsNorm { a, gain }, tensor2(rows, cols, out)))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let (rows, cols) = self.dims2(a);
        let x = self.vals[a].data();
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            softmax_into(&x[i * cols..(i + 1) * cols], &mut out[i * cols..(i + 1) * cols]);
        }
        self.push(Op::SoftmaxRows { a }, tensor2(rows, cols, out))
    }

    pub fn causal_softmax_rows(&mut self, a: NodeId) -> Result<NodeId, TapeError> {
        let (rows, cols) = self.dims2(a);
        if rows != cols {
            return Err(TapeError::DimMismatch {
                op: "causal_softmax_rows",
                lhs: self.vals[a].shape().to_vec(),
                rhs: vec![rows, rows],
            });
        }
        let x = self.vals[a].data();
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            let w = i + 1;
            softmax_into(&x[i * cols..i * cols + w], &mut out[i * cols..i * cols + w]);
        }
        Ok(self.push(Op::CausalSoftmaxRows { a }, tensor2(rows, cols, out)))
    }

    pub fn col_slice(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, TapeError> {
        let (rows, cols) = self.dims2(a);
        if start + len > cols {
            return Err(TapeError::DimMismatch {
                op: "col_slice",
                lhs: self.vals[a].shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let x = self.vals[a].data();
        let mut out = vec![0.0; rows * len];
        for i in 0..rows {
            out[i * len..(i + 1) * len].copy_from_slice(&x[i * cols + start..i * cols + start + len]);
        }
        Ok(self.push(Op::ColSlice { a, start, len }, tensor2(rows, len, out)))
    }

    pub fn col_concat(&mut self, parts: &[NodeId]) -> Result<NodeId, TapeError> {
        assert!(!parts.is_empty(), "col_concat of zero parts");
        let rows = self.vals[parts[0]].rows();
        let mut cols = 0;
        for &p in parts {
            if self.vals[p].rows() != rows {
                return Err(TapeError::DimMismatch {
                    op: "col_concat",
                    lhs: self.vals[parts[0]].shape().to_vec(),
                    rhs: self.vals[p].shape().to_vec(),
                });
            }
            cols += self.vals[p].cols();
        }
        let mut out = vec![0.0; rows * cols];
        let mut at = 0;
        for &p in parts {
            let pc = self.vals[p].cols();
            let x = self.vals[p].data();
            for i in 0..rows {
                out[i * cols + at..i * cols + at + pc].copy_from_slice(&x[i * pc..(i + 1) * pc]);
            }
            at += pc;
        }
        Ok(self.push(Op::ColConcat { parts: parts.to_vec() }, tensor2(rows, cols, out)))
    }

    /// Gathers `table` rows by id: output row `i` is `table[ids[i]]`.
    pub fn embed_rows(&mut self, table: NodeId, ids: &[u32]) -> Result<NodeId, TapeError> {
        let (v, d) = self.dims2(table);
        for (index, &id) in ids.iter().enumerate() {
            if id as usize >= v {
                return Err(TapeError::TargetOutOfRange { index, target: id, vocab: v });
            }
        }
        let x = self.vals[table].data();
        let mut out = vec![0.0; ids.len() * d];
        for (i, &id) in ids.iter().enumerate() {
            out[i * d..(i + 1) * d].copy_from_slice(&x[id as usize * d..(id as usize + 1) * d]);
        }
        Ok(self.push(Op::EmbedRows { table, ids: ids.to_vec() }, tensor2(ids.len(), d, out)))
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[u32]) -> Result<NodeId, TapeError> {
        let (rows, v) = self.dims2(logits);
        if targets.is_empty() || rows == 0 {
            return Err(TapeError::EmptyBatch);
        }
        if targets.len() != rows {
            return Err(TapeError::DimMismatch {
                op: "cross_entropy",
                lhs: self.vals[logits].shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        for (index, &t) in targets.iter().enumerate() {
            if t as usize >= v {
                return Err(TapeError::TargetOutOfRange { index, target: t, vocab: v });
            }
        }
        let x = self.vals[logits].data();
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = &x[i * v..(i + 1) * v];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|&l| (l - max).exp()).sum::<f64>().ln() + max;
            total += lse - row[t as usize];
        }
        let loss = total / rows as f64;
        Ok(self.push(Op::CrossEntropy { logits, targets: targets.to_vec() }, Tensor::scalar(loss)))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s = self.vals[a].data().iter().sum();
        self.push(Op::SumAll { a }, Tensor::scalar(s))
    }

    /// Propagates gradients from a scalar loss back to every reachable
    /// node. Consumes the tape's single backward allowance.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients, TapeError> {
        if self.consumed {
            return Err(TapeError::BackwardReuse);
        }
        if !self.vals[loss].is_scalar() {
            return Err(TapeError::NonScalarLoss { shape: self.vals[loss].shape().to_vec() });
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.vals.len()];
        grads[loss] = Some(vec![1.0]);

        for id in (0..self.nodes.len()).rev() {
            let op = match &self.nodes[id] {
                Node::Leaf => continue,
                Node::Op(op) => op.clone(),
            };
            let go = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(&op, id, &go, &mut grads);
            grads[id] = Some(go);
        }

        let shapes = self.vals.iter().map(|t| t.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Vec<f64>>], id: NodeId) -> &'g mut [f64] {
        grads[id].get_or_insert_with(|| vec![0.0; self.vals[id].len()])
    }

    fn accumulate(&self, op: &Op, out: NodeId, go: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match *op {
            Op::MatMul { a, b } => {
                let (m, k) = (self.vals[a].rows(), self.vals[a].cols());
                let n = self.vals[b].cols();
                mm_nt_acc(go, self.vals[b].data(), m, n, k, self.grad_buf(grads, a));
                mm_tn_acc(self.vals[a].data(), go, m, k, n, self.grad_buf(grads, b));
            }
            Op::MatMulNT { a, b } => {
                let (m, k) = (self.vals[a].rows(), self.vals[a].cols());
                let n = self.vals[b].rows();
                mm_nn_acc(go, self.vals[b].data(), m, n, k, self.grad_buf(grads, a));
                mm_tn_acc(go, self.vals[a].data(), m, n, k, self.grad_buf(grads, b));
            }
            Op::Add { a, b } => {
                for (g, &u) in self.grad_buf(grads, a).iter_mut().zip(go) {
                    *g += u;
                }
                for (g, &u) in self.grad_buf(grads, b).iter_mut().zip(go) {
                    *g += u;
                }
            }
            Op::Scale { a, c } => {
                for (g, &u) in self.grad_buf(grads, a).iter_mut().zip(go) {
                    *g += c * u;
                }
            }
            Op::Relu { a } => {
                let x = self.vals[a].data();
                for ((g, &u), &xv) in self.grad_buf(grads, a).iter_mut().zip(go).zip(x) {
                    if xv > 0.0 {
                        *g += u;
                    }
                }
            }
            Op::RmsNorm { a, gain } => {
                let (rows, cols) = (self.vals[a].rows(), self.vals[a].cols());
                let x = self.vals[a].data();
                let g = self.vals[gain].data();
                {
                    let da = self.grad_buf(grads, a);
                    for i in 0..rows {
                        let row = &x[i * cols..(i + 1) * cols];
                        let urow = &go[i * cols..(i + 1) * cols];
                        let ms = row.iter().map(|v| v * v).sum::<f64>() / cols as f64;
                        let r = (ms + RMS_NORM_EPS).sqrt();
                        let dot: f64 =
                            (0..cols).map(|j| urow[j] * g[j] * row[j]).sum::<f64>();
                        let coef = dot / (cols as f64 * r * r * r);
                        for j in 0..cols {
                            da[i * cols + j] += urow[j] * g[j] / r - row[j] * coef;
                        }
                    }
                }
                let dg = self.grad_buf(grads, gain);
                for i in 0..rows {
                    let row = &x[i * cols..(i + 1) * cols];
                    let urow = &go[i * cols..(i + 1) * cols];
                    let ms = row.iter().map(|v| v * v).sum::<f64>() / cols as f64;
                    let inv = 1.0 / (ms + RMS_NORM_EPS).sqrt();
                    for j in 0..cols {
                        dg[j] += urow[j] * row[j] * inv;
                    }
                }
            }
            Op::SoftmaxRows { a } => {
                let (rows, cols) = (self.vals[a].rows(), self.vals[a].cols());
                let y = self.vals[out].data();
                let da = self.grad_buf(grads, a);
                for i in 0..rows {
                    softmax_backward_row(
                        &y[i * cols..(i + 1) * cols],
                        &go[i * cols..(i + 1) * cols],
                        &mut da[i * cols..(i + 1) * cols],
                    );
                }
            }
            Op::CausalSoftmaxRows { a } => {
                let (rows, cols) = (self.vals[a].rows(), self.vals[a].cols());
                let y = self.vals[out].data();
                let da = self.grad_buf(grads, a);
                for i in 0..rows {
                    let w = i + 1;
                    softmax_backward_row(
                        &y[i * cols..i * cols + w],
                        &go[i * cols..i * cols + w],
                        &mut da[i * cols..i * cols + w],
                    );
                }
            }
            Op::ColSlice { a, start, len } => {
                let cols = self.vals[a].cols();
                let rows = self.vals[a].rows();
                let da = self.grad_buf(grads, a);
                for i in 0..rows {
                    for j in 0..len {
                        da[i * cols + start + j] += go[i * len + j];
                    }
                }
            }
            Op::ColConcat { ref parts } => {
                let cols = self.vals[out].cols();
                let rows = self.vals[out].rows();
                let mut at = 0;
                for &p in parts {
                    let pc = self.vals[p].cols();
                    let dp = self.grad_buf(grads, p);
                    for i in 0..rows {
                        for j in 0..pc {
                            dp[i * pc + j] += go[i * cols + at + j];
                        }
                    }
                    at += pc;
                }
            }
            Op::EmbedRows { table, ref ids } => {
                let d = self.vals[table].cols();
                let dt = self.grad_buf(grads, table);
                for (i, &id) in ids.iter().enumerate() {
                    let dst = &mut dt[id as usize * d..(id as usize + 1) * d];
                    for (g, &u) in dst.iter_mut().zip(&go[i * d..(i + 1) * d]) {
                        *g += u;
                    }
                }
            }
            Op::CrossEntropy { logits, ref targets } => {
                let (rows, v) = (self.vals[logits].rows(), self.vals[logits].cols());
                let x = self.vals[logits].data();
                let scale = go[0] / rows as f64;
                let dl = self.grad_buf(grads, logits);
                let mut prow = vec![0.0; v];
                for (i, &t) in targets.iter().enumerate() {
                    softmax_into(&x[i * v..(i + 1) * v], &mut prow);
                    for j in 0..v {
                        let onehot = if j == t as usize { 1.0 } else { 0.0 };
                        dl[i * v + j] += (prow[j] - onehot) * scale;
                    }
                }
            }
            Op::SumAll { a } => {
                for g in self.grad_buf(grads, a).iter_mut() {
                    *g += go[0];
                }
            }
        }
    }
}

/// Gradient buffers produced by one backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id].as_deref()
    }

    /// Gradient as a tensor; nodes the loss never reached yield zeros.
    pub fn dense(&self, id: NodeId) -> Tensor {
        match &self.grads[id] {
            Some(g) => raw(self.shapes[id].clone(), g.clone()),
            None => Tensor::zeros(self.shapes[id].clone()),
        }
    }
}

fn softmax_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(row) {
        let e = (l - max).exp();
        *o = e;
        sum += e;
    }
    let inv = 1.0 / sum;
    for o in out.iter_mut().take(row.len()) {
        *o *= inv;
    }
}

fn softmax_backward_row(y: &[f64], dy: &[f64], dx: &mut [f64]) {
    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    for ((g, &yv), &uv) in dx.iter_mut().zip(y).zip(dy) {
        *g += yv * (uv - dot);
    }
}

fn tensor2(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    raw(vec![rows, cols], data)
}

fn raw(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
    Tensor::from_raw(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf2(tape: &mut Tape, rows: usize, cols: usize, data: Vec<f64>) -> NodeId {
        tape.leaf(Tensor::from_vec(vec![rows, cols], data).unwrap())
    }

    #[test]
    fn matmul_identity_and_zero() {
        let mut tape = Tape::new();
        let eye = leaf2(&mut tape, 3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let b = leaf2(&mut tape, 3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let prod = tape.matmul(eye, b).unwrap();
        assert_eq!(tape.value(prod).data(), tape.value(b).data());

        let zero = tape.leaf(Tensor::zeros(vec![3, 3]));
        let zprod = tape.matmul(zero, b).unwrap();
        assert!(tape.value(zprod).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_hand_example() {
        let mut tape = Tape::new();
        let a = leaf2(&mut tape, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let b = leaf2(&mut tape, 2, 1, vec![1.0, 1.0]);
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_shapes() {
        let mut tape = Tape::new();
        let a = leaf2(&mut tape, 2, 3, vec![0.0; 6]);
        let b = leaf2(&mut tape, 2, 2, vec![0.0; 4]);
        let err = tape.matmul(a, b).unwrap_err();
        match err {
            TapeError::DimMismatch { lhs, rhs, .. } => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 2]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut tape = Tape::new();
        let logits = leaf2(&mut tape, 1, 8, vec![0.25; 8]);
        let loss = tape.cross_entropy(logits, &[3]).unwrap();
        let expect = (8.0f64).ln();
        assert!((tape.value(loss).scalar_value() - expect).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_peaked_logit() {
        let mut tape = Tape::new();
        let mut row = vec![0.0; 8];
        row[5] = 30.0;
        let logits = leaf2(&mut tape, 1, 8, row);
        let loss = tape.cross_entropy(logits, &[5]).unwrap();
        assert!(tape.value(loss).scalar_value() < 1e-9);
    }

    #[test]
    fn cross_entropy_hand_value() {
        // logits [1,2,3], target 2: loss = ln(e+e^2+e^3) - 3
        let mut tape = Tape::new();
        let logits = leaf2(&mut tape, 1, 3, vec![1.0, 2.0, 3.0]);
        let loss = tape.cross_entropy(logits, &[2]).unwrap();
        let expect = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln() - 3.0;
        assert!((tape.value(loss).scalar_value() - expect).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_target_out_of_range() {
        let mut tape = Tape::new();
        let logits = leaf2(&mut tape, 1, 3, vec![0.0; 3]);
        let err = tape.cross_entropy(logits, &[3]).unwrap_err();
        assert!(matches!(err, TapeError::TargetOutOfRange { target: 3, vocab: 3, .. }));
    }

    #[test]
    fn cross_entropy_nonnegative_random() {
        let mut rng = crate::rng::Rng::new(11);
        for _ in 0..50 {
            let mut tape = Tape::new();
            let data: Vec<f64> = (0..12).map(|_| rng.uniform_in(-4.0, 4.0)).collect();
            let logits = leaf2(&mut tape, 3, 4, data);
            let t: Vec<u32> = (0..3).map(|_| rng.below(4) as u32).collect();
            let loss = tape.cross_entropy(logits, &t).unwrap();
            assert!(tape.value(loss).scalar_value() >= 0.0);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = crate::rng::Rng::new(4);
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..40).map(|_| rng.uniform_in(-6.0, 6.0)).collect();
        let a = leaf2(&mut tape, 5, 8, data);
        let s = tape.softmax_rows(a);
        for i in 0..5 {
            let row = &tape.value(s).data()[i * 8..(i + 1) * 8];
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut tape = Tape::new();
        let a = leaf2(&mut tape, 3, 3, vec![1.0; 9]);
        let s = tape.causal_softmax_rows(a).unwrap();
        let y = tape.value(s).data();
        assert_eq!(y[0], 1.0);
        assert_eq!(y[1], 0.0);
        assert_eq!(y[2], 0.0);
        assert!((y[3] - 0.5).abs() < 1e-12 && (y[4] - 0.5).abs() < 1e-12);
        assert_eq!(y[5], 0.0);
        for v in &y[6..9] {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_sum_of_squares() {
        // f(x) = sum(x^2) via x @ x^T on a row vector; grad = 2x.
        let mut tape = Tape::new();
        let x = leaf2(&mut tape, 1, 4, vec![1.0, -2.0, 3.0, 0.5]);
        let loss = tape.matmul_nt(x, x).unwrap();
        let grads = tape.backward(loss).unwrap();
        let g = grads.dense(x);
        assert_eq!(g.data(), &[2.0, -4.0, 6.0, 1.0]);
    }

    #[test]
    fn backward_constant_gives_zero_grad() {
        let mut tape = Tape::new();
        let x = leaf2(&mut tape, 1, 3, vec![1.0, 2.0, 3.0]);
        let c = tape.leaf(Tensor::scalar(5.0));
        let grads = tape.backward(c).unwrap();
        assert!(grads.get(x).is_none());
        assert!(grads.dense(x).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_nonscalar() {
        let mut tape = Tape::new();
        let x = leaf2(&mut tape, 1, 3, vec![1.0, 2.0, 3.0]);
        let y = tape.relu(x);
        let err = tape.backward(y).unwrap_err();
        assert!(matches!(err, TapeError::NonScalarLoss { .. }));
    }

    #[test]
    fn backward_reuse_is_error() {
        let mut tape = Tape::new();
        let x = leaf2(&mut tape, 1, 2, vec![1.0, 2.0]);
        let loss = tape.sum_all(x);
        tape.backward(loss).unwrap();
        let err = tape.backward(loss).unwrap_err();
        assert!(matches!(err, TapeError::BackwardReuse));
    }

    #[test]
    fn op_count_matches_recorded_primitives() {
        let mut tape = Tape::new();
        let x = leaf2(&mut tape, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let y = leaf2(&mut tape, 2, 2, vec![0.5; 4]);
        assert_eq!(tape.op_count(), 0);
        let a = tape.matmul(x, y).unwrap();
        let b = tape.relu(a);
        let _ = tape.sum_all(b);
        assert_eq!(tape.op_count(), 3);
    }

    /// Central finite differences on every primitive, composed into a
    /// scalar via `sum_all`, as an independent gradient oracle.
    #[test]
    fn finite_difference_check_per_op() {
        let mut rng = crate::rng::Rng::new(99);
        let h = 1e-5;

        // Builds the scalar output from leaf data; returns (loss, tape, node ids).
        type Build = dyn Fn(&mut Tape, &[Vec<f64>]) -> NodeId;
        struct Case {
            name: &'static str,
            shapes: Vec<(usize, usize)>,
            build: Box<Build>,
        }

        let cases: Vec<Case> = vec![
            Case {
                name: "matmul",
                shapes: vec![(3, 4), (4, 2)],
                build: Box::new(|t, d| {
                    let a = t.leaf(Tensor::from_vec(vec![3, 4], d[0].clone()).unwrap());
                    let b = t.leaf(Tensor::from_vec(vec![4, 2], d[1].clone()).unwrap());
                    let m = t.matmul(a, b).unwrap();
                    let r = t.relu(m);
                    t.sum_all(r)
                }),
            },
            Case {
                name: "matmul_nt",
                shapes: vec![(3, 4), (2, 4)],
                build: Box::new(|t, d| {
                    let a = t.leaf(Tensor::from_vec(vec![3, 4], d[0].clone()).unwrap());
                    let b = t.leaf(Tensor::from_vec(vec![2, 4], d[1].clone()).unwrap());
                    let m = t.matmul_nt(a, b).unwrap();
                    let r = t.relu(m);
                    t.sum_all(r)
                }),
            },
            Case {
                name: "rms_norm",
                shapes: vec![(3, 5), (1, 5)],
                build: Box::new(|t, d| {
                    let a = t.leaf(Tensor::from_vec(vec![3, 5], d[0].clone()).unwrap());
                    let g = t.leaf(Tensor::from_vec(vec![1, 5], d[1].clone()).unwrap());
                    let n = t.rms_norm(a, g).unwrap();
                    let m = t.matmul_nt(n, n).unwrap();
                    t.sum_all(m)
                }),
            },
            Case {
                name: "softmax_rows",
                shapes: vec![(3, 5), (3, 5)],
                build: Box::new(|t, d| {
                    let a = t.leaf(Tensor::from_vec(vec![3, 5], d[0].clone()).unwrap());
                    let w = t.leaf(Tensor::from_vec(vec![3, 5], d[1].clone()).unwrap());
                    let s = t.softmax_rows(a);
                    let m = t.matmul_nt(s, w).unwrap();
                    t.sum_all(m)
                }),
            },
            Case {
                name: "causal_softmax_rows",
                shapes: vec![(4, 4), (4, 4)],
                build: Box::new(|t, d| {
                    let a = t.leaf(Tensor::from_vec(vec![4, 4], d[0].clone()).unwrap());
                    let w = t.leaf(Tensor::from_vec(vec![4, 4], d[1].clone()).unwrap());
                    let s = t.causal_softmax_rows(a).unwrap();
                    let m = t.matmul_nt(s, w).unwrap();
                    t.sum_all(m)
                }),
            },
            Case {
                name: "slice_concat_embed_ce",
                shapes: vec![(6, 4)],
                build: Box::new(|t, d| {
                    let table = t.leaf(Tensor::from_vec(vec![6, 4], d[0].clone()).unwrap());
                    let e = t.embed_rows(table, &[4, 0, 2]).unwrap();
                    let lo = t.col_slice(e, 0, 2).unwrap();
                    let hi = t.col_slice(e, 2, 2).unwrap();
                    let cat = t.col_concat(&[hi, lo]).unwrap();
                    let logits = t.matmul_nt(cat, table).unwrap();
                    t.cross_entropy(logits, &[1, 5, 3]).unwrap()
                }),
            },
        ];

        for case in cases {
            let datas: Vec<Vec<f64>> = case
                .shapes
                .iter()
                .map(|&(r, c)| (0..r * c).map(|_| rng.uniform_in(-1.5, 1.5)).collect())
                .collect();

            let mut tape = Tape::new();
            let loss = (case.build)(&mut tape, &datas);
            // leaves were created first, in order, so ids are 0..shapes.len()
            let grads = tape.backward(loss).unwrap();

            for (leaf_idx, data) in datas.iter().enumerate() {
                let analytic = grads.dense(leaf_idx);
                for pos in 0..data.len() {
                    let mut plus = datas.clone();
                    plus[leaf_idx][pos] += h;
                    let mut tp = Tape::new();
                    let lp = (case.build)(&mut tp, &plus);
                    let mut minus = datas.clone();
                    minus[leaf_idx][pos] -= h;
                    let mut tm = Tape::new();
                    let lm = (case.build)(&mut tm, &minus);
                    let fd = (tp.value(lp).scalar_value() - tm.value(lm).scalar_value()) / (2.0 * h);
                    let an = analytic.data()[pos];
                    let denom = fd.abs().max(an.abs()).max(1e-6);
                    let rel = (fd - an).abs() / denom;
                    assert!(
                        rel <= 1e-4,
                        "{}: leaf {leaf_idx} pos {pos}: analytic {an} vs fd {fd}",
                        case.name
                    );
                }
            }
        }
    }
}
