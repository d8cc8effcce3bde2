//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Nodes are appended in evaluation order, so the tape index is a valid
//! topological order and `backward` just walks it in reverse.

use super::loss::{ctc_with_grad, xent_smoothed_with_grad};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    /// `a · bᵀ`
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// Adds a `1 × n` row to every row of the first operand.
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    SliceCols {
        src: NodeId,
        start: usize,
    },
    ConcatCols(Vec<NodeId>),
    SliceRows {
        src: NodeId,
        start: usize,
    },
    ConcatRows(Vec<NodeId>),
    Gather {
        table: NodeId,
        ids: Vec<usize>,
    },
    Unfold {
        src: NodeId,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Softmax(NodeId),
    LogSoftmax(NodeId),
    /// Output is `[h | c]`; `acts` caches the activated gates `[i f g o]`.
    LstmCell {
        z: NodeId,
        c_prev: NodeId,
        acts: Tensor,
    },
    /// Scalar loss; `grad` is the cached derivative w.r.t. the input.
    Loss {
        src: NodeId,
        grad: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> [usize; 2] {
        self.nodes[id.0].value.shape()
    }

    /// A leaf: parameter or input.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let bias = self.value(row);
        assert_eq!(bias.rows(), 1, "add_row expects a 1 x n bias");
        let mut v = self.value(a).clone();
        assert_eq!(v.cols(), bias.cols(), "add_row width mismatch");
        for r in 0..v.rows() {
            for (x, b) in v.row_mut(r).iter_mut().zip(bias.data()) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "mul shape mismatch");
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let v = Tensor::from_vec(x.rows(), x.cols(), data);
        self.push(v, Op::Mul(a, b))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn slice_cols(&mut self, src: NodeId, start: usize, len: usize) -> NodeId {
        let s = self.value(src);
        assert!(start + len <= s.cols(), "slice_cols out of range");
        let mut v = Tensor::zeros(s.rows(), len);
        for r in 0..s.rows() {
            v.row_mut(r).copy_from_slice(&s.row(r)[start..start + len]);
        }
        self.push(v, Op::SliceCols { src, start })
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                v.row_mut(r)[off..off + t.cols()].copy_from_slice(t.row(r));
            }
            off += t.cols();
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, src: NodeId, start: usize, len: usize) -> NodeId {
        let s = self.value(src);
        assert!(start + len <= s.rows(), "slice_rows out of range");
        let cols = s.cols();
        let v = Tensor::from_vec(
            len,
            cols,
            s.data()[start * cols..(start + len) * cols].to_vec(),
        );
        self.push(v, Op::SliceRows { src, start })
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        self.push(
            Tensor::from_vec(rows, cols, data),
            Op::ConcatRows(parts.to_vec()),
        )
    }

    /// Row gather: embedding lookup, or beam reordering of decoder states.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let t = self.value(table);
        let cols = t.cols();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let v = Tensor::from_vec(ids.len(), cols, data);
        self.push(
            v,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Frame windows for a strided 1-D convolution: row `t` holds input rows
    /// `t·stride - pad .. t·stride - pad + kernel` side by side (zeros outside).
    /// Output length is `ceil(rows / stride)`.
    pub fn unfold(&mut self, src: NodeId, kernel: usize, stride: usize, pad: usize) -> NodeId {
        let s = self.value(src);
        let (t_in, c) = (s.rows(), s.cols());
        let t_out = t_in.div_ceil(stride);
        let mut v = Tensor::zeros(t_out, kernel * c);
        for t in 0..t_out {
            for j in 0..kernel {
                let pos = (t * stride + j) as isize - pad as isize;
                if pos >= 0 && (pos as usize) < t_in {
                    v.row_mut(t)[j * c..(j + 1) * c].copy_from_slice(s.row(pos as usize));
                }
            }
        }
        self.push(
            v,
            Op::Unfold {
                src,
                kernel,
                stride,
                pad,
            },
        )
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).softmax_rows();
        self.push(v, Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).log_softmax_rows();
        self.push(v, Op::LogSoftmax(a))
    }

    /// One LSTM step from pre-activations `z = [i f g o]` (`b × 4H`) and the
    /// previous cell state (`b × H`). Returns a `b × 2H` node holding `[h | c]`.
    pub fn lstm_cell(&mut self, z: NodeId, c_prev: NodeId) -> NodeId {
        let (zv, cv) = (self.value(z), self.value(c_prev));
        let (b, h4) = (zv.rows(), zv.cols());
        let h = h4 / 4;
        assert_eq!(cv.shape(), [b, h], "lstm_cell state shape");
        let mut acts = Tensor::zeros(b, h4);
        let mut out = Tensor::zeros(b, 2 * h);
        for r in 0..b {
            let zr = zv.row(r);
            let a = acts.row_mut(r);
            for k in 0..h {
                a[k] = sigmoid(zr[k]);
                a[h + k] = sigmoid(zr[h + k]);
                a[2 * h + k] = zr[2 * h + k].tanh();
                a[3 * h + k] = sigmoid(zr[3 * h + k]);
            }
            let cp = cv.row(r);
            let o = out.row_mut(r);
            for k in 0..h {
                let c = a[h + k] * cp[k] + a[k] * a[2 * h + k];
                o[h + k] = c;
                o[k] = a[3 * h + k] * c.tanh();
            }
        }
        self.push(out, Op::LstmCell { z, c_prev, acts })
    }

    /// Label-smoothed cross-entropy of `logits` rows against `targets`.
    pub fn xent_smoothed(&mut self, logits: NodeId, targets: &[usize], eps: f64) -> Result<NodeId> {
        let (loss, grad) = xent_smoothed_with_grad(self.value(logits), targets, eps)?;
        Ok(self.push(Tensor::scalar(loss), Op::Loss { src: logits, grad }))
    }

    /// CTC loss over a node of log posteriors.
    pub fn ctc(&mut self, log_posteriors: NodeId, target: &[usize]) -> Result<NodeId> {
        let (loss, grad) = ctc_with_grad(self.value(log_posteriors), target)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Loss {
                src: log_posteriors,
                grad,
            },
        ))
    }

    /// Back-propagates from a scalar node. Every node reachable from `loss`
    /// gets a gradient; unrelated nodes get none.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::NoForward);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::ShapeMismatch {
                tensor: "loss".into(),
                expected: vec![1, 1],
                found: self.value(loss).shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let mut acc = |id: NodeId, delta: Tensor| match &mut grads[id.0] {
            Some(t) => t.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                acc(*a, g.matmul_t(self.value(*b)));
                acc(*b, self.value(*a).t_matmul(g));
            }
            Op::MatMulT(a, b) => {
                acc(*a, g.matmul(self.value(*b)));
                acc(*b, g.t_matmul(self.value(*a)));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                let mut s = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (x, y) in s.data_mut().iter_mut().zip(g.row(r)) {
                        *x += y;
                    }
                }
                acc(*row, s);
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let ga = g.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
                let gb = g.data().iter().zip(x.data()).map(|(p, q)| p * q).collect();
                acc(*a, Tensor::from_vec(g.rows(), g.cols(), ga));
                acc(*b, Tensor::from_vec(g.rows(), g.cols(), gb));
            }
            Op::Tanh(a) => {
                let y = &node.value;
                let d = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(p, t)| p * (1.0 - t * t))
                    .collect();
                acc(*a, Tensor::from_vec(g.rows(), g.cols(), d));
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                let d = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(p, s)| p * s * (1.0 - s))
                    .collect();
                acc(*a, Tensor::from_vec(g.rows(), g.cols(), d));
            }
            Op::SliceCols { src, start } => {
                let [rows, cols] = self.shape(*src);
                let mut d = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                acc(*src, d);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    let mut d = Tensor::zeros(g.rows(), w);
                    for r in 0..g.rows() {
                        d.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                    }
                    acc(p, d);
                    off += w;
                }
            }
            Op::SliceRows { src, start } => {
                let [rows, cols] = self.shape(*src);
                let mut d = Tensor::zeros(rows, cols);
                d.data_mut()[start * cols..(start + g.rows()) * cols].copy_from_slice(g.data());
                acc(*src, d);
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut off = 0;
                for &p in parts {
                    let h = self.shape(p)[0];
                    let d =
                        Tensor::from_vec(h, cols, g.data()[off * cols..(off + h) * cols].to_vec());
                    acc(p, d);
                    off += h;
                }
            }
            Op::Gather { table, ids } => {
                let [rows, cols] = self.shape(*table);
                let mut d = Tensor::zeros(rows, cols);
                for (r, &i) in ids.iter().enumerate() {
                    for (x, y) in d.row_mut(i).iter_mut().zip(g.row(r)) {
                        *x += y;
                    }
                }
                acc(*table, d);
            }
            Op::Unfold {
                src,
                kernel,
                stride,
                pad,
            } => {
                let [t_in, c] = self.shape(*src);
                let mut d = Tensor::zeros(t_in, c);
                for t in 0..g.rows() {
                    for j in 0..*kernel {
                        let pos = (t * stride + j) as isize - *pad as isize;
                        if pos >= 0 && (pos as usize) < t_in {
                            let src_row = &g.row(t)[j * c..(j + 1) * c];
                            for (x, y) in d.row_mut(pos as usize).iter_mut().zip(src_row) {
                                *x += y;
                            }
                        }
                    }
                }
                acc(*src, d);
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let mut d = Tensor::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(p, q)| p * q).sum();
                    for ((o, gy), yy) in d.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = yy * (gy - dot);
                    }
                }
                acc(*a, d);
            }
            Op::LogSoftmax(a) => {
                let y = &node.value;
                let mut d = Tensor::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let sum: f64 = g.row(r).iter().sum();
                    for ((o, gy), ly) in d.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = gy - ly.exp() * sum;
                    }
                }
                acc(*a, d);
            }
            Op::LstmCell { z, c_prev, acts } => {
                let out = &node.value;
                let cp = self.value(*c_prev);
                let (b, h) = (out.rows(), out.cols() / 2);
                let mut dz = Tensor::zeros(b, 4 * h);
                let mut dc_prev = Tensor::zeros(b, h);
                for r in 0..b {
                    let a = acts.row(r);
                    let gr = g.row(r);
                    let o = out.row(r);
                    let cpr = cp.row(r);
                    let dzr = dz.row_mut(r);
                    let dcp = dc_prev.row_mut(r);
                    for k in 0..h {
                        let (i, f, gg, og) = (a[k], a[h + k], a[2 * h + k], a[3 * h + k]);
                        let tc = o[h + k].tanh();
                        let dh = gr[k];
                        let dc = gr[h + k] + dh * og * (1.0 - tc * tc);
                        dzr[k] = dc * gg * i * (1.0 - i);
                        dzr[h + k] = dc * cpr[k] * f * (1.0 - f);
                        dzr[2 * h + k] = dc * i * (1.0 - gg * gg);
                        dzr[3 * h + k] = dh * tc * og * (1.0 - og);
                        dcp[k] = dc * f;
                    }
                }
                acc(*z, dz);
                acc(*c_prev, dc_prev);
            }
            Op::Loss { src, grad } => {
                let mut d = grad.clone();
                d.scale(g.item());
                acc(*src, d);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_loss_has_zero_parameter_gradient() {
        let mut g = Graph::new();
        let w = g.leaf(Tensor::from_vec(1, 2, vec![0.3, -0.2]));
        let c = g.leaf(Tensor::scalar(2.0));
        let zero = g.leaf(Tensor::zeros(2, 1));
        let wz = g.matmul(w, zero);
        let loss = g.add(c, wz);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(w).unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn backward_rejects_missing_node() {
        let g = Graph::new();
        assert!(matches!(g.backward(NodeId(0)), Err(Error::NoForward)));
    }

    #[test]
    fn unrelated_leaf_gets_no_gradient() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::scalar(1.5));
        let b = g.leaf(Tensor::scalar(4.0));
        let y = g.tanh(a);
        let grads = g.backward(y).unwrap();
        assert!(grads.get(b).is_none());
        assert!((grads.get(a).unwrap().item() - (1.0 - 1.5f64.tanh().powi(2))).abs() < 1e-15);
    }

    #[test]
    fn unfold_length_is_ceil() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(100, 3));
        let u = g.unfold(x, 3, 2, 1);
        assert_eq!(g.shape(u), [50, 9]);
        let u2 = g.unfold(u, 1, 2, 0);
        assert_eq!(g.shape(u2), [25, 9]);
        let y = g.leaf(Tensor::zeros(7, 1));
        let uy = g.unfold(y, 3, 2, 1);
        assert_eq!(g.shape(uy)[0], 4);
    }
}
