//! Computation tape: eager forward values plus reverse rules per op.
//!
//! A fresh graph is built per training step. Parameters enter as leaves;
//! after [`Graph::backward`] their gradients are harvested by node id.

use super::tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc};
use super::{NumericsError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    SoftmaxRows(NodeId),
    LayerNormRows(NodeId, f64),
    Concat(Axis, Vec<NodeId>),
    Slice(Axis, NodeId, usize, usize),
    Transpose(NodeId),
    Mse(NodeId, NodeId),
    /// Per-window attention logits: rows are grouped in blocks of `seq_len`.
    AttnScores(NodeId, NodeId, usize),
    /// Mixes values with per-window attention weights.
    AttnMix(NodeId, NodeId, usize),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients indexed by node id, populated by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, zeros if the loss did not reach it.
    pub fn wrt(&self, id: NodeId, like: &Tensor) -> Tensor {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(like.rows(), like.cols()),
        }
    }
}

fn mismatch(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> NumericsError {
    NumericsError::ShapeMismatch { op, lhs: lhs.shape(), rhs: rhs.shape() }
}

impl Graph {
    pub fn new() -> Graph {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Inserts a constant or parameter tensor.
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.cols() != tb.rows() {
            return Err(mismatch("matmul", ta, tb));
        }
        let mut out = Tensor::zeros(ta.rows(), tb.cols());
        matmul_acc(ta, tb, &mut out);
        Ok(self.push(out, Op::Matmul(a, b)))
    }

    /// Elementwise add; `b` may also be a [1, n] row broadcast over `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let out = if ta.shape() == tb.shape() {
            let mut out = ta.clone();
            for (o, v) in out.data_mut().iter_mut().zip(tb.data()) {
                *o += v;
            }
            out
        } else if tb.rows() == 1 && tb.cols() == ta.cols() {
            let mut out = ta.clone();
            let row = tb.data();
            for r in 0..ta.rows() {
                for c in 0..ta.cols() {
                    out.data_mut()[r * row.len() + c] += row[c];
                }
            }
            out
        } else {
            return Err(mismatch("add", ta, tb));
        };
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Elementwise (Hadamard) product of same-shape tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(mismatch("mul", ta, tb));
        }
        let mut out = ta.clone();
        for (o, v) in out.data_mut().iter_mut().zip(tb.data()) {
            *o *= v;
        }
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let out = self.nodes[a.0].value.map(|x| x * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.nodes[a.0].value.map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out = self.nodes[a.0].value.map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    /// Numerically-stable softmax over each row.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let ta = &self.nodes[a.0].value;
        let mut out = ta.clone();
        let cols = ta.cols();
        for r in 0..ta.rows() {
            let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Per-row standardization to zero mean and unit variance (pre-affine).
    pub fn layer_norm_rows(&mut self, a: NodeId, eps: f64) -> NodeId {
        let ta = &self.nodes[a.0].value;
        let mut out = ta.clone();
        let cols = ta.cols();
        for r in 0..ta.rows() {
            let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * inv;
            }
        }
        self.push(out, Op::LayerNormRows(a, eps))
    }

    pub fn concat(&mut self, axis: Axis, parts: &[NodeId]) -> Result<NodeId, NumericsError> {
        if parts.is_empty() {
            return Err(NumericsError::Usage("concat of zero tensors".into()));
        }
        let first = self.nodes[parts[0].0].value.shape();
        let out = match axis {
            Axis::Cols => {
                let rows = first[0];
                let mut cols = 0;
                for p in parts {
                    let t = &self.nodes[p.0].value;
                    if t.rows() != rows {
                        return Err(mismatch("concat", &self.nodes[parts[0].0].value, t));
                    }
                    cols += t.cols();
                }
                let mut out = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    let mut at = 0;
                    for p in parts {
                        let t = &self.nodes[p.0].value;
                        let w = t.cols();
                        out.data_mut()[r * cols + at..r * cols + at + w]
                            .copy_from_slice(t.row(r));
                        at += w;
                    }
                }
                out
            }
            Axis::Rows => {
                let cols = first[1];
                let mut rows = 0;
                for p in parts {
                    let t = &self.nodes[p.0].value;
                    if t.cols() != cols {
                        return Err(mismatch("concat", &self.nodes[parts[0].0].value, t));
                    }
                    rows += t.rows();
                }
                let mut data = Vec::with_capacity(rows * cols);
                for p in parts {
                    data.extend_from_slice(self.nodes[p.0].value.data());
                }
                Tensor::from_vec(rows, cols, data)?
            }
        };
        Ok(self.push(out, Op::Concat(axis, parts.to_vec())))
    }

    pub fn slice(
        &mut self,
        axis: Axis,
        a: NodeId,
        range: std::ops::Range<usize>,
    ) -> Result<NodeId, NumericsError> {
        let ta = &self.nodes[a.0].value;
        let (start, len) = (range.start, range.len());
        let out = match axis {
            Axis::Cols => {
                if range.end > ta.cols() {
                    return Err(NumericsError::Usage(format!(
                        "slice cols {range:?} out of bounds for {:?}",
                        ta.shape()
                    )));
                }
                let mut out = Tensor::zeros(ta.rows(), len);
                for r in 0..ta.rows() {
                    out.data_mut()[r * len..(r + 1) * len]
                        .copy_from_slice(&ta.row(r)[start..range.end]);
                }
                out
            }
            Axis::Rows => {
                if range.end > ta.rows() {
                    return Err(NumericsError::Usage(format!(
                        "slice rows {range:?} out of bounds for {:?}",
                        ta.shape()
                    )));
                }
                let cols = ta.cols();
                Tensor::from_vec(
                    len,
                    cols,
                    ta.data()[start * cols..range.end * cols].to_vec(),
                )?
            }
        };
        Ok(self.push(out, Op::Slice(axis, a, start, len)))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let out = self.nodes[a.0].value.transposed();
        self.push(out, Op::Transpose(a))
    }

    /// Mean squared error over all elements, a scalar node.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId, NumericsError> {
        let (tp, tt) = (&self.nodes[pred.0].value, &self.nodes[target.0].value);
        if tp.shape() != tt.shape() {
            return Err(mismatch("mse", tp, tt));
        }
        let n = tp.len() as f64;
        let sum: f64 = tp.data().iter().zip(tt.data()).map(|(p, t)| (p - t) * (p - t)).sum();
        Ok(self.push(Tensor::scalar(sum / n), Op::Mse(pred, target)))
    }

    /// Scaled-dot-product logits per window block: `q` and `k` are
    /// [w*seq_len, d] and the result is [w*seq_len, seq_len] where row
    /// (w, i) holds q_(w,i) . k_(w,j) for each j. Scaling by 1/sqrt(d) is
    /// applied separately via [`Graph::scale`].
    pub fn attn_scores(
        &mut self,
        q: NodeId,
        k: NodeId,
        seq_len: usize,
    ) -> Result<NodeId, NumericsError> {
        let (tq, tk) = (&self.nodes[q.0].value, &self.nodes[k.0].value);
        if tq.shape() != tk.shape() || tq.rows() % seq_len != 0 {
            return Err(mismatch("attn_scores", tq, tk));
        }
        let d = tq.cols();
        let windows = tq.rows() / seq_len;
        let mut out = Tensor::zeros(tq.rows(), seq_len);
        for w in 0..windows {
            for i in 0..seq_len {
                let qrow = tq.row(w * seq_len + i);
                for j in 0..seq_len {
                    let krow = tk.row(w * seq_len + j);
                    let mut acc = 0.0;
                    for dd in 0..d {
                        acc += qrow[dd] * krow[dd];
                    }
                    out.set(w * seq_len + i, j, acc);
                }
            }
        }
        Ok(self.push(out, Op::AttnScores(q, k, seq_len)))
    }

    /// Applies per-window attention weights `a` ([w*seq_len, seq_len]) to
    /// values `v` ([w*seq_len, d]).
    pub fn attn_mix(
        &mut self,
        a: NodeId,
        v: NodeId,
        seq_len: usize,
    ) -> Result<NodeId, NumericsError> {
        let (ta, tv) = (&self.nodes[a.0].value, &self.nodes[v.0].value);
        if ta.cols() != seq_len || ta.rows() != tv.rows() || tv.rows() % seq_len != 0 {
            return Err(mismatch("attn_mix", ta, tv));
        }
        let d = tv.cols();
        let windows = tv.rows() / seq_len;
        let mut out = Tensor::zeros(tv.rows(), d);
        for w in 0..windows {
            for i in 0..seq_len {
                let arow = ta.row(w * seq_len + i);
                let orow = &mut out.data_mut()[(w * seq_len + i) * d..(w * seq_len + i + 1) * d];
                for j in 0..seq_len {
                    let weight = arow[j];
                    let vrow = &tv.data()[(w * seq_len + j) * d..(w * seq_len + j + 1) * d];
                    for (o, vv) in orow.iter_mut().zip(vrow) {
                        *o += weight * vv;
                    }
                }
            }
        }
        Ok(self.push(out, Op::AttnMix(a, v, seq_len)))
    }

    /// Reverse pass from a scalar loss; returns per-node gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, NumericsError> {
        let lt = &self.nodes[loss.0].value;
        if !lt.is_scalar() {
            return Err(NumericsError::Usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn grad_buf<'a>(
        &self,
        grads: &'a mut [Option<Tensor>],
        id: NodeId,
    ) -> &'a mut Tensor {
        let like = &self.nodes[id.0].value;
        grads[id.0].get_or_insert_with(|| Tensor::zeros(like.rows(), like.cols()))
    }

    fn accumulate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let value = &self.nodes[idx].value;
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                matmul_nt_acc(g, tb, self.grad_buf(grads, *a));
                matmul_tn_acc(ta, g, self.grad_buf(grads, *b));
            }
            Op::Add(a, b) => {
                let da = self.grad_buf(grads, *a);
                for (o, v) in da.data_mut().iter_mut().zip(g.data()) {
                    *o += v;
                }
                let tb_shape = self.nodes[b.0].value.shape();
                let db = self.grad_buf(grads, *b);
                if tb_shape == g.shape() {
                    for (o, v) in db.data_mut().iter_mut().zip(g.data()) {
                        *o += v;
                    }
                } else {
                    // Row broadcast: sum the incoming gradient over rows.
                    let cols = tb_shape[1];
                    for r in 0..g.rows() {
                        for c in 0..cols {
                            db.data_mut()[c] += g.get(r, c);
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let tb = self.nodes[b.0].value.clone();
                let da = self.grad_buf(grads, *a);
                for ((o, gv), bv) in da.data_mut().iter_mut().zip(g.data()).zip(tb.data()) {
                    *o += gv * bv;
                }
                let ta = self.nodes[a.0].value.clone();
                let db = self.grad_buf(grads, *b);
                for ((o, gv), av) in db.data_mut().iter_mut().zip(g.data()).zip(ta.data()) {
                    *o += gv * av;
                }
            }
            Op::Scale(a, c) => {
                let da = self.grad_buf(grads, *a);
                for (o, gv) in da.data_mut().iter_mut().zip(g.data()) {
                    *o += gv * c;
                }
            }
            Op::Sigmoid(a) => {
                let y = value.clone();
                let da = self.grad_buf(grads, *a);
                for ((o, gv), yv) in da.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    *o += gv * yv * (1.0 - yv);
                }
            }
            Op::Tanh(a) => {
                let y = value.clone();
                let da = self.grad_buf(grads, *a);
                for ((o, gv), yv) in da.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                    *o += gv * (1.0 - yv * yv);
                }
            }
            Op::SoftmaxRows(a) => {
                let y = value;
                let cols = y.cols();
                let da = self.grad_buf(grads, *a);
                for r in 0..y.rows() {
                    let yrow = y.row(r);
                    let grow = &g.data()[r * cols..(r + 1) * cols];
                    let dot: f64 = yrow.iter().zip(grow).map(|(yv, gv)| yv * gv).sum();
                    let orow = &mut da.data_mut()[r * cols..(r + 1) * cols];
                    for ((o, yv), gv) in orow.iter_mut().zip(yrow).zip(grow) {
                        *o += yv * (gv - dot);
                    }
                }
            }
            Op::LayerNormRows(a, eps) => {
                let x = &self.nodes[a.0].value;
                let y = value;
                let cols = y.cols();
                let da = self.grad_buf(grads, *a);
                for r in 0..y.rows() {
                    let xrow = x.row(r);
                    let yrow = y.row(r);
                    let grow = &g.data()[r * cols..(r + 1) * cols];
                    let mean = xrow.iter().sum::<f64>() / cols as f64;
                    let var =
                        xrow.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    let gmean: f64 = grow.iter().sum::<f64>() / cols as f64;
                    let gydot: f64 =
                        grow.iter().zip(yrow).map(|(gv, yv)| gv * yv).sum::<f64>() / cols as f64;
                    let orow = &mut da.data_mut()[r * cols..(r + 1) * cols];
                    for ((o, gv), yv) in orow.iter_mut().zip(grow).zip(yrow) {
                        *o += inv * (gv - gmean - yv * gydot);
                    }
                }
            }
            Op::Concat(axis, parts) => match axis {
                Axis::Cols => {
                    let mut at = 0;
                    for p in parts {
                        let w = self.nodes[p.0].value.cols();
                        let dp = self.grad_buf(grads, *p);
                        for r in 0..dp.rows() {
                            for c in 0..w {
                                let add = g.get(r, at + c);
                                let cur = dp.get(r, c);
                                dp.set(r, c, cur + add);
                            }
                        }
                        at += w;
                    }
                }
                Axis::Rows => {
                    let mut at = 0;
                    for p in parts {
                        let rows = self.nodes[p.0].value.rows();
                        let cols = self.nodes[p.0].value.cols();
                        let dp = self.grad_buf(grads, *p);
                        for r in 0..rows {
                            for c in 0..cols {
                                let add = g.get(at + r, c);
                                let cur = dp.get(r, c);
                                dp.set(r, c, cur + add);
                            }
                        }
                        at += rows;
                    }
                }
            },
            Op::Slice(axis, a, start, len) => {
                let da = self.grad_buf(grads, *a);
                match axis {
                    Axis::Cols => {
                        for r in 0..g.rows() {
                            for c in 0..*len {
                                let cur = da.get(r, start + c);
                                da.set(r, start + c, cur + g.get(r, c));
                            }
                        }
                    }
                    Axis::Rows => {
                        for r in 0..*len {
                            for c in 0..g.cols() {
                                let cur = da.get(start + r, c);
                                da.set(start + r, c, cur + g.get(r, c));
                            }
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let gt = g.transposed();
                let da = self.grad_buf(grads, *a);
                for (o, v) in da.data_mut().iter_mut().zip(gt.data()) {
                    *o += v;
                }
            }
            Op::Mse(p, t) => {
                let scale = g.item() * 2.0 / self.nodes[p.0].value.len() as f64;
                let diff: Vec<f64> = self.nodes[p.0]
                    .value
                    .data()
                    .iter()
                    .zip(self.nodes[t.0].value.data())
                    .map(|(pv, tv)| pv - tv)
                    .collect();
                let dp = self.grad_buf(grads, *p);
                for (o, d) in dp.data_mut().iter_mut().zip(&diff) {
                    *o += scale * d;
                }
                let dt = self.grad_buf(grads, *t);
                for (o, d) in dt.data_mut().iter_mut().zip(&diff) {
                    *o -= scale * d;
                }
            }
            Op::AttnScores(q, k, seq_len) => {
                let l = *seq_len;
                let tq = self.nodes[q.0].value.clone();
                let tk = self.nodes[k.0].value.clone();
                let d = tq.cols();
                let windows = tq.rows() / l;
                {
                    let dq = self.grad_buf(grads, *q);
                    for w in 0..windows {
                        for i in 0..l {
                            let grow = g.row(w * l + i);
                            let orow =
                                &mut dq.data_mut()[(w * l + i) * d..(w * l + i + 1) * d];
                            for (j, gv) in grow.iter().enumerate() {
                                let krow = tk.row(w * l + j);
                                for (o, kv) in orow.iter_mut().zip(krow) {
                                    *o += gv * kv;
                                }
                            }
                        }
                    }
                }
                let dk = self.grad_buf(grads, *k);
                for w in 0..windows {
                    for j in 0..l {
                        let orow = &mut dk.data_mut()[(w * l + j) * d..(w * l + j + 1) * d];
                        for i in 0..l {
                            let gv = g.get(w * l + i, j);
                            let qrow = tq.row(w * l + i);
                            for (o, qv) in orow.iter_mut().zip(qrow) {
                                *o += gv * qv;
                            }
                        }
                    }
                }
            }
            Op::AttnMix(a, v, seq_len) => {
                let l = *seq_len;
                let ta = self.nodes[a.0].value.clone();
                let tv = self.nodes[v.0].value.clone();
                let d = tv.cols();
                let windows = tv.rows() / l;
                {
                    let da = self.grad_buf(grads, *a);
                    for w in 0..windows {
                        for i in 0..l {
                            let grow = g.row(w * l + i);
                            for j in 0..l {
                                let vrow = tv.row(w * l + j);
                                let mut acc = 0.0;
                                for (gv, vv) in grow.iter().zip(vrow) {
                                    acc += gv * vv;
                                }
                                let cur = da.get(w * l + i, j);
                                da.set(w * l + i, j, cur + acc);
                            }
                        }
                    }
                }
                let dv = self.grad_buf(grads, *v);
                for w in 0..windows {
                    for j in 0..l {
                        let orow = &mut dv.data_mut()[(w * l + j) * d..(w * l + j + 1) * d];
                        for i in 0..l {
                            let weight = ta.get(w * l + i, j);
                            let grow = g.row(w * l + i);
                            for (o, gv) in orow.iter_mut().zip(grow) {
                                *o += weight * gv;
                            }
                        }
                    }
                }
            }
        }
    }
}
