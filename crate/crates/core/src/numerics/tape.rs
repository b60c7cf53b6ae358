//! Tensor-level reverse-mode differentiation.
//!
//! Every primitive appends one node holding its forward value plus whatever
//! it needs for the backward pass. Nodes are appended in evaluation order, so
//! the node list is already topologically sorted and [`Tape::backward`] walks
//! it once in reverse.

use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Lower/upper clamp applied to probabilities inside the cross-entropy.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Dense {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    CausalConv {
        x: NodeId,
        kernel: NodeId,
        bias: NodeId,
        dilation: usize,
    },
    AttentionPool {
        h: NodeId,
        w: NodeId,
        b: NodeId,
        v: NodeId,
        /// tanh(H·W + b), [T, d]
        hidden: Vec<f64>,
        weights: Vec<f64>,
    },
    Elu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Concat {
        parts: Vec<NodeId>,
        axis: usize,
    },
    Embedding {
        table: NodeId,
        id: usize,
    },
    Row {
        x: NodeId,
        index: usize,
    },
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    SigmoidBce {
        logit: NodeId,
        target: f64,
        w_pos: f64,
        w_neg: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records one forward evaluation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, NodeId)>,
}

fn shape_err(msg: String) -> Error {
    Error::Shape(msg)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
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

    /// An input; gradients with respect to it are available after backward.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// A named trainable parameter.
    pub fn param(&mut self, name: &str, value: Tensor) -> NodeId {
        let id = self.leaf(value);
        self.params.push((name.to_string(), id));
        id
    }

    /// `x·W + b` for `x` of shape `[n, d_in]` or `[d_in]`.
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xs, ws, bs) = (self.value(x), self.value(w), self.value(b));
        let (n, d_in) = match xs.shape() {
            [d] => (1, *d),
            [n, d] => (*n, *d),
            s => return Err(shape_err(format!("dense input must be rank 1 or 2, got {s:?}"))),
        };
        let [w_in, d_out] = ws.shape() else {
            return Err(shape_err(format!("dense weight must be rank 2, got {:?}", ws.shape())));
        };
        let (w_in, d_out) = (*w_in, *d_out);
        if w_in != d_in || bs.shape() != [d_out] {
            return Err(shape_err(format!(
                "dense: input {:?}, weight {:?}, bias {:?}",
                xs.shape(),
                ws.shape(),
                bs.shape()
            )));
        }
        let (xd, wd, bd) = (xs.data(), ws.data(), bs.data());
        let mut out = Vec::with_capacity(n * d_out);
        for r in 0..n {
            let mut row = bd.to_vec();
            for (i, &xv) in xd[r * d_in..(r + 1) * d_in].iter().enumerate() {
                if xv != 0.0 {
                    for (y, &wv) in row.iter_mut().zip(&wd[i * d_out..(i + 1) * d_out]) {
                        *y += xv * wv;
                    }
                }
            }
            out.extend(row);
        }
        let shape = if xs.rank() == 1 { vec![d_out] } else { vec![n, d_out] };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Dense { x, w, b }))
    }

    /// Causal dilated 1-D convolution over `x: [T, c_in]` with
    /// `kernel: [k, c_in, c_out]`. The input is left-padded with
    /// `(k−1)·dilation` zeros, so tap `j` reads `x[t − (k−1−j)·dilation]`
    /// and the output has length `T`.
    pub fn causal_conv(
        &mut self,
        x: NodeId,
        kernel: NodeId,
        bias: NodeId,
        dilation: usize,
    ) -> Result<NodeId> {
        if dilation < 1 {
            return Err(shape_err("dilation must be at least 1".into()));
        }
        let (xs, ks, bs) = (self.value(x), self.value(kernel), self.value(bias));
        let [t_len, c_in] = xs.shape() else {
            return Err(shape_err(format!("conv input must be [T, c_in], got {:?}", xs.shape())));
        };
        let [k, kc_in, c_out] = ks.shape() else {
            return Err(shape_err(format!("conv kernel must be rank 3, got {:?}", ks.shape())));
        };
        let (t_len, c_in, k, c_out) = (*t_len, *c_in, *k, *c_out);
        if *kc_in != c_in || bs.shape() != [c_out] {
            return Err(shape_err(format!(
                "conv: input {:?}, kernel {:?}, bias {:?}",
                xs.shape(),
                ks.shape(),
                bs.shape()
            )));
        }
        let (xd, kd, bd) = (xs.data(), ks.data(), bs.data());
        let mut out = Vec::with_capacity(t_len * c_out);
        for t in 0..t_len {
            let mut row = bd.to_vec();
            for j in 0..k {
                let back = (k - 1 - j) * dilation;
                if back > t {
                    continue;
                }
                let src = &xd[(t - back) * c_in..(t - back + 1) * c_in];
                let tap = &kd[j * c_in * c_out..(j + 1) * c_in * c_out];
                for (i, &xv) in src.iter().enumerate() {
                    if xv != 0.0 {
                        for (y, &kv) in row.iter_mut().zip(&tap[i * c_out..(i + 1) * c_out]) {
                            *y += xv * kv;
                        }
                    }
                }
            }
            out.extend(row);
        }
        let value = Tensor::new(vec![t_len, c_out], out)?;
        Ok(self.push(
            value,
            Op::CausalConv {
                x,
                kernel,
                bias,
                dilation,
            },
        ))
    }

    /// Attention pooling of `h: [T, d]` into a context vector `[d]`:
    /// scores `s[t] = v·tanh(h[t]·W + b)`, weights `softmax(s)`,
    /// context `Σ_t weights[t]·h[t]`.
    pub fn attention_pool(&mut self, h: NodeId, w: NodeId, b: NodeId, v: NodeId) -> Result<NodeId> {
        let (hs, ws, bs, vs) = (self.value(h), self.value(w), self.value(b), self.value(v));
        let [t_len, d] = hs.shape() else {
            return Err(shape_err(format!("attention input must be [T, d], got {:?}", hs.shape())));
        };
        let (t_len, d) = (*t_len, *d);
        if ws.shape() != [d, d] || bs.shape() != [d] || vs.shape() != [d] {
            return Err(shape_err(format!(
                "attention: input {:?}, W {:?}, b {:?}, v {:?}",
                hs.shape(),
                ws.shape(),
                bs.shape(),
                vs.shape()
            )));
        }
        let (hd, wd, bd, vd) = (hs.data(), ws.data(), bs.data(), vs.data());
        let mut hidden = Vec::with_capacity(t_len * d);
        let mut scores = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let mut pre = bd.to_vec();
            for (i, &hv) in hd[t * d..(t + 1) * d].iter().enumerate() {
                for (p, &wv) in pre.iter_mut().zip(&wd[i * d..(i + 1) * d]) {
                    *p += hv * wv;
                }
            }
            let mut s = 0.0;
            for (p, &vv) in pre.iter_mut().zip(vd) {
                *p = p.tanh();
                s += *p * vv;
            }
            hidden.extend(pre);
            scores.push(s);
        }
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        for a in &mut weights {
            *a /= total;
        }
        let mut context = vec![0.0; d];
        for (t, &a) in weights.iter().enumerate() {
            for (c, &hv) in context.iter_mut().zip(&hd[t * d..(t + 1) * d]) {
                *c += a * hv;
            }
        }
        Ok(self.push(
            Tensor::vector(context),
            Op::AttentionPool {
                h,
                w,
                b,
                v,
                hidden,
                weights,
            },
        ))
    }

    /// Softmax weights of an attention-pool node.
    pub fn attention_weights(&self, id: NodeId) -> Option<&[f64]> {
        match &self.nodes[id.0].op {
            Op::AttentionPool { weights, .. } => Some(weights),
            _ => None,
        }
    }

    pub fn elu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(elu);
        self.push(value, Op::Elu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(sigmoid);
        self.push(value, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(f64::tanh);
        self.push(value, Op::Tanh(x))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat of nothing".into()))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(shape_err(format!("concat axis {axis} for rank {}", base.len())));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err(format!("concat: {s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// Row `id` of `table: [V, d]` as a `[d]` vector.
    pub fn embedding_lookup(&mut self, table: NodeId, id: usize) -> Result<NodeId> {
        let t = self.value(table);
        let [rows, _] = t.shape() else {
            return Err(shape_err(format!("embedding table must be rank 2, got {:?}", t.shape())));
        };
        if id >= *rows {
            return Err(Error::Data(format!("embedding id {id} out of range for {rows} rows")));
        }
        let value = Tensor::vector(t.row(id).to_vec());
        Ok(self.push(value, Op::Embedding { table, id }))
    }

    /// Row `index` of a rank-2 node as a vector.
    pub fn row(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let t = self.value(x);
        let [rows, _] = t.shape() else {
            return Err(shape_err(format!("row() needs a rank-2 input, got {:?}", t.shape())));
        };
        if index >= *rows {
            return Err(shape_err(format!("row {index} of {rows}")));
        }
        let value = Tensor::vector(t.row(index).to_vec());
        Ok(self.push(value, Op::Row { x, index }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(format!("add: {:?} vs {:?}", av.shape(), bv.shape())));
        }
        let mut value = av.clone();
        value.add_assign(bv);
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Sum of several nodes of identical shape, in the given order.
    pub fn add_all(&mut self, nodes: &[NodeId]) -> Result<NodeId> {
        let (&first, rest) = nodes
            .split_first()
            .ok_or_else(|| shape_err("add_all of nothing".into()))?;
        rest.iter().try_fold(first, |acc, &n| self.add(acc, n))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = self.value(x).scaled(c);
        self.push(value, Op::Scale(x, c))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        self.push(value, Op::Sum(x))
    }

    /// Class-weighted binary cross-entropy of `sigmoid(logit)` against a 0/1
    /// target, with the probability clamped to `[1e-7, 1 − 1e-7]`.
    pub fn sigmoid_bce(&mut self, logit: NodeId, target: f64, w_pos: f64, w_neg: f64) -> Result<NodeId> {
        let z = self.value(logit);
        if z.len() != 1 {
            return Err(shape_err(format!("bce logit must be a scalar, got {:?}", z.shape())));
        }
        let p = sigmoid(z.item());
        let value = Tensor::scalar(weighted_bce(p, target, w_pos, w_neg));
        Ok(self.push(
            value,
            Op::SigmoidBce {
                logit,
                target,
                w_pos,
                w_neg,
            },
        ))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(shape_err(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, g.data(), &mut grads);
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Tensor>]) {
        let val = |id: NodeId| self.nodes[id.0].value.data();
        let shape = |id: NodeId| self.nodes[id.0].value.shape();
        let nodes = &self.nodes;
        macro_rules! acc {
            ($id:expr) => {
                grad_buffer(grads, nodes, $id)
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::Dense { x, w, b } => {
                let (xd, wd) = (val(*x), val(*w));
                let [d_in, d_out] = shape(*w) else { unreachable!() };
                let (d_in, d_out) = (*d_in, *d_out);
                let n = xd.len() / d_in;
                let gx = acc!(*x);
                for r in 0..n {
                    let gr = &g[r * d_out..(r + 1) * d_out];
                    for i in 0..d_in {
                        let wr = &wd[i * d_out..(i + 1) * d_out];
                        gx[r * d_in + i] += dot(gr, wr);
                    }
                }
                let gw = acc!(*w);
                for r in 0..n {
                    let gr = &g[r * d_out..(r + 1) * d_out];
                    for i in 0..d_in {
                        let xv = xd[r * d_in + i];
                        if xv != 0.0 {
                            axpy(xv, gr, &mut gw[i * d_out..(i + 1) * d_out]);
                        }
                    }
                }
                let gb = acc!(*b);
                for r in 0..n {
                    axpy(1.0, &g[r * d_out..(r + 1) * d_out], gb);
                }
            }
            Op::CausalConv {
                x,
                kernel,
                bias,
                dilation,
            } => {
                let (xd, kd) = (val(*x), val(*kernel));
                let [k, c_in, c_out] = shape(*kernel) else { unreachable!() };
                let (k, c_in, c_out) = (*k, *c_in, *c_out);
                let t_len = xd.len() / c_in;
                let gx = acc!(*x);
                for t in 0..t_len {
                    let gt = &g[t * c_out..(t + 1) * c_out];
                    for j in 0..k {
                        let back = (k - 1 - j) * dilation;
                        if back > t {
                            continue;
                        }
                        let tap = &kd[j * c_in * c_out..(j + 1) * c_in * c_out];
                        let dst = &mut gx[(t - back) * c_in..(t - back + 1) * c_in];
                        for (i, gxi) in dst.iter_mut().enumerate() {
                            *gxi += dot(gt, &tap[i * c_out..(i + 1) * c_out]);
                        }
                    }
                }
                let gk = acc!(*kernel);
                for t in 0..t_len {
                    let gt = &g[t * c_out..(t + 1) * c_out];
                    for j in 0..k {
                        let back = (k - 1 - j) * dilation;
                        if back > t {
                            continue;
                        }
                        let src = &xd[(t - back) * c_in..(t - back + 1) * c_in];
                        let tap = &mut gk[j * c_in * c_out..(j + 1) * c_in * c_out];
                        for (i, &xv) in src.iter().enumerate() {
                            if xv != 0.0 {
                                axpy(xv, gt, &mut tap[i * c_out..(i + 1) * c_out]);
                            }
                        }
                    }
                }
                let gb = acc!(*bias);
                for t in 0..t_len {
                    axpy(1.0, &g[t * c_out..(t + 1) * c_out], gb);
                }
            }
            Op::AttentionPool {
                h,
                w,
                b,
                v,
                hidden,
                weights,
            } => {
                let (hd, wd, vd) = (val(*h), val(*w), val(*v));
                let d = vd.len();
                let t_len = weights.len();
                // d context / d weights, then through the softmax.
                let ga: Vec<f64> = (0..t_len).map(|t| dot(&hd[t * d..(t + 1) * d], g)).collect();
                let mean_ga: f64 = weights.iter().zip(&ga).map(|(a, x)| a * x).sum();
                let gs: Vec<f64> = weights
                    .iter()
                    .zip(&ga)
                    .map(|(a, x)| a * (x - mean_ga))
                    .collect();
                // Pre-activation gradients, [T, d].
                let mut gpre = vec![0.0; t_len * d];
                for t in 0..t_len {
                    for i in 0..d {
                        let u = hidden[t * d + i];
                        gpre[t * d + i] = gs[t] * vd[i] * (1.0 - u * u);
                    }
                }
                let gv = acc!(*v);
                for t in 0..t_len {
                    axpy(gs[t], &hidden[t * d..(t + 1) * d], gv);
                }
                let gh = acc!(*h);
                for t in 0..t_len {
                    let row = &mut gh[t * d..(t + 1) * d];
                    axpy(weights[t], g, row);
                    let gp = &gpre[t * d..(t + 1) * d];
                    for (i, ghi) in row.iter_mut().enumerate() {
                        *ghi += dot(gp, &wd[i * d..(i + 1) * d]);
                    }
                }
                let gw = acc!(*w);
                for t in 0..t_len {
                    let gp = &gpre[t * d..(t + 1) * d];
                    for i in 0..d {
                        let hv = hd[t * d + i];
                        if hv != 0.0 {
                            axpy(hv, gp, &mut gw[i * d..(i + 1) * d]);
                        }
                    }
                }
                let gb = acc!(*b);
                for t in 0..t_len {
                    axpy(1.0, &gpre[t * d..(t + 1) * d], gb);
                }
            }
            Op::Elu(x) => {
                let y = node.value.data();
                let gx = acc!(*x);
                for ((gxi, &gi), &yi) in gx.iter_mut().zip(g).zip(y) {
                    // d/dx elu = 1 for x ≥ 0, e^x = y + 1 otherwise.
                    *gxi += if yi >= 0.0 { gi } else { gi * (yi + 1.0) };
                }
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                let gx = acc!(*x);
                for ((gxi, &gi), &yi) in gx.iter_mut().zip(g).zip(y) {
                    *gxi += gi * yi * (1.0 - yi);
                }
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                let gx = acc!(*x);
                for ((gxi, &gi), &yi) in gx.iter_mut().zip(g).zip(y) {
                    *gxi += gi * (1.0 - yi * yi);
                }
            }
            Op::Concat { parts, axis } => {
                let out_shape = node.value.shape();
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let total = out_shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let chunk = shape(p)[*axis] * inner;
                    let gp = acc!(p);
                    for o in 0..outer {
                        let src = &g[o * total + offset..o * total + offset + chunk];
                        axpy(1.0, src, &mut gp[o * chunk..(o + 1) * chunk]);
                    }
                    offset += chunk;
                }
            }
            Op::Embedding { table, id } => {
                let d = g.len();
                let gt = acc!(*table);
                axpy(1.0, g, &mut gt[id * d..(id + 1) * d]);
            }
            Op::Row { x, index } => {
                let d = g.len();
                let gx = acc!(*x);
                axpy(1.0, g, &mut gx[index * d..(index + 1) * d]);
            }
            Op::Add(a, b) => {
                axpy(1.0, g, acc!(*a));
                axpy(1.0, g, acc!(*b));
            }
            Op::Scale(x, c) => axpy(*c, g, acc!(*x)),
            Op::Sum(x) => {
                let gx = acc!(*x);
                for v in gx.iter_mut() {
                    *v += g[0];
                }
            }
            Op::SigmoidBce {
                logit,
                target,
                w_pos,
                w_neg,
            } => {
                let p = sigmoid(val(*logit)[0]);
                let grad = if p < PROB_CLAMP || p > 1.0 - PROB_CLAMP {
                    0.0
                } else {
                    w_pos * target * (p - 1.0) + w_neg * (1.0 - target) * p
                };
                acc!(*logit)[0] += g[0] * grad;
            }
        }
    }
}

/// Result of a backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(String, NodeId)>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to a leaf; zero when the loss does not depend
    /// on it.
    pub fn wrt(&self, id: NodeId) -> Tensor {
        self.grads[id.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[id.0]))
    }

    /// Gradients of every registered parameter, by name.
    pub fn params(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(name, id)| (name.clone(), self.wrt(*id)))
            .collect()
    }
}

pub fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `−[w_pos·y·ln p + w_neg·(1−y)·ln(1−p)]` with `p` clamped to
/// `[1e-7, 1 − 1e-7]`.
pub fn weighted_bce(p: f64, y: f64, w_pos: f64, w_neg: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let mut loss = 0.0;
    if y != 0.0 {
        loss -= w_pos * y * p.ln();
    }
    if y != 1.0 {
        loss -= w_neg * (1.0 - y) * (1.0 - p).ln();
    }
    loss
}

fn grad_buffer<'a>(grads: &'a mut [Option<Tensor>], nodes: &[Node], id: NodeId) -> &'a mut [f64] {
    grads[id.0]
        .get_or_insert_with(|| Tensor::zeros(nodes[id.0].value.shape()))
        .data_mut()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
