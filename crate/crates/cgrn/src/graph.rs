//! Reverse-mode autodiff on an append-only operation tape.
//!
//! Nodes are recorded in forward execution order and backward traverses
//! exactly in reverse. Gradients accumulate across backward calls; a
//! second backward over the same loss doubles every gradient.

use crate::error::{Error, Result};
use crate::ops;
use crate::optim::ParameterStore;
use crate::tensor::Tensor;

pub type NodeId = usize;

enum Op {
    Leaf,
    Conv2d { x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize },
    Deconv2d { x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize, out_pad: usize },
    MaxPool { x: NodeId, argmax: Vec<u32> },
    AvgPool { x: NodeId, k: usize, stride: usize },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        train: bool,
        groups: usize,
        means: Vec<f64>,
        invstds: Vec<f64>,
    },
    Relu { x: NodeId },
    Sigmoid { x: NodeId },
    Linear { x: NodeId, w: NodeId, b: NodeId },
    Concat { xs: Vec<NodeId>, axis: usize },
    Reshape { x: NodeId },
    RepeatBatch { x: NodeId, times: usize },
    SliceBatch { x: NodeId, start: usize },
    BroadcastHw { x: NodeId },
    Embed { table: NodeId, indices: Vec<usize> },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    Sum { x: NodeId },
    SoftmaxXent { logits: NodeId, labels: Vec<usize>, probs: Vec<f64> },
    L1 { a: NodeId, b: NodeId },
    L2 { a: NodeId, b: NodeId },
    BceLogits { logits: NodeId, target: f64 },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    grad_enabled: bool,
    bindings: Vec<(NodeId, String)>,
    frozen: Vec<String>,
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            grad_enabled: true,
            bindings: Vec::new(),
            frozen: Vec::new(),
        }
    }

    /// A graph that records values only; every node is treated as constant.
    pub fn inference() -> Self {
        Graph { grad_enabled: false, ..Graph::new() }
    }

    /// Store parameters whose names start with `prefix` enter this graph
    /// as plain constants: no gradient flows into them and `harvest`
    /// skips them entirely.
    pub fn freeze_prefix(&mut self, prefix: &str) {
        self.frozen.push(prefix.to_string());
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Op) -> NodeId {
        let rg = requires_grad && self.grad_enabled;
        self.nodes.push(Node { shape, data, requires_grad: rg, op });
        self.grads.push(None);
        self.nodes.len() - 1
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].data
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.nodes[id].data[0]
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id].as_deref()
    }

    pub fn to_tensor(&self, id: NodeId) -> Tensor {
        Tensor::new(self.nodes[id].shape.clone(), self.nodes[id].data.clone()).unwrap()
    }

    // -- leaves ------------------------------------------------------------

    pub fn constant(&mut self, t: &Tensor) -> NodeId {
        self.push(t.shape().to_vec(), t.data().to_vec(), false, Op::Leaf)
    }

    pub fn constant_from(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch(format!("{shape:?} vs {} values", data.len())));
        }
        Ok(self.push(shape, data, false, Op::Leaf))
    }

    /// A differentiable leaf (gradient retrievable after backward).
    pub fn variable(&mut self, t: &Tensor) -> NodeId {
        self.push(t.shape().to_vec(), t.data().to_vec(), true, Op::Leaf)
    }

    /// A leaf bound to a named store parameter; `harvest` moves its
    /// gradient back into the store.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<NodeId> {
        let t = store.get(name)?;
        if self.frozen.iter().any(|p| name.starts_with(p.as_str())) {
            return Ok(self.push(t.shape().to_vec(), t.data().to_vec(), false, Op::Leaf));
        }
        let id = self.push(t.shape().to_vec(), t.data().to_vec(), t.requires_grad(), Op::Leaf);
        self.bindings.push((id, name.to_string()));
        Ok(id)
    }

    /// Accumulate harvested leaf gradients into the parameter store.
    pub fn harvest(&self, store: &mut ParameterStore) -> Result<()> {
        for (id, name) in &self.bindings {
            if let Some(g) = self.grads[*id].as_deref() {
                store.get_mut(name)?.add_to_grad(g)?;
            }
        }
        Ok(())
    }

    // -- ops ---------------------------------------------------------------

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let (bs, cin, h, wd) = dims4(&self.nodes[x].shape)?;
        let ws = &self.nodes[w].shape;
        if ws.len() != 4 || ws[2] != ws[3] {
            return Err(Error::ShapeMismatch(format!("conv kernel must be [cout,cin,k,k], got {ws:?}")));
        }
        let (cout, kcin, k) = (ws[0], ws[1], ws[2]);
        if kcin != cin {
            return Err(Error::ShapeMismatch(format!(
                "conv input channels {cin} (input {:?}) vs kernel channels {kcin} (kernel {ws:?})",
                self.nodes[x].shape
            )));
        }
        if self.nodes[b].shape != [cout] {
            return Err(Error::ShapeMismatch(format!("conv bias {:?} vs cout {cout}", self.nodes[b].shape)));
        }
        let (y, oh, ow) = ops::conv2d_forward(
            &self.nodes[x].data,
            (bs, cin, h, wd),
            &self.nodes[w].data,
            &self.nodes[b].data,
            cout,
            k,
            stride,
            pad,
        )?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(vec![bs, cout, oh, ow], y, rg, Op::Conv2d { x, w, b, stride, pad }))
    }

    pub fn deconv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Result<NodeId> {
        let (bs, cin, h, wd) = dims4(&self.nodes[x].shape)?;
        let ws = &self.nodes[w].shape;
        if ws.len() != 4 || ws[2] != ws[3] {
            return Err(Error::ShapeMismatch(format!("deconv kernel must be [cin,cout,k,k], got {ws:?}")));
        }
        let (kcin, cout, k) = (ws[0], ws[1], ws[2]);
        if kcin != cin {
            return Err(Error::ShapeMismatch(format!(
                "deconv input channels {cin} vs kernel channels {kcin}"
            )));
        }
        if self.nodes[b].shape != [cout] {
            return Err(Error::ShapeMismatch(format!("deconv bias {:?} vs cout {cout}", self.nodes[b].shape)));
        }
        let (y, oh, ow) = ops::deconv2d_forward(
            &self.nodes[x].data,
            (bs, cin, h, wd),
            &self.nodes[w].data,
            &self.nodes[b].data,
            cout,
            k,
            stride,
            pad,
            out_pad,
        )?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(vec![bs, cout, oh, ow], y, rg, Op::Deconv2d { x, w, b, stride, pad, out_pad }))
    }

    pub fn maxpool2d(&mut self, x: NodeId, k: usize, stride: usize) -> Result<NodeId> {
        let d = dims4(&self.nodes[x].shape)?;
        let (y, argmax, oh, ow) = ops::maxpool_forward(&self.nodes[x].data, d, k, stride)?;
        let rg = self.rg(x);
        Ok(self.push(vec![d.0, d.1, oh, ow], y, rg, Op::MaxPool { x, argmax }))
    }

    pub fn avgpool2d(&mut self, x: NodeId, k: usize, stride: usize) -> Result<NodeId> {
        let d = dims4(&self.nodes[x].shape)?;
        let (y, oh, ow) = ops::avgpool_forward(&self.nodes[x].data, d, k, stride)?;
        let rg = self.rg(x);
        Ok(self.push(vec![d.0, d.1, oh, ow], y, rg, Op::AvgPool { x, k, stride }))
    }

    /// Batch normalization over `groups` equal batch blocks. Running stats
    /// are mutated in place when `train && update_stats`.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &mut [f64],
        running_var: &mut [f64],
        momentum: f64,
        eps: f64,
        train: bool,
        update_stats: bool,
        groups: usize,
    ) -> Result<NodeId> {
        let d = dims4(&self.nodes[x].shape)?;
        if self.nodes[gamma].shape != [d.1] || self.nodes[beta].shape != [d.1] {
            return Err(Error::ShapeMismatch(format!(
                "batchnorm scale/shift must be [{}], got {:?}/{:?}",
                d.1, self.nodes[gamma].shape, self.nodes[beta].shape
            )));
        }
        let (y, means, invstds) = ops::batchnorm_forward(
            &self.nodes[x].data,
            d,
            &self.nodes[gamma].data,
            &self.nodes[beta].data,
            running_mean,
            running_var,
            momentum,
            eps,
            train,
            train && update_stats,
            groups,
        )?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            self.nodes[x].shape.clone(),
            y,
            rg,
            Op::BatchNorm { x, gamma, beta, train, groups, means, invstds },
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let y: Vec<f64> = self.nodes[x].data.iter().map(|&v| v.max(0.0)).collect();
        let rg = self.rg(x);
        self.push(self.nodes[x].shape.clone(), y, rg, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let y: Vec<f64> = self.nodes[x].data.iter().map(|&v| ops::sigmoid(v)).collect();
        let rg = self.rg(x);
        self.push(self.nodes[x].shape.clone(), y, rg, Op::Sigmoid { x })
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xs = &self.nodes[x].shape;
        let ws = &self.nodes[w].shape;
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(Error::ShapeMismatch(format!(
                "linear: input {xs:?} vs weight {ws:?} (need [B,n] x [n,o])"
            )));
        }
        let (bsz, n, o) = (xs[0], xs[1], ws[1]);
        if self.nodes[b].shape != [o] {
            return Err(Error::ShapeMismatch(format!("linear bias {:?} vs out {o}", self.nodes[b].shape)));
        }
        let y = ops::linear_forward(&self.nodes[x].data, bsz, n, &self.nodes[w].data, o, &self.nodes[b].data);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(vec![bsz, o], y, rg, Op::Linear { x, w, b }))
    }

    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::InvalidArg("concat of zero tensors".into()));
        }
        let rank = self.nodes[xs[0]].shape.len();
        if axis >= rank {
            return Err(Error::InvalidArg(format!("concat axis {axis} for rank {rank}")));
        }
        for &x in xs {
            let s = &self.nodes[x].shape;
            if s.len() != rank
                || s.iter().enumerate().any(|(i, &e)| i != axis && e != self.nodes[xs[0]].shape[i])
            {
                return Err(Error::ShapeMismatch(format!(
                    "concat inputs must agree off axis {axis}: {:?} vs {s:?}",
                    self.nodes[xs[0]].shape
                )));
            }
        }
        let mut shape = self.nodes[xs[0]].shape.clone();
        shape[axis] = xs.iter().map(|&x| self.nodes[x].shape[axis]).sum();
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let total_axis = shape[axis];
        let mut data = vec![0.0; outer * total_axis * inner];
        let mut off = 0;
        for &x in xs {
            let a = self.nodes[x].shape[axis];
            for oi in 0..outer {
                let src = &self.nodes[x].data[oi * a * inner..(oi + 1) * a * inner];
                let dst = (oi * total_axis + off) * inner;
                data[dst..dst + a * inner].copy_from_slice(src);
            }
            off += a;
        }
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(shape, data, rg, Op::Concat { xs: xs.to_vec(), axis }))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[x].data.len() {
            return Err(Error::ShapeMismatch(format!(
                "reshape {:?} -> {shape:?}",
                self.nodes[x].shape
            )));
        }
        let rg = self.rg(x);
        let data = self.nodes[x].data.clone();
        Ok(self.push(shape, data, rg, Op::Reshape { x }))
    }

    /// Tile along the batch axis: [B, ...] -> [times*B, ...].
    pub fn repeat_batch(&mut self, x: NodeId, times: usize) -> NodeId {
        let mut shape = self.nodes[x].shape.clone();
        shape[0] *= times;
        let mut data = Vec::with_capacity(self.nodes[x].data.len() * times);
        for _ in 0..times {
            data.extend_from_slice(&self.nodes[x].data);
        }
        let rg = self.rg(x);
        self.push(shape, data, rg, Op::RepeatBatch { x, times })
    }

    /// Rows [start, start+len) along the batch axis.
    pub fn slice_batch(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let shape = &self.nodes[x].shape;
        if start + len > shape[0] {
            return Err(Error::InvalidArg(format!(
                "batch slice {start}+{len} out of {}",
                shape[0]
            )));
        }
        let row: usize = shape[1..].iter().product();
        let mut new_shape = shape.clone();
        new_shape[0] = len;
        let data = self.nodes[x].data[start * row..(start + len) * row].to_vec();
        let rg = self.rg(x);
        Ok(self.push(new_shape, data, rg, Op::SliceBatch { x, start }))
    }

    /// [B, C] -> [B, C, h, w] by copying each scalar across the plane.
    pub fn broadcast_hw(&mut self, x: NodeId, h: usize, w: usize) -> Result<NodeId> {
        let s = &self.nodes[x].shape;
        if s.len() != 2 {
            return Err(Error::ShapeMismatch(format!("broadcast_hw expects [B,C], got {s:?}")));
        }
        let (b, c) = (s[0], s[1]);
        let mut data = vec![0.0; b * c * h * w];
        for i in 0..b * c {
            data[i * h * w..(i + 1) * h * w].fill(self.nodes[x].data[i]);
        }
        let rg = self.rg(x);
        Ok(self.push(vec![b, c, h, w], data, rg, Op::BroadcastHw { x }))
    }

    /// Row lookup into an embedding table [m, d] -> [indices.len(), d].
    pub fn embed(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let s = &self.nodes[table].shape;
        if s.len() != 2 {
            return Err(Error::ShapeMismatch(format!("embedding table must be [m,d], got {s:?}")));
        }
        let (m, d) = (s[0], s[1]);
        for &i in indices {
            if i >= m {
                return Err(Error::FontIndex { got: i + 1, m });
            }
        }
        let mut data = vec![0.0; indices.len() * d];
        for (r, &i) in indices.iter().enumerate() {
            data[r * d..(r + 1) * d].copy_from_slice(&self.nodes[table].data[i * d..(i + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(vec![indices.len(), d], data, rg, Op::Embed { table, indices: indices.to_vec() }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_ew(a, b, |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_ew(a, b, |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_ew(a, b, |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    fn binary_ew(
        &mut self,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        mk: impl Fn(NodeId, NodeId) -> Op,
    ) -> Result<NodeId> {
        if self.nodes[a].shape != self.nodes[b].shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.nodes[a].shape, self.nodes[b].shape
            )));
        }
        let data: Vec<f64> =
            self.nodes[a].data.iter().zip(&self.nodes[b].data).map(|(&x, &y)| f(x, y)).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.nodes[a].shape.clone(), data, rg, mk(a, b)))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let data: Vec<f64> = self.nodes[x].data.iter().map(|&v| v * c).collect();
        let rg = self.rg(x);
        self.push(self.nodes[x].shape.clone(), data, rg, Op::Scale { x, c })
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.nodes[x].data.iter().sum();
        let rg = self.rg(x);
        self.push(vec![1], vec![s], rg, Op::Sum { x })
    }

    pub fn softmax_xent(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let s = &self.nodes[logits].shape;
        if s.len() != 2 {
            return Err(Error::ShapeMismatch(format!("logits must be [B,L], got {s:?}")));
        }
        let (bsz, l) = (s[0], s[1]);
        let (loss, probs) = ops::softmax_xent_forward(&self.nodes[logits].data, bsz, l, labels)?;
        let rg = self.rg(logits);
        Ok(self.push(
            vec![1],
            vec![loss],
            rg,
            Op::SoftmaxXent { logits, labels: labels.to_vec(), probs },
        ))
    }

    pub fn l1_loss(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[a].shape != self.nodes[b].shape {
            return Err(Error::ShapeMismatch(format!(
                "l1_loss {:?} vs {:?}",
                self.nodes[a].shape, self.nodes[b].shape
            )));
        }
        let n = self.nodes[a].data.len() as f64;
        let loss = self.nodes[a]
            .data
            .iter()
            .zip(&self.nodes[b].data)
            .map(|(&x, &y)| (x - y).abs())
            .sum::<f64>()
            / n;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![1], vec![loss], rg, Op::L1 { a, b }))
    }

    pub fn l2_loss(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[a].shape != self.nodes[b].shape {
            return Err(Error::ShapeMismatch(format!(
                "l2_loss {:?} vs {:?}",
                self.nodes[a].shape, self.nodes[b].shape
            )));
        }
        let n = self.nodes[a].data.len() as f64;
        let loss = self.nodes[a]
            .data
            .iter()
            .zip(&self.nodes[b].data)
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![1], vec![loss], rg, Op::L2 { a, b }))
    }

    /// Mean binary cross-entropy of logits against a constant target.
    pub fn bce_logits(&mut self, logits: NodeId, target: f64) -> NodeId {
        let loss = ops::bce_logits_forward(&self.nodes[logits].data, target);
        let rg = self.rg(logits);
        self.push(vec![1], vec![loss], rg, Op::BceLogits { logits, target })
    }

    // -- backward ----------------------------------------------------------

    /// Populate gradients of every reachable requires_grad node from a
    /// scalar loss. Accumulates on repeated calls.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss].data.len() != 1 {
            return Err(Error::InvalidArg(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss].shape
            )));
        }
        if !self.nodes[loss].requires_grad {
            return Ok(()); // nothing reachable is trainable
        }
        let mut local: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        local[loss] = Some(vec![1.0]);
        for id in (0..=loss).rev() {
            let Some(g) = local[id].take() else { continue };
            self.propagate(id, &g, &mut local);
            match &mut self.grads[id] {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, id: NodeId, g: &[f64], local: &mut Vec<Option<Vec<f64>>>) {
        let add = |local: &mut Vec<Option<Vec<f64>>>, to: NodeId, delta: Vec<f64>| {
            match &mut local[to] {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&delta) {
                        *a += b;
                    }
                }
                slot => *slot = Some(delta),
            }
        };
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, pad } => {
                let d = dims4(&self.nodes[*x].shape).unwrap();
                let ws = &self.nodes[*w].shape;
                let (gx, gw, gb) = ops::conv2d_backward(
                    &self.nodes[*x].data,
                    d,
                    &self.nodes[*w].data,
                    ws[0],
                    ws[2],
                    *stride,
                    *pad,
                    g,
                    self.rg(*x),
                    self.rg(*w),
                )
                .unwrap();
                if let Some(gx) = gx {
                    add(local, *x, gx);
                }
                if let Some(gw) = gw {
                    add(local, *w, gw);
                }
                if self.rg(*b) {
                    add(local, *b, gb);
                }
            }
            Op::Deconv2d { x, w, b, stride, pad, out_pad } => {
                let d = dims4(&self.nodes[*x].shape).unwrap();
                let ws = &self.nodes[*w].shape;
                let (gx, gw, gb) = ops::deconv2d_backward(
                    &self.nodes[*x].data,
                    d,
                    &self.nodes[*w].data,
                    ws[1],
                    ws[2],
                    *stride,
                    *pad,
                    *out_pad,
                    g,
                    self.rg(*x),
                    self.rg(*w),
                )
                .unwrap();
                if let Some(gx) = gx {
                    add(local, *x, gx);
                }
                if let Some(gw) = gw {
                    add(local, *w, gw);
                }
                if self.rg(*b) {
                    add(local, *b, gb);
                }
            }
            Op::MaxPool { x, argmax, .. } => {
                if self.rg(*x) {
                    let d = dims4(&self.nodes[*x].shape).unwrap();
                    let os = &self.nodes[id].shape;
                    add(local, *x, ops::maxpool_backward(g, argmax, d, os[2], os[3]));
                }
            }
            Op::AvgPool { x, k, stride } => {
                if self.rg(*x) {
                    let d = dims4(&self.nodes[*x].shape).unwrap();
                    let os = &self.nodes[id].shape;
                    add(local, *x, ops::avgpool_backward(g, d, *k, *stride, os[2], os[3]));
                }
            }
            Op::BatchNorm { x, gamma, beta, train, groups, means, invstds } => {
                let d = dims4(&self.nodes[*x].shape).unwrap();
                let (gx, ggamma, gbeta) = if *train {
                    ops::batchnorm_backward_train(
                        &self.nodes[*x].data,
                        d,
                        &self.nodes[*gamma].data,
                        means,
                        invstds,
                        *groups,
                        g,
                    )
                } else {
                    ops::batchnorm_backward_eval(
                        &self.nodes[*x].data,
                        d,
                        &self.nodes[*gamma].data,
                        means,
                        invstds,
                        g,
                    )
                };
                if self.rg(*x) {
                    add(local, *x, gx);
                }
                if self.rg(*gamma) {
                    add(local, *gamma, ggamma);
                }
                if self.rg(*beta) {
                    add(local, *beta, gbeta);
                }
            }
            Op::Relu { x } => {
                if self.rg(*x) {
                    let gx: Vec<f64> = self.nodes[*x]
                        .data
                        .iter()
                        .zip(g)
                        .map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 })
                        .collect();
                    add(local, *x, gx);
                }
            }
            Op::Sigmoid { x } => {
                if self.rg(*x) {
                    let gx: Vec<f64> = self.nodes[id]
                        .data
                        .iter()
                        .zip(g)
                        .map(|(&y, &gi)| gi * y * (1.0 - y))
                        .collect();
                    add(local, *x, gx);
                }
            }
            Op::Linear { x, w, b } => {
                let (bsz, n) = (self.nodes[*x].shape[0], self.nodes[*x].shape[1]);
                let o = self.nodes[*w].shape[1];
                let (gx, gw, gb) = ops::linear_backward(
                    &self.nodes[*x].data,
                    bsz,
                    n,
                    &self.nodes[*w].data,
                    o,
                    g,
                    self.rg(*x),
                    self.rg(*w),
                );
                if let Some(gx) = gx {
                    add(local, *x, gx);
                }
                if let Some(gw) = gw {
                    add(local, *w, gw);
                }
                if self.rg(*b) {
                    add(local, *b, gb);
                }
            }
            Op::Concat { xs, axis } => {
                let shape = &self.nodes[id].shape;
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let total_axis = shape[*axis];
                let mut off = 0;
                for &x in xs {
                    let a = self.nodes[x].shape[*axis];
                    if self.rg(x) {
                        let mut gx = vec![0.0; self.nodes[x].data.len()];
                        for oi in 0..outer {
                            let src = (oi * total_axis + off) * inner;
                            gx[oi * a * inner..(oi + 1) * a * inner]
                                .copy_from_slice(&g[src..src + a * inner]);
                        }
                        add(local, x, gx);
                    }
                    off += a;
                }
            }
            Op::Reshape { x } => {
                if self.rg(*x) {
                    add(local, *x, g.to_vec());
                }
            }
            Op::RepeatBatch { x, times } => {
                if self.rg(*x) {
                    let n = self.nodes[*x].data.len();
                    let mut gx = vec![0.0; n];
                    for t in 0..*times {
                        for i in 0..n {
                            gx[i] += g[t * n + i];
                        }
                    }
                    add(local, *x, gx);
                }
            }
            Op::SliceBatch { x, start } => {
                if self.rg(*x) {
                    let row: usize = self.nodes[*x].shape[1..].iter().product();
                    let mut gx = vec![0.0; self.nodes[*x].data.len()];
                    gx[start * row..start * row + g.len()].copy_from_slice(g);
                    add(local, *x, gx);
                }
            }
            Op::BroadcastHw { x } => {
                if self.rg(*x) {
                    let (h, w) = (self.nodes[id].shape[2], self.nodes[id].shape[3]);
                    let n = self.nodes[*x].data.len();
                    let mut gx = vec![0.0; n];
                    for i in 0..n {
                        gx[i] = g[i * h * w..(i + 1) * h * w].iter().sum();
                    }
                    add(local, *x, gx);
                }
            }
            Op::Embed { table, indices } => {
                if self.rg(*table) {
                    let d = self.nodes[*table].shape[1];
                    let mut gt = vec![0.0; self.nodes[*table].data.len()];
                    for (r, &i) in indices.iter().enumerate() {
                        for j in 0..d {
                            gt[i * d + j] += g[r * d + j];
                        }
                    }
                    add(local, *table, gt);
                }
            }
            Op::Add { a, b } => {
                if self.rg(*a) {
                    add(local, *a, g.to_vec());
                }
                if self.rg(*b) {
                    add(local, *b, g.to_vec());
                }
            }
            Op::Sub { a, b } => {
                if self.rg(*a) {
                    add(local, *a, g.to_vec());
                }
                if self.rg(*b) {
                    add(local, *b, g.iter().map(|&v| -v).collect());
                }
            }
            Op::Mul { a, b } => {
                if self.rg(*a) {
                    let ga: Vec<f64> =
                        g.iter().zip(&self.nodes[*b].data).map(|(&gi, &v)| gi * v).collect();
                    add(local, *a, ga);
                }
                if self.rg(*b) {
                    let gb: Vec<f64> =
                        g.iter().zip(&self.nodes[*a].data).map(|(&gi, &v)| gi * v).collect();
                    add(local, *b, gb);
                }
            }
            Op::Scale { x, c } => {
                if self.rg(*x) {
                    add(local, *x, g.iter().map(|&v| v * c).collect());
                }
            }
            Op::Sum { x } => {
                if self.rg(*x) {
                    add(local, *x, vec![g[0]; self.nodes[*x].data.len()]);
                }
            }
            Op::SoftmaxXent { logits, labels, probs } => {
                if self.rg(*logits) {
                    let (bsz, l) = (self.nodes[*logits].shape[0], self.nodes[*logits].shape[1]);
                    add(local, *logits, ops::softmax_xent_backward(probs, bsz, l, labels, g[0]));
                }
            }
            Op::L1 { a, b } => {
                let n = self.nodes[*a].data.len() as f64;
                let scale = g[0] / n;
                if self.rg(*a) || self.rg(*b) {
                    let ga: Vec<f64> = self.nodes[*a]
                        .data
                        .iter()
                        .zip(&self.nodes[*b].data)
                        .map(|(&x, &y)| scale * (x - y).signum_or_zero())
                        .collect();
                    if self.rg(*b) {
                        add(local, *b, ga.iter().map(|&v| -v).collect());
                    }
                    if self.rg(*a) {
                        add(local, *a, ga);
                    }
                }
            }
            Op::L2 { a, b } => {
                let n = self.nodes[*a].data.len() as f64;
                let scale = 2.0 * g[0] / n;
                if self.rg(*a) || self.rg(*b) {
                    let ga: Vec<f64> = self.nodes[*a]
                        .data
                        .iter()
                        .zip(&self.nodes[*b].data)
                        .map(|(&x, &y)| scale * (x - y))
                        .collect();
                    if self.rg(*b) {
                        add(local, *b, ga.iter().map(|&v| -v).collect());
                    }
                    if self.rg(*a) {
                        add(local, *a, ga);
                    }
                }
            }
            Op::BceLogits { logits, target } => {
                if self.rg(*logits) {
                    add(local, *logits, ops::bce_logits_backward(&self.nodes[*logits].data, *target, g[0]));
                }
            }
        }
    }
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    fn signum_or_zero(self) -> f64 {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

fn dims4(shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    if shape.len() != 4 {
        return Err(Error::ShapeMismatch(format!("expected rank 4, got {shape:?}")));
    }
    Ok((shape[0], shape[1], shape[2], shape[3]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn rand_tensor(rng: &mut Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut g = Graph::new();
        let t = Tensor::full(vec![2, 3], 0.5);
        let x = g.variable(&t);
        let loss = g.sum(x);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn grad_of_sum_of_squares_is_2x() {
        let mut rng = Rng::new(8);
        let mut g = Graph::new();
        let t = rand_tensor(&mut rng, vec![7]);
        let x = g.variable(&t);
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        for (gi, v) in g.grad(x).unwrap().iter().zip(t.data()) {
            assert!((gi - 2.0 * v).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_twice_doubles_exactly() {
        let mut rng = Rng::new(12);
        let mut g = Graph::new();
        let t = rand_tensor(&mut rng, vec![1, 2, 4, 4]);
        let x = g.variable(&t);
        let r = g.relu(x);
        let s = g.sigmoid(r);
        let loss = g.sum(s);
        g.backward(loss).unwrap();
        let once = g.grad(x).unwrap().to_vec();
        g.backward(loss).unwrap();
        for (a, b) in g.grad(x).unwrap().iter().zip(&once) {
            assert_eq!(*a, 2.0 * b, "accumulation must be exact");
        }
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let t = Tensor::full(vec![3], 1.0);
        let x = g.variable(&t);
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn concat_splits_gradient() {
        let mut g = Graph::new();
        let a = g.variable(&Tensor::full(vec![1, 2, 1, 1], 1.0));
        let b = g.variable(&Tensor::full(vec![1, 3, 1, 1], 2.0));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(c), &[1, 5, 1, 1]);
        let s = g.scale(c, 3.0);
        let loss = g.sum(s);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[3.0; 2]);
        assert_eq!(g.grad(b).unwrap(), &[3.0; 3]);
    }

    #[test]
    fn concat_pyramid_channel_sizes() {
        // the five-tap channel concat from the classifier head
        let mut g = Graph::new();
        let taps: Vec<NodeId> = [64, 128, 256, 512, 512]
            .iter()
            .map(|&c| g.variable(&Tensor::zeros(vec![1, c, 1, 1])))
            .collect();
        let cat = g.concat(&taps, 1).unwrap();
        assert_eq!(g.shape(cat), &[1, 1472, 1, 1]);
    }

    #[test]
    fn concat_rejects_mismatched_off_axis() {
        let mut g = Graph::new();
        let a = g.variable(&Tensor::zeros(vec![1, 2, 2, 2]));
        let b = g.variable(&Tensor::zeros(vec![1, 2, 3, 2]));
        assert!(g.concat(&[a, b], 1).is_err());
    }

    #[test]
    fn conv_channel_mismatch_diagnostic_names_both_shapes() {
        let mut g = Graph::new();
        let x = g.variable(&Tensor::zeros(vec![1, 3, 8, 8]));
        let w = g.variable(&Tensor::zeros(vec![4, 2, 3, 3]));
        let b = g.variable(&Tensor::zeros(vec![4]));
        let err = g.conv2d(x, w, b, 1, 1).unwrap_err().to_string();
        assert!(err.contains('3') && err.contains('2'), "diagnostic: {err}");
    }

    #[test]
    fn repeat_batch_backward_sums_blocks() {
        let mut g = Graph::new();
        let x = g.variable(&Tensor::full(vec![2, 3], 1.0));
        let r = g.repeat_batch(x, 4);
        assert_eq!(g.shape(r), &[8, 3]);
        let loss = g.sum(r);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[4.0; 6]);
    }

    #[test]
    fn embed_backward_scatters_rows() {
        let mut g = Graph::new();
        let table = g.variable(&Tensor::new(vec![3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let e = g.embed(table, &[2, 0, 2]).unwrap();
        assert_eq!(g.value(e), &[5., 6., 1., 2., 5., 6.]);
        let loss = g.sum(e);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(table).unwrap(), &[1., 1., 0., 0., 2., 2.]);
        assert!(g.embed(table, &[3]).is_err());
    }

    #[test]
    fn l1_loss_values() {
        let mut g = Graph::new();
        let a = g.variable(&Tensor::full(vec![2, 2], 1.0));
        let b = g.constant(&Tensor::full(vec![2, 2], 0.5));
        let same = g.l1_loss(a, a).unwrap();
        assert_eq!(g.scalar_value(same), 0.0);
        let off = g.l1_loss(a, b).unwrap();
        assert_eq!(g.scalar_value(off), 0.5);
        let c = g.constant(&Tensor::full(vec![3], 0.0));
        assert!(g.l1_loss(a, c).is_err());
    }

    #[test]
    fn inference_graph_tracks_nothing() {
        let mut g = Graph::inference();
        let x = g.variable(&Tensor::full(vec![4], 1.0).with_requires_grad());
        let loss = g.sum(x);
        g.backward(loss).unwrap();
        assert!(g.grad(x).is_none());
    }
}
