//! Wengert tape: every op appends a node holding its inputs, output, and the
//! activations its backward rule needs. `reverse_accumulate` walks the nodes
//! once in reverse, summing contributions for tensors used more than once.

use crate::error::{Error, Result};
use crate::ops::{self, BroadcastSpec, ConvGeom};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Sigmoid,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    GlobalAvg,
}

#[derive(Debug)]
enum Op {
    Conv2d(ConvGeom),
    Dense { k: usize },
    Sigmoid,
    Relu,
    MaxPool { argmax: Vec<u32> },
    GlobalAvgPool { h: usize, w: usize },
    Hadamard,
    Add,
    Sub,
    Maximum,
    Scale(f64),
    AddScalar,
    SumAll,
    L2Normalize { norm: f64 },
    SoftmaxCE { label: usize, probs: Vec<f64> },
    Broadcast(BroadcastSpec),
}

#[derive(Debug)]
struct Node {
    op: Op,
    inputs: Vec<TensorId>,
    out: TensorId,
}

#[derive(Default)]
pub struct Tape {
    values: Vec<Tensor>,
    requires: Vec<bool>,
    nodes: Vec<Node>,
    param_bindings: Vec<(TensorId, String)>,
}

/// Gradients per tape tensor, produced by [`Tape::reverse_accumulate`].
pub struct Gradients {
    buf: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, id: TensorId) -> Option<&Tensor> {
        self.buf.get(id.0).and_then(|g| g.as_ref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.values[id.0]
    }

    /// Introduces an external tensor. Its `requires_grad` flag decides whether
    /// `reverse_accumulate` materializes a gradient for it.
    pub fn leaf(&mut self, t: Tensor) -> TensorId {
        let req = t.requires_grad();
        self.push(t, req)
    }

    /// Binds a named parameter from `store` as a differentiable leaf and
    /// remembers the binding so [`ParamStore::accumulate`] can route its
    /// gradient back by name.
    pub fn bind_param(&mut self, store: &ParamStore, name: &str) -> Result<TensorId> {
        let value = store.value(name)?.clone().with_grad();
        let id = self.push(value, true);
        self.param_bindings.push((id, name.to_string()));
        Ok(id)
    }

    pub(crate) fn param_bindings(&self) -> &[(TensorId, String)] {
        &self.param_bindings
    }

    // Non-finite values are allowed through so callers can detect a
    // diverging computation at the loss rather than aborting mid-graph.
    fn push(&mut self, t: Tensor, requires: bool) -> TensorId {
        let id = TensorId(self.values.len());
        self.values.push(t);
        self.requires.push(requires);
        id
    }

    fn record(&mut self, op: Op, inputs: Vec<TensorId>, out: Tensor) -> TensorId {
        let requires = inputs.iter().any(|i| self.requires[i.0]);
        let out_id = self.push(out, requires);
        self.nodes.push(Node { op, inputs, out: out_id });
        out_id
    }

    /// 2-d cross-correlation of an `[h, w, cin]` input with an
    /// `[kh, kw, cin, cout]` kernel plus a `[cout]` bias.
    pub fn conv2d(
        &mut self,
        input: TensorId,
        kernel: TensorId,
        bias: TensorId,
        stride: usize,
        pad: usize,
    ) -> Result<TensorId> {
        let geom = ConvGeom::resolve(
            self.value(input).shape(),
            self.value(kernel).shape(),
            self.value(bias).len(),
            stride,
            pad,
        )?;
        let data = ops::conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
        );
        let out = Tensor::new(geom.out_shape(), data)?;
        Ok(self.record(Op::Conv2d(geom), vec![input, kernel, bias], out))
    }

    /// Fully-connected layer: flattened input of length `m` against an
    /// `[m, k]` weight and `[k]` bias.
    pub fn dense(&mut self, input: TensorId, weight: TensorId, bias: TensorId) -> Result<TensorId> {
        let m = self.value(input).len();
        let (wm, k) = match self.value(weight).shape() {
            [wm, k] => (*wm, *k),
            other => {
                return Err(Error::ShapeMismatch {
                    op: "dense",
                    detail: format!("weight must be rank 2, got {other:?}"),
                })
            }
        };
        if wm != m || self.value(bias).len() != k {
            return Err(Error::ShapeMismatch {
                op: "dense",
                detail: format!(
                    "input {m}, weight {wm}x{k}, bias {}",
                    self.value(bias).len()
                ),
            });
        }
        let data = ops::dense_forward(
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            k,
        );
        let out = Tensor::vector(data);
        Ok(self.record(Op::Dense { k }, vec![input, weight, bias], out))
    }

    pub fn activation(&mut self, kind: ActivationKind, x: TensorId) -> TensorId {
        match kind {
            ActivationKind::Sigmoid => self.sigmoid(x),
            ActivationKind::Relu => self.relu(x),
        }
    }

    /// Elementwise logistic function; outputs are strictly inside (0, 1).
    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        let t = self.value(x);
        let data: Vec<f64> = t.data().iter().map(|&v| ops::sigmoid(v)).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("shape preserved");
        self.record(Op::Sigmoid, vec![x], out)
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let t = self.value(x);
        let data: Vec<f64> = t.data().iter().map(|&v| v.max(0.0)).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("shape preserved");
        self.record(Op::Relu, vec![x], out)
    }

    pub fn pool2d(
        &mut self,
        kind: PoolKind,
        x: TensorId,
        window: usize,
        stride: usize,
    ) -> Result<TensorId> {
        match kind {
            PoolKind::Max => self.max_pool2d(x, window, stride),
            PoolKind::GlobalAvg => self.global_avg_pool(x),
        }
    }

    /// Square max pooling; ties inside a window keep the first element in
    /// row-major order.
    pub fn max_pool2d(&mut self, x: TensorId, window: usize, stride: usize) -> Result<TensorId> {
        let (h, w, c) = self.value(x).dims3()?;
        let (oh, ow, data, argmax) =
            ops::max_pool_forward(h, w, c, window, stride, self.value(x).data())?;
        let out = Tensor::new(vec![oh, ow, c], data)?;
        Ok(self.record(Op::MaxPool { argmax }, vec![x], out))
    }

    /// Mean over the spatial grid, producing a `[1, 1, c]` map of channel
    /// means.
    pub fn global_avg_pool(&mut self, x: TensorId) -> Result<TensorId> {
        let (h, w, c) = self.value(x).dims3()?;
        if h == 0 || w == 0 {
            return Err(Error::DegenerateInput { op: "global_avg_pool", detail: "empty grid".into() });
        }
        let data = self.value(x).data();
        let mut means = vec![0.0; c];
        for cell in data.chunks_exact(c) {
            for (m, v) in means.iter_mut().zip(cell) {
                *m += v;
            }
        }
        let scale = 1.0 / (h * w) as f64;
        for m in &mut means {
            *m *= scale;
        }
        let out = Tensor::new(vec![1, 1, c], means)?;
        Ok(self.record(Op::GlobalAvgPool { h, w }, vec![x], out))
    }

    pub fn hadamard(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let out = self.zip_values("hadamard", a, b, |x, y| x * y)?;
        Ok(self.record(Op::Hadamard, vec![a, b], out))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let out = self.zip_values("add", a, b, |x, y| x + y)?;
        Ok(self.record(Op::Add, vec![a, b], out))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let out = self.zip_values("sub", a, b, |x, y| x - y)?;
        Ok(self.record(Op::Sub, vec![a, b], out))
    }

    /// Elementwise maximum; on ties the gradient flows to the first argument.
    pub fn maximum(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let out = self.zip_values("maximum", a, b, f64::max)?;
        Ok(self.record(Op::Maximum, vec![a, b], out))
    }

    fn zip_values(
        &self,
        op: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            });
        }
        let data: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn scale(&mut self, x: TensorId, c: f64) -> TensorId {
        let t = self.value(x);
        let data: Vec<f64> = t.data().iter().map(|&v| v * c).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("shape preserved");
        self.record(Op::Scale(c), vec![x], out)
    }

    pub fn add_scalar(&mut self, x: TensorId, c: f64) -> TensorId {
        let t = self.value(x);
        let data: Vec<f64> = t.data().iter().map(|&v| v + c).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("shape preserved");
        self.record(Op::AddScalar, vec![x], out)
    }

    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let s: f64 = self.value(x).data().iter().sum();
        self.record(Op::SumAll, vec![x], Tensor::scalar(s))
    }

    /// Scales a flattened vector to unit Euclidean norm. Inputs with norm at
    /// or below 1e-12 are rejected rather than clamped.
    pub fn l2_normalize(&mut self, x: TensorId) -> Result<TensorId> {
        let t = self.value(x);
        let norm = t.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-12 {
            return Err(Error::DegenerateInput {
                op: "l2_normalize",
                detail: format!("norm {norm:e}"),
            });
        }
        let data: Vec<f64> = t.data().iter().map(|&v| v / norm).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.record(Op::L2Normalize { norm }, vec![x], out))
    }

    /// Fused stable softmax + cross-entropy against an integer label;
    /// produces a scalar.
    pub fn softmax_cross_entropy(&mut self, logits: TensorId, label: usize) -> Result<TensorId> {
        let (loss, probs) = ops::softmax_cross_entropy_forward(self.value(logits).data(), label)?;
        Ok(self.record(Op::SoftmaxCE { label, probs }, vec![logits], Tensor::scalar(loss)))
    }

    /// Replicates a channel vector `[1, 1, c]` (or `[c]`) across an `h x w`
    /// grid. The backward rule sums over the spatial copies.
    pub fn broadcast_channel_vector(&mut self, v: TensorId, h: usize, w: usize) -> Result<TensorId> {
        let c = match self.value(v).shape() {
            [c] | [1, 1, c] => *c,
            other => {
                return Err(Error::ShapeMismatch {
                    op: "broadcast",
                    detail: format!("channel vector must be [c] or [1,1,c], got {other:?}"),
                })
            }
        };
        let spec = BroadcastSpec { kind: ops::BroadcastKind::ChannelVector, h, w, c };
        let data = ops::broadcast_forward(&spec, self.value(v).data());
        let out = Tensor::new(vec![h, w, c], data)?;
        Ok(self.record(Op::Broadcast(spec), vec![v], out))
    }

    /// Replicates a spatial map `[h, w, 1]` across `c` channels. The backward
    /// rule sums over the channel copies.
    pub fn broadcast_spatial_map(&mut self, m: TensorId, c: usize) -> Result<TensorId> {
        let (h, w, mc) = self.value(m).dims3()?;
        if mc != 1 {
            return Err(Error::ShapeMismatch {
                op: "broadcast",
                detail: format!("spatial map must have one channel, got {mc}"),
            });
        }
        let spec = BroadcastSpec { kind: ops::BroadcastKind::SpatialMap, h, w, c };
        let data = ops::broadcast_forward(&spec, self.value(m).data());
        let out = Tensor::new(vec![h, w, c], data)?;
        Ok(self.record(Op::Broadcast(spec), vec![m], out))
    }

    /// Replicates a scalar over a full `[h, w, c]` grid. The backward rule
    /// sums over every copy.
    pub fn broadcast_scalar(&mut self, s: TensorId, h: usize, w: usize, c: usize) -> Result<TensorId> {
        if self.value(s).len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "broadcast",
                detail: format!("scalar expected, got {:?}", self.value(s).shape()),
            });
        }
        let spec = BroadcastSpec { kind: ops::BroadcastKind::Scalar, h, w, c };
        let data = ops::broadcast_forward(&spec, self.value(s).data());
        let out = Tensor::new(vec![h, w, c], data)?;
        Ok(self.record(Op::Broadcast(spec), vec![s], out))
    }

    /// Reverse pass from a scalar loss. Returns one gradient per tensor that
    /// (transitively) feeds the loss and has `requires_grad` somewhere below
    /// it; tensors used several times receive the sum of their contributions.
    pub fn reverse_accumulate(&self, loss: TensorId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "reverse_accumulate",
                detail: format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            });
        }
        let mut buf: Vec<Option<Tensor>> = (0..self.values.len()).map(|_| None).collect();
        buf[loss.0] = Some(Tensor::scalar(1.0));
        for node in self.nodes.iter().rev() {
            if node.out.0 > loss.0 || !self.requires[node.out.0] {
                continue;
            }
            let Some(up) = buf[node.out.0].clone() else { continue };
            self.backward_node(node, &up, &mut buf);
        }
        Ok(Gradients { buf })
    }

    fn grad_slice<'a>(
        &self,
        buf: &'a mut [Option<Tensor>],
        id: TensorId,
    ) -> Option<&'a mut [f64]> {
        if !self.requires[id.0] {
            return None;
        }
        let slot = &mut buf[id.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.values[id.0].shape().to_vec()));
        }
        slot.as_mut().map(|t| t.data_mut())
    }

    fn backward_node(&self, node: &Node, up: &Tensor, buf: &mut [Option<Tensor>]) {
        let up = up.data();
        match &node.op {
            Op::Conv2d(geom) => {
                let [x, k, b] = node.inputs[..] else { unreachable!() };
                // Split borrows: take each grad buffer in turn.
                let mut dx = self.grad_slice(buf, x).map(|s| s.to_vec());
                let mut dk = self.grad_slice(buf, k).map(|s| s.to_vec());
                let mut db = self.grad_slice(buf, b).map(|s| s.to_vec());
                ops::conv2d_backward(
                    geom,
                    self.value(x).data(),
                    self.value(k).data(),
                    up,
                    dx.as_deref_mut(),
                    dk.as_deref_mut(),
                    db.as_deref_mut(),
                );
                for (id, d) in [(x, dx), (k, dk), (b, db)] {
                    if let Some(d) = d {
                        self.grad_slice(buf, id).expect("present").copy_from_slice(&d);
                    }
                }
            }
            Op::Dense { k } => {
                let [x, w, b] = node.inputs[..] else { unreachable!() };
                let mut dx = self.grad_slice(buf, x).map(|s| s.to_vec());
                let mut dw = self.grad_slice(buf, w).map(|s| s.to_vec());
                let mut db = self.grad_slice(buf, b).map(|s| s.to_vec());
                ops::dense_backward(
                    self.value(x).data(),
                    self.value(w).data(),
                    up,
                    *k,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                for (id, d) in [(x, dx), (w, dw), (b, db)] {
                    if let Some(d) = d {
                        self.grad_slice(buf, id).expect("present").copy_from_slice(&d);
                    }
                }
            }
            Op::Sigmoid => {
                let y = self.values[node.out.0].data();
                if let Some(dx) = self.grad_slice(buf, node.inputs[0]) {
                    for ((d, &u), &yv) in dx.iter_mut().zip(up).zip(y) {
                        *d += u * yv * (1.0 - yv);
                    }
                }
            }
            Op::Relu => {
                let x = self.value(node.inputs[0]).data();
                if let Some(dx) = self.grad_slice(buf, node.inputs[0]) {
                    for ((d, &u), &xv) in dx.iter_mut().zip(up).zip(x) {
                        if xv > 0.0 {
                            *d += u;
                        }
                    }
                }
            }
            Op::MaxPool { argmax } => {
                if let Some(dx) = self.grad_slice(buf, node.inputs[0]) {
                    for (&u, &src) in up.iter().zip(argmax) {
                        dx[src as usize] += u;
                    }
                }
            }
            Op::GlobalAvgPool { h, w } => {
                let c = up.len();
                let scale = 1.0 / (h * w) as f64;
                if let Some(dx) = self.grad_slice(buf, node.inputs[0]) {
                    for cell in dx.chunks_exact_mut(c) {
                        for (d, &u) in cell.iter_mut().zip(up) {
                            *d += u * scale;
                        }
                    }
                }
            }
            Op::Hadamard => {
                let [a, b] = node.inputs[..] else { unreachable!() };
                let (va, vb) = (self.value(a).data().to_vec(), self.value(b).data().to_vec());
                if let Some(da) = self.grad_slice(buf, a) {
                    for ((d, &u), &bv) in da.iter_mut().zip(up).zip(&vb) {
                        *d += u * bv;
                    }
                }
                if let Some(db) = self.grad_slice(buf, b) {
                    for ((d, &u), &av) in db.iter_mut().zip(up).zip(&va) {
                        *d += u * av;
                    }
                }
            }
            Op::Add => {
                for &id in &node.inputs {
                    if let Some(d) = self.grad_slice(buf, id) {
                        for (dv, &u) in d.iter_mut().zip(up) {
                            *dv += u;
                        }
                    }
                }
            }
            Op::Sub => {
                let [a, b] = node.inputs[..] else { unreachable!() };
                if let Some(da) = self.grad_slice(buf, a) {
                    for (d, &u) in da.iter_mut().zip(up) {
                        *d += u;
                    }
                }
                if let Some(db) = self.grad_slice(buf, b) {
                    for (d, &u) in db.iter_mut().zip(up) {
                        *d -= u;
                    }
                }
            }
            Op::Maximum => {
                let [a, b] = node.inputs[..] else { unreachable!() };
                let (va, vb) = (self.value(a).data().to_vec(), self.value(b).data().to_vec());
                if let Some(da) = self.grad_slice(buf, a) {
                    for ((i, d), &u) in da.iter_mut().enumerate().zip(up) {
                        if va[i] >= vb[i] {
                            *d += u;
                        }
                    }
                }
                if let Some(db) = self.grad_slice(buf, b) {
                    for ((i, d), &u) in db.iter_mut().enumerate().zip(up) {
                        if va[i] < vb[i] {
                            *d += u;
                        }
                    }
                }
            }
            Op::Scale(c) => {
                if let Some(dx) = self.grad_slice(buf, node.inputs[0]) {
                    for (d, &u) in dx.iter_mut().zip(up) {
                        *d += c * u;
                    }
                }
            }
            Op::AddScalar => {
                if let Some(dx) = self.grad_slice(buf, node.inputs[0]) {
                    for (d, &u) in dx.iter_mut().zip(up) {
                        *d += u;
                    }
                }
            }
            Op::SumAll => {
                let u = up[0];
                if let Some(dx) = self.grad_slice(buf, node.inputs[0]) {
                    for d in dx.iter_mut() {
                        *d += u;
                    }
                }
            }
            Op::L2Normalize { norm } => {
                let y = self.values[node.out.0].data();
                let dot: f64 = up.iter().zip(y).map(|(&u, &yv)| u * yv).sum();
                if let Some(dx) = self.grad_slice(buf, node.inputs[0]) {
                    for ((d, &u), &yv) in dx.iter_mut().zip(up).zip(y) {
                        *d += (u - yv * dot) / norm;
                    }
                }
            }
            Op::SoftmaxCE { label, probs } => {
                let u = up[0];
                if let Some(dx) = self.grad_slice(buf, node.inputs[0]) {
                    for (i, (d, &p)) in dx.iter_mut().zip(probs).enumerate() {
                        let target = if i == *label { 1.0 } else { 0.0 };
                        *d += u * (p - target);
                    }
                }
            }
            Op::Broadcast(spec) => {
                if let Some(dx) = self.grad_slice(buf, node.inputs[0]) {
                    ops::broadcast_backward(spec, up, dx);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &mut Tape, data: Vec<f64>) -> TensorId {
        tape.leaf(Tensor::vector(data).with_grad())
    }

    #[test]
    fn chain_of_elementwise_ops_matches_hand_gradient() {
        // loss = sum((2x + 1) .* x) => d/dx_i = 4 x_i + 1.
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![1.0, -2.0, 0.5]);
        let sx = tape.scale(x, 2.0);
        let shifted = tape.add_scalar(sx, 1.0);
        let prod = tape.hadamard(shifted, x).unwrap();
        let loss = tape.sum_all(prod);
        let grads = tape.reverse_accumulate(loss).unwrap();
        let g = grads.wrt(x).unwrap().data();
        for (gv, xv) in g.iter().zip([1.0, -2.0, 0.5]) {
            assert!((gv - (4.0 * xv + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn reused_tensor_accumulates_both_paths() {
        // loss = sum(x + x) => gradient 2 everywhere.
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![3.0, -1.0]);
        let doubled = tape.add(x, x).unwrap();
        let loss = tape.sum_all(doubled);
        let grads = tape.reverse_accumulate(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![-1.0, 0.0, 2.0]);
        let y = tape.relu(x);
        let loss = tape.sum_all(y);
        let grads = tape.reverse_accumulate(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn sigmoid_gradient_matches_closed_form() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![2.0]);
        let y = tape.sigmoid(x);
        let loss = tape.sum_all(y);
        let grads = tape.reverse_accumulate(loss).unwrap();
        let s = 0.8807970779778823;
        assert!((grads.wrt(x).unwrap().data()[0] - s * (1.0 - s)).abs() < 1e-15);
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let mut tape = Tape::new();
        let x = tape.leaf(
            Tensor::new(vec![2, 2, 1], vec![1.0, 5.0, 3.0, 2.0]).unwrap().with_grad(),
        );
        let pooled = tape.max_pool2d(x, 2, 2).unwrap();
        let loss = tape.sum_all(pooled);
        let grads = tape.reverse_accumulate(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn global_avg_pool_spreads_gradient_uniformly() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2, 2, 2], (0..8).map(f64::from).collect()).unwrap().with_grad());
        let pooled = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.value(pooled).shape(), &[1, 1, 2]);
        assert_eq!(tape.value(pooled).data(), &[3.0, 4.0]); // means of evens/odds
        let loss = tape.sum_all(pooled);
        let grads = tape.reverse_accumulate(loss).unwrap();
        assert!(grads.wrt(x).unwrap().data().iter().all(|&g| (g - 0.25).abs() < 1e-15));
    }

    #[test]
    fn l2_normalize_gradient_matches_quotient_rule() {
        // x = (3, 4): d(y0)/dx = ((16, -12)) / 125.
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![3.0, 4.0]);
        let y = tape.l2_normalize(x).unwrap();
        assert!((tape.value(y).data()[0] - 0.6).abs() < 1e-15);
        let mask = tape.leaf(Tensor::vector(vec![1.0, 0.0]));
        let first = tape.hadamard(y, mask).unwrap();
        let loss = tape.sum_all(first);
        let grads = tape.reverse_accumulate(loss).unwrap();
        let g = grads.wrt(x).unwrap().data();
        assert!((g[0] - 16.0 / 125.0).abs() < 1e-12);
        assert!((g[1] - -12.0 / 125.0).abs() < 1e-12);
    }

    #[test]
    fn l2_normalize_rejects_near_zero_vectors() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![0.0, 1e-13]);
        assert!(matches!(tape.l2_normalize(x), Err(Error::DegenerateInput { .. })));
    }

    #[test]
    fn softmax_ce_gradient_is_probs_minus_onehot() {
        let mut tape = Tape::new();
        let logits = leaf(&mut tape, vec![1.0, 2.0, 3.0]);
        let loss = tape.softmax_cross_entropy(logits, 2).unwrap();
        let grads = tape.reverse_accumulate(loss).unwrap();
        let g = grads.wrt(logits).unwrap().data();
        let z: f64 = (1.0f64.exp() + 2.0f64.exp() + 3.0f64.exp()).ln();
        for (i, &gv) in g.iter().enumerate() {
            let p = ((i + 1) as f64 - z).exp();
            let expect = p - if i == 2 { 1.0 } else { 0.0 };
            assert!((gv - expect).abs() < 1e-12, "logit {i}: {gv} vs {expect}");
        }
        assert!((g.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn maximum_ties_send_gradient_to_first_argument() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, vec![1.0, 5.0, 2.0]);
        let b = leaf(&mut tape, vec![1.0, 3.0, 4.0]);
        let m = tape.maximum(a, b).unwrap();
        let loss = tape.sum_all(m);
        let grads = tape.reverse_accumulate(loss).unwrap();
        assert_eq!(grads.wrt(a).unwrap().data(), &[1.0, 1.0, 0.0]);
        assert_eq!(grads.wrt(b).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn broadcast_backwards_sum_over_copies() {
        // Channel vector [a, b] over a 2x3 grid: each component collects the
        // matching channel of the upstream gradient at all 6 cells.
        let mut tape = Tape::new();
        let v = leaf(&mut tape, vec![0.5, -1.0]);
        let grid = tape.broadcast_channel_vector(v, 2, 3).unwrap();
        assert_eq!(tape.value(grid).shape(), &[2, 3, 2]);
        let weights = tape.leaf(Tensor::new(vec![2, 3, 2], (1..=12).map(f64::from).collect()).unwrap());
        let prod = tape.hadamard(grid, weights).unwrap();
        let loss = tape.sum_all(prod);
        let grads = tape.reverse_accumulate(loss).unwrap();
        // Odd positions 1,3,..,11 for channel 1; evens+1 for channel 0.
        assert_eq!(grads.wrt(v).unwrap().data(), &[36.0, 42.0]);

        // Spatial map over channels.
        let mut tape = Tape::new();
        let m = tape.leaf(Tensor::new(vec![1, 2, 1], vec![2.0, 3.0]).unwrap().with_grad());
        let grid = tape.broadcast_spatial_map(m, 4).unwrap();
        assert_eq!(tape.value(grid).shape(), &[1, 2, 4]);
        let loss = tape.sum_all(grid);
        let grads = tape.reverse_accumulate(loss).unwrap();
        assert_eq!(grads.wrt(m).unwrap().data(), &[4.0, 4.0]);

        // Scalar over the whole grid.
        let mut tape = Tape::new();
        let s = tape.leaf(Tensor::scalar(1.5).with_grad());
        let grid = tape.broadcast_scalar(s, 2, 2, 3).unwrap();
        let loss = tape.sum_all(grid);
        let grads = tape.reverse_accumulate(loss).unwrap();
        assert_eq!(grads.wrt(s).unwrap().data(), &[12.0]);
    }

    #[test]
    fn leaves_without_requires_grad_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let y = tape.scale(x, 3.0);
        let loss = tape.sum_all(y);
        // Loss does not require grad; reverse still runs but records nothing.
        let grads = tape.reverse_accumulate(loss).unwrap();
        assert!(grads.wrt(x).is_none());
    }

    #[test]
    fn reverse_accumulate_requires_scalar_loss() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![1.0, 2.0]);
        assert!(tape.reverse_accumulate(x).is_err());
    }

    #[test]
    fn dense_then_ce_composes() {
        // Two-logit linear classifier: logits = W^T x + b.
        let mut tape = Tape::new();
        let x = leaf(&mut tape, vec![1.0, -1.0]);
        let w = tape.leaf(Tensor::new(vec![2, 2], vec![0.5, -0.5, 0.25, 0.75]).unwrap().with_grad());
        let b = leaf(&mut tape, vec![0.1, -0.1]);
        let logits = tape.dense(x, w, b).unwrap();
        // logits = [0.5 - 0.25 + 0.1, -0.5 - 0.75 - 0.1] = [0.35, -1.35]
        let v = tape.value(logits).data();
        assert!((v[0] - 0.35).abs() < 1e-12 && (v[1] - -1.35).abs() < 1e-12);
        let loss = tape.softmax_cross_entropy(logits, 0).unwrap();
        let grads = tape.reverse_accumulate(loss).unwrap();
        let p1 = 1.0 / (1.0 + (0.35f64 - -1.35).exp());
        let db = grads.wrt(b).unwrap().data();
        assert!((db[0] - (1.0 - p1 - 1.0)).abs() < 1e-12);
        assert!((db[1] - p1).abs() < 1e-12);
    }
}
