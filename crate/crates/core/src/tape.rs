//! Reverse-mode automatic differentiation over a flat operation tape.
//!
//! A [`Tape`] records one forward computation; nodes are appended in
//! evaluation order, so every node's inputs precede it and a single reverse
//! sweep propagates gradients. Forward/backward over one tape is
//! single-threaded; independent tapes may run concurrently.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvDims};
use crate::params::{ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct VarId(usize);

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

/// Batch-statistics vs running-statistics normalization.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

enum Op<T: Scalar> {
    Leaf,
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Act {
        x: VarId,
        kind: Activation,
    },
    Linear {
        x: VarId,
        w: VarId,
        b: Option<VarId>,
    },
    Conv2d {
        x: VarId,
        w: VarId,
        b: Option<VarId>,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        x: VarId,
        gamma: VarId,
        beta: VarId,
        mean: Vec<f64>,
        invstd: Vec<f64>,
        train: bool,
    },
    GlobalMaxPool {
        x: VarId,
        argmax: Vec<u32>,
    },
    Concat {
        a: VarId,
        b: VarId,
        axis: usize,
    },
    SoftmaxCrossEntropy {
        logits: VarId,
        labels: Vec<u32>,
        probs: Vec<T>,
    },
    Sum {
        x: VarId,
    },
}

impl<T: Scalar> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Act { kind, .. } => match kind {
                Activation::Relu => "relu",
                Activation::Sigmoid => "sigmoid",
                Activation::Tanh => "tanh",
            },
            Op::Linear { .. } => "linear",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batchnorm2d",
            Op::GlobalMaxPool { .. } => "global_max_pool",
            Op::Concat { .. } => "concat",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::Sum { .. } => "sum",
        }
    }
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recorded forward computation plus the gradients of its last backward pass.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    param_leaves: HashMap<ParamId, VarId>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            param_leaves: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: VarId) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: VarId) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient from the most recent backward pass; `None` when the node was
    /// not reached from the loss.
    pub fn grad_of(&self, v: VarId) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient with unreached nodes reported as zeros.
    pub fn grad_or_zeros(&self, v: VarId) -> Vec<T> {
        match self.grad_of(v) {
            Some(g) => g.to_vec(),
            None => vec![T::zero(); self.nodes[v.0].value.numel()],
        }
    }

    /// New leaf from a tensor value; participates in differentiation when the
    /// tensor has `requires_grad` set.
    pub fn leaf(&mut self, value: Tensor<T>) -> VarId {
        let needs = value.requires_grad();
        self.push_unchecked(value, Op::Leaf, needs)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> VarId {
        self.push_unchecked(value, Op::Leaf, false)
    }

    /// Leaf bound to a parameter. Repeat bindings of one parameter return the
    /// same node, so gradients from all uses accumulate.
    pub fn param(&mut self, ps: &ParamSet<T>, id: ParamId) -> VarId {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        let entry = ps.get(id);
        let v = self.push_unchecked(entry.tensor.clone(), Op::Leaf, entry.trainable);
        self.param_leaves.insert(id, v);
        v
    }

    fn push_unchecked(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> VarId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        VarId(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Result<VarId> {
        if !value.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite value in output of {}",
                op.name()
            )));
        }
        Ok(self.push_unchecked(value, op, needs_grad))
    }

    fn needs(&self, v: VarId) -> bool {
        self.nodes[v.0].needs_grad
    }

    // ---- elementwise ----

    fn binary_check(&self, a: VarId, b: VarId, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{op}: operand shapes {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_check(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(t, Op::Add(a, b), needs)
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_check(a, b, "sub")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x - y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(t, Op::Sub(a, b), needs)
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_check(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(t, Op::Mul(a, b), needs)
    }

    pub fn activation(&mut self, x: VarId, kind: Activation) -> Result<VarId> {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| match kind {
                Activation::Relu => {
                    if v > T::zero() {
                        v
                    } else {
                        T::zero()
                    }
                }
                Activation::Sigmoid => kernels::sigmoid(v),
                Activation::Tanh => v.tanh(),
            })
            .collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let needs = self.needs(x);
        self.push(t, Op::Act { x, kind }, needs)
    }

    pub fn relu(&mut self, x: VarId) -> Result<VarId> {
        self.activation(x, Activation::Relu)
    }

    // ---- dense / conv ----

    /// `x: n x f` times `w: f x g` plus broadcast `b: g`.
    pub fn linear(&mut self, x: VarId, w: VarId, b: Option<VarId>) -> Result<VarId> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(Error::shape(format!(
                "linear: input {xs:?} incompatible with weight {ws:?}"
            )));
        }
        let (n, f, g) = (xs[0], xs[1], ws[1]);
        if let Some(b) = b {
            let bs = self.shape(b);
            if bs != [g] {
                return Err(Error::shape(format!(
                    "linear: bias shape {bs:?}, expected [{g}]"
                )));
            }
        }
        let mut out = vec![T::zero(); n * g];
        if let Some(bv) = b {
            let bias = self.value(bv).data();
            for row in out.chunks_mut(g) {
                row.copy_from_slice(bias);
            }
        }
        kernels::matmul_acc(self.value(x).data(), self.value(w).data(), &mut out, n, f, g);
        let t = Tensor::new(vec![n, g], out)?;
        let needs = self.needs(x) || self.needs(w) || b.map(|b| self.needs(b)).unwrap_or(false);
        self.push(t, Op::Linear { x, w, b }, needs)
    }

    /// `x: n x c x h x w` with `weight: o x c x k x k`.
    pub fn conv2d(
        &mut self,
        x: VarId,
        w: VarId,
        b: Option<VarId>,
        stride: usize,
        pad: usize,
    ) -> Result<VarId> {
        let d = self.conv_dims(x, w, stride, pad)?;
        if let Some(b) = b {
            let bs = self.shape(b);
            if bs != [d.out_channels] {
                return Err(Error::shape(format!(
                    "conv2d: bias shape {bs:?}, expected [{}]",
                    d.out_channels
                )));
            }
        }
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &d,
        );
        let t = Tensor::new(vec![d.batch, d.out_channels, d.out_h, d.out_w], out)?;
        let needs = self.needs(x) || self.needs(w) || b.map(|b| self.needs(b)).unwrap_or(false);
        self.push(
            t,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            needs,
        )
    }

    fn conv_dims(&self, x: VarId, w: VarId, stride: usize, pad: usize) -> Result<ConvDims> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.len() != 4 {
            return Err(Error::shape(format!("conv2d: input rank {} != 4", xs.len())));
        }
        if ws.len() != 4 || ws[2] != ws[3] {
            return Err(Error::shape(format!(
                "conv2d: weight shape {ws:?}, expected o x i x k x k"
            )));
        }
        if xs[1] != ws[1] {
            return Err(Error::shape(format!(
                "conv2d: input channels {} != weight channels {}",
                xs[1], ws[1]
            )));
        }
        let k = ws[2];
        let out_h = kernels::conv_out_extent(xs[2], k, stride, pad).ok_or_else(|| {
            Error::shape(format!(
                "conv2d: height {} too small for kernel {k} stride {stride} pad {pad}",
                xs[2]
            ))
        })?;
        let out_w = kernels::conv_out_extent(xs[3], k, stride, pad).ok_or_else(|| {
            Error::shape(format!(
                "conv2d: width {} too small for kernel {k} stride {stride} pad {pad}",
                xs[3]
            ))
        })?;
        Ok(ConvDims {
            batch: xs[0],
            in_channels: xs[1],
            in_h: xs[2],
            in_w: xs[3],
            out_channels: ws[0],
            kernel: k,
            stride,
            pad,
            out_h,
            out_w,
        })
    }

    /// Normalizes `x: n x c x h x w` per channel. Train mode uses batch
    /// statistics and folds them into the running entries with the given
    /// momentum; eval mode reads the running entries.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm2d(
        &mut self,
        ps: &mut ParamSet<T>,
        x: VarId,
        gamma: VarId,
        beta: VarId,
        running_mean: ParamId,
        running_var: ParamId,
        mode: BnMode,
        eps: f64,
        momentum: f64,
    ) -> Result<VarId> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::shape(format!(
                "batchnorm2d: input rank {} != 4",
                xs.len()
            )));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let spatial = h * w;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape(format!(
                "batchnorm2d: gamma/beta must be [{c}], got {:?}/{:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let train = mode == BnMode::Train;
        if train && n * spatial < 2 {
            return Err(Error::shape(
                "batchnorm2d: train mode needs at least 2 values per channel".to_string(),
            ));
        }

        let (mean, var) = if train {
            let (mean, var) = kernels::batch_moments(self.value(x).data(), n, c, spatial);
            let rm = ps.get_mut(running_mean);
            for (r, &m) in rm.tensor.data_mut().iter_mut().zip(mean.iter()) {
                *r = T::from_f64(momentum * r.as_f64() + (1.0 - momentum) * m);
            }
            let rv = ps.get_mut(running_var);
            for (r, &v) in rv.tensor.data_mut().iter_mut().zip(var.iter()) {
                *r = T::from_f64(momentum * r.as_f64() + (1.0 - momentum) * v);
            }
            (mean, var)
        } else {
            let mean = ps.get(running_mean).tensor.to_f64_vec();
            let var = ps.get(running_var).tensor.to_f64_vec();
            (mean, var)
        };
        let invstd: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();

        let gamma_v = self.value(gamma).data().to_vec();
        let beta_v = self.value(beta).data().to_vec();
        let mut out = vec![T::zero(); n * c * spatial];
        let xd = self.value(x).data();
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * spatial;
                let mu = T::from_f64(mean[ci]);
                let is = T::from_f64(invstd[ci]);
                let (g, b) = (gamma_v[ci], beta_v[ci]);
                for (o, &v) in out[base..base + spatial].iter_mut().zip(&xd[base..base + spatial]) {
                    *o = g * ((v - mu) * is) + b;
                }
            }
        }
        let t = Tensor::new(xs, out)?;
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                invstd,
                train,
            },
            needs,
        )
    }

    /// Per-slice maximum of `x: n x c x h x w` down to `n x c`. Ties resolve
    /// to the first row-major position, which also receives the gradient.
    pub fn global_max_pool(&mut self, x: VarId) -> Result<VarId> {
        let xs = self.shape(x);
        if xs.len() != 4 {
            return Err(Error::shape(format!(
                "global_max_pool: input rank {} != 4",
                xs.len()
            )));
        }
        let (n, c, spatial) = (xs[0], xs[1], xs[2] * xs[3]);
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); n * c];
        let mut argmax = vec![0u32; n * c];
        for i in 0..n * c {
            let slice = &xd[i * spatial..(i + 1) * spatial];
            let mut best = slice[0];
            let mut at = 0u32;
            for (j, &v) in slice.iter().enumerate().skip(1) {
                if v > best {
                    best = v;
                    at = j as u32;
                }
            }
            out[i] = best;
            argmax[i] = at;
        }
        let t = Tensor::new(vec![n, c], out)?;
        let needs = self.needs(x);
        self.push(t, Op::GlobalMaxPool { x, argmax }, needs)
    }

    /// Concatenates two tensors whose shapes agree except on `axis`.
    pub fn concat(&mut self, a: VarId, b: VarId, axis: usize) -> Result<VarId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != sb.len() || axis >= sa.len() {
            return Err(Error::shape(format!(
                "concat: ranks {:?} vs {:?} with axis {axis}",
                sa, sb
            )));
        }
        for (i, (&da, &db)) in sa.iter().zip(sb.iter()).enumerate() {
            if i != axis && da != db {
                return Err(Error::shape(format!(
                    "concat: shapes {sa:?} and {sb:?} differ off axis {axis}"
                )));
            }
        }
        let outer: usize = sa[..axis].iter().product();
        let inner: usize = sa[axis + 1..].iter().product();
        let (na, nb) = (sa[axis] * inner, sb[axis] * inner);
        let mut shape = sa.clone();
        shape[axis] += sb[axis];
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let mut out = vec![T::zero(); outer * (na + nb)];
        for o in 0..outer {
            out[o * (na + nb)..o * (na + nb) + na].copy_from_slice(&ad[o * na..(o + 1) * na]);
            out[o * (na + nb) + na..(o + 1) * (na + nb)].copy_from_slice(&bd[o * nb..(o + 1) * nb]);
        }
        let t = Tensor::new(shape, out)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(t, Op::Concat { a, b, axis }, needs)
    }

    /// Mean negative log-likelihood over the batch plus the row-wise softmax
    /// probabilities. Returns `(loss, probabilities)`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: VarId,
        labels: &[usize],
    ) -> Result<(VarId, Tensor<T>)> {
        let ls = self.shape(logits);
        if ls.len() != 2 {
            return Err(Error::shape(format!(
                "softmax_cross_entropy: logits rank {} != 2",
                ls.len()
            )));
        }
        let (n, k) = (ls[0], ls[1]);
        if labels.len() != n {
            return Err(Error::shape(format!(
                "softmax_cross_entropy: {n} rows but {} labels",
                labels.len()
            )));
        }
        for &y in labels {
            if y >= k {
                return Err(Error::shape(format!(
                    "softmax_cross_entropy: label {y} out of range [0,{k})"
                )));
            }
        }
        let probs = kernels::softmax_rows(self.value(logits).data(), n, k);
        let mut loss = T::zero();
        for (r, &y) in labels.iter().enumerate() {
            let p = probs[r * k + y].max(T::min_positive_value());
            loss = loss - p.ln();
        }
        loss = loss / T::from_f64(n as f64);
        let probs_t = Tensor::new(vec![n, k], probs.clone())?;
        let needs = self.needs(logits);
        let v = self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.iter().map(|&y| y as u32).collect(),
                probs,
            },
            needs,
        )?;
        Ok((v, probs_t))
    }

    /// Full reduction to a scalar.
    pub fn sum(&mut self, x: VarId) -> Result<VarId> {
        let s: T = self.value(x).data().iter().copied().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, needs)
    }

    // ---- backward ----

    /// Computes `d loss / d node` for every node reachable from `loss`.
    /// Each call starts from fresh gradients; accumulation across steps
    /// happens in [`Tape::accumulate_param_grads`].
    pub fn backward(&mut self, loss: VarId) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::shape(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g)?;
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    /// Adds the current leaf gradients into their bound parameters.
    /// Repeated backward/accumulate cycles without `ParamSet::zero_grads`
    /// sum up, so callers must zero between optimizer steps.
    pub fn accumulate_param_grads(&self, ps: &mut ParamSet<T>) {
        for (&pid, &vid) in self.param_leaves.iter() {
            if let Some(g) = self.grad_of(vid) {
                ps.get_mut(pid).tensor.accumulate_grad(g);
            }
        }
    }

    fn add_grad(grads: &mut [Option<Vec<T>>], nodes: &[Node<T>], v: VarId, delta: &[T]) {
        if !nodes[v.0].needs_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.numel()]);
        for (s, &d) in slot.iter_mut().zip(delta) {
            *s = *s + d;
        }
    }

    fn propagate(&mut self, i: usize, g: &[T]) -> Result<()> {
        let Tape { nodes, grads, .. } = self;
        let node = &nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                Self::add_grad(grads, nodes, *a, g);
                Self::add_grad(grads, nodes, *b, g);
            }
            Op::Sub(a, b) => {
                Self::add_grad(grads, nodes, *a, g);
                let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                Self::add_grad(grads, nodes, *b, &neg);
            }
            Op::Mul(a, b) => {
                if nodes[a.0].needs_grad {
                    let da: Vec<T> = g
                        .iter()
                        .zip(nodes[b.0].value.data())
                        .map(|(&gv, &bv)| gv * bv)
                        .collect();
                    Self::add_grad(grads, nodes, *a, &da);
                }
                if nodes[b.0].needs_grad {
                    let db: Vec<T> = g
                        .iter()
                        .zip(nodes[a.0].value.data())
                        .map(|(&gv, &av)| gv * av)
                        .collect();
                    Self::add_grad(grads, nodes, *b, &db);
                }
            }
            Op::Act { x, kind } => {
                if nodes[x.0].needs_grad {
                    let y = node.value.data();
                    let xd = nodes[x.0].value.data();
                    let dx: Vec<T> = match kind {
                        Activation::Relu => g
                            .iter()
                            .zip(xd)
                            .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                            .collect(),
                        Activation::Sigmoid => g
                            .iter()
                            .zip(y)
                            .map(|(&gv, &yv)| gv * yv * (T::one() - yv))
                            .collect(),
                        Activation::Tanh => g
                            .iter()
                            .zip(y)
                            .map(|(&gv, &yv)| gv * (T::one() - yv * yv))
                            .collect(),
                    };
                    Self::add_grad(grads, nodes, *x, &dx);
                }
            }
            Op::Linear { x, w, b } => {
                let xs = nodes[x.0].value.shape();
                let ws = nodes[w.0].value.shape();
                let (n, f, gq) = (xs[0], xs[1], ws[1]);
                if nodes[x.0].needs_grad {
                    let mut wt = vec![T::zero(); f * gq];
                    kernels::transpose(nodes[w.0].value.data(), f, gq, &mut wt);
                    let mut dx = vec![T::zero(); n * f];
                    kernels::matmul_acc(g, &wt, &mut dx, n, gq, f);
                    Self::add_grad(grads, nodes, *x, &dx);
                }
                if nodes[w.0].needs_grad {
                    let mut xt = vec![T::zero(); n * f];
                    kernels::transpose(nodes[x.0].value.data(), n, f, &mut xt);
                    let mut dw = vec![T::zero(); f * gq];
                    kernels::matmul_acc(&xt, g, &mut dw, f, n, gq);
                    Self::add_grad(grads, nodes, *w, &dw);
                }
                if let Some(b) = b {
                    if nodes[b.0].needs_grad {
                        let mut db = vec![T::zero(); gq];
                        for row in g.chunks(gq) {
                            for (d, &gv) in db.iter_mut().zip(row) {
                                *d = *d + gv;
                            }
                        }
                        Self::add_grad(grads, nodes, *b, &db);
                    }
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let xs = nodes[x.0].value.shape();
                let ws = nodes[w.0].value.shape();
                let os = node.value.shape();
                let d = ConvDims {
                    batch: xs[0],
                    in_channels: xs[1],
                    in_h: xs[2],
                    in_w: xs[3],
                    out_channels: ws[0],
                    kernel: ws[2],
                    stride: *stride,
                    pad: *pad,
                    out_h: os[2],
                    out_w: os[3],
                };
                let (dx, dw, db) = kernels::conv2d_backward(
                    nodes[x.0].value.data(),
                    nodes[w.0].value.data(),
                    g,
                    &d,
                    nodes[x.0].needs_grad,
                    b.is_some(),
                );
                if let Some(dx) = dx {
                    Self::add_grad(grads, nodes, *x, &dx);
                }
                if nodes[w.0].needs_grad {
                    Self::add_grad(grads, nodes, *w, &dw);
                }
                if let (Some(b), Some(db)) = (b, db) {
                    Self::add_grad(grads, nodes, *b, &db);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                invstd,
                train,
            } => {
                let xs = nodes[x.0].value.shape();
                let (n, c, spatial) = (xs[0], xs[1], xs[2] * xs[3]);
                let m = (n * spatial) as f64;
                let xd = nodes[x.0].value.data();
                let gamma_v = nodes[gamma.0].value.data();

                // Ordered per-channel sums of g and g*xhat.
                let mut s1 = vec![0.0f64; c];
                let mut s2 = vec![0.0f64; c];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * spatial;
                        let (mu, is) = (mean[ci], invstd[ci]);
                        let mut p1 = 0.0;
                        let mut p2 = 0.0;
                        for j in base..base + spatial {
                            let gv = g[j].as_f64();
                            let xhat = (xd[j].as_f64() - mu) * is;
                            p1 += gv;
                            p2 += gv * xhat;
                        }
                        s1[ci] += p1;
                        s2[ci] += p2;
                    }
                }
                if nodes[gamma.0].needs_grad {
                    let dgamma: Vec<T> = s2.iter().map(|&v| T::from_f64(v)).collect();
                    Self::add_grad(grads, nodes, *gamma, &dgamma);
                }
                if nodes[beta.0].needs_grad {
                    let dbeta: Vec<T> = s1.iter().map(|&v| T::from_f64(v)).collect();
                    Self::add_grad(grads, nodes, *beta, &dbeta);
                }
                if nodes[x.0].needs_grad {
                    let mut dx = vec![T::zero(); xd.len()];
                    for ni in 0..n {
                        for ci in 0..c {
                            let base = (ni * c + ci) * spatial;
                            let (mu, is) = (mean[ci], invstd[ci]);
                            let gm = gamma_v[ci].as_f64();
                            for j in base..base + spatial {
                                let gv = g[j].as_f64();
                                let v = if *train {
                                    let xhat = (xd[j].as_f64() - mu) * is;
                                    gm * is * (gv - s1[ci] / m - xhat * s2[ci] / m)
                                } else {
                                    gm * is * gv
                                };
                                dx[j] = T::from_f64(v);
                            }
                        }
                    }
                    Self::add_grad(grads, nodes, *x, &dx);
                }
            }
            Op::GlobalMaxPool { x, argmax } => {
                if nodes[x.0].needs_grad {
                    let xs = nodes[x.0].value.shape();
                    let spatial = xs[2] * xs[3];
                    let mut dx = vec![T::zero(); nodes[x.0].value.numel()];
                    for (i, (&gv, &at)) in g.iter().zip(argmax.iter()).enumerate() {
                        dx[i * spatial + at as usize] = gv;
                    }
                    Self::add_grad(grads, nodes, *x, &dx);
                }
            }
            Op::Concat { a, b, axis } => {
                let sa = nodes[a.0].value.shape();
                let sb = nodes[b.0].value.shape();
                let outer: usize = sa[..*axis].iter().product();
                let inner: usize = sa[*axis + 1..].iter().product();
                let (na, nb) = (sa[*axis] * inner, sb[*axis] * inner);
                if nodes[a.0].needs_grad {
                    let mut da = vec![T::zero(); outer * na];
                    for o in 0..outer {
                        da[o * na..(o + 1) * na]
                            .copy_from_slice(&g[o * (na + nb)..o * (na + nb) + na]);
                    }
                    Self::add_grad(grads, nodes, *a, &da);
                }
                if nodes[b.0].needs_grad {
                    let mut db = vec![T::zero(); outer * nb];
                    for o in 0..outer {
                        db[o * nb..(o + 1) * nb]
                            .copy_from_slice(&g[o * (na + nb) + na..(o + 1) * (na + nb)]);
                    }
                    Self::add_grad(grads, nodes, *b, &db);
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                if nodes[logits.0].needs_grad {
                    let k = nodes[logits.0].value.shape()[1];
                    let n = labels.len();
                    let scale = g[0] / T::from_f64(n as f64);
                    let mut dl = vec![T::zero(); probs.len()];
                    for (r, &y) in labels.iter().enumerate() {
                        for j in 0..k {
                            let indicator = if j == y as usize { T::one() } else { T::zero() };
                            dl[r * k + j] = scale * (probs[r * k + j] - indicator);
                        }
                    }
                    Self::add_grad(grads, nodes, *logits, &dl);
                }
            }
            Op::Sum { x } => {
                if nodes[x.0].needs_grad {
                    let dx = vec![g[0]; nodes[x.0].value.numel()];
                    Self::add_grad(grads, nodes, *x, &dx);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], values: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, values).unwrap()
    }

    // ---- conv2d ----

    #[test]
    fn conv_one_by_one_kernel_scales() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let w = tape.constant(t(&[1, 1, 1, 1], &[2.0]));
        let y = tape.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn conv_all_ones_window_sum() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0f64));
        let w = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0f64));
        let y = tape.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 1, 1]);
        assert_eq!(tape.value(y).item().unwrap(), 9.0);
    }

    #[test]
    fn conv_shape_formula() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 3, 32, 32]));
        let w = tape.constant(Tensor::<f32>::zeros(&[16, 3, 7, 7]));
        let y = tape.conv2d(x, w, None, 1, 3).unwrap();
        assert_eq!(tape.shape(y), &[1, 16, 32, 32]);
    }

    #[test]
    fn conv_identity_kernel_is_identity() {
        // 1x1 kernels forming the channel identity matrix.
        let c = 3;
        let mut w = vec![0.0f64; c * c];
        for i in 0..c {
            w[i * c + i] = 1.0;
        }
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..c * 4 * 5).map(|i| (i as f64 * 0.31).sin()).collect();
        let x = tape.constant(t(&[1, c, 4, 5], &data));
        let wv = tape.constant(t(&[c, c, 1, 1], &w));
        let y = tape.conv2d(x, wv, None, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn conv_channel_mismatch_is_descriptive() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let w = tape.constant(Tensor::zeros(&[1, 3, 3, 3]));
        let err = tape.conv2d(x, w, None, 1, 1).unwrap_err();
        assert!(matches!(err, Error::Shape(m) if m.contains("channels")));
    }

    #[test]
    fn conv_kernel_larger_than_padded_input_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
        let w = tape.constant(Tensor::zeros(&[1, 1, 5, 5]));
        assert!(tape.conv2d(x, w, None, 1, 0).is_err());
    }

    // ---- batchnorm ----

    fn bn_fixture(
        channels: usize,
    ) -> (ParamSet<f64>, crate::params::ParamId, crate::params::ParamId) {
        let mut ps = ParamSet::new();
        let rm = ps
            .register("bn.running_mean", Tensor::zeros(&[channels]), false, false)
            .unwrap();
        let rv = ps
            .register(
                "bn.running_var",
                Tensor::full(&[channels], 1.0),
                false,
                false,
            )
            .unwrap();
        (ps, rm, rv)
    }

    #[test]
    fn bn_constant_channel_centers_to_zero() {
        let (mut ps, rm, rv) = bn_fixture(2);
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 2, 2, 2], &[3.0; 8]));
        let gamma = tape.constant(Tensor::full(&[2], 1.0));
        let beta = tape.constant(Tensor::zeros(&[2]));
        let y = tape
            .batchnorm2d(&mut ps, x, gamma, beta, rm, rv, BnMode::Train, 1e-5, 0.9)
            .unwrap();
        for &v in tape.value(y).data() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn bn_zero_gamma_yields_beta() {
        let (mut ps, rm, rv) = bn_fixture(1);
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 2, 2], &[1.0, 7.0, -2.0, 0.5]));
        let gamma = tape.constant(Tensor::zeros(&[1]));
        let beta = tape.constant(Tensor::full(&[1], 5.0));
        let y = tape
            .batchnorm2d(&mut ps, x, gamma, beta, rm, rv, BnMode::Train, 1e-5, 0.9)
            .unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn bn_two_values_normalize_to_unit() {
        // Channel values {1, 3}: mean 2, biased variance 1, so {-1, +1}
        // up to the vanishing eps.
        let (mut ps, rm, rv) = bn_fixture(1);
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 1, 2], &[1.0, 3.0]));
        let gamma = tape.constant(Tensor::full(&[1], 1.0));
        let beta = tape.constant(Tensor::zeros(&[1]));
        let y = tape
            .batchnorm2d(&mut ps, x, gamma, beta, rm, rv, BnMode::Train, 1e-12, 0.9)
            .unwrap();
        let d = tape.value(y).data();
        assert!((d[0] + 1.0).abs() < 1e-6);
        assert!((d[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn bn_eval_before_any_training_uses_initial_state() {
        // Initial running state (mean 0, var 1): eval is gamma * x + beta.
        let (mut ps, rm, rv) = bn_fixture(1);
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 1, 2], &[0.25, -0.75]));
        let gamma = tape.constant(Tensor::full(&[1], 2.0));
        let beta = tape.constant(Tensor::full(&[1], 1.0));
        let y = tape
            .batchnorm2d(&mut ps, x, gamma, beta, rm, rv, BnMode::Eval, 0.0, 0.9)
            .unwrap();
        assert_eq!(tape.value(y).data(), &[1.5, -0.5]);
    }

    #[test]
    fn bn_running_state_momentum_fold() {
        let (mut ps, rm, rv) = bn_fixture(1);
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 1, 2], &[1.0, 3.0]));
        let gamma = tape.constant(Tensor::full(&[1], 1.0));
        let beta = tape.constant(Tensor::zeros(&[1]));
        tape.batchnorm2d(&mut ps, x, gamma, beta, rm, rv, BnMode::Train, 1e-5, 0.9)
            .unwrap();
        // r = 0.9 * old + 0.1 * batch: mean 0.9*0 + 0.1*2, var 0.9*1 + 0.1*1.
        assert!((ps.get(rm).tensor.data()[0] - 0.2).abs() < 1e-12);
        assert!((ps.get(rv).tensor.data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bn_train_needs_two_values() {
        let (mut ps, rm, rv) = bn_fixture(1);
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 1, 1], &[1.0]));
        let gamma = tape.constant(Tensor::full(&[1], 1.0));
        let beta = tape.constant(Tensor::zeros(&[1]));
        assert!(tape
            .batchnorm2d(&mut ps, x, gamma, beta, rm, rv, BnMode::Train, 1e-5, 0.9)
            .is_err());
    }

    // ---- activations ----

    #[test]
    fn activation_reference_points() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[4], &[-2.0, 3.0, 0.0, 1.40879]));
        let r = tape.activation(x, Activation::Relu).unwrap();
        assert_eq!(&tape.value(r).data()[..2], &[0.0, 3.0]);
        let s = tape.activation(x, Activation::Sigmoid).unwrap();
        assert_eq!(tape.value(s).data()[2], 0.5);
        let h = tape.activation(x, Activation::Tanh).unwrap();
        // Reference scalar evaluation of tanh at 1.40879.
        assert!((tape.value(h).data()[3] - 0.8872369082152951).abs() < 1e-4);
    }

    // ---- linear ----

    #[test]
    fn linear_identity_weight_passthrough() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let w = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let y = tape.linear(x, w, None).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn linear_dot_product_with_bias() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let w = tape.constant(t(&[2, 1], &[1.0, 1.0]));
        let b = tape.constant(t(&[1], &[0.5]));
        let y = tape.linear(x, w, Some(b)).unwrap();
        assert_eq!(tape.value(y).data(), &[3.5]);
    }

    #[test]
    fn linear_weight_gradient_of_output_sum() {
        // d(sum(x @ w)) / dw = x^T @ ones, checked against central differences.
        let x_data = [0.5, -1.5, 2.0, 0.25, 1.0, -0.75];
        let mut ps = ParamSet::new();
        let w = ps
            .register("w", t(&[3, 2], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]), true, true)
            .unwrap();
        let run = |ps: &mut ParamSet<f64>, with_grad: bool| -> f64 {
            let mut tape = Tape::new();
            let x = tape.constant(t(&[2, 3], &x_data));
            let wv = tape.param(ps, w);
            let y = tape.linear(x, wv, None).unwrap();
            let loss = tape.sum(y).unwrap();
            if with_grad {
                tape.backward(loss).unwrap();
                tape.accumulate_param_grads(ps);
            }
            tape.value(loss).item().unwrap()
        };
        run(&mut ps, true);
        let analytic = ps.get(w).tensor.grad().unwrap().to_vec();
        let eps = 1e-6;
        for i in 0..6 {
            let orig = ps.get(w).tensor.data()[i];
            ps.get_mut(w).tensor.data_mut()[i] = orig + eps;
            let lp = run(&mut ps, false);
            ps.get_mut(w).tensor.data_mut()[i] = orig - eps;
            let lm = run(&mut ps, false);
            ps.get_mut(w).tensor.data_mut()[i] = orig;
            let numeric = (lp - lm) / (2.0 * eps);
            assert!(
                (analytic[i] - numeric).abs() < 1e-7,
                "coord {i}: analytic {} vs numeric {}",
                analytic[i],
                numeric
            );
        }
        // Structure: column sums of x (x^T @ ones).
        assert!((analytic[0] - (0.5 + 0.25)).abs() < 1e-12);
        assert!((analytic[2] - (-1.5 + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn linear_dimension_mismatch() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 3]));
        let w = tape.constant(Tensor::zeros(&[2, 4]));
        assert!(tape.linear(x, w, None).is_err());
    }

    // ---- global max pool ----

    #[test]
    fn pool_takes_slice_maximum() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 1, 3], &[-1.0, 3.7, 2.0]));
        let y = tape.global_max_pool(x).unwrap();
        assert_eq!(tape.value(y).data(), &[3.7]);
    }

    #[test]
    fn pool_tie_routes_gradient_to_first_position() {
        let mut ps = ParamSet::new();
        let x = ps
            .register("x", Tensor::full(&[1, 1, 2, 2], 4.0), true, true)
            .unwrap();
        let mut tape = Tape::new();
        let xv = tape.param(&ps, x);
        let y = tape.global_max_pool(xv).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);
        let loss = tape.sum(y).unwrap();
        tape.backward(loss).unwrap();
        tape.accumulate_param_grads(&mut ps);
        assert_eq!(ps.get(x).tensor.grad().unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn pool_shape_contract() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[2, 8, 5, 5]));
        let y = tape.global_max_pool(x).unwrap();
        assert_eq!(tape.shape(y), &[2, 8]);
    }

    // ---- concat ----

    #[test]
    fn concat_vectors_axis0() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2], &[1.0, 2.0]));
        let b = tape.constant(t(&[1], &[3.0]));
        let y = tape.concat(a, b, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn concat_rows_axis1_doubles_width() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::full(&[1, 4], 1.0));
        let b = tape.constant(Tensor::full(&[1, 4], 2.0));
        let y = tape.concat(a, b, 1).unwrap();
        assert_eq!(tape.shape(y), &[1, 8]);
        assert_eq!(tape.value(y).data(), &[1.0; 4][..4].to_vec().into_iter().chain([2.0; 4]).collect::<Vec<_>>());
    }

    #[test]
    fn concat_backward_splits_ones() {
        let mut ps = ParamSet::new();
        let a = ps.register("a", t(&[1, 2], &[1.0, 2.0]), true, true).unwrap();
        let b = ps.register("b", t(&[1, 3], &[3.0, 4.0, 5.0]), true, true).unwrap();
        let mut tape = Tape::new();
        let av = tape.param(&ps, a);
        let bv = tape.param(&ps, b);
        let y = tape.concat(av, bv, 1).unwrap();
        let loss = tape.sum(y).unwrap();
        tape.backward(loss).unwrap();
        tape.accumulate_param_grads(&mut ps);
        assert_eq!(ps.get(a).tensor.grad().unwrap(), &[1.0, 1.0]);
        assert_eq!(ps.get(b).tensor.grad().unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn concat_off_axis_mismatch_rejected() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[3, 3]));
        assert!(tape.concat(a, b, 1).is_err());
    }

    // ---- softmax cross entropy ----

    #[test]
    fn uniform_logits_give_uniform_probs_and_log_k_loss() {
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::full(&[1, 4], 0.7));
        let (loss, probs) = tape.softmax_cross_entropy(logits, &[2]).unwrap();
        for &p in probs.data() {
            assert!((p - 0.25).abs() < 1e-12);
        }
        assert!((tape.value(loss).item().unwrap() - 4.0f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn two_class_closed_form() {
        let mut tape = Tape::new();
        let logits = tape.constant(t(&[1, 2], &[2.0f64.ln(), 0.0]));
        let (_, probs) = tape.softmax_cross_entropy(logits, &[0]).unwrap();
        assert!((probs.data()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((probs.data()[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn probabilities_invariant_under_logit_shift() {
        let raw = [0.3, -1.2, 2.2, 0.0, 1.0, -0.5];
        let shifted: Vec<f64> = raw.iter().map(|v| v + 123.5).collect();
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 3], &raw));
        let b = tape.constant(t(&[2, 3], &shifted));
        let (_, pa) = tape.softmax_cross_entropy(a, &[0, 1]).unwrap();
        let (_, pb) = tape.softmax_cross_entropy(b, &[0, 1]).unwrap();
        for (x, y) in pa.data().iter().zip(pb.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn label_out_of_range_rejected() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.constant(Tensor::zeros(&[1, 3]));
        assert!(tape.softmax_cross_entropy(logits, &[3]).is_err());
    }

    // ---- backward ----

    #[test]
    fn square_gradient() {
        let mut ps = ParamSet::new();
        let x = ps.register("x", t(&[1], &[3.0]), true, true).unwrap();
        let mut tape = Tape::new();
        let xv = tape.param(&ps, x);
        let y = tape.mul(xv, xv).unwrap();
        let loss = tape.sum(y).unwrap();
        tape.backward(loss).unwrap();
        tape.accumulate_param_grads(&mut ps);
        assert_eq!(ps.get(x).tensor.grad().unwrap(), &[6.0]);
    }

    #[test]
    fn disconnected_leaf_gets_zero() {
        let mut ps = ParamSet::new();
        let x = ps.register("x", t(&[1], &[3.0]), true, true).unwrap();
        let unused = ps.register("unused", t(&[2], &[1.0, 1.0]), true, true).unwrap();
        let mut tape = Tape::new();
        let xv = tape.param(&ps, x);
        let _uv = tape.param(&ps, unused);
        let loss = tape.sum(xv).unwrap();
        tape.backward(loss).unwrap();
        assert!(tape.grad_of(_uv).is_none());
        assert_eq!(tape.grad_or_zeros(_uv), vec![0.0, 0.0]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[2]).with_requires_grad());
        let err = tape.backward(x).unwrap_err();
        assert!(matches!(err, Error::Shape(m) if m.contains("scalar")));
    }

    #[test]
    fn repeated_backward_accumulates_param_grads() {
        let mut ps = ParamSet::new();
        let x = ps.register("x", t(&[1], &[3.0]), true, true).unwrap();
        for _ in 0..2 {
            let mut tape = Tape::new();
            let xv = tape.param(&ps, x);
            let y = tape.mul(xv, xv).unwrap();
            let loss = tape.sum(y).unwrap();
            tape.backward(loss).unwrap();
            tape.accumulate_param_grads(&mut ps);
        }
        assert_eq!(ps.get(x).tensor.grad().unwrap(), &[12.0]);
        ps.zero_grads();
        assert_eq!(ps.get(x).tensor.grad().unwrap(), &[0.0]);
    }

    #[test]
    fn shared_parameter_accumulates_across_uses() {
        // One parameter consumed by two ops on the same tape sums both paths.
        let mut ps = ParamSet::new();
        let x = ps.register("x", t(&[1], &[2.0]), true, true).unwrap();
        let mut tape = Tape::new();
        let xv = tape.param(&ps, x);
        let xv2 = tape.param(&ps, x);
        assert_eq!(xv, xv2);
        let a = tape.mul(xv, xv).unwrap(); // x^2, d/dx = 4
        let b = tape.add(a, xv).unwrap(); // + x, d/dx = 1
        let loss = tape.sum(b).unwrap();
        tape.backward(loss).unwrap();
        tape.accumulate_param_grads(&mut ps);
        assert_eq!(ps.get(x).tensor.grad().unwrap(), &[5.0]);
    }

    #[test]
    fn non_finite_output_is_numeric_error() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[1], &[1e308]));
        let b = tape.constant(t(&[1], &[1e308]));
        let err = tape.add(a, b).unwrap_err();
        assert!(matches!(err, Error::Numeric(m) if m.contains("add")));
    }
}
