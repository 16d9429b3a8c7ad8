//! Explicit reverse-mode tape.
//!
//! One [`Tape`] records one forward pass. Operations append nodes in
//! execution order, so the node list is always topologically sorted and
//! [`Tape::backward`] is a single reverse sweep. An unrolled recurrence over
//! `T` steps is simply a longer tape.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::kernels::{self, Broadcast, Conv2dGeometry};
use crate::neuron::{surrogate_cdf, surrogate_grad};
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a particular tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

/// How spike nodes behave in the forward pass.
///
/// `Heaviside` is the normal mode: binary forward, erf surrogate backward.
/// `Smooth` replaces the forward step by the erf CDF whose derivative the
/// surrogate is, and lets gradients flow through neuron resets. The tape
/// then computes exact derivatives, which is what finite-difference checks
/// need.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SpikeMode {
    #[default]
    Heaviside,
    Smooth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add { a: usize, b: usize, bc: Broadcast },
    Sub { a: usize, b: usize, bc: Broadcast },
    Mul { a: usize, b: usize, bc: Broadcast },
    Scale { x: usize, factor: f64 },
    Offset { x: usize },
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Conv2d { input: usize, kernel: usize, bias: Option<usize>, geom: Conv2dGeometry },
    Spike { x: usize, alpha: f64 },
    Sigmoid { x: usize },
    Relu { x: usize },
    PoolSpatial { x: usize, mode: PoolMode, argmax: Vec<usize> },
    PoolChannel { x: usize, argmax: Vec<usize> },
    Concat { parts: Vec<usize>, axis: usize },
    Slice { x: usize, axis: usize, start: usize },
    Reshape { x: usize },
    Sum { x: usize },
    SoftmaxCrossEntropy { logits: usize, probs: Vec<f64>, targets: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    spike_mode: SpikeMode,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_spike_mode(SpikeMode::Heaviside)
    }

    pub fn with_spike_mode(spike_mode: SpikeMode) -> Self {
        Tape { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new(), spike_mode }
    }

    pub fn spike_mode(&self) -> SpikeMode {
        self.spike_mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copy of `x` that is cut off from the gradient flow.
    pub fn detach(&mut self, x: Var) -> Result<Var> {
        let v = self.get(x)?.value.clone();
        Ok(self.constant(v))
    }

    /// Panics if `v` belongs to another tape.
    pub fn value(&self, v: Var) -> &Tensor {
        match self.get(v) {
            Ok(node) => &node.value,
            Err(e) => panic!("{e}"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.get(v).map(|n| n.requires_grad).unwrap_or(false)
    }

    fn get(&self, v: Var) -> Result<&Node> {
        if v.tape != self.id {
            return Err(Error::contract("variable belongs to a different tape"));
        }
        self.nodes.get(v.index).ok_or_else(|| Error::contract("variable index out of range"))
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node { value, requires_grad, op });
        Var { tape: self.id, index }
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.nodes[v.index].requires_grad)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: impl FnOnce(usize, usize, Broadcast) -> Op,
    ) -> Result<Var> {
        let (av, bv) = (&self.get(a)?.value, &self.get(b)?.value);
        let bc = Broadcast::new(av.shape(), bv.shape())?;
        let mut out = vec![0.0; bc.len()];
        let (ad, bd) = (av.data(), bv.data());
        bc.for_each(|i, ia, ib| out[i] = f(ad[ia], bd[ib]));
        let value = Tensor::new(&bc.out_shape, out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, make(a.index, b.index, bc)))
    }

    /// Elementwise `a + b` with broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, |a, b, bc| Op::Add { a, b, bc })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, |a, b, bc| Op::Sub { a, b, bc })
    }

    /// Hadamard product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, |a, b, bc| Op::Mul { a, b, bc })
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let value = self.get(x)?.value.map(|v| v * factor);
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, rg, Op::Scale { x: x.index, factor }))
    }

    /// `x + c` for a constant `c`.
    pub fn offset(&mut self, x: Var, c: f64) -> Result<Var> {
        let value = self.get(x)?.value.map(|v| v + c);
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, rg, Op::Offset { x: x.index }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (&self.get(a)?.value, &self.get(b)?.value);
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::contract(format!(
                "matmul shape mismatch: {:?} x {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let value = Tensor::new(&[m, n], kernels::matmul(av.data(), bv.data(), m, k, n))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, rg, Op::MatMul { a: a.index, b: b.index, m, k, n }))
    }

    /// 2-D cross-correlation with zero padding and unit stride.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        padding: (usize, usize),
    ) -> Result<Var> {
        let (iv, kv) = (&self.get(input)?.value, &self.get(kernel)?.value);
        let geom = Conv2dGeometry::new(iv.shape(), kv.shape(), padding)?;
        let bias_data = match bias {
            Some(b) => {
                let bv = &self.get(b)?.value;
                if bv.len() != geom.out_channels {
                    return Err(Error::contract(format!(
                        "conv2d bias has {} entries for {} output channels",
                        bv.len(),
                        geom.out_channels
                    )));
                }
                Some(bv.data())
            }
            None => None,
        };
        let out = kernels::conv2d_forward(&geom, iv.data(), kv.data(), bias_data);
        let value = Tensor::new(&geom.out_shape(), out)?;
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        let rg = self.any_grad(&deps);
        Ok(self.push(
            value,
            rg,
            Op::Conv2d { input: input.index, kernel: kernel.index, bias: bias.map(|b| b.index), geom },
        ))
    }

    /// Spike nonlinearity centred at zero: `H(x)` forward (or the erf CDF in
    /// [`SpikeMode::Smooth`]), erf surrogate `g'(x)` backward.
    pub fn spike(&mut self, x: Var, alpha: f64) -> Result<Var> {
        if !(alpha > 0.0) {
            return Err(Error::contract(format!("surrogate alpha must be > 0, got {alpha}")));
        }
        let mode = self.spike_mode;
        let value = self.get(x)?.value.map(|v| match mode {
            SpikeMode::Heaviside => {
                if v >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            SpikeMode::Smooth => surrogate_cdf(v, alpha),
        });
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, rg, Op::Spike { x: x.index, alpha }))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.get(x)?.value.map(|v| 1.0 / (1.0 + (-v).exp()));
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, rg, Op::Sigmoid { x: x.index }))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.get(x)?.value.map(|v| v.max(0.0));
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, rg, Op::Relu { x: x.index }))
    }

    /// Global reduction over the spatial axes: `[N,C,H,W] -> [N,C,1,1]`.
    /// Max mode routes the gradient to the first maximum in row-major order.
    pub fn pool_spatial(&mut self, x: Var, mode: PoolMode) -> Result<Var> {
        let xv = &self.get(x)?.value;
        let [n, c, h, w] = rank4(xv.shape(), "pool_spatial")?;
        let plane = h * w;
        let mut out = Vec::with_capacity(n * c);
        let mut argmax = Vec::new();
        for chunk in xv.data().chunks_exact(plane) {
            match mode {
                PoolMode::Avg => out.push(chunk.iter().sum::<f64>() / plane as f64),
                PoolMode::Max => {
                    let (best, val) = first_max(chunk.iter().copied());
                    argmax.push(best);
                    out.push(val);
                }
            }
        }
        let value = Tensor::new(&[n, c, 1, 1], out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, rg, Op::PoolSpatial { x: x.index, mode, argmax }))
    }

    /// Per-pixel reduction across channels: `[N,C,H,W] -> [N,2,H,W]` with
    /// the mean in slice 0 and the maximum in slice 1.
    pub fn pool_channel(&mut self, x: Var) -> Result<Var> {
        let xv = &self.get(x)?.value;
        let [n, c, h, w] = rank4(xv.shape(), "pool_channel")?;
        let plane = h * w;
        let d = xv.data();
        let mut out = vec![0.0; n * 2 * plane];
        let mut argmax = vec![0usize; n * plane];
        for b in 0..n {
            for p in 0..plane {
                let column = (0..c).map(|ch| d[(b * c + ch) * plane + p]);
                let mean = column.clone().sum::<f64>() / c as f64;
                let (best, val) = first_max(column);
                out[(b * 2) * plane + p] = mean;
                out[(b * 2 + 1) * plane + p] = val;
                argmax[b * plane + p] = best;
            }
        }
        let value = Tensor::new(&[n, 2, h, w], out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, rg, Op::PoolChannel { x: x.index, argmax }))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::contract("concat needs at least one input"))?;
        let base = self.get(*first)?.value.shape().to_vec();
        if axis >= base.len() {
            return Err(Error::contract(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.get(p)?.value.shape();
            let ok = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return Err(Error::contract(format!(
                    "concat shape mismatch on axis {axis}: {s:?} vs {base:?}"
                )));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let v = &self.nodes[p.index].value;
                let span = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * span..(o + 1) * span]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(&shape, out)?;
        let rg = self.any_grad(parts);
        let parts = parts.iter().map(|p| p.index).collect();
        Ok(self.push(value, rg, Op::Concat { parts, axis }))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xv = &self.get(x)?.value;
        let shape = xv.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::contract(format!(
                "slice [{start}, {}) on axis {axis} out of range for {shape:?}",
                start + len
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let span = shape[axis] * inner;
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = o * span + start * inner;
            out.extend_from_slice(&xv.data()[from..from + len * inner]);
        }
        let mut new_shape = shape.to_vec();
        new_shape[axis] = len;
        let value = Tensor::new(&new_shape, out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, rg, Op::Slice { x: x.index, axis, start }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.get(x)?.value.clone().reshape(shape)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, rg, Op::Reshape { x: x.index }))
    }

    /// Sum of all entries, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.get(x)?.value.sum());
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, rg, Op::Sum { x: x.index }))
    }

    /// Mean softmax cross-entropy of `logits: [N,K]` against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = &self.get(logits)?.value;
        if lv.rank() != 2 || lv.shape()[0] != targets.len() {
            return Err(Error::contract(format!(
                "cross-entropy expects [N,K] logits for {} targets, got {:?}",
                targets.len(),
                lv.shape()
            )));
        }
        let (n, k) = (lv.shape()[0], lv.shape()[1]);
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::contract(format!("target class {bad} out of range for {k} logits")));
        }
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for (row, (&t, p)) in lv.data().chunks_exact(k).zip(targets.iter().zip(probs.chunks_exact_mut(k))) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (pi, &l) in p.iter_mut().zip(row) {
                *pi = (l - max).exp();
                z += *pi;
            }
            p.iter_mut().for_each(|pi| *pi /= z);
            loss += -(row[t] - max - z.ln());
        }
        let value = Tensor::scalar(loss / n as f64);
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            value,
            rg,
            Op::SoftmaxCrossEntropy { logits: logits.index, probs, targets: targets.to_vec() },
        ))
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let node = self.get(loss)?;
        if node.value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.index] = Some(vec![1.0]);
        let nodes = &self.nodes;

        for i in (0..=loss.index).rev() {
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            let mut acc = |j: usize, delta: Vec<f64>| {
                if !nodes[j].requires_grad {
                    return;
                }
                match &mut grads[j] {
                    Some(existing) => existing.iter_mut().zip(&delta).for_each(|(e, d)| *e += d),
                    slot => *slot = Some(delta),
                }
            };
            let val = |j: usize| nodes[j].value.data();
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Add { a, b, bc } | Op::Sub { a, b, bc } => {
                    let sign = if matches!(node.op, Op::Sub { .. }) { -1.0 } else { 1.0 };
                    let (mut ga, mut gb) = (vec![0.0; val(*a).len()], vec![0.0; val(*b).len()]);
                    bc.for_each(|o, ia, ib| {
                        ga[ia] += g[o];
                        gb[ib] += sign * g[o];
                    });
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::Mul { a, b, bc } => {
                    let (ad, bd) = (val(*a), val(*b));
                    let (mut ga, mut gb) = (vec![0.0; ad.len()], vec![0.0; bd.len()]);
                    bc.for_each(|o, ia, ib| {
                        ga[ia] += g[o] * bd[ib];
                        gb[ib] += g[o] * ad[ia];
                    });
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::Scale { x, factor } => acc(*x, g.iter().map(|v| v * factor).collect()),
                Op::Offset { x } | Op::Reshape { x } => acc(*x, g),
                Op::MatMul { a, b, m, k, n } => {
                    if nodes[*a].requires_grad {
                        acc(*a, kernels::matmul_a_bt(&g, val(*b), *m, *n, *k));
                    }
                    if nodes[*b].requires_grad {
                        acc(*b, kernels::matmul_at_b(val(*a), &g, *m, *k, *n));
                    }
                }
                Op::Conv2d { input, kernel, bias, geom } => {
                    let (gi, gk, gb) = kernels::conv2d_backward(geom, val(*input), val(*kernel), &g);
                    acc(*input, gi);
                    acc(*kernel, gk);
                    if let Some(b) = bias {
                        acc(*b, gb);
                    }
                }
                Op::Spike { x, alpha } => {
                    let gx = val(*x).iter().zip(&g).map(|(&v, &up)| up * surrogate_grad(v, *alpha)).collect();
                    acc(*x, gx);
                }
                Op::Sigmoid { x } => {
                    let y = node.value.data();
                    acc(*x, y.iter().zip(&g).map(|(&s, &up)| up * s * (1.0 - s)).collect());
                }
                Op::Relu { x } => {
                    let xd = val(*x);
                    acc(*x, xd.iter().zip(&g).map(|(&v, &up)| if v > 0.0 { up } else { 0.0 }).collect());
                }
                Op::PoolSpatial { x, mode, argmax } => {
                    let xd = val(*x);
                    let plane = xd.len() / g.len();
                    let mut gx = vec![0.0; xd.len()];
                    for (ch, &up) in g.iter().enumerate() {
                        match mode {
                            PoolMode::Avg => gx[ch * plane..(ch + 1) * plane]
                                .iter_mut()
                                .for_each(|v| *v = up / plane as f64),
                            PoolMode::Max => gx[ch * plane + argmax[ch]] = up,
                        }
                    }
                    acc(*x, gx);
                }
                Op::PoolChannel { x, argmax } => {
                    let xs = nodes[*x].value.shape();
                    let (n, c, plane) = (xs[0], xs[1], xs[2] * xs[3]);
                    let mut gx = vec![0.0; n * c * plane];
                    for b in 0..n {
                        for p in 0..plane {
                            let g_mean = g[(b * 2) * plane + p] / c as f64;
                            for ch in 0..c {
                                gx[(b * c + ch) * plane + p] += g_mean;
                            }
                            let best = argmax[b * plane + p];
                            gx[(b * c + best) * plane + p] += g[(b * 2 + 1) * plane + p];
                        }
                    }
                    acc(*x, gx);
                }
                Op::Concat { parts, axis } => {
                    let shape = node.value.shape();
                    let outer: usize = shape[..*axis].iter().product();
                    let inner: usize = shape[axis + 1..].iter().product();
                    let total = shape[*axis] * inner;
                    let mut offset = 0;
                    for &p in parts {
                        let span = nodes[p].value.shape()[*axis] * inner;
                        let mut gp = Vec::with_capacity(outer * span);
                        for o in 0..outer {
                            let from = o * total + offset;
                            gp.extend_from_slice(&g[from..from + span]);
                        }
                        offset += span;
                        acc(p, gp);
                    }
                }
                Op::Slice { x, axis, start } => {
                    let xs = nodes[*x].value.shape();
                    let outer: usize = xs[..*axis].iter().product();
                    let inner: usize = xs[axis + 1..].iter().product();
                    let span = xs[*axis] * inner;
                    let len = node.value.shape()[*axis] * inner;
                    let mut gx = vec![0.0; outer * span];
                    for o in 0..outer {
                        let from = o * span + start * inner;
                        gx[from..from + len].copy_from_slice(&g[o * len..(o + 1) * len]);
                    }
                    acc(*x, gx);
                }
                Op::Sum { x } => acc(*x, vec![g[0]; val(*x).len()]),
                Op::SoftmaxCrossEntropy { logits, probs, targets } => {
                    let k = probs.len() / targets.len();
                    let scale = g[0] / targets.len() as f64;
                    let mut gl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (row, &t) in targets.iter().enumerate() {
                        gl[row * k + t] -= scale;
                    }
                    acc(*logits, gl);
                }
            }
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match (g, node.requires_grad) {
                (Some(g), true) => Some(Tensor::new(node.value.shape(), g).expect("gradient shape")),
                _ => None,
            })
            .collect();
        Ok(Gradients { tape: self.id, grads })
    }
}

/// Gradients of leaf variables after a backward sweep.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` if `v` does not require gradients or is unreachable from the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_ref())
    }

    /// Like [`Gradients::get`], but a zero tensor of `shape` when absent.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn rank4(shape: &[usize], op: &str) -> Result<[usize; 4]> {
    match shape {
        &[n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::contract(format!("{op} expects [N,C,H,W], got {shape:?}"))),
    }
}

fn first_max(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 || i == 0 {
            best = (i, v);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn conv_all_ones_counts_window_overlap() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let k = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv2d(x, k, Some(b), (1, 1)).unwrap();
        let out = tape.value(y).data();
        assert_eq!(out[4], 9.0);
        for corner in [0, 2, 6, 8] {
            assert_eq!(out[corner], 4.0);
        }
        assert_eq!(out[1], 6.0);
    }

    #[test]
    fn conv_zero_kernel_and_identity_kernel() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[2, 1, 4, 5], |i| (i as f64 * 0.37).sin()));
        let zero = tape.constant(Tensor::zeros(&[3, 1, 3, 3]));
        let zb = tape.constant(Tensor::zeros(&[3]));
        let y = tape.conv2d(x, zero, Some(zb), (1, 1)).unwrap();
        assert_eq!(tape.shape(y), &[2, 3, 4, 5]);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

        let mut id = Tensor::zeros(&[1, 1, 3, 3]);
        id.data_mut()[4] = 1.0;
        let id = tape.constant(id);
        let y = tape.conv2d(x, id, None, (1, 1)).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[1, 2, 3, 3]));
        let k = tape.constant(Tensor::ones(&[1, 3, 3, 3]));
        assert!(matches!(tape.conv2d(x, k, None, (1, 1)), Err(Error::Contract(_))));
    }

    #[test]
    fn matmul_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(t(&[2, 1], &[1.0, 1.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[3.0, 7.0]);

        let eye = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let c = tape.matmul(eye, a).unwrap();
        assert_eq!(tape.value(c), tape.value(a));

        let z = tape.constant(Tensor::zeros(&[2, 3]));
        let c = tape.matmul(a, z).unwrap();
        assert!(tape.value(c).data().iter().all(|&v| v == 0.0));

        assert!(tape.matmul(a, z).is_ok());
        assert!(tape.matmul(z, a).is_err());
    }

    #[test]
    fn pools() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 2, 2], &[0.0, 1.0, 0.0, 0.0]));
        let avg = tape.pool_spatial(x, PoolMode::Avg).unwrap();
        let max = tape.pool_spatial(x, PoolMode::Max).unwrap();
        assert_eq!(tape.value(avg).data(), &[0.25]);
        assert_eq!(tape.value(max).data(), &[1.0]);

        let c = tape.constant(Tensor::full(&[2, 3, 2, 2], 0.7));
        for mode in [PoolMode::Avg, PoolMode::Max] {
            let p = tape.pool_spatial(c, mode).unwrap();
            assert_eq!(tape.shape(p), &[2, 3, 1, 1]);
            assert!(tape.value(p).data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
        }

        let one = tape.constant(t(&[1, 2, 1, 1], &[3.0, -1.0]));
        let p = tape.pool_spatial(one, PoolMode::Max).unwrap();
        assert_eq!(tape.value(p), tape.value(one));

        let pix = tape.constant(t(&[1, 2, 1, 1], &[0.0, 1.0]));
        let pc = tape.pool_channel(pix).unwrap();
        assert_eq!(tape.value(pc).data(), &[0.5, 1.0]);

        let single = tape.constant(Tensor::from_fn(&[1, 1, 2, 3], |i| i as f64));
        let pc = tape.pool_channel(single).unwrap();
        assert_eq!(&tape.value(pc).data()[..6], tape.value(single).data());
        assert_eq!(&tape.value(pc).data()[6..], tape.value(single).data());

        let zero = tape.constant(Tensor::zeros(&[2, 3, 2, 2]));
        let pc = tape.pool_channel(zero).unwrap();
        assert!(tape.value(pc).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn max_pool_ties_route_to_first_index() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1, 1, 2, 2], &[1.0, 2.0, 2.0, 0.0]));
        let m = tape.pool_spatial(x, PoolMode::Max).unwrap();
        let loss = tape.sum(m).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_examples() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[3], &[1.0, -2.0, 5.0]));
        let loss = tape.sum(x).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);

        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);

        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        let s1 = tape.sum(x).unwrap();
        let s2 = tape.sum(x).unwrap();
        let loss = tape.add(s1, s2).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn backward_contract_errors() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::ones(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));

        let mut other = Tape::new();
        let y = other.param(Tensor::ones(&[1]));
        let tape = Tape::new();
        assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn constants_never_receive_gradients() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::ones(&[2]));
        let c = tape.constant(Tensor::full(&[2], 3.0));
        let p = tape.mul(x, c).unwrap();
        let d = tape.detach(p).unwrap();
        let q = tape.add(p, d).unwrap();
        let loss = tape.sum(q).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(c).is_none());
        assert!(g.get(d).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn cross_entropy_matches_manual_softmax() {
        let mut tape = Tape::new();
        let logits = tape.param(t(&[2, 3], &[1.0, 2.0, 3.0, 0.0, 0.0, 0.0]));
        let loss = tape.softmax_cross_entropy(logits, &[2, 1]).unwrap();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        let expected = 0.5 * (-(3.0f64.exp() / z).ln() + 3.0f64.ln());
        assert!((tape.value(loss).data()[0] - expected).abs() < 1e-12);
        assert!(tape.softmax_cross_entropy(logits, &[3, 0]).is_err());
    }

    #[test]
    fn inputs_are_not_mutated() {
        let mut tape = Tape::new();
        let a = Tensor::from_fn(&[1, 2, 3, 3], |i| i as f64 * 0.1);
        let x = tape.param(a.clone());
        let k = tape.param(Tensor::ones(&[2, 2, 3, 3]));
        let y = tape.conv2d(x, k, None, (1, 1)).unwrap();
        let s = tape.spike(y, 4.0).unwrap();
        let loss = tape.sum(s).unwrap();
        assert_eq!(tape.value(x), &a);
        let _ = tape.backward(loss).unwrap();
    }
}
