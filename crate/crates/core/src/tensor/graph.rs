use std::borrow::Cow;

use rand::Rng;

use super::kernels::{self, MatMulDims};
use super::{invalid, Mask, Tensor, TensorError};
use crate::exec::Exec;

type Result<T> = std::result::Result<T, TensorError>;

/// tanh-approximation constant, sqrt(2/pi).
const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044715;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Vec<f64>),
    Scale(Var, f64),
    Sum(Var),
    MatMul(Var, Var, MatMulDims),
    Gather(Var, Vec<usize>),
    Reshape(Var),
    Narrow {
        x: Var,
        outer: usize,
        axis_len: usize,
        inner: usize,
        start: usize,
    },
    MaskedSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        count: usize,
    },
}

#[derive(Debug)]
struct Node<'a> {
    shape: Vec<usize>,
    value: Cow<'a, [f64]>,
    requires_grad: bool,
    op: Op,
    grad: Option<Vec<f64>>,
}

/// A tape of tensor operations.
///
/// Leaves registered with [`Graph::param`] borrow their storage for the
/// lifetime `'a`, so a forward pass over a model never copies its weights.
#[derive(Debug)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    grad_enabled: bool,
    backward_done: bool,
    exec: Exec,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grad_enabled: true,
            backward_done: false,
            exec: Exec::default(),
        }
    }

    /// A graph that records values only; `backward` is unavailable.
    pub fn no_grad() -> Self {
        Graph {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf borrowing `t`.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.leaf(t.shape().to_vec(), Cow::Borrowed(t.data()), true)
    }

    pub fn input(&mut self, t: Tensor, requires_grad: bool) -> Var {
        let Tensor { shape, data } = t;
        self.leaf(shape, Cow::Owned(data), requires_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.input(t, false)
    }

    fn leaf(&mut self, shape: Vec<usize>, value: Cow<'a, [f64]>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            requires_grad: requires_grad && self.grad_enabled,
            op: Op::Leaf,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor {
            shape: n.shape.clone(),
            data: n.value.to_vec(),
        }
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// dL/dv after [`Graph::backward`]; `None` if `v` does not influence the loss.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Clears stored gradients so `backward` may run again.
    pub fn reset(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    fn push(&mut self, name: &'static str, shape: Vec<usize>, value: Vec<f64>, inputs: &[Var], op: Op) -> Result<Var> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            shape,
            value: Cow::Owned(value),
            requires_grad,
            op: if requires_grad { op } else { Op::Leaf },
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::Shape {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        self.push("add", shape, value, &[a, b], Op::Add(a, b))
    }

    /// `x[.., n] + bias[n]`, broadcasting the bias over leading dimensions.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap_or(&1);
        if self.shape(bias) != [n] {
            return Err(TensorError::Shape {
                op: "add_bias",
                left: self.shape(x).to_vec(),
                right: self.shape(bias).to_vec(),
            });
        }
        let b = self.value(bias);
        let value = self
            .value(x)
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        let shape = self.shape(x).to_vec();
        self.push("add_bias", shape, value, &[x, bias], Op::AddBias(x, bias))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        self.push("mul", shape, value, &[a, b], Op::Mul(a, b))
    }

    /// Elementwise product with fixed (non-differentiable) factors.
    pub fn mul_const(&mut self, x: Var, factors: Vec<f64>) -> Result<Var> {
        if factors.len() != self.value(x).len() {
            return Err(invalid("mul_const", "factor count differs from element count"));
        }
        let value = self.value(x).iter().zip(&factors).map(|(x, f)| x * f).collect();
        let shape = self.shape(x).to_vec();
        self.push("mul_const", shape, value, &[x], Op::MulConst(x, factors))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let value = self.value(x).iter().map(|v| v * s).collect();
        let shape = self.shape(x).to_vec();
        self.push("scale", shape, value, &[x], Op::Scale(x, s))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().sum();
        self.push("sum", vec![], vec![s], &[x], Op::Sum(x))
    }

    /// Inverted dropout: zeroes each element with probability `rate` and
    /// rescales survivors by `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(x);
        }
        if rate >= 1.0 {
            return Err(invalid("dropout", format!("rate {rate} outside [0, 1)")));
        }
        let keep = 1.0 / (1.0 - rate);
        let factors = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        self.mul_const(x, factors)
    }

    /// Batched matrix product `[.., m, k] x [.., k, n]`.
    ///
    /// Leading batch dimensions must be equal, or one operand must be a plain
    /// matrix that is shared by every batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let err = || TensorError::Shape {
            op: "matmul",
            left: sa.clone(),
            right: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(err());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(err());
        }
        let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let (batch_dims, a_batched, b_batched) = if ba == bb {
            (ba.to_vec(), !ba.is_empty(), !bb.is_empty())
        } else if bb.is_empty() {
            (ba.to_vec(), true, false)
        } else if ba.is_empty() {
            (bb.to_vec(), false, true)
        } else {
            return Err(err());
        };
        let dims = MatMulDims {
            batches: batch_dims.iter().product(),
            m,
            k,
            n,
            a_batched,
            b_batched,
        };
        let value = kernels::matmul(self.exec, dims, self.value(a), self.value(b));
        let mut shape = batch_dims;
        shape.extend([m, n]);
        self.push("matmul", shape, value, &[a, b], Op::MatMul(a, b, dims))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len()
            || perm
                .iter()
                .any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true))
        {
            return Err(invalid(
                "permute",
                format!("{perm:?} is not a permutation of rank {}", shape.len()),
            ));
        }
        let (out_shape, map) = kernels::permute_map(&shape, perm);
        let src = self.value(x);
        let value = map.iter().map(|&i| src[i]).collect();
        self.push("permute", out_shape, value, &[x], Op::Gather(x, map))
    }

    /// Swaps the two trailing dimensions.
    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        let rank = self.shape(x).len();
        if rank < 2 {
            return Err(invalid("transpose", "needs rank >= 2"));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(x, &perm)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(TensorError::Shape {
                op: "reshape",
                left: self.shape(x).to_vec(),
                right: shape.to_vec(),
            });
        }
        let value = self.value(x).to_vec();
        self.push("reshape", shape.to_vec(), value, &[x], Op::Reshape(x))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(invalid(
                "narrow",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let axis_len = shape[axis];
        let src = self.value(x);
        let mut value = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * axis_len + start) * inner;
            value.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let op = Op::Narrow {
            x,
            outer,
            axis_len,
            inner,
            start,
        };
        self.push("narrow", out_shape, value, &[x], op)
    }

    /// Softmax over the last dimension restricted to positions where `mask`
    /// is true; masked positions are exactly zero.
    pub fn masked_softmax(&mut self, x: Var, mask: &Mask) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().ok_or_else(|| invalid("masked_softmax", "scalar input"))?;
        let keep = mask.expand_to(&shape)?;
        let src = self.value(x);
        let mut value = vec![0.0; src.len()];
        for (row, ((xs, ks), ys)) in src.chunks(n).zip(keep.chunks(n)).zip(value.chunks_mut(n)).enumerate() {
            let max = xs
                .iter()
                .zip(ks)
                .filter(|(_, &k)| k)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(TensorError::FullyMasked { row });
            }
            let mut total = 0.0;
            for ((y, &v), &k) in ys.iter_mut().zip(xs).zip(ks) {
                if k {
                    *y = (v - max).exp();
                    total += *y;
                }
            }
            for y in ys.iter_mut() {
                *y /= total;
            }
        }
        self.push("masked_softmax", shape, value, &[x], Op::MaskedSoftmax(x))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let mask = Mask::all(self.shape(x).to_vec());
        self.masked_softmax(x, &mask)
    }

    /// Layer normalisation over the last dimension followed by an affine map.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| invalid("layer_norm", "scalar input"))?;
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(TensorError::Shape {
                op: "layer_norm",
                left: shape,
                right: self.shape(gain).to_vec(),
            });
        }
        if eps <= 0.0 {
            return Err(invalid("layer_norm", "eps must be positive"));
        }
        let (src, g, b) = (self.value(x), self.value(gain), self.value(bias));
        let rows = src.len() / d;
        let mut xhat = Vec::with_capacity(src.len());
        let mut rstd = Vec::with_capacity(rows);
        let mut value = Vec::with_capacity(src.len());
        for row in src.chunks(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd.push(r);
            for ((&v, &gj), &bj) in row.iter().zip(g).zip(b) {
                let h = (v - mean) * r;
                xhat.push(h);
                value.push(h * gj + bj);
            }
        }
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        };
        self.push("layer_norm", shape, value, &[x, gain, bias], op)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).iter().map(|&v| gelu(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push("gelu", shape, value, &[x], Op::Gelu(x))
    }

    /// Row lookup into `table [V, d]`; the output has shape `ids_shape + [d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], ids_shape: &[usize]) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 {
            return Err(invalid("embedding", format!("table must be [V, d], got {ts:?}")));
        }
        if ids_shape.iter().product::<usize>() != ids.len() {
            return Err(invalid("embedding", "ids do not match ids_shape"));
        }
        let (vocab, d) = (ts[0], ts[1]);
        if let Some(bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(invalid(
                "embedding",
                format!("id {bad} out of range for table of {vocab} rows"),
            ));
        }
        let src = self.value(table);
        let mut value = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            value.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let mut shape = ids_shape.to_vec();
        shape.push(d);
        let op = Op::Embedding {
            table,
            ids: ids.to_vec(),
        };
        self.push("embedding", shape, value, &[table], op)
    }

    /// Mean token-level cross-entropy of `logits [.., V]` against one target per
    /// row. Rows whose target equals `ignore_id` contribute nothing.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore_id: usize) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        let v = *shape.last().ok_or_else(|| invalid("cross_entropy", "scalar input"))?;
        let src = self.value(logits);
        let rows = src.len() / v.max(1);
        if targets.len() != rows {
            return Err(TensorError::Shape {
                op: "cross_entropy",
                left: shape,
                right: vec![targets.len()],
            });
        }
        let mut probs = vec![0.0; src.len()];
        let mut kept = Vec::with_capacity(rows);
        let mut total = 0.0;
        let mut count = 0usize;
        for (r, (&t, xs)) in targets.iter().zip(src.chunks(v)).enumerate() {
            if t == ignore_id {
                kept.push(None);
                continue;
            }
            if t >= v {
                return Err(invalid(
                    "cross_entropy",
                    format!("target {t} out of range for {v} classes"),
                ));
            }
            let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let ps = &mut probs[r * v..(r + 1) * v];
            let mut z = 0.0;
            for (p, &x) in ps.iter_mut().zip(xs) {
                *p = (x - max).exp();
                z += *p;
            }
            for p in ps.iter_mut() {
                *p /= z;
            }
            total += max + z.ln() - xs[t];
            count += 1;
            kept.push(Some(t));
        }
        if count == 0 {
            return Err(TensorError::AllIgnored);
        }
        let op = Op::CrossEntropy {
            logits,
            targets: kept,
            probs,
            count,
        };
        self.push("cross_entropy", vec![], vec![total / count as f64], &[logits], op)
    }

    /// Populates gradients of every node that influences the scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::Backward(
                "gradients already computed; call reset() before a second backward".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(TensorError::Backward(format!(
                "loss must be a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.requires_grad(loss) {
            return Err(TensorError::Backward(
                "loss does not depend on any trainable input".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.requires_grad {
                node.grad = g;
            }
        }
        self.backward_done = true;
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, contribution: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
            slot => *slot = Some(contribution),
        }
    }

    fn backprop(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, g.to_vec());
                let n = self.value(*bias).len();
                let mut gb = vec![0.0; n];
                for row in g.chunks(n) {
                    gb.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                }
                self.accumulate(grads, *bias, gb);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, g.iter().zip(vb).map(|(g, y)| g * y).collect());
                self.accumulate(grads, *b, g.iter().zip(va).map(|(g, x)| g * x).collect());
            }
            Op::MulConst(x, f) => {
                self.accumulate(grads, *x, g.iter().zip(f).map(|(g, f)| g * f).collect());
            }
            Op::Scale(x, s) => {
                self.accumulate(grads, *x, g.iter().map(|g| g * s).collect());
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::MatMul(a, b, dims) => {
                if self.requires_grad(*a) {
                    let ga = kernels::matmul_grad_a(self.exec, *dims, g, self.value(*b));
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let gb = kernels::matmul_grad_b(self.exec, *dims, self.value(*a), g);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Gather(x, map) => {
                let mut gx = vec![0.0; self.value(*x).len()];
                for (&src, &gv) in map.iter().zip(g) {
                    gx[src] += gv;
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Reshape(x) => self.accumulate(grads, *x, g.to_vec()),
            Op::Narrow {
                x,
                outer,
                axis_len,
                inner,
                start,
            } => {
                let mut gx = vec![0.0; self.value(*x).len()];
                let block = g.len() / outer.max(&1);
                for (o, chunk) in g.chunks(block.max(1)).enumerate() {
                    let base = (o * axis_len + start) * inner;
                    gx[base..base + chunk.len()].copy_from_slice(chunk);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::MaskedSoftmax(x) => {
                let n = *node.shape.last().unwrap_or(&1);
                let y = &node.value;
                let mut gx = vec![0.0; y.len()];
                for ((ys, gs), out) in y.chunks(n).zip(g.chunks(n)).zip(gx.chunks_mut(n)) {
                    let dot: f64 = ys.iter().zip(gs).map(|(y, g)| y * g).sum();
                    for ((o, &yv), &gv) in out.iter_mut().zip(ys).zip(gs) {
                        *o = yv * (gv - dot);
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gamma = self.value(*gain);
                let d = gamma.len();
                let mut ggain = vec![0.0; d];
                let mut gbias = vec![0.0; d];
                let mut gx = vec![0.0; g.len()];
                for (((gs, hs), &r), out) in g.chunks(d).zip(xhat.chunks(d)).zip(rstd).zip(gx.chunks_mut(d)) {
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..d {
                        ggain[j] += gs[j] * hs[j];
                        gbias[j] += gs[j];
                        let dh = gs[j] * gamma[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hs[j];
                    }
                    mean_dh /= d as f64;
                    mean_dh_h /= d as f64;
                    for j in 0..d {
                        let dh = gs[j] * gamma[j];
                        out[j] = r * (dh - mean_dh - hs[j] * mean_dh_h);
                    }
                }
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *gain, ggain);
                self.accumulate(grads, *bias, gbias);
            }
            Op::Gelu(x) => {
                let gx = self
                    .value(*x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &g)| g * gelu_derivative(v))
                    .collect();
                self.accumulate(grads, *x, gx);
            }
            Op::Embedding { table, ids } => {
                let d = self.shape(*table)[1];
                let mut gt = vec![0.0; self.value(*table).len()];
                for (&id, row) in ids.iter().zip(g.chunks(d)) {
                    gt[id * d..(id + 1) * d].iter_mut().zip(row).for_each(|(a, r)| *a += r);
                }
                self.accumulate(grads, *table, gt);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let v = *self.shape(*logits).last().unwrap_or(&1);
                let scale = g[0] / *count as f64;
                let mut gx = vec![0.0; probs.len()];
                for (r, t) in targets.iter().enumerate() {
                    let Some(t) = *t else { continue };
                    let row = &mut gx[r * v..(r + 1) * v];
                    for (o, &p) in row.iter_mut().zip(&probs[r * v..(r + 1) * v]) {
                        *o = p * scale;
                    }
                    row[t] -= scale;
                }
                self.accumulate(grads, *logits, gx);
            }
        }
    }
}

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn matmul_examples() {
        let mut g = Graph::new();
        let i = g.constant(Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap());
        let b = g.constant(Tensor::from_rows(&[&[3.0, 4.0], &[5.0, 6.0]]).unwrap());
        let c = g.matmul(i, b).unwrap();
        assert_eq!(g.value(c), &[3.0, 4.0, 5.0, 6.0]);

        let a = g.input(Tensor::from_rows(&[&[1.0, 2.0]]).unwrap(), true);
        let b = g.constant(Tensor::from_rows(&[&[3.0], &[4.0]]).unwrap());
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c), &[11.0]);
        let s = g.sum(c).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[3.0, 4.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, TensorError::Shape { .. }));
    }

    #[test]
    fn masked_softmax_examples() {
        let mut g = Graph::no_grad();
        let x = g.constant(Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
        let y = g.softmax(x).unwrap();
        assert_eq!(g.value(y), &[0.5, 0.5]);

        let x = g.constant(Tensor::new(vec![2], vec![5.0, -1e9]).unwrap());
        let m = Mask::new(vec![2], vec![true, false]).unwrap();
        let y = g.masked_softmax(x, &m).unwrap();
        assert_eq!(g.value(y), &[1.0, 0.0]);

        let x = g.constant(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let y = g.softmax(x).unwrap();
        assert!(close(g.value(y), &[0.09003, 0.24473, 0.66524], 1e-5));

        let m = Mask::new(vec![3], vec![false; 3]).unwrap();
        assert_eq!(
            g.masked_softmax(x, &m).unwrap_err(),
            TensorError::FullyMasked { row: 0 }
        );
    }

    #[test]
    fn layer_norm_examples() {
        let mut g = Graph::no_grad();
        let ones = Tensor::full(vec![3], 1.0);
        let zeros = Tensor::zeros(vec![3]);
        let gain = g.constant(ones.clone());
        let bias = g.constant(zeros.clone());
        let x = g.constant(ones);
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        assert_eq!(g.value(y), &[0.0, 0.0, 0.0]);

        let x = g.constant(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        assert!(close(g.value(y), &[-1.2247, 0.0, 1.2247], 1e-3));

        let gain = g.constant(Tensor::full(vec![2], 1.0));
        let bias = g.constant(Tensor::zeros(vec![2]));
        let x = g.constant(Tensor::new(vec![2], vec![-1.0, 1.0]).unwrap());
        let y = g.layer_norm(x, gain, bias, 1e-300).unwrap();
        assert!(close(g.value(y), &[-1.0, 1.0], 1e-12));
    }

    #[test]
    fn gelu_examples() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(10.0) - 10.0).abs() < 1e-6);
        assert!((gelu(1.0) - 0.84119).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_examples() {
        let mut g = Graph::no_grad();
        let x = g.constant(Tensor::zeros(vec![1, 1, 4]));
        let l = g.cross_entropy(x, &[2], 99).unwrap();
        assert!((g.value(l)[0] - 4f64.ln()).abs() < 1e-12);

        let x = g.constant(Tensor::new(vec![1, 1, 3], vec![0.0, 0.0, 60.0]).unwrap());
        let l = g.cross_entropy(x, &[2], 99).unwrap();
        assert!(g.value(l)[0] < 1e-20);

        let x = g.constant(Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let l = g.cross_entropy(x, &[2], 99).unwrap();
        assert!((g.value(l)[0] - 0.40761).abs() < 1e-4);

        assert_eq!(g.cross_entropy(x, &[99], 99).unwrap_err(), TensorError::AllIgnored);
    }

    #[test]
    fn ignored_positions_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.input(
            Tensor::new(vec![2, 3], vec![0.3, -1.0, 2.0, 0.5, 0.1, -0.2]).unwrap(),
            true,
        );
        let l = g.cross_entropy(x, &[1, 0], 0).unwrap();
        g.backward(l).unwrap();
        let grad = g.grad(x).unwrap();
        assert_eq!(&grad[3..], &[0.0, 0.0, 0.0]);
        assert!(grad[..3].iter().any(|v| *v != 0.0));
    }

    #[test]
    fn backward_examples() {
        let w = Tensor::new(vec![3], vec![0.1, -2.0, 7.0]).unwrap();
        let mut g = Graph::new();
        let v = g.param(&w);
        let s = g.sum(v).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(v).unwrap(), &[1.0, 1.0, 1.0]);

        let w = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut g = Graph::new();
        let v = g.param(&w);
        let sq = g.mul(v, v).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(v).unwrap(), &[2.0, 4.0]);

        assert!(matches!(g.backward(s), Err(TensorError::Backward(_))));
        g.reset();
        g.backward(s).unwrap();
        assert_eq!(g.grad(v).unwrap(), &[2.0, 4.0]);

        assert!(matches!(g.backward(sq), Err(TensorError::Backward(_))));
    }

    #[test]
    fn non_scalar_backward_rejected() {
        let w = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut g = Graph::new();
        let v = g.param(&w);
        let y = g.scale(v, 2.0).unwrap();
        assert!(matches!(g.backward(y), Err(TensorError::Backward(_))));
    }

    #[test]
    fn non_finite_values_are_errors() {
        let mut g = Graph::no_grad();
        let x = g.constant(Tensor::new(vec![1], vec![1e300]).unwrap());
        assert_eq!(g.scale(x, 1e300).unwrap_err(), TensorError::NonFinite { op: "scale" });
    }

    #[test]
    fn no_grad_graph_refuses_backward() {
        let w = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut g = Graph::no_grad();
        let v = g.param(&w);
        let s = g.sum(v).unwrap();
        assert!(g.backward(s).is_err());
    }

    #[test]
    fn narrow_and_permute_round_trip() {
        let t = Tensor::new(vec![2, 3, 2], (0..12).map(f64::from).collect()).unwrap();
        let mut g = Graph::new();
        let x = g.input(t, true);
        let n = g.narrow(x, 1, 1, 2).unwrap();
        assert_eq!(g.shape(n), &[2, 2, 2]);
        assert_eq!(g.value(n), &[2.0, 3.0, 4.0, 5.0, 8.0, 9.0, 10.0, 11.0]);
        let p = g.permute(n, &[2, 0, 1]).unwrap();
        assert_eq!(g.shape(p), &[2, 2, 2]);
        let s = g.sum(p).unwrap();
        g.backward(s).unwrap();
        assert_eq!(
            g.grad(x).unwrap(),
            &[0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]
        );
    }
}
