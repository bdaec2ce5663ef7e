use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `b` broadcast over the leading axes of `a`.
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Slice { x: Var, axis: usize, start: usize },
    MeanAxis(Var, usize),
    SumAll(Var),
    Softmax(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Relu(Var),
    Gelu(Var),
    Dropout { x: Var, mask: Vec<f64> },
    Unfold { x: Var, window: usize, stride: usize, offset: usize },
    Embedding { table: Var, indices: Vec<usize> },
    BroadcastTo(Var),
    Mse { pred: Var, target: Tensor },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single forward/backward computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
    dropout_seed: Option<u64>,
    dropout_calls: u64,
}

/// Splits `shape` into (leading batch size, trailing dims of length `tail`).
fn lead(shape: &[usize], tail: usize) -> usize {
    shape[..shape.len() - tail].iter().product()
}

fn gelu(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let u = C * (x + 0.044_715 * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let du = C * (1.0 + 3.0 * 0.044_715 * x * x);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
    (y, dy)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Graph in training mode: dropout is active and seeded per call.
    pub fn with_dropout_seed(seed: u64) -> Self {
        Self {
            dropout_seed: Some(seed),
            ..Self::default()
        }
    }

    pub fn is_training(&self) -> bool {
        self.dropout_seed.is_some()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient; zeros for nodes that received none.
    pub fn grad(&self, v: Var) -> Tensor {
        self.grads
            .get(v.0)
            .and_then(|g| g.clone())
            .unwrap_or_else(|| Tensor::zeros(self.shape(v)))
    }

    // ---- primitives -------------------------------------------------------

    /// Batched matrix product `[.., m, k] x [.., k, n]`; a 2-D right operand
    /// is shared across the batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::shape("matmul", format!("operands must be at least 2-D, got {sa:?} x {sb:?}")));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let shared = sb.len() == 2;
        if k != k2 || (!shared && sa[..sa.len() - 2] != sb[..sb.len() - 2]) {
            return Err(Error::shape("matmul", format!("incompatible shapes {sa:?} x {sb:?}")));
        }
        let batch = lead(&sa, 2);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            let ao = &ad[bi * m * k..(bi + 1) * m * k];
            let bo = if shared { bd } else { &bd[bi * k * n..(bi + 1) * k * n] };
            let oo = &mut out[bi * m * n..(bi + 1) * m * n];
            matmul_into(ao, bo, oo, m, k, n);
        }
        let mut shape = sa[..sa.len() - 2].to_vec();
        shape.extend([m, n]);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul(a, b), rg))
    }

    fn broadcast_check(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::shape(op, format!("{sb:?} does not broadcast onto {sa:?}")));
        }
        Ok(())
    }

    /// `a + b`, with `b`'s shape a suffix of `a`'s.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check("add", a, b)?;
        let bd = self.value(b).data();
        let m = bd.len();
        let mut data = Vec::with_capacity(self.value(a).numel());
        for chunk in self.value(a).data().chunks_exact(m.max(1)) {
            data.extend(chunk.iter().zip(bd).map(|(x, y)| x + y));
        }
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Element-wise `a * b`, with `b`'s shape a suffix of `a`'s.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check("mul", a, b)?;
        let bd = self.value(b).data();
        let m = bd.len();
        let mut data = Vec::with_capacity(self.value(a).numel());
        for chunk in self.value(a).data().chunks_exact(m.max(1)) {
            data.extend(chunk.iter().zip(bd).map(|(x, y)| x * y));
        }
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let t = self.value(a);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x * k).collect()).unwrap();
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, k), rg)
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 {
            return Err(Error::shape("transpose", format!("need at least 2 axes, got {s:?}")));
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let value = transpose_last(self.value(a), r, c);
        let rg = self.rg(a);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range for {first:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || s.iter().enumerate().any(|(k, d)| k != axis && *d != first[k]) {
                return Err(Error::shape("concat", format!("{s:?} incompatible with {first:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let len = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(parts.to_vec(), axis), rg))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::shape("slice", format!("[{start}, {}) on axis {axis} of {s:?}", start + len)));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * s[axis] * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::Slice { x, axis, start }, rg))
    }

    /// Mean over `axis`, removing it.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || s[axis] == 0 {
            return Err(Error::shape("mean_pool_axis", format!("axis {axis} invalid for {s:?}")));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let d = s[axis];
        let src = self.value(x).data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..d {
                let row = &src[(o * d + a) * inner..(o * d + a + 1) * inner];
                for (acc, v) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        data.iter_mut().for_each(|v| *v /= d as f64);
        let mut shape = s;
        shape.remove(axis);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, data)?, Op::MeanAxis(x, axis), rg))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let n = *t.shape().last().ok_or_else(|| Error::shape("softmax_lastaxis", "scalar input"))?;
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Softmax(x), rg))
    }

    /// Normalizes the last axis to zero mean and unit variance (population),
    /// with `eps` added to the variance. No affine parameters.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let t = self.value(x);
        let n = *t.shape().last().ok_or_else(|| Error::shape("layer_norm", "scalar input"))?;
        let mut data = t.data().to_vec();
        let mut inv_std = Vec::with_capacity(data.len() / n.max(1));
        for row in data.chunks_mut(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::LayerNorm { x, inv_std }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v.max(0.0)).collect()).unwrap();
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| gelu(*v).0).collect()).unwrap();
        let rg = self.rg(x);
        self.push(value, Op::Gelu(x), rg)
    }

    /// Inverted dropout. Identity (the same node) in eval mode or for `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Domain(format!("dropout probability must lie in [0,1), got {p}")));
        }
        let Some(seed) = self.dropout_seed else {
            return Ok(x);
        };
        if p == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(self.dropout_calls);
        self.dropout_calls += 1;
        let keep = 1.0 / (1.0 - p);
        let t = self.value(x);
        let mask: Vec<f64> = (0..t.numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Dropout { x, mask }, rg))
    }

    /// Sliding windows over the last axis: `[.., L] -> [.., n_win, window]`.
    /// When `(L - window)` is not a multiple of `stride` the oldest leading
    /// steps are dropped so the final window ends at the last step.
    pub fn unfold(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let l = *s.last().ok_or_else(|| Error::shape("conv1d", "scalar input"))?;
        if window == 0 || stride == 0 || l < window {
            return Err(Error::shape("conv1d", format!("window {window} / stride {stride} invalid for length {l}")));
        }
        let n_win = (l - window) / stride + 1;
        let offset = l - ((n_win - 1) * stride + window);
        let outer = lead(&s, 1);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * n_win * window);
        for o in 0..outer {
            for w in 0..n_win {
                let base = o * l + offset + w * stride;
                data.extend_from_slice(&src[base..base + window]);
            }
        }
        let mut shape = s[..s.len() - 1].to_vec();
        shape.extend([n_win, window]);
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::Unfold {
                x,
                window,
                stride,
                offset,
            },
            rg,
        ))
    }

    /// 1-D convolution over the last axis, as unfold + matmul.
    /// `kernel` is `[window, out_channels]`, `bias` is `[out_channels]`.
    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var> {
        let window = self.shape(kernel)[0];
        let cols = self.unfold(x, window, stride)?;
        let y = self.matmul(cols, kernel)?;
        self.add(y, bias)
    }

    /// Rows of `table` (`[V, d]`) selected by `indices`.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("embedding_lookup", format!("table must be 2-D, got {s:?}")));
        }
        let (v, d) = (s[0], s[1]);
        if let Some(bad) = indices.iter().find(|&&i| i >= v) {
            return Err(Error::shape("embedding_lookup", format!("index {bad} out of range for {v} rows")));
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::new(vec![indices.len(), d], data)?,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Repeats `x` over new leading axes to reach `shape`.
    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() > shape.len() || shape[shape.len() - s.len()..] != s[..] {
            return Err(Error::shape("broadcast_to", format!("{s:?} cannot broadcast to {shape:?}")));
        }
        let reps: usize = shape[..shape.len() - s.len()].iter().product();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(reps * src.len());
        for _ in 0..reps {
            data.extend_from_slice(src);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape.to_vec(), data)?, Op::BroadcastTo(x), rg))
    }

    /// Mean squared error against a constant target.
    pub fn mse_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(Error::shape(
                "mse_loss",
                format!("prediction {:?} vs target {:?}", self.shape(pred), target.shape()),
            ));
        }
        let p = self.value(pred).data();
        let n = p.len().max(1) as f64;
        let loss = p.iter().zip(target.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.clone(),
            },
            rg,
        ))
    }

    // ---- backward ---------------------------------------------------------

    fn accumulate(&mut self, v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Reverse-mode sweep from a scalar `loss`. A graph supports one sweep.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Contract("backward called twice on the same graph".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g)?;
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, idx: usize, g: &Tensor) -> Result<()> {
        let gd = g.data();
        // Each arm computes input gradients from immutable borrows, then
        // accumulates them.
        let updates: Vec<(Var, Tensor)> = match &self.nodes[idx].op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (ta, tb) = (self.value(a), self.value(b));
                let (sa, sb) = (ta.shape(), tb.shape());
                let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let n = sb[sb.len() - 1];
                let shared = sb.len() == 2;
                let batch = lead(sa, 2);
                let (want_a, want_b) = (self.rg(a), self.rg(b));
                let mut ga = if want_a { vec![0.0; ta.numel()] } else { Vec::new() };
                let mut gb = if want_b { vec![0.0; tb.numel()] } else { Vec::new() };
                for bi in 0..batch {
                    let go = &gd[bi * m * n..(bi + 1) * m * n];
                    let ao = &ta.data()[bi * m * k..(bi + 1) * m * k];
                    let boff = if shared { 0 } else { bi * k * n };
                    let bo = &tb.data()[boff..boff + k * n];
                    if want_a {
                        // dA = dC B^T
                        let gao = &mut ga[bi * m * k..(bi + 1) * m * k];
                        for (grow, garow) in go.chunks_exact(n).zip(gao.chunks_exact_mut(k)) {
                            for (gv, brow) in garow.iter_mut().zip(bo.chunks_exact(n)) {
                                *gv += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                            }
                        }
                    }
                    if want_b {
                        // dB = A^T dC
                        let gbo = &mut gb[boff..boff + k * n];
                        for (arow, grow) in ao.chunks_exact(k).zip(go.chunks_exact(n)) {
                            for (&av, gbrow) in arow.iter().zip(gbo.chunks_exact_mut(n)) {
                                if av == 0.0 {
                                    continue;
                                }
                                for (o, x) in gbrow.iter_mut().zip(grow) {
                                    *o += av * x;
                                }
                            }
                        }
                    }
                }
                let mut out = Vec::with_capacity(2);
                if want_a {
                    out.push((a, Tensor::new(sa.to_vec(), ga)?));
                }
                if want_b {
                    out.push((b, Tensor::new(sb.to_vec(), gb)?));
                }
                out
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                let sb = self.shape(b).to_vec();
                let m = sb.iter().product::<usize>();
                let mut out = Vec::with_capacity(2);
                if self.rg(b) {
                    let mut gb = vec![0.0; m];
                    for chunk in gd.chunks_exact(m.max(1)) {
                        for (o, v) in gb.iter_mut().zip(chunk) {
                            *o += v;
                        }
                    }
                    out.push((b, Tensor::new(sb, gb)?));
                }
                if self.rg(a) {
                    out.push((a, g.clone()));
                }
                out
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let (ta, tb) = (self.value(a), self.value(b));
                let m = tb.numel();
                let mut out = Vec::with_capacity(2);
                if self.rg(a) {
                    let mut ga = Vec::with_capacity(ta.numel());
                    for chunk in gd.chunks_exact(m.max(1)) {
                        ga.extend(chunk.iter().zip(tb.data()).map(|(v, y)| v * y));
                    }
                    out.push((a, Tensor::new(ta.shape().to_vec(), ga)?));
                }
                if self.rg(b) {
                    let mut gb = vec![0.0; m];
                    for (chunk, xa) in gd.chunks_exact(m.max(1)).zip(ta.data().chunks_exact(m.max(1))) {
                        for ((o, v), x) in gb.iter_mut().zip(chunk).zip(xa) {
                            *o += v * x;
                        }
                    }
                    out.push((b, Tensor::new(tb.shape().to_vec(), gb)?));
                }
                out
            }
            Op::Scale(a, k) => {
                vec![(*a, Tensor::new(g.shape().to_vec(), gd.iter().map(|v| v * k).collect())?)]
            }
            Op::Transpose(a) => {
                let s = g.shape();
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                vec![(*a, transpose_last(g, r, c))]
            }
            Op::Reshape(a) => {
                let s = self.shape(*a).to_vec();
                vec![(*a, g.clone().reshaped(&s)?)]
            }
            Op::Concat(parts, axis) => {
                let axis = *axis;
                let s = g.shape();
                let outer: usize = s[..axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let mut out: Vec<(Var, Vec<f64>)> = parts
                    .iter()
                    .map(|p| (*p, Vec::with_capacity(self.value(*p).numel())))
                    .collect();
                let mut pos = 0;
                for o in 0..outer {
                    let _ = o;
                    for (p, buf) in out.iter_mut() {
                        let len = self.shape(*p)[axis] * inner;
                        buf.extend_from_slice(&gd[pos..pos + len]);
                        pos += len;
                    }
                }
                out.into_iter()
                    .map(|(p, buf)| Ok((p, Tensor::new(self.shape(p).to_vec(), buf)?)))
                    .collect::<Result<Vec<_>>>()?
            }
            Op::Slice { x, axis, start } => {
                let (x, axis, start) = (*x, *axis, *start);
                let s = self.shape(x).to_vec();
                let len = g.shape()[axis];
                let outer: usize = s[..axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let mut gx = vec![0.0; s.iter().product()];
                for o in 0..outer {
                    let dst = o * s[axis] * inner + start * inner;
                    let src = o * len * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&gd[src..src + len * inner]);
                }
                vec![(x, Tensor::new(s, gx)?)]
            }
            Op::MeanAxis(x, axis) => {
                let (x, axis) = (*x, *axis);
                let s = self.shape(x).to_vec();
                let outer: usize = s[..axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let d = s[axis];
                let mut gx = vec![0.0; s.iter().product()];
                for o in 0..outer {
                    for a in 0..d {
                        for i in 0..inner {
                            gx[(o * d + a) * inner + i] = gd[o * inner + i] / d as f64;
                        }
                    }
                }
                vec![(x, Tensor::new(s, gx)?)]
            }
            Op::SumAll(x) => vec![(*x, Tensor::full(self.shape(*x), gd[0]))],
            Op::Softmax(x) => {
                let y = &self.nodes[idx].value;
                let n = *y.shape().last().unwrap();
                let mut gx = vec![0.0; y.numel()];
                for ((yr, gr), out) in y.data().chunks(n).zip(gd.chunks(n)).zip(gx.chunks_mut(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        out[j] = yr[j] * (gr[j] - dot);
                    }
                }
                vec![(*x, Tensor::new(y.shape().to_vec(), gx)?)]
            }
            Op::LayerNorm { x, inv_std } => {
                let y = &self.nodes[idx].value;
                let n = *y.shape().last().unwrap();
                let nf = n as f64;
                let mut gx = vec![0.0; y.numel()];
                for (r, ((yr, gr), out)) in y.data().chunks(n).zip(gd.chunks(n)).zip(gx.chunks_mut(n)).enumerate() {
                    let mg = gr.iter().sum::<f64>() / nf;
                    let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / nf;
                    for j in 0..n {
                        out[j] = inv_std[r] * (gr[j] - mg - yr[j] * mgy);
                    }
                }
                vec![(*x, Tensor::new(y.shape().to_vec(), gx)?)]
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let gx = xv.data().iter().zip(gd).map(|(v, g)| if *v > 0.0 { *g } else { 0.0 }).collect();
                vec![(*x, Tensor::new(xv.shape().to_vec(), gx)?)]
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let gx = xv.data().iter().zip(gd).map(|(v, g)| g * gelu(*v).1).collect();
                vec![(*x, Tensor::new(xv.shape().to_vec(), gx)?)]
            }
            Op::Dropout { x, mask } => {
                let gx = gd.iter().zip(mask).map(|(g, m)| g * m).collect();
                vec![(*x, Tensor::new(g.shape().to_vec(), gx)?)]
            }
            Op::Unfold {
                x,
                window,
                stride,
                offset,
            } => {
                let (window, stride, offset) = (*window, *stride, *offset);
                let s = self.shape(*x).to_vec();
                let l = *s.last().unwrap();
                let outer = lead(&s, 1);
                let n_win = g.shape()[g.ndim() - 2];
                let mut gx = vec![0.0; outer * l];
                for o in 0..outer {
                    for w in 0..n_win {
                        let base = o * l + offset + w * stride;
                        let src = (o * n_win + w) * window;
                        for k in 0..window {
                            gx[base + k] += gd[src + k];
                        }
                    }
                }
                vec![(*x, Tensor::new(s, gx)?)]
            }
            Op::Embedding { table, indices } => {
                let s = self.shape(*table).to_vec();
                let d = s[1];
                let mut gt = vec![0.0; s[0] * d];
                for (r, &i) in indices.iter().enumerate() {
                    for k in 0..d {
                        gt[i * d + k] += gd[r * d + k];
                    }
                }
                vec![(*table, Tensor::new(s, gt)?)]
            }
            Op::BroadcastTo(x) => {
                let s = self.shape(*x).to_vec();
                let m: usize = s.iter().product();
                let mut gx = vec![0.0; m];
                for (i, v) in gd.iter().enumerate() {
                    gx[i % m] += v;
                }
                vec![(*x, Tensor::new(s, gx)?)]
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred);
                let n = p.numel().max(1) as f64;
                let gx = p
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(a, b)| 2.0 * (a - b) / n * gd[0])
                    .collect();
                vec![(*pred, Tensor::new(p.shape().to_vec(), gx)?)]
            }
        };
        for (v, gv) in updates {
            self.accumulate(v, gv);
        }
        Ok(())
    }
}

fn transpose_last(t: &Tensor, r: usize, c: usize) -> Tensor {
    let batch = t.numel() / (r * c).max(1);
    let src = t.data();
    let mut data = vec![0.0; t.numel()];
    for b in 0..batch {
        let o = b * r * c;
        for i in 0..r {
            for j in 0..c {
                data[o + j * r + i] = src[o + i * c + j];
            }
        }
    }
    let mut shape = t.shape().to_vec();
    let n = shape.len();
    shape.swap(n - 2, n - 1);
    Tensor::new(shape, data).expect("transpose preserves size")
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}
