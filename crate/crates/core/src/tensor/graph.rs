use super::conv::{self, Conv2dOptions};
use super::pool::{self, PoolGeometry, PoolKind};
use super::{gemm, same_shape, Element, Tensor};
use crate::error::{bail, Result};
use crate::rng::Rng;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf { param: Option<usize> },
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: T },
    AddBias { x: Var, bias: Var },
    Relu { x: Var },
    Sigmoid { x: Var },
    LogSoftmax { x: Var },
    Reshape { x: Var },
    Concat { inputs: Vec<Var>, axis: usize },
    ChannelShuffle { x: Var, groups: usize },
    Conv2d { x: Var, w: Var, b: Option<Var>, opts: Conv2dOptions },
    MaxPool { x: Var, argmax: Vec<usize> },
    AvgPool { x: Var, geo: PoolGeometry },
    GlobalAvgPool { x: Var },
    Dropout { x: Var, mask: Vec<T> },
    Sum { x: Var },
    Mean { x: Var },
    NllLoss { x: Var, labels: Vec<usize> },
    BinarySigmoidNll { z: Var, labels: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Append-only computation graph.
///
/// Ops evaluate eagerly and record themselves; inputs always precede the node
/// that consumes them, so insertion order is a topological order.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`Graph::backward`] target w.r.t. `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Leaves bound to a parameter slot, with their gradients.
    pub fn param_grads(&self) -> impl Iterator<Item = (usize, Option<&[T]>)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Leaf { param: Some(p) } if n.requires_grad => {
                Some((p, self.grads.get(i).and_then(|g| g.as_deref())))
            }
            _ => None,
        })
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf { param: None })
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Leaf whose gradient belongs to parameter slot `slot` of a store.
    pub fn param_leaf(&mut self, value: Tensor<T>, slot: usize, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf { param: Some(slot) })
    }

    /// Same value, no gradient flows back through it.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            bail!(Shape, "matmul: cannot multiply {:?} by {:?}", sa, sb);
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm::nn(m, k, n, self.value(a).data(), self.value(b).data(), &mut out, false);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new([m, n], out)?, rg, Op::MatMul { a, b }))
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        same_shape(self.shape(a), self.shape(b), what)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.shape(a).to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "add", |x, y| x + y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(t, rg, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "sub", |x, y| x - y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(t, rg, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "mul", |x, y| x * y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(t, rg, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let t = self.map(x, |v| v * factor);
        let rg = self.any_grad(&[x]);
        self.push(t, rg, Op::Scale { x, factor })
    }

    /// Adds `bias[c]` along axis 1 of a `B×C` or `B×C×H×W` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(bias).to_vec());
        if sx.len() < 2 || sb != [sx[1]] {
            bail!(Shape, "add_bias: bias {:?} does not match axis 1 of {:?}", sb, sx);
        }
        let inner: usize = sx[2..].iter().product();
        let mut out = self.value(x).data().to_vec();
        let bv = self.value(bias).data();
        for (i, chunk) in out.chunks_mut(inner).enumerate() {
            let b = bv[i % sx[1]];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        let rg = self.any_grad(&[x, bias]);
        Ok(self.push(Tensor::new(sx, out)?, rg, Op::AddBias { x, bias }))
    }

    /// `x · w + b` for `x: B×in`, `w: in×out`, `b: out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    fn map(&self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let src = self.value(x);
        Tensor::new(src.shape().to_vec(), src.data().iter().map(|&v| f(v)).collect())
            .expect("same shape")
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.map(x, |v| if v > T::zero() { v } else { T::zero() });
        let rg = self.any_grad(&[x]);
        self.push(t, rg, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.map(x, stable_sigmoid);
        let rg = self.any_grad(&[x]);
        self.push(t, rg, Op::Sigmoid { x })
    }

    /// Row-wise `x - max - ln Σ exp(x - max)` over a `B×C` tensor.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || shape[1] < 2 {
            bail!(Shape, "log_softmax expects B×C with C ≥ 2, got {:?}", shape);
        }
        let c = shape[1];
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(c) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            row.iter_mut().for_each(|v| *v = *v - max - lse);
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::LogSoftmax { x }))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(t, rg, Op::Reshape { x }))
    }

    /// Collapses all axes after the first: `B×…` → `B×rest`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let (b, rest) = (s[0], s[1..].iter().product::<usize>());
        self.reshape(x, [b, rest])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            bail!(Usage, "concat of zero tensors");
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            bail!(Shape, "concat axis {} out of range for {:?}", axis, base);
        }
        let mut total = 0;
        for (i, &v) in inputs.iter().enumerate() {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                bail!(
                    Shape,
                    "concat: tensor {} has shape {:?}, incompatible with {:?} along axis {}",
                    i,
                    s,
                    base,
                    axis
                );
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let src = self.value(v);
                let row = src.shape()[axis] * inner;
                out.extend_from_slice(&src.data()[o * row..(o + 1) * row]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.any_grad(inputs);
        Ok(self.push(
            Tensor::new(shape, out)?,
            rg,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    /// Reshape channels to `(g, C/g)`, transpose, flatten: channel `c` lands at
    /// `(c mod (C/g))·g + ⌊c/(C/g)⌋`, i.e. output channel `j` reads input
    /// channel `(j mod g)·(C/g) + ⌊j/g⌋`.
    pub fn channel_shuffle(&mut self, x: Var, groups: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 4 {
            bail!(Shape, "channel_shuffle expects B×C×H×W, got {:?}", shape);
        }
        let c = shape[1];
        if groups == 0 || !c.is_multiple_of(groups) {
            bail!(Config, "channel_shuffle: {} channels not divisible by {} groups", c, groups);
        }
        let out = permute_channels(self.value(x).data(), &shape, &shuffle_sources(c, groups));
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::ChannelShuffle { x, groups }))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, opts: Conv2dOptions) -> Result<Var> {
        let out = conv::forward(self.value(x), self.value(w), b.map(|b| self.value(b)), opts)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.any_grad(&deps);
        Ok(self.push(out, rg, Op::Conv2d { x, w, b, opts }))
    }

    pub fn pool2d(&mut self, x: Var, kind: PoolKind, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let rg = self.any_grad(&[x]);
        match kind {
            PoolKind::GlobalAvg => self.global_avg_pool(x),
            PoolKind::Max => {
                let geo = PoolGeometry::new(&shape, kernel, stride, padding)?;
                let out_shape = vec![shape[0], shape[1], geo.ho, geo.wo];
                let (t, argmax) = pool::max_forward(self.value(x), &geo, out_shape)?;
                Ok(self.push(t, rg, Op::MaxPool { x, argmax }))
            }
            PoolKind::Avg => {
                let geo = PoolGeometry::new(&shape, kernel, stride, padding)?;
                let out_shape = vec![shape[0], shape[1], geo.ho, geo.wo];
                let t = pool::avg_forward(self.value(x), &geo, out_shape)?;
                Ok(self.push(t, rg, Op::AvgPool { x, geo }))
            }
        }
    }

    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        self.pool2d(x, PoolKind::Max, kernel, stride, padding)
    }

    pub fn avg_pool2d(&mut self, x: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        self.pool2d(x, PoolKind::Avg, kernel, stride, padding)
    }

    /// `B×C×H×W` → `B×C×1×1` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 4 {
            bail!(Shape, "global_avg_pool expects B×C×H×W, got {:?}", shape);
        }
        let hw = T::from_f64((shape[2] * shape[3]) as f64);
        let out: Vec<T> = self
            .value(x)
            .data()
            .chunks(shape[2] * shape[3])
            .map(|plane| plane.iter().copied().sum::<T>() / hw)
            .collect();
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new([shape[0], shape[1], 1, 1], out)?, rg, Op::GlobalAvgPool { x }))
    }

    /// Inverted dropout: zero with probability `p`, scale survivors by `1/(1-p)`.
    pub fn dropout(&mut self, x: Var, p: f64, training: bool, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            bail!(Config, "dropout probability {} outside [0, 1)", p);
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = T::from_f64(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.next_f64() < p { T::zero() } else { keep })
            .collect();
        let src = self.value(x);
        let out = src.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let t = Tensor::new(src.shape().to_vec(), out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(t, rg, Op::Dropout { x, mask }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), rg, Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().copied().sum::<T>() / T::from_f64(t.len() as f64);
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), rg, Op::Mean { x })
    }

    /// Batch mean of `-log_probs[i, labels[i]]`.
    pub fn nll_loss(&mut self, log_probs: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(log_probs).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            bail!(
                Shape,
                "nll_loss: log-probs {:?} do not match {} labels",
                shape,
                labels.len()
            );
        }
        let c = shape[1];
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= c) {
            bail!(Data, "nll_loss: sample {} has label {} outside [0, {})", i, y, c);
        }
        let lp = self.value(log_probs).data();
        let total: T = labels.iter().enumerate().map(|(i, &y)| -lp[i * c + y]).sum();
        let loss = total / T::from_f64(labels.len() as f64);
        let rg = self.any_grad(&[log_probs]);
        Ok(self.push(
            Tensor::scalar(loss),
            rg,
            Op::NllLoss {
                x: log_probs,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Batch mean of `max(z,0) - z·y + ln(1 + e^{-|z|})`, the overflow-free
    /// form of `-[y ln σ(z) + (1-y) ln(1-σ(z))]`.
    pub fn binary_sigmoid_nll(&mut self, logits: Var, labels: &[u8]) -> Result<Var> {
        let n = self.value(logits).len();
        if n != labels.len() {
            bail!(Shape, "binary_sigmoid_nll: {} logits for {} labels", n, labels.len());
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y > 1) {
            bail!(Data, "binary_sigmoid_nll: sample {} has non-binary label {}", i, y);
        }
        let ys: Vec<T> = labels.iter().map(|&y| T::from_f64(y as f64)).collect();
        let total: T = self
            .value(logits)
            .data()
            .iter()
            .zip(&ys)
            .map(|(&z, &y)| z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        let loss = total / T::from_f64(n as f64);
        let rg = self.any_grad(&[logits]);
        Ok(self.push(Tensor::scalar(loss), rg, Op::BinarySigmoidNll { z: logits, labels: ys }))
    }

    /// Reverse sweep from the scalar `loss`. Gradients of earlier sweeps on
    /// this graph are discarded; accumulation across steps happens in the
    /// parameter store.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            bail!(
                Usage,
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            );
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contribution: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(existing) => existing
                .iter_mut()
                .zip(contribution)
                .for_each(|(e, c)| *e += c),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        let node = &self.nodes[i];
        let mut out: Vec<(Var, Vec<T>)> = Vec::new();
        match &node.op {
            Op::Leaf { .. } => {}
            &Op::MatMul { a, b } => {
                let (va, vb) = (self.value(a), self.value(b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if self.wants(a) {
                    let mut ga = vec![T::zero(); m * k];
                    gemm::nt(m, n, k, g, vb.data(), &mut ga, false);
                    out.push((a, ga));
                }
                if self.wants(b) {
                    let mut gb = vec![T::zero(); k * n];
                    gemm::tn(k, m, n, va.data(), g, &mut gb, false);
                    out.push((b, gb));
                }
            }
            &Op::Add { a, b } => {
                out.push((a, g.to_vec()));
                out.push((b, g.to_vec()));
            }
            &Op::Sub { a, b } => {
                out.push((a, g.to_vec()));
                out.push((b, g.iter().map(|&v| -v).collect()));
            }
            &Op::Mul { a, b } => {
                let (va, vb) = (self.value(a).data(), self.value(b).data());
                out.push((a, g.iter().zip(vb).map(|(&g, &y)| g * y).collect()));
                out.push((b, g.iter().zip(va).map(|(&g, &x)| g * x).collect()));
            }
            &Op::Scale { x, factor } => out.push((x, g.iter().map(|&v| v * factor).collect())),
            &Op::AddBias { x, bias } => {
                out.push((x, g.to_vec()));
                if self.wants(bias) {
                    let s = self.shape(x);
                    let (c, inner) = (s[1], s[2..].iter().product::<usize>());
                    let mut gb = vec![T::zero(); c];
                    for (j, chunk) in g.chunks(inner).enumerate() {
                        gb[j % c] += chunk.iter().copied().sum::<T>();
                    }
                    out.push((bias, gb));
                }
            }
            &Op::Relu { x } => {
                let vx = self.value(x).data();
                out.push((
                    x,
                    g.iter()
                        .zip(vx)
                        .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                        .collect(),
                ));
            }
            &Op::Sigmoid { x } => {
                let y = node.value.data();
                out.push((x, g.iter().zip(y).map(|(&g, &s)| g * s * (T::one() - s)).collect()));
            }
            &Op::LogSoftmax { x } => {
                let c = node.value.shape()[1];
                let mut gx = Vec::with_capacity(g.len());
                for (grow, yrow) in g.chunks(c).zip(node.value.data().chunks(c)) {
                    let total = grow.iter().copied().sum::<T>();
                    gx.extend(grow.iter().zip(yrow).map(|(&gv, &y)| gv - y.exp() * total));
                }
                out.push((x, gx));
            }
            &Op::Reshape { x } => out.push((x, g.to_vec())),
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let row = shape[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let width = self.shape(v)[*axis] * inner;
                    if self.wants(v) {
                        let mut gv = Vec::with_capacity(outer * width);
                        for o in 0..outer {
                            gv.extend_from_slice(&g[o * row + offset..o * row + offset + width]);
                        }
                        out.push((v, gv));
                    }
                    offset += width;
                }
            }
            &Op::ChannelShuffle { x, groups } => {
                let shape = node.value.shape();
                let sources = shuffle_sources(shape[1], groups);
                let mut inverse = vec![0; sources.len()];
                for (dst, &src) in sources.iter().enumerate() {
                    inverse[src] = dst;
                }
                out.push((x, permute_channels(g, shape, &inverse)));
            }
            &Op::Conv2d { x, w, b, opts } => {
                let need = [self.wants(x), self.wants(w), b.is_some_and(|b| self.wants(b))];
                let grads = conv::backward(self.value(x), self.value(w), b.is_some(), opts, g, need);
                if let Some(gx) = grads.input {
                    out.push((x, gx));
                }
                if let Some(gw) = grads.weight {
                    out.push((w, gw));
                }
                if let (Some(b), Some(gb)) = (b, grads.bias) {
                    out.push((b, gb));
                }
            }
            Op::MaxPool { x, argmax } => {
                let mut gx = vec![T::zero(); self.value(*x).len()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    gx[src] += gv;
                }
                out.push((*x, gx));
            }
            Op::AvgPool { x, geo } => out.push((*x, pool::avg_backward(geo, g))),
            &Op::GlobalAvgPool { x } => {
                let s = self.shape(x);
                let hw = s[2] * s[3];
                let scale = T::one() / T::from_f64(hw as f64);
                let mut gx = Vec::with_capacity(self.value(x).len());
                for &gv in g {
                    gx.extend(std::iter::repeat_n(gv * scale, hw));
                }
                out.push((x, gx));
            }
            Op::Dropout { x, mask } => {
                out.push((*x, g.iter().zip(mask).map(|(&g, &m)| g * m).collect()));
            }
            &Op::Sum { x } => out.push((x, vec![g[0]; self.value(x).len()])),
            &Op::Mean { x } => {
                let n = self.value(x).len();
                out.push((x, vec![g[0] / T::from_f64(n as f64); n]));
            }
            Op::NllLoss { x, labels } => {
                let c = self.shape(*x)[1];
                let mut gx = vec![T::zero(); self.value(*x).len()];
                let share = -g[0] / T::from_f64(labels.len() as f64);
                for (i, &y) in labels.iter().enumerate() {
                    gx[i * c + y] = share;
                }
                out.push((*x, gx));
            }
            Op::BinarySigmoidNll { z, labels } => {
                let share = g[0] / T::from_f64(labels.len() as f64);
                let gz = self
                    .value(*z)
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&z, &y)| (stable_sigmoid(z) - y) * share)
                    .collect();
                out.push((*z, gz));
            }
        }
        for (v, contribution) in out {
            self.accumulate(v, contribution);
        }
    }
}

/// `1/(1+e^{-z})` evaluating `exp` only at non-positive arguments.
pub fn stable_sigmoid<T: Element>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// For each output channel, the input channel it reads.
fn shuffle_sources(channels: usize, groups: usize) -> Vec<usize> {
    let per_group = channels / groups;
    (0..channels)
        .map(|j| (j % groups) * per_group + j / groups)
        .collect()
}

fn permute_channels<T: Copy>(data: &[T], shape: &[usize], sources: &[usize]) -> Vec<T> {
    let c = shape[1];
    let plane = shape[2] * shape[3];
    let mut out = Vec::with_capacity(data.len());
    for b in 0..shape[0] {
        for &src in sources {
            let start = (b * c + src) * plane;
            out.extend_from_slice(&data[start..start + plane]);
        }
    }
    out
}
