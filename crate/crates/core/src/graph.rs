//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Nodes are appended in evaluation order, so the tape is always
//! topologically sorted. [`Graph::backward`] walks it once in reverse.

use rustfft::num_complex::Complex;

use crate::error::{shape_err, Error, Result};
use crate::ops::{batch_norm, conv, dft, linear, pool, resize};
use crate::scalar::{from_usize, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Abs(NodeId),
    Square(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    RowMean(NodeId),
    Reshape(NodeId),
    Narrow { x: NodeId, axis: usize, start: usize },
    Concat { xs: Vec<NodeId>, axis: usize },
    Linear { x: NodeId, w: NodeId, b: Option<NodeId> },
    Conv2d { x: NodeId, w: NodeId, b: NodeId },
    MaxPool2 { x: NodeId, argmax: Vec<usize> },
    Resize(NodeId),
    Elu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    BatchNorm { x: NodeId, gamma: NodeId, beta: NodeId, cache: batch_norm::BnCache<T> },
    BatchNormEval { x: NodeId, gamma: NodeId, beta: NodeId, scale: Vec<T>, inv_std: Vec<T>, running_mean: Vec<T> },
    DftMagnitude { x: NodeId, bins: Vec<Complex<T>> },
    Gather { x: NodeId, index: Vec<Option<usize>> },
    GlobalAvgPool(NodeId),
    SoftmaxCrossEntropy { logits: NodeId, labels: Vec<usize>, probs: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `id`, or zeros when the node is not on a path to the loss.
    pub fn get(&self, id: NodeId) -> Tensor<T> {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }

    pub fn take(&mut self, id: NodeId) -> Tensor<T> {
        self.grads[id.0].take().unwrap_or_else(|| Tensor::zeros(&self.shapes[id.0]))
    }
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err!("{what}: shape {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("shapes checked")
}

fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// (outer, axis length, inner) decomposition of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape(self.value(a), self.value(b), "add")?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b), self.rg(&[a, b])))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape(self.value(a), self.value(b), "sub")?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b), self.rg(&[a, b])))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape(self.value(a), self.value(b), "mul")?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b), self.rg(&[a, b])))
    }

    pub fn scale(&mut self, a: NodeId, k: T) -> NodeId {
        let v = self.value(a).map(|x| x * k);
        self.push(v, Op::Scale(a, k), self.rg(&[a]))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.abs());
        self.push(v, Op::Abs(a), self.rg(&[a]))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a), self.rg(&[a]))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), self.rg(&[a]))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let v = Tensor::scalar(x.sum() / from_usize(x.len()));
        self.push(v, Op::Mean(a), self.rg(&[a]))
    }

    /// Mean over all but the leading axis: `[N, ...] -> [N]`.
    pub fn row_mean(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let n = x.shape()[0];
        let per = x.len() / n;
        let data = x
            .data()
            .chunks(per)
            .map(|r| r.iter().copied().sum::<T>() / from_usize(per))
            .collect();
        let v = Tensor::new(&[n], data).expect("row count");
        self.push(v, Op::RowMean(a), self.rg(&[a]))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a), self.rg(&[a])))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let x = self.value(a);
        if axis >= x.rank() || start + len > x.shape()[axis] || len == 0 {
            return Err(shape_err!("narrow({axis}, {start}, {len}) out of range for {:?}", x.shape()));
        }
        let (outer, dim, inner) = split_axis(x.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            data.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let v = Tensor::new(&shape, data)?;
        Ok(self.push(v, Op::Narrow { x: a, axis, start }, self.rg(&[a])))
    }

    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = self.value(*xs.first().ok_or_else(|| shape_err!("concat of nothing"))?);
        let rank = first.rank();
        if axis >= rank {
            return Err(shape_err!("concat axis {axis} out of range"));
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = 0;
        for &id in xs {
            let s = self.value(id).shape();
            let compatible = s.len() == rank && s.iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err!("concat shape mismatch {:?} vs {:?}", s, first.shape()));
            }
            shape[axis] += s[axis];
        }
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &id in xs {
                let x = self.value(id);
                let chunk = x.shape()[axis] * inner;
                data.extend_from_slice(&x.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let v = Tensor::new(&shape, data)?;
        let rg = self.rg(xs);
        Ok(self.push(v, Op::Concat { xs: xs.to_vec(), axis }, rg))
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let v = linear::forward(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let mut ids = vec![x, w];
        ids.extend(b);
        let rg = self.rg(&ids);
        Ok(self.push(v, Op::Linear { x, w, b }, rg))
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let v = conv::forward(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(v, Op::Conv2d { x, w, b }, self.rg(&[x, w, b])))
    }

    pub fn max_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let (v, argmax) = pool::forward(self.value(x))?;
        Ok(self.push(v, Op::MaxPool2 { x, argmax }, self.rg(&[x])))
    }

    pub fn resize(&mut self, x: NodeId, out_h: usize, out_w: usize) -> Result<NodeId> {
        let v = resize::forward(self.value(x), out_h, out_w)?;
        Ok(self.push(v, Op::Resize(x), self.rg(&[x])))
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|v| if v > T::zero() { v } else { v.exp() - T::one() });
        self.push(v, Op::Elu(x), self.rg(&[x]))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(sigmoid);
        self.push(v, Op::Sigmoid(x), self.rg(&[x]))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|v| v.tanh());
        self.push(v, Op::Tanh(x), self.rg(&[x]))
    }

    /// Training-mode batch norm. Returns the output node and the batch
    /// statistics so the caller can update running averages.
    pub fn batch_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<(NodeId, batch_norm::BnCache<T>)> {
        let (v, cache) = batch_norm::forward_train(self.value(x), self.value(gamma), self.value(beta))?;
        let rg = self.rg(&[x, gamma, beta]);
        let id = self.push(v, Op::BatchNorm { x, gamma, beta, cache: cache.clone() }, rg);
        Ok((id, cache))
    }

    /// Inference-mode batch norm using running statistics.
    pub fn batch_norm_eval(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, running_mean: &[T], running_var: &[T]) -> Result<NodeId> {
        let xv = self.value(x);
        let (n, c, h, w) = crate::ops::dims4(xv.shape()).ok_or_else(|| shape_err!("batch_norm input must be NCHW"))?;
        if self.value(gamma).shape() != [c] || running_mean.len() != c || running_var.len() != c {
            return Err(shape_err!("batch_norm channel count mismatch"));
        }
        let (scale, shift) = batch_norm::eval_affine(self.value(gamma).data(), self.value(beta).data(), running_mean, running_var);
        let hw = h * w;
        let mut data = xv.data().to_vec();
        for ni in 0..n {
            for ci in 0..c {
                for v in &mut data[(ni * c + ci) * hw..(ni * c + ci + 1) * hw] {
                    *v = scale[ci] * *v + shift[ci];
                }
            }
        }
        let v = Tensor::new(xv.shape(), data)?;
        let eps = crate::scalar::lit::<T>(batch_norm::EPS);
        let inv_std = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            v,
            Op::BatchNormEval { x, gamma, beta, scale, inv_std, running_mean: running_mean.to_vec() },
            rg,
        ))
    }

    pub fn dft_magnitude(&mut self, x: NodeId) -> Result<NodeId> {
        let (v, bins) = dft::forward(self.value(x))?;
        Ok(self.push(v, Op::DftMagnitude { x, bins }, self.rg(&[x])))
    }

    /// Row-wise gather: `x` is `[N, P]`, `index` holds `N * Q` optional
    /// positions into each row; `None` produces 0. Output is `[N, Q]`.
    pub fn gather(&mut self, x: NodeId, index: Vec<Option<usize>>, per_row: usize) -> Result<NodeId> {
        let xv = self.value(x);
        let (n, p) = match *xv.shape() {
            [n, p] => (n, p),
            _ => return Err(shape_err!("gather input must be [N, P], got {:?}", xv.shape())),
        };
        if index.len() != n * per_row {
            return Err(shape_err!("gather index length {} != {}", index.len(), n * per_row));
        }
        let mut data = Vec::with_capacity(n * per_row);
        for (r, idx) in index.chunks(per_row).enumerate() {
            for i in idx {
                data.push(match *i {
                    Some(j) if j < p => xv.data()[r * p + j],
                    Some(j) => return Err(shape_err!("gather position {j} out of range {p}")),
                    None => T::zero(),
                });
            }
        }
        let v = Tensor::new(&[n, per_row], data)?;
        Ok(self.push(v, Op::Gather { x, index }, self.rg(&[x])))
    }

    /// `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let (n, c, h, w) = crate::ops::dims4(xv.shape()).ok_or_else(|| shape_err!("global_avg_pool input must be NCHW"))?;
        let hw = h * w;
        let data = xv
            .data()
            .chunks(hw)
            .map(|p| p.iter().copied().sum::<T>() / from_usize(hw))
            .collect();
        let v = Tensor::new(&[n, c], data)?;
        Ok(self.push(v, Op::GlobalAvgPool(x), self.rg(&[x])))
    }

    /// Mean softmax cross-entropy of `[N, K]` logits against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let lv = self.value(logits);
        let (n, k) = match *lv.shape() {
            [n, k] => (n, k),
            _ => return Err(shape_err!("logits must be [N, K]")),
        };
        if labels.len() != n || labels.iter().any(|&l| l >= k) {
            return Err(shape_err!("labels incompatible with logits {:?}", lv.shape()));
        }
        let mut probs = Vec::with_capacity(n * k);
        let mut loss = T::zero();
        for (row, &y) in lv.data().chunks(k).zip(labels) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&v| (v - m).exp()).sum();
            for &v in row {
                probs.push((v - m).exp() / z);
            }
            loss += z.ln() + m - row[y];
        }
        let v = Tensor::scalar(loss / from_usize(n));
        let rg = self.rg(&[logits]);
        Ok(self.push(v, Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec(), probs }, rg))
    }

    /// Reverse pass from a scalar `loss` node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (input, gi) in self.input_grads(i, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&gi),
                    slot => *slot = Some(gi),
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        // only leaves keep their gradient
        for (i, slot) in grads.iter_mut().enumerate() {
            if !matches!(self.nodes[i].op, Op::Leaf) {
                *slot = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn input_grads(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(NodeId, Tensor<T>)>> {
        let node = &self.nodes[i];
        let val = |id: NodeId| &self.nodes[id.0].value;
        let out = &node.value;
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Op::Mul(a, b) => vec![
                (*a, zip_map(g, val(*b), |d, y| d * y)),
                (*b, zip_map(g, val(*a), |d, x| d * x)),
            ],
            Op::Scale(a, k) => vec![(*a, g.map(|v| v * *k))],
            Op::Abs(a) => vec![(*a, zip_map(g, val(*a), |d, x| {
                if x > T::zero() {
                    d
                } else if x < T::zero() {
                    -d
                } else {
                    T::zero()
                }
            }))],
            Op::Square(a) => vec![(*a, zip_map(g, val(*a), |d, x| d * (x + x)))],
            Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape(), g.item()))],
            Op::Mean(a) => {
                let n = from_usize::<T>(val(*a).len());
                vec![(*a, Tensor::full(val(*a).shape(), g.item() / n))]
            }
            Op::RowMean(a) => {
                let x = val(*a);
                let per = x.len() / x.shape()[0];
                let k = from_usize::<T>(per);
                let data = g.data().iter().flat_map(|&d| std::iter::repeat_n(d / k, per)).collect();
                vec![(*a, Tensor::new(x.shape(), data)?)]
            }
            Op::Reshape(a) => vec![(*a, g.reshape(val(*a).shape())?)],
            Op::Narrow { x, axis, start } => {
                let xs = val(*x).shape();
                let (outer, dim, inner) = split_axis(xs, *axis);
                let len = out.shape()[*axis];
                let mut d = vec![T::zero(); val(*x).len()];
                for o in 0..outer {
                    let dst = (o * dim + start) * inner;
                    d[dst..dst + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                vec![(*x, Tensor::new(xs, d)?)]
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut res = Vec::with_capacity(xs.len());
                let mut offset = 0;
                for &id in xs {
                    let s = val(id).shape();
                    let chunk = s[*axis] * inner;
                    let mut d = Vec::with_capacity(val(id).len());
                    for o in 0..outer {
                        let src = o * total * inner + offset * inner;
                        d.extend_from_slice(&g.data()[src..src + chunk]);
                    }
                    offset += s[*axis];
                    res.push((id, Tensor::new(s, d)?));
                }
                res
            }
            Op::Linear { x, w, b } => {
                let lg = linear::backward(val(*x), val(*w), b.is_some(), g)?;
                let mut res = vec![(*x, lg.dx), (*w, lg.dw)];
                if let (Some(b), Some(db)) = (b, lg.db) {
                    res.push((*b, db));
                }
                res
            }
            Op::Conv2d { x, w, b } => {
                let cg = conv::backward(val(*x), val(*w), val(*b), g)?;
                vec![(*x, cg.dx), (*w, cg.dw), (*b, cg.db)]
            }
            Op::MaxPool2 { x, argmax } => vec![(*x, pool::backward(val(*x).shape(), argmax, g)?)],
            Op::Resize(x) => vec![(*x, resize::backward(val(*x).shape(), g)?)],
            Op::Elu(x) => vec![(*x, zip_map(g, val(*x), |d, v| if v > T::zero() { d } else { d * v.exp() }))],
            Op::Sigmoid(x) => vec![(*x, zip_map(g, out, |d, s| d * s * (T::one() - s)))],
            Op::Tanh(x) => vec![(*x, zip_map(g, out, |d, t| d * (T::one() - t * t)))],
            Op::BatchNorm { x, gamma, beta, cache } => {
                let bg = batch_norm::backward_train(val(*x).shape(), val(*gamma), cache, g)?;
                vec![(*x, bg.dx), (*gamma, bg.dgamma), (*beta, bg.dbeta)]
            }
            Op::BatchNormEval { x, gamma, beta, scale, inv_std, running_mean } => {
                let xs = val(*x);
                let (n, c, h, w) = crate::ops::dims4(xs.shape()).expect("checked in forward");
                let hw = h * w;
                let mut dx = g.data().to_vec();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for ni in 0..n {
                    for ci in 0..c {
                        let inv = inv_std[ci];
                        for j in (ni * c + ci) * hw..(ni * c + ci + 1) * hw {
                            let d = g.data()[j];
                            dx[j] = d * scale[ci];
                            dbeta[ci] += d;
                            dgamma[ci] += d * (xs.data()[j] - running_mean[ci]) * inv;
                        }
                    }
                }
                vec![
                    (*x, Tensor::new(xs.shape(), dx)?),
                    (*gamma, Tensor::new(&[c], dgamma)?),
                    (*beta, Tensor::new(&[c], dbeta)?),
                ]
            }
            Op::DftMagnitude { x, bins } => vec![(*x, dft::backward(val(*x).shape(), bins, g)?)],
            Op::Gather { x, index } => {
                let xs = val(*x);
                let p = xs.shape()[1];
                let per_row = out.shape()[1];
                let mut d = vec![T::zero(); xs.len()];
                for (k, i) in index.iter().enumerate() {
                    if let Some(j) = *i {
                        d[(k / per_row) * p + j] += g.data()[k];
                    }
                }
                vec![(*x, Tensor::new(xs.shape(), d)?)]
            }
            Op::GlobalAvgPool(x) => {
                let xs = val(*x);
                let (_, _, h, w) = crate::ops::dims4(xs.shape()).expect("checked in forward");
                let hw = h * w;
                let k = from_usize::<T>(hw);
                let d = g.data().iter().flat_map(|&v| std::iter::repeat_n(v / k, hw)).collect();
                vec![(*x, Tensor::new(xs.shape(), d)?)]
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let ls = val(*logits).shape();
                let (n, k) = (ls[0], ls[1]);
                let scale = g.item() / from_usize(n);
                let mut d = probs.clone();
                for (r, &y) in labels.iter().enumerate() {
                    d[r * k + y] -= T::one();
                }
                for v in &mut d {
                    *v *= scale;
                }
                vec![(*logits, Tensor::new(ls, d)?)]
            }
        })
    }
}
