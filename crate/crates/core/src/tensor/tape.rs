//! Wengert-list reverse-mode differentiation.
//!
//! Every op appends a node holding its forward value. `backward` walks the
//! list in reverse, so inputs always precede outputs.

use std::collections::HashMap;

use rand::Rng;

use super::{gemm_acc, Float, ParamId, ParamStore, Tensor};
use crate::error::{bail, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Param,
    MatMul { a: Var, b: Var, ta: bool, tb: bool, batch: usize, m: usize, k: usize, n: usize },
    Add(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Relu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
    Softmax(Var),
    Embedding { table: Var, ids: Vec<usize> },
    Dropout { x: Var, mask: Vec<T> },
    Concat(Vec<Var>),
    Reshape(Var),
    SwapAxes12 { x: Var, dims: [usize; 4] },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, eps: T, probs: Vec<T>, count: usize },
    WeightedNegLog { x: Var, weights: Vec<T>, floor: T },
    Sum(Var),
    Mean(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records a forward computation for later differentiation.
///
/// A tape is built fresh for every forward pass. In evaluation mode
/// (`training == false`) dropout is the identity.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    training: bool,
    param_vars: HashMap<ParamId, Var>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Float> Gradients<T> {
    /// Gradient with respect to a recorded node, if it was reached.
    pub fn wrt(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Adds parameter gradients into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        for &(id, var) in &self.params {
            if let Some(g) = self.wrt(var) {
                let p = store.get_mut(id);
                for (acc, &d) in p.grad.iter_mut().zip(g) {
                    *acc += d;
                }
            }
        }
    }
}

fn grad_buf<T: Float>(grads: &mut [Option<Vec<T>>], var: Var, len: usize) -> &mut Vec<T> {
    grads[var.0].get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Float> Tape<T> {
    pub fn new(training: bool) -> Self {
        Self { nodes: Vec::new(), training, param_vars: HashMap::new() }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Loads a parameter; repeated loads of the same id share one node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).value.clone(), Op::Param, true);
        self.param_vars.insert(id, v);
        v
    }

    /// Matrix product with optional transposition of either operand.
    ///
    /// Supported layouts: `a` of rank ≥ 2 times a rank-2 `b` (leading axes of
    /// `a` are flattened; `a` must be rank 2 when transposed), or two rank-3
    /// operands with equal batch size.
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let mismatch = || crate::error::Error::Dimension(format!(
            "matmul of {sa:?}{} by {sb:?}{}",
            if ta { "ᵀ" } else { "" },
            if tb { "ᵀ" } else { "" }
        ));
        let (batch, m, k, n, out_shape) = match (sa.len(), sb.len()) {
            (ra, 2) if ra >= 2 && (!ta || ra == 2) => {
                let (m, k) = if ta {
                    (sa[1], sa[0])
                } else {
                    (sa[..ra - 1].iter().product(), sa[ra - 1])
                };
                let (kb, n) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
                if k != kb {
                    return Err(mismatch());
                }
                let mut out = if ta { vec![m] } else { sa[..ra - 1].to_vec() };
                out.push(n);
                (1, m, k, n, out)
            }
            (3, 3) if sa[0] == sb[0] => {
                let (m, k) = if ta { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
                let (kb, n) = if tb { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
                if k != kb {
                    return Err(mismatch());
                }
                (sa[0], m, k, n, vec![sa[0], m, n])
            }
            _ => return Err(mismatch()),
        };
        let mut out = vec![T::zero(); batch * m * n];
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            let b_stride = if sb.len() == 3 { k * n } else { 0 };
            for bi in 0..batch {
                gemm_acc(
                    m,
                    k,
                    n,
                    &av[bi * m * k..],
                    ta,
                    &bv[bi * b_stride..],
                    tb,
                    &mut out[bi * m * n..(bi + 1) * m * n],
                    T::zero(),
                );
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::new(out_shape, out)?,
            Op::MatMul { a, b, ta, tb, batch, m, k, n },
            needs,
        ))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            bail!(Dimension, "{what}: {:?} vs {:?}", self.shape(a), self.shape(b));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data =
            self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let v = Tensor::new(self.shape(a).to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Add(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data =
            self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let v = Tensor::new(self.shape(a).to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Mul(a, b), needs))
    }

    /// Adds a rank-1 `bias` along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = self.value(x).last_dim();
        if self.shape(bias) != [n] {
            bail!(Dimension, "bias {:?} for input {:?}", self.shape(bias), self.shape(x));
        }
        let b = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(&x, &y)| x + y))
            .collect();
        let v = Tensor::new(self.shape(x).to_vec(), data)?;
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(v, Op::AddBias(x, bias), needs))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let c = T::of(factor);
        let data = self.value(x).data().iter().map(|&v| v * c).collect();
        let v = Tensor { shape: self.shape(x).to_vec(), data };
        let needs = self.needs(x);
        self.push(v, Op::Scale(x, c), needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|&v| v.max(T::zero())).collect();
        let v = Tensor { shape: self.shape(x).to_vec(), data };
        let needs = self.needs(x);
        self.push(v, Op::Relu(x), needs)
    }

    /// Normalizes over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let n = self.value(x).last_dim();
        if self.shape(gain) != [n] || self.shape(bias) != [n] {
            bail!(Dimension, "layer norm affine terms must have shape [{n}]");
        }
        let eps = T::of(eps);
        let nt = T::of(n as f64);
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = xv.len() / n;
        let mut xhat = Vec::with_capacity(xv.len());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.chunks(n) {
            let mean = row.iter().copied().sum::<T>() / nt;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nt;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for (i, &v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * g[i] + b[i]);
            }
        }
        let v = Tensor { shape: self.shape(x).to_vec(), data: out };
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(v, Op::LayerNorm { x, gain, bias, xhat, rstd }, needs))
    }

    /// Softmax over the last axis after adding an optional mask of `0` /
    /// `-inf` entries. The mask has either the full shape of `x` or the shape
    /// of its trailing axes, in which case it repeats over the leading ones.
    pub fn masked_softmax(&mut self, x: Var, mask: Option<&Tensor<T>>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().unwrap_or(&1);
        if let Some(m) = mask {
            let r = m.rank();
            if r > shape.len() || m.shape() != &shape[shape.len() - r..] {
                bail!(Dimension, "mask {:?} does not broadcast to {shape:?}", m.shape());
            }
        }
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); xv.len()];
        let mut z = vec![T::zero(); n];
        for (row_idx, (row, dst)) in xv.chunks(n).zip(out.chunks_mut(n)).enumerate() {
            match mask {
                Some(m) => {
                    let md = m.data();
                    let off = (row_idx * n) % md.len();
                    for i in 0..n {
                        z[i] = row[i] + md[off + i];
                    }
                }
                None => z.copy_from_slice(row),
            }
            let max = z.iter().copied().fold(T::neg_infinity(), T::max);
            if max == T::neg_infinity() {
                bail!(Definedness, "softmax row {row_idx} is fully masked");
            }
            let mut total = T::zero();
            for i in 0..n {
                let e = (z[i] - max).exp();
                dst[i] = e;
                total += e;
            }
            for d in dst.iter_mut() {
                *d /= total;
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor { shape, data: out }, Op::Softmax(x), needs))
    }

    /// Gathers rows of a `[vocab, dim]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let ts = self.shape(table);
        if ts.len() != 2 {
            bail!(Dimension, "embedding table must be rank 2, got {ts:?}");
        }
        let (vocab, dim) = (ts[0], ts[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            bail!(Dimension, "token id {bad} outside vocabulary of {vocab}");
        }
        if ids.is_empty() {
            bail!(Dimension, "embedding lookup of zero ids");
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            out.extend_from_slice(&tv[i * dim..(i + 1) * dim]);
        }
        let needs = self.needs(table);
        Ok(self.push(
            Tensor { shape: vec![ids.len(), dim], data: out },
            Op::Embedding { table, ids: ids.to_vec() },
            needs,
        ))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)`. Identity outside
    /// training mode.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            bail!(Parameter, "dropout probability {p} outside [0, 1)");
        }
        if !self.training || p == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let data = self.value(x).data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let v = Tensor { shape: self.shape(x).to_vec(), data };
        let needs = self.needs(x);
        Ok(self.push(v, Op::Dropout { x, mask }, needs))
    }

    pub fn concat_last_axis(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            bail!(Dimension, "concat of zero tensors");
        };
        let lead = &self.shape(first)[..self.shape(first).len() - 1];
        let lead = lead.to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                bail!(Dimension, "concat of {:?} with {:?}", self.shape(first), s);
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor { shape, data: out }, Op::Concat(parts.to_vec()), needs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshaped(shape.to_vec())?;
        let needs = self.needs(x);
        Ok(self.push(v, Op::Reshape(x), needs))
    }

    /// `[a, b, c, d] -> [a, c, b, d]`.
    pub fn swap_axes12(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 4 {
            bail!(Dimension, "swap_axes12 needs rank 4, got {s:?}");
        }
        let dims = [s[0], s[1], s[2], s[3]];
        let out = permute_0213(self.value(x).data(), dims);
        let v = Tensor { shape: vec![dims[0], dims[2], dims[1], dims[3]], data: out };
        let needs = self.needs(x);
        Ok(self.push(v, Op::SwapAxes12 { x, dims }, needs))
    }

    /// Label-smoothed cross entropy over rows of `[T, V]` logits, averaged
    /// over rows whose target is `Some`. The target class receives weight
    /// `1 - eps` and `eps` is spread uniformly over all `V` classes.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
        eps: f64,
    ) -> Result<Var> {
        let v = self.value(logits).last_dim();
        let rows = self.value(logits).len() / v;
        if rows != targets.len() {
            bail!(Dimension, "{} targets for {rows} logit rows", targets.len());
        }
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= v) {
            bail!(Dimension, "target {bad} outside vocabulary of {v}");
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            bail!(Definedness, "cross entropy with no valid target positions");
        }
        let epsf = T::of(eps);
        let uniform = epsf / T::of(v as f64);
        let lv = self.value(logits).data();
        let mut probs = vec![T::zero(); lv.len()];
        let mut total = 0.0f64;
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            let row = &lv[r * v..(r + 1) * v];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum_exp: T = row.iter().map(|&z| (z - max).exp()).sum();
            let log_z = max + sum_exp.ln();
            let mut row_loss = T::zero();
            for (c, &z) in row.iter().enumerate() {
                let logp = z - log_z;
                probs[r * v + c] = logp.exp();
                let w = if c == t { T::one() - epsf + uniform } else { uniform };
                row_loss -= w * logp;
            }
            total += row_loss.as_f64();
        }
        let loss = Tensor::scalar(T::of(total / count as f64));
        let needs = self.needs(logits);
        Ok(self.push(
            loss,
            Op::CrossEntropy { logits, targets: targets.to_vec(), eps: epsf, probs, count },
            needs,
        ))
    }

    /// `-Σ w · ln(max(x, floor))` with constant weights of the same shape as `x`.
    pub fn weighted_neg_log(&mut self, x: Var, weights: &Tensor<T>, floor: f64) -> Result<Var> {
        if weights.shape() != self.shape(x) {
            bail!(Dimension, "weights {:?} for input {:?}", weights.shape(), self.shape(x));
        }
        let floor = T::of(floor);
        let mut total = T::zero();
        for (&a, &w) in self.value(x).data().iter().zip(weights.data()) {
            if w != T::zero() {
                total -= w * a.max(floor).ln();
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::scalar(total),
            Op::WeightedNegLog { x, weights: weights.data().to_vec(), floor },
            needs,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().copied().sum::<T>() / T::of(v.len() as f64);
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Mean(x), needs)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            bail!(Contract, "backward needs a scalar loss, got shape {:?}", self.shape(loss));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let g = match &node.op {
                Op::Leaf | Op::Param => continue,
                _ => match grads[idx].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.backprop_node(node, &g, &mut grads);
        }
        let params = self.param_vars.iter().map(|(&id, &v)| (id, v)).collect();
        Ok(Gradients { grads, params })
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf | Op::Param => {}
            &Op::MatMul { a, b, ta, tb, batch, m, k, n } => {
                let av = self.value(a).data();
                let bv = self.value(b).data();
                let b_batched = self.value(b).rank() == 3;
                if self.needs(a) {
                    let da = grad_buf(grads, a, av.len());
                    for bi in 0..batch {
                        let gs = &g[bi * m * n..];
                        let bs = if b_batched { &bv[bi * k * n..] } else { bv };
                        let das = &mut da[bi * m * k..(bi + 1) * m * k];
                        if ta {
                            gemm_acc(k, n, m, bs, tb, gs, true, das, T::one());
                        } else {
                            gemm_acc(m, n, k, gs, false, bs, !tb, das, T::one());
                        }
                    }
                }
                if self.needs(b) {
                    let db = grad_buf(grads, b, bv.len());
                    for bi in 0..batch {
                        let gs = &g[bi * m * n..];
                        let as_ = &av[bi * m * k..];
                        let dbs = if b_batched { &mut db[bi * k * n..(bi + 1) * k * n] } else { &mut db[..] };
                        if tb {
                            gemm_acc(n, m, k, gs, true, as_, ta, dbs, T::one());
                        } else {
                            gemm_acc(k, m, n, as_, !ta, gs, false, dbs, T::one());
                        }
                    }
                }
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    if self.needs(v) {
                        let d = grad_buf(grads, v, g.len());
                        d.iter_mut().zip(g).for_each(|(d, &x)| *d += x);
                    }
                }
            }
            &Op::Mul(a, b) => {
                if self.needs(a) {
                    let bv = self.value(b).data();
                    let d = grad_buf(grads, a, g.len());
                    for i in 0..g.len() {
                        d[i] += g[i] * bv[i];
                    }
                }
                if self.needs(b) {
                    let av = self.value(a).data();
                    let d = grad_buf(grads, b, g.len());
                    for i in 0..g.len() {
                        d[i] += g[i] * av[i];
                    }
                }
            }
            &Op::AddBias(x, bias) => {
                let n = self.value(bias).len();
                if self.needs(x) {
                    let d = grad_buf(grads, x, g.len());
                    d.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
                }
                if self.needs(bias) {
                    let d = grad_buf(grads, bias, n);
                    for row in g.chunks(n) {
                        d.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                    }
                }
            }
            &Op::Scale(x, c) => {
                let d = grad_buf(grads, x, g.len());
                d.iter_mut().zip(g).for_each(|(d, &v)| *d += v * c);
            }
            &Op::Relu(x) => {
                let xv = self.value(x).data();
                let d = grad_buf(grads, x, g.len());
                for i in 0..g.len() {
                    if xv[i] > T::zero() {
                        d[i] += g[i];
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let n = self.value(*gain).len();
                let gv = self.value(*gain).data();
                if self.needs(*gain) {
                    let d = grad_buf(grads, *gain, n);
                    for (grow, hrow) in g.chunks(n).zip(xhat.chunks(n)) {
                        for i in 0..n {
                            d[i] += grow[i] * hrow[i];
                        }
                    }
                }
                if self.needs(*bias) {
                    let d = grad_buf(grads, *bias, n);
                    for grow in g.chunks(n) {
                        d.iter_mut().zip(grow).for_each(|(d, &v)| *d += v);
                    }
                }
                if self.needs(*x) {
                    let nt = T::of(n as f64);
                    let d = grad_buf(grads, *x, g.len());
                    let mut dh = vec![T::zero(); n];
                    for (r, (grow, hrow)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for i in 0..n {
                            dh[i] = grow[i] * gv[i];
                            mean_dh += dh[i];
                            mean_dh_h += dh[i] * hrow[i];
                        }
                        mean_dh /= nt;
                        mean_dh_h /= nt;
                        let drow = &mut d[r * n..(r + 1) * n];
                        for i in 0..n {
                            drow[i] += rstd[r] * (dh[i] - mean_dh - hrow[i] * mean_dh_h);
                        }
                    }
                }
            }
            &Op::Softmax(x) => {
                let y = node.value.data();
                let n = node.value.last_dim();
                let d = grad_buf(grads, x, g.len());
                for ((yr, gr), dr) in y.chunks(n).zip(g.chunks(n)).zip(d.chunks_mut(n)) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for i in 0..n {
                        dr[i] += yr[i] * (gr[i] - dot);
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let tlen = self.value(*table).len();
                let dim = self.value(*table).last_dim();
                let d = grad_buf(grads, *table, tlen);
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut d[id * dim..(id + 1) * dim];
                    dst.iter_mut().zip(&g[r * dim..(r + 1) * dim]).for_each(|(d, &v)| *d += v);
                }
            }
            Op::Dropout { x, mask } => {
                let d = grad_buf(grads, *x, g.len());
                for i in 0..g.len() {
                    d[i] += g[i] * mask[i];
                }
            }
            Op::Concat(parts) => {
                let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).last_dim()).collect();
                let total: usize = widths.iter().sum();
                let rows = g.len() / total;
                let mut offset = 0;
                for (&p, &w) in parts.iter().zip(&widths) {
                    if self.needs(p) {
                        let d = grad_buf(grads, p, rows * w);
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + w];
                            d[r * w..(r + 1) * w].iter_mut().zip(src).for_each(|(d, &v)| *d += v);
                        }
                    }
                    offset += w;
                }
            }
            &Op::Reshape(x) => {
                let d = grad_buf(grads, x, g.len());
                d.iter_mut().zip(g).for_each(|(d, &v)| *d += v);
            }
            &Op::SwapAxes12 { x, dims } => {
                let back = permute_0213(g, [dims[0], dims[2], dims[1], dims[3]]);
                let d = grad_buf(grads, x, g.len());
                d.iter_mut().zip(&back).for_each(|(d, &v)| *d += v);
            }
            Op::CrossEntropy { logits, targets, eps, probs, count } => {
                let v = self.value(*logits).last_dim();
                let scale = g[0] / T::of(*count as f64);
                let uniform = *eps / T::of(v as f64);
                let d = grad_buf(grads, *logits, probs.len());
                for (r, t) in targets.iter().enumerate() {
                    let Some(t) = *t else { continue };
                    for c in 0..v {
                        let q = if c == t { T::one() - *eps + uniform } else { uniform };
                        d[r * v + c] += scale * (probs[r * v + c] - q);
                    }
                }
            }
            Op::WeightedNegLog { x, weights, floor } => {
                let xv = self.value(*x).data();
                let d = grad_buf(grads, *x, xv.len());
                for i in 0..xv.len() {
                    if weights[i] != T::zero() && xv[i] > *floor {
                        d[i] -= g[0] * weights[i] / xv[i];
                    }
                }
            }
            &Op::Sum(x) => {
                let len = self.value(x).len();
                let d = grad_buf(grads, x, len);
                d.iter_mut().for_each(|d| *d += g[0]);
            }
            &Op::Mean(x) => {
                let len = self.value(x).len();
                let s = g[0] / T::of(len as f64);
                let d = grad_buf(grads, x, len);
                d.iter_mut().for_each(|d| *d += s);
            }
        }
    }
}

fn permute_0213<T: Float>(src: &[T], dims: [usize; 4]) -> Vec<T> {
    let [a, b, c, d] = dims;
    let mut out = vec![T::zero(); src.len()];
    for i in 0..a {
        for j in 0..b {
            for k in 0..c {
                let s = ((i * b + j) * c + k) * d;
                let t = ((i * c + k) * b + j) * d;
                out[t..t + d].copy_from_slice(&src[s..s + d]);
            }
        }
    }
    out
}
