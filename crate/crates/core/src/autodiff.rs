//! Tape-based reverse-mode automatic differentiation.
//!
//! Every primitive executed through a [`Tape`] appends a node holding its
//! output value and whatever it needs for the backward pass. [`Tape::backward`]
//! walks the nodes in exact reverse execution order, accumulating gradients
//! into the inputs of each op.
//!
//! ```
//! use fgn_core::autodiff::Tape;
//! use fgn_core::tensor::Tensor;
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.param(Tensor::scalar(3.0));
//! let y = tape.mul(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), 6.0);
//! ```
//!
//! A tape is single-use: a second `backward` without [`Tape::clear`] is an
//! error. Tapes are not shared between threads; concurrent training runs each
//! own their tape.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{axis_blocks, broadcast_map, broadcast_shape, inverse_perm, resolve_axis, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Relu(Var),
    Gelu(Var),
    Softmax { x: Var, axis: usize },
    PrefixSoftmax { x: Var, axis: usize, max: Vec<T>, norm: Vec<T> },
    LayerNorm { x: Var, gain: Var, offset: Var, xhat: Vec<T>, rstd: Vec<T> },
    Conv1d { x: Var, w: Var, bias: Option<Var>, pad_left: usize },
    Dropout { x: Var, mask: Vec<T> },
    Reshape(Var),
    Permute { x: Var, perm: Vec<usize> },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Sum(Var),
    Mean(Var),
    SumAxis { x: Var, axis: usize },
    MovingAverage { x: Var, window: usize },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    visited: Vec<Var>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    /// Non-leaf nodes in the order the backward pass processed them.
    pub fn visit_order(&self) -> &[Var] {
        &self.visited
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), consumed: false }
    }

    /// Drops all recorded nodes so the tape can be reused.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.consumed = false;
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that does not receive a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let plan = MatMulPlan::new(&sa, &sb)?;
        let mut out = vec![T::zero(); plan.out_len()];
        {
            let (da, db) = (self.value(a).data(), self.value(b).data());
            for (o, (&ia, &ib)) in plan.map_a.iter().zip(&plan.map_b).enumerate() {
                gemm_nn(
                    &da[ia * plan.m * plan.n..(ia + 1) * plan.m * plan.n],
                    &db[ib * plan.n * plan.p..(ib + 1) * plan.n * plan.p],
                    &mut out[o * plan.m * plan.p..(o + 1) * plan.m * plan.p],
                    plan.m,
                    plan.n,
                    plan.p,
                );
            }
        }
        let value = Tensor::new(plan.out_shape.clone(), out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    fn broadcast_binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out_shape = broadcast_shape(sa, sb).ok_or_else(|| Error::shapes(name, sa, sb))?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let data = if sa == sb {
            da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let ma = broadcast_map(sa, &out_shape);
            let mb = broadcast_map(sb, &out_shape);
            ma.iter().zip(&mb).map(|(&i, &j)| f(da[i], db[j])).collect()
        };
        Tensor::new(out_shape, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.broadcast_binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.broadcast_binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise (Hadamard) product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.broadcast_binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, k: T) -> Var {
        let value = self.value(x).map(|v| v * k);
        let rg = self.rg(&[x]);
        self.push(value, Op::Scale(x, k), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let rg = self.rg(&[x]);
        self.push(value, Op::Sigmoid(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| gelu(v).0);
        let rg = self.rg(&[x]);
        self.push(value, Op::Gelu(x), rg)
    }

    pub fn softmax(&mut self, x: Var, axis: isize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let axis = resolve_axis(axis, shape.len(), "softmax")?;
        let (outer, n, inner) = axis_blocks(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * n * inner + j * inner + i;
                let mut max = T::neg_infinity();
                for j in 0..n {
                    max = max.max(src[at(j)]);
                }
                let mut sum = T::zero();
                for j in 0..n {
                    let e = (src[at(j)] - max).exp();
                    out[at(j)] = e;
                    sum += e;
                }
                for j in 0..n {
                    out[at(j)] /= sum;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Softmax { x, axis }, rg))
    }

    /// Softmax whose normaliser at position `l` runs over positions `0..=l`
    /// only, so output `l` never depends on later positions.
    pub fn prefix_softmax(&mut self, x: Var, axis: isize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let axis = resolve_axis(axis, shape.len(), "prefix_softmax")?;
        let (outer, n, inner) = axis_blocks(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        let mut maxes = vec![T::zero(); src.len()];
        let mut norms = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * n * inner + j * inner + i;
                let mut max = T::neg_infinity();
                for l in 0..n {
                    max = max.max(src[at(l)]);
                    let mut z = T::zero();
                    for j in 0..=l {
                        z += (src[at(j)] - max).exp();
                    }
                    out[at(l)] = (src[at(l)] - max).exp() / z;
                    maxes[at(l)] = max;
                    norms[at(l)] = z;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::PrefixSoftmax { x, axis, max: maxes, norm: norms }, rg))
    }

    /// Layer normalisation over the last axis, population variance,
    /// epsilon inside the square root.
    pub fn layer_norm(&mut self, x: Var, gain: Var, offset: Var, eps: T) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().expect("tensors have rank >= 1");
        for p in [gain, offset] {
            if self.shape(p) != [n] {
                return Err(Error::shapes("layer_norm", &shape, self.shape(p)));
            }
        }
        let src = self.value(x).data();
        let (g, b) = (self.value(gain).data(), self.value(offset).data());
        let rows = src.len() / n;
        let nt = T::of(n as f64);
        let mut xhat = vec![T::zero(); src.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); src.len()];
        for r in 0..rows {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nt;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nt;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(&[x, gain, offset]);
        Ok(self.push(value, Op::LayerNorm { x, gain, offset, xhat, rstd }, rg))
    }

    /// 1-D convolution over the length axis of `x: [B, L, C_in]` with kernel
    /// `w: [k, C_in, C_out]`. Output length equals input length: causal mode
    /// pads `k - 1` zeros on the left, otherwise `(k - 1) / 2` on each side
    /// (odd `k` only).
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Option<Var>, causal: bool) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 3 || sx[2] != sw[1] {
            return Err(Error::shapes("conv1d", &sx, &sw));
        }
        let (bsz, len, cin) = (sx[0], sx[1], sx[2]);
        let (k, cout) = (sw[0], sw[2]);
        if !causal && k % 2 == 0 {
            return Err(Error::Config(format!("non-causal conv1d needs odd kernel width, got {k}")));
        }
        let pad_left = if causal { k - 1 } else { (k - 1) / 2 };
        let padded = len + k - 1;
        if k > padded {
            return Err(Error::dim("conv1d", format!("kernel {k} wider than padded input {padded}")));
        }
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(Error::shapes("conv1d", &[cout], self.shape(b)));
            }
        }
        let (dx, dw) = (self.value(x).data(), self.value(w).data());
        let mut out = vec![T::zero(); bsz * len * cout];
        if let Some(b) = bias {
            let db = self.value(b).data();
            for row in out.chunks_mut(cout) {
                row.copy_from_slice(db);
            }
        }
        for bi in 0..bsz {
            for t in 0..len {
                let orow = &mut out[(bi * len + t) * cout..(bi * len + t + 1) * cout];
                for j in 0..k {
                    let s = t + j;
                    if s < pad_left || s - pad_left >= len {
                        continue;
                    }
                    let xs = &dx[(bi * len + s - pad_left) * cin..(bi * len + s - pad_left + 1) * cin];
                    for (c, &xv) in xs.iter().enumerate() {
                        let wrow = &dw[(j * cin + c) * cout..(j * cin + c + 1) * cout];
                        for (o, &wv) in orow.iter_mut().zip(wrow) {
                            *o += xv * wv;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![bsz, len, cout], out)?;
        let mut ins = vec![x, w];
        ins.extend(bias);
        let rg = self.rg(&ins);
        Ok(self.push(value, Op::Conv1d { x, w, bias, pad_left }, rg))
    }

    /// Inverted dropout. Identity when `rate == 0` or when not training.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let mask: Vec<T> =
            (0..self.value(x).len()).map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep }).collect();
        let src = self.value(x);
        let data = src.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Dropout { x, mask }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let value = self.value(x).permute(perm)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Permute { x, perm: perm.to_vec() }, rg))
    }

    /// Swaps two axes.
    pub fn transpose(&mut self, x: Var, a: isize, b: isize) -> Result<Var> {
        let rank = self.shape(x).len();
        let (a, b) = (resolve_axis(a, rank, "transpose")?, resolve_axis(b, rank, "transpose")?);
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(a, b);
        self.permute(x, &perm)
    }

    pub fn concat(&mut self, parts: &[Var], axis: isize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::Usage("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        let axis = resolve_axis(axis, base.len(), "concat")?;
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::shapes("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_blocks(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let ext = self.shape(p)[axis];
                let d = self.value(p).data();
                out.extend_from_slice(&d[o * ext * inner..(o + 1) * ext * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::Concat { parts: parts.to_vec(), axis }, rg))
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: isize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let axis = resolve_axis(axis, shape.len(), "slice")?;
        if len == 0 || start + len > shape[axis] {
            return Err(Error::dim("slice", format!("range {start}..{} outside extent {}", start + len, shape[axis])));
        }
        let (outer, n, inner) = axis_blocks(&shape, axis);
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&d[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        let value = Tensor::new(oshape, out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Slice { x, axis, start }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().copied().sum::<T>() / T::of(v.len() as f64);
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Sums over `axis`, removing it (a rank-1 input reduces to shape `[1]`).
    pub fn sum_axis(&mut self, x: Var, axis: isize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let axis = resolve_axis(axis, shape.len(), "sum_axis")?;
        let (outer, n, inner) = axis_blocks(&shape, axis);
        let d = self.value(x).data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    out[o * inner + i] += d[(o * n + j) * inner + i];
                }
            }
        }
        let mut oshape = shape;
        oshape.remove(axis);
        if oshape.is_empty() {
            oshape.push(1);
        }
        let value = Tensor::new(oshape, out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SumAxis { x, axis }, rg))
    }

    /// Centred moving average over axis 1 of `x: [B, L, C]` with an odd
    /// `window`, replicating edge values. Evaluated as
    /// `x[t] + mean_u(x[t+u] - x[t])`, so constant runs are reproduced exactly.
    pub fn moving_average(&mut self, x: Var, window: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || window == 0 || window.is_multiple_of(2) {
            return Err(Error::dim("moving_average", format!("window {window} on shape {s:?}")));
        }
        let (b, len, c) = (s[0], s[1], s[2]);
        let half = (window / 2) as isize;
        let inv = T::of(1.0 / window as f64);
        let d = self.value(x).data();
        let mut out = vec![T::zero(); d.len()];
        for bi in 0..b {
            for t in 0..len {
                for ch in 0..c {
                    let at = |p: usize| (bi * len + p) * c + ch;
                    let centre = d[at(t)];
                    let mut acc = T::zero();
                    for u in -half..=half {
                        let p = (t as isize + u).clamp(0, len as isize - 1) as usize;
                        acc += d[at(p)] - centre;
                    }
                    out[at(t)] = centre + acc * inv;
                }
            }
        }
        let value = Tensor::new(s, out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::MovingAverage { x, window }, rg))
    }

    /// Reverse pass from a scalar `loss`. Consumes the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::Usage("backward called twice on the same tape".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!("backward needs a scalar loss, got shape {:?}", self.shape(loss))));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut visited = Vec::new();
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            visited.push(Var(i));
            self.backprop(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                g.filter(|_| n.requires_grad)
                    .map(|g| Tensor::new(n.value.shape().to_vec(), g).expect("grad shape matches value"))
            })
            .collect();
        Ok(Gradients { grads, visited })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.len()]);
        f(slot);
    }

    fn reduce_into(&self, grads: &mut [Option<Vec<T>>], v: Var, out_shape: &[usize], g: &[T], sign: T) {
        let in_shape = self.shape(v).to_vec();
        self.accumulate(grads, v, |acc| {
            if in_shape == out_shape {
                for (a, &x) in acc.iter_mut().zip(g) {
                    *a += sign * x;
                }
            } else {
                for (&j, &x) in broadcast_map(&in_shape, out_shape).iter().zip(g) {
                    acc[j] += sign * x;
                }
            }
        });
    }

    fn backprop(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let out_shape = node.value.shape();
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let plan = MatMulPlan::new(self.shape(a), self.shape(b))?;
                let (da, db) = (self.value(a).data(), self.value(b).data());
                let (m, n, p) = (plan.m, plan.n, plan.p);
                self.accumulate(grads, a, |ga| {
                    for (o, &ia) in plan.map_a.iter().enumerate() {
                        let ib = plan.map_b[o];
                        gemm_nt(
                            &g[o * m * p..(o + 1) * m * p],
                            &db[ib * n * p..(ib + 1) * n * p],
                            &mut ga[ia * m * n..(ia + 1) * m * n],
                            m,
                            p,
                            n,
                        );
                    }
                });
                self.accumulate(grads, b, |gb| {
                    for (o, &ib) in plan.map_b.iter().enumerate() {
                        let ia = plan.map_a[o];
                        gemm_tn(
                            &da[ia * m * n..(ia + 1) * m * n],
                            &g[o * m * p..(o + 1) * m * p],
                            &mut gb[ib * n * p..(ib + 1) * n * p],
                            m,
                            n,
                            p,
                        );
                    }
                });
            }
            &Op::Add(a, b) => {
                self.reduce_into(grads, a, out_shape, g, T::one());
                self.reduce_into(grads, b, out_shape, g, T::one());
            }
            &Op::Sub(a, b) => {
                self.reduce_into(grads, a, out_shape, g, T::one());
                self.reduce_into(grads, b, out_shape, g, -T::one());
            }
            &Op::Mul(a, b) => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                let ma = broadcast_map(sa, out_shape);
                let mb = broadcast_map(sb, out_shape);
                let (da, db) = (self.value(a).data(), self.value(b).data());
                self.accumulate(grads, a, |ga| {
                    for k in 0..g.len() {
                        ga[ma[k]] += g[k] * db[mb[k]];
                    }
                });
                self.accumulate(grads, b, |gb| {
                    for k in 0..g.len() {
                        gb[mb[k]] += g[k] * da[ma[k]];
                    }
                });
            }
            &Op::Scale(x, k) => self.accumulate(grads, x, |gx| {
                for (a, &v) in gx.iter_mut().zip(g) {
                    *a += v * k;
                }
            }),
            &Op::Sigmoid(x) => self.accumulate(grads, x, |gx| {
                for j in 0..g.len() {
                    gx[j] += g[j] * y[j] * (T::one() - y[j]);
                }
            }),
            &Op::Relu(x) => {
                let xs = self.value(x).data();
                self.accumulate(grads, x, |gx| {
                    for j in 0..g.len() {
                        if xs[j] > T::zero() {
                            gx[j] += g[j];
                        }
                    }
                })
            }
            &Op::Gelu(x) => {
                let xs = self.value(x).data();
                self.accumulate(grads, x, |gx| {
                    for j in 0..g.len() {
                        gx[j] += g[j] * gelu(xs[j]).1;
                    }
                })
            }
            &Op::Softmax { x, axis } => {
                let (outer, n, inner) = axis_blocks(out_shape, axis);
                self.accumulate(grads, x, |gx| {
                    for o in 0..outer {
                        for ii in 0..inner {
                            let at = |j: usize| o * n * inner + j * inner + ii;
                            let dot: T = (0..n).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..n {
                                gx[at(j)] += y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                })
            }
            Op::PrefixSoftmax { x, axis, max, norm } => {
                let (outer, n, inner) = axis_blocks(out_shape, *axis);
                // gx_j = g_j y_j - y_j N_j R_j with
                // R_j = sum_{l >= j} g_l y_l / N_l * exp(M_j - M_l), built
                // from the end; the prefix max M is nondecreasing so every
                // rescale factor is <= 1.
                self.accumulate(grads, *x, |gx| {
                    for o in 0..outer {
                        for ii in 0..inner {
                            let at = |j: usize| o * n * inner + j * inner + ii;
                            let mut r = T::zero();
                            for j in (0..n).rev() {
                                if j + 1 < n {
                                    r *= (max[at(j)] - max[at(j + 1)]).exp();
                                }
                                let gy = g[at(j)] * y[at(j)];
                                r += gy / norm[at(j)];
                                gx[at(j)] += gy - y[at(j)] * norm[at(j)] * r;
                            }
                        }
                    }
                })
            }
            Op::LayerNorm { x, gain, offset, xhat, rstd } => {
                let n = *out_shape.last().expect("rank >= 1");
                let rows = g.len() / n;
                let gain_v = self.value(*gain).data();
                let nt = T::of(n as f64);
                self.accumulate(grads, *x, |gx| {
                    for r in 0..rows {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..n {
                            let dh = g[r * n + j] * gain_v[j];
                            s1 += dh;
                            s2 += dh * xhat[r * n + j];
                        }
                        for j in 0..n {
                            let dh = g[r * n + j] * gain_v[j];
                            gx[r * n + j] += rstd[r] / nt * (nt * dh - s1 - xhat[r * n + j] * s2);
                        }
                    }
                });
                self.accumulate(grads, *gain, |gg| {
                    for r in 0..rows {
                        for j in 0..n {
                            gg[j] += g[r * n + j] * xhat[r * n + j];
                        }
                    }
                });
                self.accumulate(grads, *offset, |gb| {
                    for r in 0..rows {
                        for j in 0..n {
                            gb[j] += g[r * n + j];
                        }
                    }
                });
            }
            &Op::Conv1d { x, w, bias, pad_left } => {
                let sx = self.shape(x);
                let sw = self.shape(w);
                let (bsz, len, cin) = (sx[0], sx[1], sx[2]);
                let (k, cout) = (sw[0], sw[2]);
                let (dx, dw) = (self.value(x).data(), self.value(w).data());
                let taps = |f: &mut dyn FnMut(usize, usize, usize, usize)| {
                    for bi in 0..bsz {
                        for t in 0..len {
                            for j in 0..k {
                                let s = t + j;
                                if s < pad_left || s - pad_left >= len {
                                    continue;
                                }
                                f(bi, t, j, s - pad_left);
                            }
                        }
                    }
                };
                self.accumulate(grads, x, |gx| {
                    taps(&mut |bi, t, j, src| {
                        let grow = &g[(bi * len + t) * cout..(bi * len + t + 1) * cout];
                        for c in 0..cin {
                            let wrow = &dw[(j * cin + c) * cout..(j * cin + c + 1) * cout];
                            let dot: T = grow.iter().zip(wrow).map(|(&a, &b)| a * b).sum();
                            gx[(bi * len + src) * cin + c] += dot;
                        }
                    })
                });
                self.accumulate(grads, w, |gw| {
                    taps(&mut |bi, t, j, src| {
                        let grow = &g[(bi * len + t) * cout..(bi * len + t + 1) * cout];
                        for c in 0..cin {
                            let xv = dx[(bi * len + src) * cin + c];
                            let wrow = &mut gw[(j * cin + c) * cout..(j * cin + c + 1) * cout];
                            for (a, &gv) in wrow.iter_mut().zip(grow) {
                                *a += xv * gv;
                            }
                        }
                    })
                });
                if let Some(b) = bias {
                    self.accumulate(grads, b, |gb| {
                        for row in g.chunks(cout) {
                            for (a, &v) in gb.iter_mut().zip(row) {
                                *a += v;
                            }
                        }
                    });
                }
            }
            Op::Dropout { x, mask } => self.accumulate(grads, *x, |gx| {
                for j in 0..g.len() {
                    gx[j] += g[j] * mask[j];
                }
            }),
            &Op::Reshape(x) => self.accumulate(grads, x, |gx| {
                for (a, &v) in gx.iter_mut().zip(g) {
                    *a += v;
                }
            }),
            Op::Permute { x, perm } => {
                let gt = Tensor::new(out_shape.to_vec(), g.to_vec())?;
                let back = gt.permute(&inverse_perm(perm))?;
                self.accumulate(grads, *x, |gx| {
                    for (a, &v) in gx.iter_mut().zip(back.data()) {
                        *a += v;
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = axis_blocks(out_shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let ext = self.shape(p)[*axis];
                    self.accumulate(grads, p, |gp| {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + ext) * inner];
                            for (a, &v) in gp[o * ext * inner..(o + 1) * ext * inner].iter_mut().zip(src) {
                                *a += v;
                            }
                        }
                    });
                    offset += ext;
                }
            }
            &Op::Slice { x, axis, start } => {
                let n = self.shape(x)[axis];
                let (outer, len, inner) = axis_blocks(out_shape, axis);
                self.accumulate(grads, x, |gx| {
                    for o in 0..outer {
                        let dst = &mut gx[(o * n + start) * inner..(o * n + start + len) * inner];
                        for (a, &v) in dst.iter_mut().zip(&g[o * len * inner..(o + 1) * len * inner]) {
                            *a += v;
                        }
                    }
                })
            }
            &Op::Sum(x) => self.accumulate(grads, x, |gx| {
                for a in gx.iter_mut() {
                    *a += g[0];
                }
            }),
            &Op::Mean(x) => {
                let k = g[0] / T::of(self.value(x).len() as f64);
                self.accumulate(grads, x, |gx| {
                    for a in gx.iter_mut() {
                        *a += k;
                    }
                })
            }
            &Op::SumAxis { x, axis } => {
                let (outer, n, inner) = axis_blocks(self.shape(x), axis);
                self.accumulate(grads, x, |gx| {
                    for o in 0..outer {
                        for j in 0..n {
                            for ii in 0..inner {
                                gx[(o * n + j) * inner + ii] += g[o * inner + ii];
                            }
                        }
                    }
                })
            }
            &Op::MovingAverage { x, window } => {
                let s = self.shape(x);
                let (b, len, c) = (s[0], s[1], s[2]);
                let half = (window / 2) as isize;
                let inv = T::of(1.0 / window as f64);
                self.accumulate(grads, x, |gx| {
                    for bi in 0..b {
                        for t in 0..len {
                            for ch in 0..c {
                                let gt = g[(bi * len + t) * c + ch] * inv;
                                for u in -half..=half {
                                    let p = (t as isize + u).clamp(0, len as isize - 1) as usize;
                                    gx[(bi * len + p) * c + ch] += gt;
                                }
                            }
                        }
                    }
                })
            }
        }
        Ok(())
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// GELU value and derivative (tanh approximation).
fn gelu<T: Scalar>(x: T) -> (T, T) {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let a = T::of(0.044715);
    let half = T::of(0.5);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let val = half * x * (T::one() + t);
    let d = half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x * x);
    (val, d)
}

struct MatMulPlan {
    m: usize,
    n: usize,
    p: usize,
    out_shape: Vec<usize>,
    map_a: Vec<usize>,
    map_b: Vec<usize>,
}

impl MatMulPlan {
    fn new(sa: &[usize], sb: &[usize]) -> Result<Self> {
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::shapes("matmul", sa, sb));
        }
        let (m, n) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (n2, p) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if n != n2 {
            return Err(Error::shapes("matmul", sa, sb));
        }
        let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let batch = broadcast_shape(ba, bb).ok_or_else(|| Error::shapes("matmul", sa, sb))?;
        let map_a = broadcast_map(ba, &batch);
        let map_b = broadcast_map(bb, &batch);
        let mut out_shape = batch;
        out_shape.extend([m, p]);
        Ok(MatMulPlan { m, n, p, out_shape, map_a, map_b })
    }

    fn out_len(&self) -> usize {
        self.map_a.len() * self.m * self.p
    }
}

/// c[m,p] += a[m,n] · b[n,p]
fn gemm_nn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, n: usize, p: usize) {
    T::gemm(m, n, p, a, (n, 1), b, (p, 1), c, (p, 1));
}

/// c[m,n] += g[m,p] · b[n,p]ᵀ
fn gemm_nt<T: Scalar>(g: &[T], b: &[T], c: &mut [T], m: usize, p: usize, n: usize) {
    T::gemm(m, p, n, g, (p, 1), b, (1, p), c, (n, 1));
}

/// c[n,p] += a[m,n]ᵀ · g[m,p]
fn gemm_tn<T: Scalar>(a: &[T], g: &[T], c: &mut [T], m: usize, n: usize, p: usize) {
    T::gemm(n, m, p, a, (1, n), g, (p, 1), c, (p, 1));
}
