//! Tensor operations: elementwise arithmetic, batched matmul, reductions,
//! softmax/layernorm, and shape surgery. Every op that sees a tracked
//! input records a backward closure capturing the forward values it needs.

use super::shape::{
    axis_split, broadcast_apply, broadcast_shapes, broadcast_strides, numel, reduce_grad_to,
    strides_for,
};
use super::{BackwardFn, Tensor};
use crate::error::{Error, Result};

pub const LAYERNORM_EPS: f64 = 1e-5;

impl Tensor {
    // ── elementwise binary ──────────────────────────────────────────

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_elementwise(other, "add", |x, y| x + y, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_elementwise(other, "sub", |x, y| x - y, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary_elementwise(other, "mul", |x, y| x * y, |_, y| y, |x, _| x)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        if other.data().iter().any(|&y| y == 0.0) {
            return Err(Error::Degenerate("division by zero".into()));
        }
        self.binary_elementwise(
            other,
            "div",
            |x, y| x / y,
            |_, y| 1.0 / y,
            |x, y| -x / (y * y),
        )
    }

    fn binary_elementwise(
        &self,
        other: &Tensor,
        op: &'static str,
        f: fn(f64, f64) -> f64,
        partial_a: fn(f64, f64) -> f64,
        partial_b: fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let a_shape = self.shape();
        let b_shape = other.shape();
        let out_shape = broadcast_shapes(op, &a_shape, &b_shape)?;
        let a_data = self.to_vec();
        let b_data = other.to_vec();
        let out = broadcast_apply(&a_data, &a_shape, &b_data, &b_shape, &out_shape, f);
        let (ta, tb) = (self.requires_grad(), other.requires_grad());
        if !ta && !tb {
            return Ok(Tensor::result(out, out_shape, Vec::new(), None));
        }
        let mut parents = Vec::new();
        if ta {
            parents.push(self.clone());
        }
        if tb {
            parents.push(other.clone());
        }
        let (ah, bh) = (self.clone(), other.clone());
        let osh = out_shape.clone();
        let bw: BackwardFn = Box::new(move |g| {
            if ta {
                let mut partial =
                    broadcast_apply(&a_data, &a_shape, &b_data, &b_shape, &osh, partial_a);
                for (p, gi) in partial.iter_mut().zip(g) {
                    *p *= gi;
                }
                ah.accumulate_grad(&reduce_grad_to(&partial, &osh, &a_shape));
            }
            if tb {
                let mut partial =
                    broadcast_apply(&a_data, &a_shape, &b_data, &b_shape, &osh, partial_b);
                for (p, gi) in partial.iter_mut().zip(g) {
                    *p *= gi;
                }
                bh.accumulate_grad(&reduce_grad_to(&partial, &osh, &b_shape));
            }
        });
        Ok(Tensor::result(out, out_shape, parents, Some(bw)))
    }

    // ── elementwise unary ───────────────────────────────────────────

    /// ReLU with subgradient 0 at the kink.
    pub fn relu(&self) -> Tensor {
        self.unary_elementwise(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// Numerically stable ln(1 + e^x).
    pub fn softplus(&self) -> Tensor {
        self.unary_elementwise(
            |x| {
                if x > 0.0 {
                    x + (-x).exp().ln_1p()
                } else {
                    x.exp().ln_1p()
                }
            },
            |x, _| 1.0 / (1.0 + (-x).exp()),
        )
    }

    pub fn neg(&self) -> Tensor {
        self.unary_elementwise(|x| -x, |_, _| -1.0)
    }

    pub fn sin(&self) -> Tensor {
        self.unary_elementwise(f64::sin, |x, _| x.cos())
    }

    pub fn cos(&self) -> Tensor {
        self.unary_elementwise(f64::cos, |x, _| -x.sin())
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.unary_elementwise_captured(move |x| c * x, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary_elementwise_captured(move |x| x + c, move |_, _| 1.0)
    }

    pub fn exp(&self) -> Result<Tensor> {
        let out = self.unary_elementwise(f64::exp, |_, y| y);
        if out.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("exp overflow".into()));
        }
        Ok(out)
    }

    pub fn log(&self) -> Result<Tensor> {
        if self.data().iter().any(|&x| x <= 0.0) {
            return Err(Error::Degenerate("log of non-positive value".into()));
        }
        Ok(self.unary_elementwise(f64::ln, |x, _| 1.0 / x))
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        if self.data().iter().any(|&x| x <= 0.0) {
            return Err(Error::Degenerate("sqrt of non-positive value".into()));
        }
        Ok(self.unary_elementwise(f64::sqrt, |_, y| 0.5 / y))
    }

    fn unary_elementwise(&self, f: fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Tensor {
        self.unary_elementwise_captured(f, df)
    }

    fn unary_elementwise_captured(
        &self,
        f: impl Fn(f64) -> f64 + 'static,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let x = self.to_vec();
        let out: Vec<f64> = x.iter().map(|&v| f(v)).collect();
        let shape = self.shape();
        if !self.requires_grad() {
            return Tensor::result(out, shape, Vec::new(), None);
        }
        let y = out.clone();
        let h = self.clone();
        let bw: BackwardFn = Box::new(move |g| {
            let contrib: Vec<f64> = g
                .iter()
                .enumerate()
                .map(|(i, &gi)| gi * df(x[i], y[i]))
                .collect();
            h.accumulate_grad(&contrib);
        });
        Tensor::result(out, shape, vec![self.clone()], Some(bw))
    }

    // ── matmul ──────────────────────────────────────────────────────

    /// Batched matrix product `[.., p, q] x [.., q, r] -> [.., p, r]`.
    /// Leading batch extents broadcast.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let a_shape = self.shape();
        let b_shape = other.shape();
        if a_shape.len() < 2 || b_shape.len() < 2 {
            return Err(Error::InvalidShape {
                op: "matmul",
                msg: format!("operands must be rank >= 2, got {a_shape:?} x {b_shape:?}"),
            });
        }
        let (p, q) = (a_shape[a_shape.len() - 2], a_shape[a_shape.len() - 1]);
        let (qb, r) = (b_shape[b_shape.len() - 2], b_shape[b_shape.len() - 1]);
        if q != qb {
            return Err(Error::ShapeMismatch {
                op: "matmul inner extents",
                lhs: a_shape.clone(),
                rhs: b_shape.clone(),
            });
        }
        let a_batch = &a_shape[..a_shape.len() - 2];
        let b_batch = &b_shape[..b_shape.len() - 2];
        let batch = broadcast_shapes("matmul batch", a_batch, b_batch)?;
        let nbatch = numel(&batch);
        let mut out_shape = batch.clone();
        out_shape.extend_from_slice(&[p, r]);

        let a_data = self.to_vec();
        let b_data = other.to_vec();
        // block offsets for each broadcast batch index
        let a_offsets = batch_offsets(a_batch, &batch, p * q);
        let b_offsets = batch_offsets(b_batch, &batch, q * r);
        let mut out = vec![0.0; nbatch * p * r];
        for blk in 0..nbatch {
            mm_nn(
                &a_data[a_offsets[blk]..a_offsets[blk] + p * q],
                &b_data[b_offsets[blk]..b_offsets[blk] + q * r],
                &mut out[blk * p * r..(blk + 1) * p * r],
                p,
                q,
                r,
            );
        }

        let (ta, tb) = (self.requires_grad(), other.requires_grad());
        if !ta && !tb {
            return Ok(Tensor::result(out, out_shape, Vec::new(), None));
        }
        let mut parents = Vec::new();
        if ta {
            parents.push(self.clone());
        }
        if tb {
            parents.push(other.clone());
        }
        let (ah, bh) = (self.clone(), other.clone());
        let (an, bn) = (a_data.len(), b_data.len());
        let bw: BackwardFn = Box::new(move |g| {
            if ta {
                let mut da = vec![0.0; an];
                for blk in 0..nbatch {
                    // dA = dC x B^T
                    mm_nt(
                        &g[blk * p * r..(blk + 1) * p * r],
                        &b_data[b_offsets[blk]..b_offsets[blk] + q * r],
                        &mut da[a_offsets[blk]..a_offsets[blk] + p * q],
                        p,
                        r,
                        q,
                    );
                }
                ah.accumulate_grad(&da);
            }
            if tb {
                let mut db = vec![0.0; bn];
                for blk in 0..nbatch {
                    // dB = A^T x dC
                    mm_tn(
                        &a_data[a_offsets[blk]..a_offsets[blk] + p * q],
                        &g[blk * p * r..(blk + 1) * p * r],
                        &mut db[b_offsets[blk]..b_offsets[blk] + q * r],
                        p,
                        q,
                        r,
                    );
                }
                bh.accumulate_grad(&db);
            }
        });
        Ok(Tensor::result(out, out_shape, parents, Some(bw)))
    }

    /// Affine map `x W + b` over the trailing axis.
    pub fn linear(&self, w: &Tensor, b: &Tensor) -> Result<Tensor> {
        let x_shape = self.shape();
        let w_shape = w.shape();
        let b_shape = b.shape();
        if w_shape.len() != 2
            || b_shape.len() != 1
            || x_shape.last() != Some(&w_shape[0])
            || b_shape[0] != w_shape[1]
        {
            return Err(Error::ShapeMismatch {
                op: "linear widths",
                lhs: x_shape,
                rhs: w_shape,
            });
        }
        if x_shape.len() == 1 {
            return self.reshape(&[1, x_shape[0]])?.matmul(w)?.add(b)?.reshape(&[w_shape[1]]);
        }
        self.matmul(w)?.add(b)
    }

    // ── reductions ──────────────────────────────────────────────────

    pub fn sum(&self, axis: Option<usize>) -> Result<Tensor> {
        self.reduce(axis, "sum", 1.0)
    }

    pub fn mean(&self, axis: Option<usize>) -> Result<Tensor> {
        let n = match axis {
            None => self.numel(),
            Some(ax) => {
                let s = self.shape();
                *s.get(ax).ok_or_else(|| bad_axis("mean", ax, s.len()))?
            }
        };
        if n == 0 {
            return Err(Error::InvalidArgument("mean over empty axis".into()));
        }
        self.reduce(axis, "mean", 1.0 / n as f64)
    }

    fn reduce(&self, axis: Option<usize>, op: &'static str, weight: f64) -> Result<Tensor> {
        let shape = self.shape();
        let (pre, n, post, out_shape) = reduce_dims(op, &shape, axis)?;
        let data = self.to_vec();
        let mut out = vec![0.0; pre * post];
        for o in 0..pre {
            for k in 0..n {
                let base = (o * n + k) * post;
                for t in 0..post {
                    out[o * post + t] += data[base + t];
                }
            }
        }
        if weight != 1.0 {
            for v in out.iter_mut() {
                *v *= weight;
            }
        }
        if !self.requires_grad() {
            return Ok(Tensor::result(out, out_shape, Vec::new(), None));
        }
        let h = self.clone();
        let in_len = data.len();
        let bw: BackwardFn = Box::new(move |g| {
            let mut din = vec![0.0; in_len];
            for o in 0..pre {
                for k in 0..n {
                    let base = (o * n + k) * post;
                    for t in 0..post {
                        din[base + t] = weight * g[o * post + t];
                    }
                }
            }
            h.accumulate_grad(&din);
        });
        Ok(Tensor::result(out, out_shape, vec![self.clone()], Some(bw)))
    }

    /// Maximum along `axis` (all elements when `None`). Ties break toward
    /// the lowest index; the gradient routes there.
    pub fn max(&self, axis: Option<usize>) -> Result<Tensor> {
        let shape = self.shape();
        let (pre, n, post, out_shape) = reduce_dims("max", &shape, axis)?;
        let data = self.to_vec();
        let mut out = vec![f64::NEG_INFINITY; pre * post];
        let mut winners = vec![0usize; pre * post];
        scan_max(&data, pre, n, post, &mut out, &mut winners);
        if !self.requires_grad() {
            return Ok(Tensor::result(out, out_shape, Vec::new(), None));
        }
        let h = self.clone();
        let in_len = data.len();
        let bw: BackwardFn = Box::new(move |g| {
            let mut din = vec![0.0; in_len];
            for (slot, &w) in winners.iter().enumerate() {
                din[w] += g[slot];
            }
            h.accumulate_grad(&din);
        });
        Ok(Tensor::result(out, out_shape, vec![self.clone()], Some(bw)))
    }

    /// Index of the maximum along `axis` as f64 values; not differentiable.
    pub fn argmax(&self, axis: Option<usize>) -> Result<Tensor> {
        let shape = self.shape();
        let (pre, n, post, out_shape) = reduce_dims("argmax", &shape, axis)?;
        let data = self.to_vec();
        let mut vals = vec![f64::NEG_INFINITY; pre * post];
        let mut winners = vec![0usize; pre * post];
        scan_max(&data, pre, n, post, &mut vals, &mut winners);
        let out = winners
            .iter()
            .enumerate()
            .map(|(slot, &w)| {
                let t = slot % post;
                let o = slot / post;
                ((w - o * n * post - t) / post) as f64
            })
            .collect();
        Ok(Tensor::result(out, out_shape, Vec::new(), None))
    }

    // ── softmax / layernorm ─────────────────────────────────────────

    /// Softmax along `axis`, stabilized by the slice maximum.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(bad_axis("softmax", axis, shape.len()));
        }
        let (pre, n, post) = axis_split(&shape, axis);
        let data = self.to_vec();
        let mut out = vec![0.0; data.len()];
        for o in 0..pre {
            for t in 0..post {
                let at = |k: usize| (o * n + k) * post + t;
                let mx = (0..n).fold(f64::NEG_INFINITY, |m, k| m.max(data[at(k)]));
                let mut z = 0.0;
                for k in 0..n {
                    let e = (data[at(k)] - mx).exp();
                    out[at(k)] = e;
                    z += e;
                }
                for k in 0..n {
                    out[at(k)] /= z;
                }
            }
        }
        if !self.requires_grad() {
            return Ok(Tensor::result(out, shape, Vec::new(), None));
        }
        let y = out.clone();
        let h = self.clone();
        let bw: BackwardFn = Box::new(move |g| {
            let mut din = vec![0.0; y.len()];
            for o in 0..pre {
                for t in 0..post {
                    let at = |k: usize| (o * n + k) * post + t;
                    let dot: f64 = (0..n).map(|k| g[at(k)] * y[at(k)]).sum();
                    for k in 0..n {
                        din[at(k)] = y[at(k)] * (g[at(k)] - dot);
                    }
                }
            }
            h.accumulate_grad(&din);
        });
        Ok(Tensor::result(out, shape, vec![self.clone()], Some(bw)))
    }

    /// Normalize each slice along the last axis to mean 0, variance 1
    /// (eps 1e-5 inside the square root). No learned affine here; scale
    /// and shift are separate tensors when needed.
    pub fn layernorm(&self) -> Result<Tensor> {
        let shape = self.shape();
        if shape.is_empty() {
            return Err(Error::InvalidShape {
                op: "layernorm",
                msg: "scalar input".into(),
            });
        }
        let n = *shape.last().unwrap();
        if n == 0 {
            return Err(Error::InvalidArgument("layernorm over empty axis".into()));
        }
        let rows = self.numel() / n;
        let data = self.to_vec();
        let mut out = vec![0.0; data.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &data[r * n..(r + 1) * n];
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|&x| (x - mu) * (x - mu)).sum::<f64>() / n as f64;
            let s = 1.0 / (var + LAYERNORM_EPS).sqrt();
            inv_std[r] = s;
            for k in 0..n {
                out[r * n + k] = (row[k] - mu) * s;
            }
        }
        if !self.requires_grad() {
            return Ok(Tensor::result(out, shape, Vec::new(), None));
        }
        let y = out.clone();
        let h = self.clone();
        let bw: BackwardFn = Box::new(move |g| {
            let mut din = vec![0.0; y.len()];
            for r in 0..rows {
                let gy = &g[r * n..(r + 1) * n];
                let yy = &y[r * n..(r + 1) * n];
                let mg = gy.iter().sum::<f64>() / n as f64;
                let mgy = gy.iter().zip(yy).map(|(&a, &b)| a * b).sum::<f64>() / n as f64;
                for k in 0..n {
                    din[r * n + k] = inv_std[r] * (gy[k] - mg - yy[k] * mgy);
                }
            }
            h.accumulate_grad(&din);
        });
        Ok(Tensor::result(out, shape, vec![self.clone()], Some(bw)))
    }

    // ── shape ops ───────────────────────────────────────────────────

    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor> {
        if numel(new_shape) != self.numel() {
            return Err(Error::InvalidShape {
                op: "reshape",
                msg: format!("{:?} -> {:?}", self.shape(), new_shape),
            });
        }
        let out = self.to_vec();
        if !self.requires_grad() {
            return Ok(Tensor::result(out, new_shape.to_vec(), Vec::new(), None));
        }
        let h = self.clone();
        let bw: BackwardFn = Box::new(move |g| h.accumulate_grad(g));
        Ok(Tensor::result(
            out,
            new_shape.to_vec(),
            vec![self.clone()],
            Some(bw),
        ))
    }

    /// Reorder axes; `axes` is where each output axis reads from.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let shape = self.shape();
        let rank = shape.len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::InvalidArgument(format!(
                "permute axes {axes:?} invalid for rank {rank}"
            )));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let in_strides = strides_for(&shape);
        let walk: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let data = self.to_vec();
        let total = data.len();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; rank];
        let mut src = 0usize;
        for _ in 0..total {
            out.push(data[src]);
            for d in (0..rank).rev() {
                idx[d] += 1;
                src += walk[d];
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
                src -= walk[d] * out_shape[d];
            }
        }
        if !self.requires_grad() {
            return Ok(Tensor::result(out, out_shape, Vec::new(), None));
        }
        let h = self.clone();
        let osh = out_shape.clone();
        let bw: BackwardFn = Box::new(move |g| {
            let mut din = vec![0.0; total];
            let mut idx = vec![0usize; rank];
            let mut src = 0usize;
            for &gv in g.iter() {
                din[src] += gv;
                for d in (0..rank).rev() {
                    idx[d] += 1;
                    src += walk[d];
                    if idx[d] < osh[d] {
                        break;
                    }
                    idx[d] = 0;
                    src -= walk[d] * osh[d];
                }
            }
            h.accumulate_grad(&din);
        });
        Ok(Tensor::result(out, out_shape, vec![self.clone()], Some(bw)))
    }

    /// Swap the last two axes.
    pub fn t2(&self) -> Result<Tensor> {
        let rank = self.rank();
        if rank < 2 {
            return Err(Error::InvalidShape {
                op: "t2",
                msg: "rank < 2".into(),
            });
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(&axes)
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(bad_axis("narrow", axis, shape.len()));
        }
        if len == 0 || start + len > shape[axis] {
            return Err(Error::InvalidArgument(format!(
                "narrow [{start}, {start}+{len}) out of range for extent {}",
                shape[axis]
            )));
        }
        let (pre, n, post) = axis_split(&shape, axis);
        let data = self.to_vec();
        let mut out = Vec::with_capacity(pre * len * post);
        for o in 0..pre {
            let base = (o * n + start) * post;
            out.extend_from_slice(&data[base..base + len * post]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        if !self.requires_grad() {
            return Ok(Tensor::result(out, out_shape, Vec::new(), None));
        }
        let h = self.clone();
        let in_len = data.len();
        let bw: BackwardFn = Box::new(move |g| {
            let mut din = vec![0.0; in_len];
            for o in 0..pre {
                let base = (o * n + start) * post;
                din[base..base + len * post].copy_from_slice(&g[o * len * post..(o + 1) * len * post]);
            }
            h.accumulate_grad(&din);
        });
        Ok(Tensor::result(out, out_shape, vec![self.clone()], Some(bw)))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let first = parts[0].shape();
        if axis >= first.len() {
            return Err(bad_axis("concat", axis, first.len()));
        }
        let mut total_axis = 0;
        for p in parts {
            let s = p.shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s,
                });
            }
            total_axis += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total_axis;
        let (pre, _, post) = axis_split(&out_shape, axis);
        let mut out = vec![0.0; numel(&out_shape)];
        let mut offset = 0usize;
        let mut spans = Vec::with_capacity(parts.len());
        for p in parts {
            let len = p.shape()[axis];
            let data = p.to_vec();
            for o in 0..pre {
                let dst = (o * total_axis + offset) * post;
                let src = o * len * post;
                out[dst..dst + len * post].copy_from_slice(&data[src..src + len * post]);
            }
            spans.push((offset, len));
            offset += len;
        }
        let tracked: Vec<(Tensor, usize, usize)> = parts
            .iter()
            .zip(&spans)
            .filter(|(p, _)| p.requires_grad())
            .map(|(p, &(off, len))| (p.clone(), off, len))
            .collect();
        if tracked.is_empty() {
            return Ok(Tensor::result(out, out_shape, Vec::new(), None));
        }
        let parents: Vec<Tensor> = tracked.iter().map(|(p, _, _)| p.clone()).collect();
        let bw: BackwardFn = Box::new(move |g| {
            for (p, off, len) in &tracked {
                let mut dp = vec![0.0; pre * len * post];
                for o in 0..pre {
                    let src = (o * total_axis + off) * post;
                    dp[o * len * post..(o + 1) * len * post]
                        .copy_from_slice(&g[src..src + len * post]);
                }
                p.accumulate_grad(&dp);
            }
        });
        Ok(Tensor::result(out, out_shape, parents, Some(bw)))
    }
}

fn bad_axis(op: &'static str, axis: usize, rank: usize) -> Error {
    Error::InvalidArgument(format!("{op}: axis {axis} out of range for rank {rank}"))
}

fn reduce_dims(
    op: &'static str,
    shape: &[usize],
    axis: Option<usize>,
) -> Result<(usize, usize, usize, Vec<usize>)> {
    match axis {
        None => {
            let n = numel(shape);
            if n == 0 {
                return Err(Error::InvalidArgument(format!("{op} over empty tensor")));
            }
            Ok((1, n, 1, Vec::new()))
        }
        Some(ax) => {
            if ax >= shape.len() {
                return Err(bad_axis(op, ax, shape.len()));
            }
            if shape[ax] == 0 {
                return Err(Error::InvalidArgument(format!("{op} over empty axis {ax}")));
            }
            let (pre, n, post) = axis_split(shape, ax);
            let mut out_shape = shape.to_vec();
            out_shape.remove(ax);
            Ok((pre, n, post, out_shape))
        }
    }
}

fn scan_max(
    data: &[f64],
    pre: usize,
    n: usize,
    post: usize,
    out: &mut [f64],
    winners: &mut [usize],
) {
    for o in 0..pre {
        for t in 0..post {
            let slot = o * post + t;
            for k in 0..n {
                let i = (o * n + k) * post + t;
                if data[i] > out[slot] {
                    out[slot] = data[i];
                    winners[slot] = i;
                }
            }
        }
    }
}

/// Flat element offset of each broadcast batch block.
fn batch_offsets(own_batch: &[usize], batch: &[usize], block: usize) -> Vec<usize> {
    let nbatch = numel(batch);
    let strides = broadcast_strides(own_batch, batch);
    let rank = batch.len();
    let mut offsets = Vec::with_capacity(nbatch);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..nbatch {
        offsets.push(off * block);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < batch[d] {
                break;
            }
            idx[d] = 0;
            off -= strides[d] * batch[d];
        }
    }
    offsets
}

// out[i,j] += sum_k a[i,k] b[k,j]
fn mm_nn(a: &[f64], b: &[f64], out: &mut [f64], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let arow = &a[i * q..(i + 1) * q];
        let orow = &mut out[i * r..(i + 1) * r];
        for (k, &aik) in arow.iter().enumerate() {
            let brow = &b[k * r..(k + 1) * r];
            for j in 0..r {
                orow[j] += aik * brow[j];
            }
        }
    }
}

// out[i,k] += dot(a[i,:], b[k,:]) with a: [p,n], b: [q,n]
fn mm_nt(a: &[f64], b: &[f64], out: &mut [f64], p: usize, n: usize, q: usize) {
    for i in 0..p {
        let arow = &a[i * n..(i + 1) * n];
        for k in 0..q {
            let brow = &b[k * n..(k + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += arow[j] * brow[j];
            }
            out[i * q + k] += acc;
        }
    }
}

// out[k,j] += sum_i a[i,k] b[i,j] with a: [n,p], b: [n,r]
fn mm_tn(a: &[f64], b: &[f64], out: &mut [f64], n: usize, p: usize, r: usize) {
    for i in 0..n {
        let brow = &b[i * r..(i + 1) * r];
        for k in 0..p {
            let aik = a[i * p + k];
            if aik == 0.0 {
                continue;
            }
            let orow = &mut out[k * r..(k + 1) * r];
            for j in 0..r {
                orow[j] += aik * brow[j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn t(data: &[f64], shape: &[usize]) -> Tensor {
        Tensor::from_vec(data.to_vec(), shape).unwrap()
    }

    /// Central finite differences of `f` at `x`, step 1e-6.
    fn numeric_grad(x: &Tensor, f: &dyn Fn(&Tensor) -> f64) -> Vec<f64> {
        let base = x.to_vec();
        let shape = x.shape();
        let eps = 1e-6;
        (0..base.len())
            .map(|i| {
                let mut plus = base.clone();
                plus[i] += eps;
                let mut minus = base.clone();
                minus[i] -= eps;
                (f(&t(&plus, &shape)) - f(&t(&minus, &shape))) / (2.0 * eps)
            })
            .collect()
    }

    fn assert_grad_close(analytic: &[f64], numeric: &[f64], tol: f64) {
        for (a, n) in analytic.iter().zip(numeric) {
            let denom = a.abs().max(n.abs()).max(1.0);
            assert!(
                (a - n).abs() / denom < tol,
                "gradient mismatch: analytic {a} vs numeric {n}"
            );
        }
    }

    #[test]
    fn relu_definition() {
        let x = t(&[-1.0, 0.0, 2.0], &[3]);
        assert_eq!(x.relu().to_vec(), vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn add_basic_and_mismatch() {
        let a = t(&[1.0, 2.0], &[2]);
        let b = t(&[3.0, 4.0], &[2]);
        assert_eq!(a.add(&b).unwrap().to_vec(), vec![4.0, 6.0]);
        let c = t(&[1.0, 2.0, 3.0], &[3]);
        let err = a.add(&c).unwrap_err().to_string();
        assert!(err.contains("[2]") && err.contains("[3]"), "{err}");
    }

    #[test]
    fn mul_gradient_is_other_operand() {
        let a = t(&[1.0, -2.0, 0.5], &[3]).with_grad();
        let b = t(&[3.0, 4.0, -1.5], &[3]);
        let loss = a.mul(&b).unwrap().sum(None).unwrap();
        super::super::backward(&loss).unwrap();
        assert_eq!(a.grad().unwrap(), b.to_vec());

        // and against finite differences
        let bb = b.to_vec();
        let f = move |x: &Tensor| {
            x.mul(&t(&bb, &[3])).unwrap().sum(None).unwrap().item()
        };
        let num = numeric_grad(&a, &f);
        assert_grad_close(&a.grad().unwrap(), &num, 1e-4);
    }

    #[test]
    fn matmul_identity_and_small_case() {
        let eye = t(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[3, 3]);
        let m = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0], &[3, 3]);
        assert_eq!(eye.matmul(&m).unwrap().to_vec(), m.to_vec());

        let a = t(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let ones = t(&[1.0, 1.0], &[2, 1]);
        assert_eq!(a.matmul(&ones).unwrap().to_vec(), vec![3.0, 7.0]);

        assert!(a.matmul(&t(&[1.0, 2.0, 3.0], &[3, 1])).is_err());
    }

    #[test]
    fn matmul_grad_matches_ones_times_bt() {
        let mut rng = Rng::new(5);
        let a = Tensor::uniform_fan_in(&[3, 4], 4, &mut rng).with_grad();
        let b = Tensor::uniform_fan_in(&[4, 2], 4, &mut rng);
        let loss = a.matmul(&b).unwrap().sum(None).unwrap();
        super::super::backward(&loss).unwrap();
        // d sum(AB) / dA = ones x B^T
        let bt = b.to_vec();
        let mut expect = vec![0.0; 12];
        for i in 0..3 {
            for k in 0..4 {
                expect[i * 4 + k] = bt[k * 2] + bt[k * 2 + 1];
            }
        }
        assert_grad_close(&a.grad().unwrap(), &expect, 1e-12);

        let bv = b.to_vec();
        let f = move |x: &Tensor| {
            x.matmul(&t(&bv, &[4, 2])).unwrap().sum(None).unwrap().item()
        };
        let num = numeric_grad(&a, &f);
        assert_grad_close(&a.grad().unwrap(), &num, 1e-4);
    }

    #[test]
    fn batched_matmul_broadcasts_prefix() {
        // [2,2,2] x [2,2] broadcasts the rhs over the batch
        let a = t(&[1.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 2.0], &[2, 2, 2]);
        let b = t(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), vec![2, 2, 2]);
        assert_eq!(
            c.to_vec(),
            vec![1.0, 2.0, 3.0, 4.0, 2.0, 4.0, 6.0, 8.0]
        );
    }

    #[test]
    fn reductions_examples() {
        let x = t(&[1.0, 2.0, 3.0], &[3]);
        assert_eq!(x.mean(None).unwrap().item(), 2.0);

        let y = t(&[0.0, 5.0, 5.0], &[3]);
        assert_eq!(y.argmax(None).unwrap().item(), 1.0, "ties break low");

        let z = t(&[1.0, 2.0, 3.0], &[3]).with_grad();
        let loss = z.sum(None).unwrap();
        super::super::backward(&loss).unwrap();
        assert_eq!(z.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn reduction_over_axis_removes_it() {
        let x = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let s = x.sum(Some(0)).unwrap();
        assert_eq!(s.shape(), vec![3]);
        assert_eq!(s.to_vec(), vec![5.0, 7.0, 9.0]);
        let m = x.mean(Some(1)).unwrap();
        assert_eq!(m.to_vec(), vec![2.0, 5.0]);
        assert!(x.sum(Some(2)).is_err());
    }

    #[test]
    fn max_routes_gradient_to_lowest_winner() {
        let x = t(&[3.0, 7.0, 7.0, 1.0], &[4]).with_grad();
        let loss = x.max(None).unwrap().sum(None).unwrap();
        super::super::backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn linear_zero_and_identity() {
        let x = t(&[1.0, 2.0], &[2]);
        let w0 = Tensor::zeros(&[2, 3]);
        let b = t(&[5.0, 5.0, 5.0], &[3]);
        assert_eq!(x.linear(&w0, &b).unwrap().to_vec(), vec![5.0, 5.0, 5.0]);

        let eye = t(&[1.0, 0.0, 0.0, 1.0], &[2, 2]);
        let zb = Tensor::zeros(&[2]);
        assert_eq!(x.linear(&eye, &zb).unwrap().to_vec(), vec![1.0, 2.0]);

        assert!(x.linear(&Tensor::zeros(&[3, 2]), &zb).is_err());
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = Rng::new(11);
        let x = Tensor::uniform_fan_in(&[3, 4], 4, &mut rng).with_grad();
        let w = Tensor::uniform_fan_in(&[4, 2], 4, &mut rng).with_grad();
        let b = Tensor::uniform_fan_in(&[2], 4, &mut rng).with_grad();
        let loss = x.linear(&w, &b).unwrap().relu().sum(None).unwrap();
        super::super::backward(&loss).unwrap();

        let (xv, wv, bv) = (x.to_vec(), w.to_vec(), b.to_vec());
        let fx = {
            let (wv, bv) = (wv.clone(), bv.clone());
            move |v: &Tensor| {
                v.linear(&t(&wv, &[4, 2]), &t(&bv, &[2]))
                    .unwrap()
                    .relu()
                    .sum(None)
                    .unwrap()
                    .item()
            }
        };
        assert_grad_close(&x.grad().unwrap(), &numeric_grad(&x, &fx), 1e-4);
        let fw = {
            let (xv, bv) = (xv.clone(), bv.clone());
            move |v: &Tensor| {
                t(&xv, &[3, 4])
                    .linear(v, &t(&bv, &[2]))
                    .unwrap()
                    .relu()
                    .sum(None)
                    .unwrap()
                    .item()
            }
        };
        assert_grad_close(&w.grad().unwrap(), &numeric_grad(&w, &fw), 1e-4);
        let fb = move |v: &Tensor| {
            t(&xv, &[3, 4])
                .linear(&t(&wv, &[4, 2]), v)
                .unwrap()
                .relu()
                .sum(None)
                .unwrap()
                .item()
        };
        assert_grad_close(&b.grad().unwrap(), &numeric_grad(&b, &fb), 1e-4);
    }

    #[test]
    fn softmax_examples() {
        let x = t(&[0.0, 0.0], &[2]);
        assert_eq!(x.softmax(0).unwrap().to_vec(), vec![0.5, 0.5]);

        // shift invariance
        let y = t(&[1.0, -0.5, 3.0], &[3]);
        let a = y.softmax(0).unwrap().to_vec();
        let b = y.add_scalar(17.5).softmax(0).unwrap().to_vec();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
        let total: f64 = a.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layernorm_moments_and_gradient() {
        let x = t(&[1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 2.5, 9.0], &[2, 4]).with_grad();
        let y = x.layernorm().unwrap();
        for r in 0..2 {
            let row = &y.to_vec()[r * 4..(r + 1) * 4];
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-4);
        }
        // weighted sum so the gradient is nontrivial
        let w = t(&[0.3, -1.0, 2.0, 0.7, 1.1, 0.2, -0.4, 0.9], &[2, 4]);
        let loss = y.mul(&w).unwrap().sum(None).unwrap();
        super::super::backward(&loss).unwrap();
        let wv = w.to_vec();
        let f = move |v: &Tensor| {
            v.layernorm()
                .unwrap()
                .mul(&t(&wv, &[2, 4]))
                .unwrap()
                .sum(None)
                .unwrap()
                .item()
        };
        assert_grad_close(&x.grad().unwrap(), &numeric_grad(&x, &f), 1e-4);
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        let x = t(&[0.2, -1.0, 0.7, 2.0, 1.0, 0.0], &[2, 3]).with_grad();
        let w = t(&[1.0, -2.0, 0.5, 0.3, 2.0, -0.7], &[2, 3]);
        let loss = x.softmax(1).unwrap().mul(&w).unwrap().sum(None).unwrap();
        super::super::backward(&loss).unwrap();
        let wv = w.to_vec();
        let f = move |v: &Tensor| {
            v.softmax(1)
                .unwrap()
                .mul(&t(&wv, &[2, 3]))
                .unwrap()
                .sum(None)
                .unwrap()
                .item()
        };
        assert_grad_close(&x.grad().unwrap(), &numeric_grad(&x, &f), 1e-4);
    }

    #[test]
    fn permute_narrow_concat_round_trip() {
        let x = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let xt = x.permute(&[1, 0]).unwrap();
        assert_eq!(xt.shape(), vec![3, 2]);
        assert_eq!(xt.to_vec(), vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);

        let left = x.narrow(1, 0, 1).unwrap();
        let right = x.narrow(1, 1, 2).unwrap();
        let back = Tensor::concat(&[left, right], 1).unwrap();
        assert_eq!(back.to_vec(), x.to_vec());
    }

    #[test]
    fn shape_op_gradients() {
        let x = t(&[1.0, -2.0, 3.0, 0.5, 4.0, -1.0], &[2, 3]).with_grad();
        let w = t(&[2.0, 1.0, -1.0, 0.5, 3.0, 1.5], &[3, 2]);
        let loss = x
            .permute(&[1, 0])
            .unwrap()
            .narrow(0, 1, 2)
            .unwrap()
            .reshape(&[2, 2])
            .unwrap()
            .mul(&w.narrow(0, 0, 2).unwrap().reshape(&[2, 2]).unwrap())
            .unwrap()
            .sum(None)
            .unwrap();
        super::super::backward(&loss).unwrap();
        let wv = w.to_vec();
        let f = move |v: &Tensor| {
            v.permute(&[1, 0])
                .unwrap()
                .narrow(0, 1, 2)
                .unwrap()
                .reshape(&[2, 2])
                .unwrap()
                .mul(&t(&wv, &[3, 2]).narrow(0, 0, 2).unwrap().reshape(&[2, 2]).unwrap())
                .unwrap()
                .sum(None)
                .unwrap()
                .item()
        };
        assert_grad_close(&x.grad().unwrap(), &numeric_grad(&x, &f), 1e-4);
    }

    #[test]
    fn trig_and_softplus_gradients() {
        let x = t(&[0.3, -1.2, 2.0, -0.001], &[4]).with_grad();
        let loss = x
            .sin()
            .add(&x.cos())
            .unwrap()
            .add(&x.softplus())
            .unwrap()
            .sum(None)
            .unwrap();
        super::super::backward(&loss).unwrap();
        let f = |v: &Tensor| {
            v.sin()
                .add(&v.cos())
                .unwrap()
                .add(&v.softplus())
                .unwrap()
                .sum(None)
                .unwrap()
                .item()
        };
        assert_grad_close(&x.grad().unwrap(), &numeric_grad(&x, &f), 1e-4);
    }

    #[test]
    fn composite_mlp_gradient_matches_finite_differences() {
        let mut rng = Rng::new(21);
        let x = Tensor::uniform_fan_in(&[2, 4], 4, &mut rng).with_grad();
        let w1 = Tensor::uniform_fan_in(&[4, 5], 4, &mut rng).with_grad();
        let b1 = Tensor::zeros(&[5]).with_grad();
        let w2 = Tensor::uniform_fan_in(&[5, 3], 5, &mut rng).with_grad();
        let b2 = Tensor::zeros(&[3]).with_grad();
        let fwd = |x: &Tensor, w1: &Tensor, b1: &Tensor, w2: &Tensor, b2: &Tensor| {
            x.linear(w1, b1)
                .unwrap()
                .relu()
                .linear(w2, b2)
                .unwrap()
                .softmax(1)
                .unwrap()
                .layernorm()
                .unwrap()
                .mul(&t(&[1.0, -1.0, 0.5, 2.0, 0.1, -0.3], &[2, 3]))
                .unwrap()
                .sum(None)
                .unwrap()
        };
        let loss = fwd(&x, &w1, &b1, &w2, &b2);
        super::super::backward(&loss).unwrap();
        for (p, name) in [(&x, "x"), (&w1, "w1"), (&w2, "w2"), (&b1, "b1"), (&b2, "b2")] {
            let others: Vec<Tensor> = [&x, &w1, &b1, &w2, &b2]
                .iter()
                .map(|t| t.detach())
                .collect();
            let pi = match name {
                "x" => 0,
                "w1" => 1,
                "b1" => 2,
                "w2" => 3,
                _ => 4,
            };
            let f = move |v: &Tensor| {
                let mut args: Vec<&Tensor> = others.iter().collect();
                args[pi] = v;
                fwd(args[0], args[1], args[2], args[3], args[4]).item()
            };
            assert_grad_close(&p.grad().unwrap(), &numeric_grad(p, &f), 1e-4);
        }
    }

    #[test]
    fn div_by_zero_rejected() {
        let a = t(&[1.0], &[1]);
        let b = t(&[0.0], &[1]);
        assert!(a.div(&b).is_err());
    }
}
