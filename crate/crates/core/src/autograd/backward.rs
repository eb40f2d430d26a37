use super::ops::dice_sums;
use super::{Graph, Op, Var, GATHER_ZERO};
use crate::error::{arg_err, Result};
use crate::tensor::kernels;
use crate::tensor::{Scalar, Tensor};

/// Gradients of a scalar with respect to every leaf that requested one.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn slot<'a, T: Scalar>(
    grads: &'a mut [Option<Tensor<T>>],
    g: &Graph<T>,
    v: Var,
) -> Option<&'a mut [T]> {
    if !g.nodes[v.0].needs_grad {
        return None;
    }
    let s = &mut grads[v.0];
    if s.is_none() {
        *s = Some(Tensor::zeros(g.nodes[v.0].value.shape().to_vec()));
    }
    s.as_mut().map(|t| t.data_mut())
}

impl<T: Scalar> Graph<T> {
    /// Reverse sweep from a scalar. Nodes are visited once each, in reverse
    /// creation order.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(arg_err(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.needs_grad(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::ones(self.shape(loss).to_vec()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[i].take() else {
                continue;
            };
            let gy = gy.data();
            let y = node.value.data();
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if let Some(g) = slot(&mut grads, self, v) {
                            add_into(g, gy);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data().to_vec(), self.value(*b).data());
                    if let Some(g) = slot(&mut grads, self, *a) {
                        for ((g, &d), &o) in g.iter_mut().zip(gy).zip(vb) {
                            *g += d * o;
                        }
                    }
                    if let Some(g) = slot(&mut grads, self, *b) {
                        for ((g, &d), &o) in g.iter_mut().zip(gy).zip(&va) {
                            *g += d * o;
                        }
                    }
                }
                Op::Scale(x, s) => {
                    if let Some(g) = slot(&mut grads, self, *x) {
                        for (g, &d) in g.iter_mut().zip(gy) {
                            *g += d * *s;
                        }
                    }
                }
                Op::Sum(x) => {
                    if let Some(g) = slot(&mut grads, self, *x) {
                        let d = gy[0];
                        for g in g.iter_mut() {
                            *g += d;
                        }
                    }
                }
                Op::Reshape(x) => {
                    if let Some(g) = slot(&mut grads, self, *x) {
                        add_into(g, gy);
                    }
                }
                Op::Conv3d { x, w, geom } => {
                    if self.needs_grad(*w) {
                        let xv = self.value(*x).data();
                        if let Some(g) = slot(&mut grads, self, *w) {
                            kernels::conv3d_backward_weight(geom, gy, xv, g);
                        }
                    }
                    if self.needs_grad(*x) {
                        let wv = self.value(*w).data();
                        if let Some(g) = slot(&mut grads, self, *x) {
                            kernels::conv3d_backward_input(geom, gy, wv, g);
                        }
                    }
                }
                Op::Linear {
                    x,
                    w,
                    b,
                    rows,
                    din,
                    dout,
                } => {
                    let (rows, din, dout) = (*rows, *din, *dout);
                    if let Some(g) = slot(&mut grads, self, *x) {
                        kernels::matmul_a_bt(gy, self.value(*w).data(), rows, dout, din, g);
                    }
                    if let Some(g) = slot(&mut grads, self, *w) {
                        kernels::matmul_at_b(self.value(*x).data(), gy, rows, din, dout, g);
                    }
                    if let Some(b) = b {
                        if let Some(g) = slot(&mut grads, self, *b) {
                            for r in gy.chunks_exact(dout) {
                                add_into(g, r);
                            }
                        }
                    }
                }
                Op::Softmax(x) => {
                    let n = *node.value.shape().last().unwrap();
                    if let Some(g) = slot(&mut grads, self, *x) {
                        for ((gr, yr), dr) in g
                            .chunks_exact_mut(n)
                            .zip(y.chunks_exact(n))
                            .zip(gy.chunks_exact(n))
                        {
                            let s: T = yr.iter().zip(dr).map(|(&a, &b)| a * b).sum();
                            for j in 0..n {
                                gr[j] += yr[j] * (dr[j] - s);
                            }
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    mean,
                    rstd,
                } => {
                    let c = *node.value.shape().last().unwrap();
                    let xv = self.value(*x).data();
                    let gv = self.value(*gamma).data();
                    // gamma, beta and x are distinct nodes; take them one at a time.
                    let mut gg = self.needs_grad(*gamma).then(|| vec![T::zero(); c]);
                    let mut gb = self.needs_grad(*beta).then(|| vec![T::zero(); c]);
                    let mut gx = self.needs_grad(*x).then(|| vec![T::zero(); xv.len()]);
                    kernels::layer_norm_backward(
                        xv,
                        gy,
                        c,
                        gv,
                        mean,
                        rstd,
                        gx.as_deref_mut(),
                        gg.as_deref_mut(),
                        gb.as_deref_mut(),
                    );
                    for (v, buf) in [(*x, gx), (*gamma, gg), (*beta, gb)] {
                        if let (Some(buf), Some(g)) = (buf, slot(&mut grads, self, v)) {
                            add_into(g, &buf);
                        }
                    }
                }
                Op::GroupNorm {
                    x,
                    gamma,
                    beta,
                    groups,
                    mean,
                    rstd,
                } => {
                    let xs = self.shape(*x);
                    let (b, c) = (xs[0], xs[1]);
                    let s: usize = xs[2..].iter().product();
                    let xv = self.value(*x).data();
                    let gv = self.value(*gamma).data();
                    let mut gg = self.needs_grad(*gamma).then(|| vec![T::zero(); c]);
                    let mut gb = self.needs_grad(*beta).then(|| vec![T::zero(); c]);
                    let mut gx = self.needs_grad(*x).then(|| vec![T::zero(); xv.len()]);
                    kernels::group_norm_backward(
                        xv,
                        gy,
                        b,
                        c,
                        s,
                        *groups,
                        gv,
                        mean,
                        rstd,
                        gx.as_deref_mut(),
                        gg.as_deref_mut(),
                        gb.as_deref_mut(),
                    );
                    for (v, buf) in [(*x, gx), (*gamma, gg), (*beta, gb)] {
                        if let (Some(buf), Some(g)) = (buf, slot(&mut grads, self, v)) {
                            add_into(g, &buf);
                        }
                    }
                }
                Op::Silu(x) => {
                    let xv = self.value(*x).data();
                    if let Some(g) = slot(&mut grads, self, *x) {
                        for ((g, &d), &v) in g.iter_mut().zip(gy).zip(xv) {
                            let s = kernels::sigmoid(v);
                            *g += d * s * (T::one() + v * (T::one() - s));
                        }
                    }
                }
                Op::Relu(x) => {
                    let xv = self.value(*x).data();
                    if let Some(g) = slot(&mut grads, self, *x) {
                        for ((g, &d), &v) in g.iter_mut().zip(gy).zip(xv) {
                            if v > T::zero() {
                                *g += d;
                            }
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    if let Some(g) = slot(&mut grads, self, *x) {
                        for ((g, &d), &s) in g.iter_mut().zip(gy).zip(y) {
                            *g += d * s * (T::one() - s);
                        }
                    }
                }
                Op::Upsample { x, scale } => {
                    let xs = self.shape(*x);
                    let planes = xs[0] * xs[1];
                    let dims = [xs[2], xs[3], xs[4]];
                    if let Some(g) = slot(&mut grads, self, *x) {
                        kernels::trilinear_backward(gy, planes, dims, *scale, g);
                    }
                }
                Op::AvgPool(x) => {
                    let n = self.value(*x).numel() / gy.len().max(1);
                    let inv = T::one() / T::lit(n as f64);
                    if let Some(g) = slot(&mut grads, self, *x) {
                        for (p, &d) in g.chunks_exact_mut(n).zip(gy) {
                            let v = d * inv;
                            for e in p.iter_mut() {
                                *e += v;
                            }
                        }
                    }
                }
                Op::Gather { x, index } => {
                    if let Some(g) = slot(&mut grads, self, *x) {
                        for (&i, &d) in index.iter().zip(gy) {
                            if i != GATHER_ZERO {
                                g[i] += d;
                            }
                        }
                    }
                }
                Op::Concat { a, b } => {
                    let sa = self.shape(*a);
                    let inner: usize = sa[2..].iter().product();
                    let ca = sa[1] * inner;
                    let cb = self.shape(*b)[1] * inner;
                    let batch = sa[0];
                    if let Some(g) = slot(&mut grads, self, *a) {
                        for n in 0..batch {
                            add_into(&mut g[n * ca..][..ca], &gy[n * (ca + cb)..][..ca]);
                        }
                    }
                    if let Some(g) = slot(&mut grads, self, *b) {
                        for n in 0..batch {
                            add_into(&mut g[n * cb..][..cb], &gy[n * (ca + cb) + ca..][..cb]);
                        }
                    }
                }
                Op::ScaleChannels { x, s } => {
                    let xv = self.value(*x).data();
                    let sv = self.value(*s).data();
                    let inner = xv.len() / sv.len().max(1);
                    if let Some(g) = slot(&mut grads, self, *x) {
                        for ((gp, dp), &gate) in g
                            .chunks_exact_mut(inner)
                            .zip(gy.chunks_exact(inner))
                            .zip(sv)
                        {
                            for (g, &d) in gp.iter_mut().zip(dp) {
                                *g += d * gate;
                            }
                        }
                    }
                    if let Some(g) = slot(&mut grads, self, *s) {
                        for ((g, dp), xp) in g
                            .iter_mut()
                            .zip(gy.chunks_exact(inner))
                            .zip(xv.chunks_exact(inner))
                        {
                            *g += kernels::dot(dp, xp);
                        }
                    }
                }
                Op::ScaleSamples { x, factors } => {
                    let per = gy.len() / factors.len().max(1);
                    if let Some(g) = slot(&mut grads, self, *x) {
                        for ((gp, dp), &f) in g
                            .chunks_exact_mut(per)
                            .zip(gy.chunks_exact(per))
                            .zip(factors)
                        {
                            for (g, &d) in gp.iter_mut().zip(dp) {
                                *g += d * f;
                            }
                        }
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    bias,
                    geom,
                    scale,
                    probs,
                } => {
                    let (qv, kv, vv) = (
                        self.value(*q).data(),
                        self.value(*k).data(),
                        self.value(*v).data(),
                    );
                    let mut bufs: Vec<Option<Vec<T>>> = [*q, *k, *v]
                        .iter()
                        .map(|&n| self.needs_grad(n).then(|| vec![T::zero(); self.value(n).numel()]))
                        .collect();
                    let mut gt = bias.as_ref().and_then(|(t, _)| {
                        self.needs_grad(*t).then(|| vec![T::zero(); self.value(*t).numel()])
                    });
                    let [gq, gk, gv] = &mut bufs[..] else { unreachable!() };
                    kernels::attention_backward(
                        geom,
                        qv,
                        kv,
                        vv,
                        probs,
                        gy,
                        bias.as_ref().map(|(_, idx)| &idx[..]),
                        *scale,
                        gq.as_deref_mut(),
                        gk.as_deref_mut(),
                        gv.as_deref_mut(),
                        gt.as_deref_mut(),
                    );
                    for (n, buf) in [*q, *k, *v].into_iter().zip(bufs) {
                        if let (Some(buf), Some(g)) = (buf, slot(&mut grads, self, n)) {
                            add_into(g, &buf);
                        }
                    }
                    if let (Some(buf), Some((t, _))) = (gt, bias) {
                        if let Some(g) = slot(&mut grads, self, *t) {
                            add_into(g, &buf);
                        }
                    }
                }
                Op::Dice {
                    logits,
                    labels,
                    eps,
                    probs,
                } => {
                    let ls = self.shape(*logits);
                    let (b, k) = (ls[0], ls[1]);
                    let s: usize = ls[2..].iter().product();
                    let (inter, psum, tsum) = dice_sums(probs, labels, b, k, s);
                    let two = T::lit(2.0);
                    let inv_k = gy[0] / T::lit(k as f64);
                    // dL/dp_c(i) = -(2 t_c(i) den_c - num_c) / den_c^2 / K
                    let mut coef_t = vec![T::zero(); k];
                    let mut coef_0 = vec![T::zero(); k];
                    for c in 0..k {
                        let den = psum[c] + tsum[c] + *eps;
                        let num = two * inter[c] + *eps;
                        coef_t[c] = -two / den * inv_k;
                        coef_0[c] = num / (den * den) * inv_k;
                    }
                    if let Some(g) = slot(&mut grads, self, *logits) {
                        softmax_channel_backward(g, probs, labels, b, k, s, |c, is_t| {
                            coef_0[c] + if is_t { coef_t[c] } else { T::zero() }
                        });
                    }
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let ls = self.shape(*logits);
                    let (b, k) = (ls[0], ls[1]);
                    let s: usize = ls[2..].iter().product();
                    let inv = gy[0] / T::lit((b * s) as f64);
                    if let Some(g) = slot(&mut grads, self, *logits) {
                        for n in 0..b {
                            for i in 0..s {
                                let y = labels[n * s + i] as usize;
                                for c in 0..k {
                                    let idx = (n * k + c) * s + i;
                                    let t = if c == y { T::one() } else { T::zero() };
                                    g[idx] += (probs[idx] - t) * inv;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn add_into<T: Scalar>(g: &mut [T], d: &[T]) {
    for (a, &b) in g.iter_mut().zip(d) {
        *a += b;
    }
}

/// Chains `dL/dp_c(i) = dp(c, is_target)` through the channel softmax.
fn softmax_channel_backward<T: Scalar>(
    g: &mut [T],
    probs: &[T],
    labels: &[u8],
    b: usize,
    k: usize,
    s: usize,
    dp: impl Fn(usize, bool) -> T,
) {
    let mut gp = vec![T::zero(); k];
    for n in 0..b {
        for i in 0..s {
            let y = labels[n * s + i] as usize;
            let mut dotp = T::zero();
            for c in 0..k {
                gp[c] = dp(c, c == y);
                dotp += gp[c] * probs[(n * k + c) * s + i];
            }
            for c in 0..k {
                let idx = (n * k + c) * s + i;
                g[idx] += probs[idx] * (gp[c] - dotp);
            }
        }
    }
}
