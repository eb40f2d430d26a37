use std::sync::Arc;

use super::{Graph, Op, Var, GATHER_ZERO};
use crate::error::{arg_err, shape_err, Result};
use crate::tensor::kernels::{self, AttentionGeom, BiasRef, ConvGeom};
use crate::tensor::{Scalar, Tensor};

impl<T: Scalar> Graph<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        let ng = self.needs_grad(x);
        self.push(out, Op::Scale(x, s), ng)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let ng = self.needs_grad(x);
        self.push(out, Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1);
        let s = self.sum(x);
        self.scale(s, T::one() / T::lit(n as f64))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        let ng = self.needs_grad(x);
        Ok(self.push(out, Op::Reshape(x), ng))
    }

    /// Grouped, bias-free 3-D convolution. `w` is `[Cout, Cin/groups, k, k, k]`.
    pub fn conv3d(
        &mut self,
        x: Var,
        w: Var,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), stride, padding, groups)?;
        let mut out = Tensor::zeros(geom.output_shape().to_vec());
        kernels::conv3d_forward(&geom, self.value(x).data(), self.value(w).data(), out.data_mut());
        let ng = self.any_grad(&[x, w]);
        Ok(self.push(out, Op::Conv3d { x, w, geom }, ng))
    }

    /// One filter per channel; `w` is `[C, 1, k, k, k]`.
    pub fn depthwise_conv3d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let c = *self
            .shape(x)
            .get(1)
            .ok_or_else(|| shape_err("depthwise_conv3d", "input must be 5-D"))?;
        let filters = self.shape(w).first().copied().unwrap_or(0);
        if filters != c || self.shape(w).get(1) != Some(&1) {
            return Err(shape_err(
                "depthwise_conv3d",
                format!("{} channels but weight is {:?}", c, self.shape(w)),
            ));
        }
        self.conv3d(x, w, stride, padding, c)
    }

    /// Affine map over the last axis: `x[..., din] * w[din, dout] + b[dout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || xs.is_empty() || *xs.last().unwrap() != ws[0] {
            return Err(shape_err("linear", format!("x {:?} with w {:?}", xs, ws)));
        }
        let (din, dout) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(shape_err(
                    "linear",
                    format!("bias {:?} for dout {}", self.shape(b), dout),
                ));
            }
        }
        let rows = self.value(x).numel() / din.max(1);
        let mut oshape = xs.clone();
        *oshape.last_mut().unwrap() = dout;
        let mut out = Tensor::zeros(oshape);
        {
            let o = out.data_mut();
            if let Some(b) = b {
                let bv = self.value(b).data();
                for r in o.chunks_exact_mut(dout) {
                    r.copy_from_slice(bv);
                }
            }
            kernels::matmul(self.value(x).data(), self.value(w).data(), rows, din, dout, o);
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.any_grad(&deps);
        Ok(self.push(
            out,
            Op::Linear {
                x,
                w,
                b,
                rows,
                din,
                dout,
            },
            ng,
        ))
    }

    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let n = *xv
            .shape()
            .last()
            .ok_or_else(|| shape_err("softmax", "scalar input"))?;
        let mut out = Tensor::zeros(xv.shape().to_vec());
        if n > 0 {
            kernels::softmax_rows(xv.data(), n, out.data_mut());
        }
        let ng = self.needs_grad(x);
        Ok(self.push(out, Op::Softmax(x), ng))
    }

    /// Per-token normalization across the last (channel) axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let c = *xv.shape().last().ok_or_else(|| shape_err("layer_norm", "scalar input"))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err(
                "layer_norm",
                format!(
                    "C={} but gamma {:?}, beta {:?}",
                    c,
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        let rows = xv.numel() / c.max(1);
        let mut out = Tensor::zeros(xv.shape().to_vec());
        let mut mean = vec![T::zero(); rows];
        let mut rstd = vec![T::zero(); rows];
        kernels::layer_norm_forward(
            xv.data(),
            c,
            self.value(gamma).data(),
            self.value(beta).data(),
            T::lit(eps),
            out.data_mut(),
            &mut mean,
            &mut rstd,
        );
        let ng = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            },
            ng,
        ))
    }

    /// Group normalization of a channels-first tensor `[B, C, ...]`.
    pub fn group_norm(
        &mut self,
        x: Var,
        groups: usize,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(shape_err("group_norm", format!("input {:?}", xs)));
        }
        let (b, c) = (xs[0], xs[1]);
        if groups == 0 || c % groups != 0 {
            return Err(arg_err(
                "group_norm",
                format!("{} channels not divisible by {} groups", c, groups),
            ));
        }
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(shape_err("group_norm", "gamma/beta must be [C]"));
        }
        let s: usize = xs[2..].iter().product();
        let mut out = Tensor::zeros(xs);
        let mut mean = vec![T::zero(); b * groups];
        let mut rstd = vec![T::zero(); b * groups];
        kernels::group_norm_forward(
            self.value(x).data(),
            b,
            c,
            s,
            groups,
            self.value(gamma).data(),
            self.value(beta).data(),
            T::lit(eps),
            out.data_mut(),
            &mut mean,
            &mut rstd,
        );
        let ng = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                mean,
                rstd,
            },
            ng,
        ))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * kernels::sigmoid(v));
        let ng = self.needs_grad(x);
        self.push(out, Op::Silu(x), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let ng = self.needs_grad(x);
        self.push(out, Op::Relu(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(kernels::sigmoid);
        let ng = self.needs_grad(x);
        self.push(out, Op::Sigmoid(x), ng)
    }

    /// Trilinear upsampling of `[B, C, D, H, W]` by an integer factor,
    /// half-pixel centers (align-corners = false).
    pub fn upsample_trilinear(&mut self, x: Var, scale: usize) -> Result<Var> {
        if scale == 0 {
            return Err(arg_err("upsample", "scale must be >= 1"));
        }
        let xv = self.value(x);
        let [d, h, w] = xv.spatial()?;
        let planes = xv.shape()[0] * xv.shape()[1];
        let mut out = Tensor::zeros(vec![
            xv.shape()[0],
            xv.shape()[1],
            d * scale,
            h * scale,
            w * scale,
        ]);
        kernels::trilinear_forward(xv.data(), planes, [d, h, w], scale, out.data_mut());
        let ng = self.needs_grad(x);
        Ok(self.push(out, Op::Upsample { x, scale }, ng))
    }

    /// Mean over all voxels: `[B, C, D, H, W] -> [B, C]`.
    pub fn global_avg_pool3d(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        xv.spatial()?;
        let (b, c) = (xv.shape()[0], xv.shape()[1]);
        let s = xv.numel() / (b * c).max(1);
        let inv = T::one() / T::lit(s as f64);
        let data = xv
            .data()
            .chunks_exact(s)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::new(vec![b, c], data)?;
        let ng = self.needs_grad(x);
        Ok(self.push(out, Op::AvgPool(x), ng))
    }

    /// `out[i] = x[index[i]]`, or zero where `index[i] == GATHER_ZERO`.
    /// Layout changes (permutes, rolls, padding, crops, window partitions)
    /// are all expressed through this op.
    pub fn gather(&mut self, x: Var, index: Arc<[usize]>, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != index.len() {
            return Err(shape_err(
                "gather",
                format!("index has {} entries for shape {:?}", index.len(), shape),
            ));
        }
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(n);
        for &i in index.iter() {
            if i == GATHER_ZERO {
                data.push(T::zero());
            } else if i < xv.len() {
                data.push(xv[i]);
            } else {
                return Err(shape_err("gather", format!("index {} out of range {}", i, xv.len())));
            }
        }
        let out = Tensor::new(shape.to_vec(), data)?;
        let ng = self.needs_grad(x);
        Ok(self.push(out, Op::Gather { x, index }, ng))
    }

    /// Concatenation along axis 1 of two tensors that agree on every other axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sa.len() != sb.len() || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(shape_err("concat", format!("{:?} with {:?}", sa, sb)));
        }
        let inner: usize = sa[2..].iter().product();
        let (ca, cb) = (sa[1] * inner, sb[1] * inner);
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(va.len() + vb.len());
        for n in 0..sa[0] {
            data.extend_from_slice(&va[n * ca..][..ca]);
            data.extend_from_slice(&vb[n * cb..][..cb]);
        }
        let mut shape = sa.clone();
        shape[1] = sa[1] + sb[1];
        let out = Tensor::new(shape, data)?;
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Concat { a, b }, ng))
    }

    /// Channel-wise gating: `x[B, C, ...] * s[B, C]`.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() < 2 || self.shape(s) != &xs[..2] {
            return Err(shape_err(
                "scale_channels",
                format!("x {:?} with gates {:?}", xs, self.shape(s)),
            ));
        }
        let inner: usize = xs[2..].iter().product();
        let sv = self.value(s).data();
        let data = self
            .value(x)
            .data()
            .chunks_exact(inner.max(1))
            .zip(sv)
            .flat_map(|(p, &g)| p.iter().map(move |&v| v * g))
            .collect();
        let out = Tensor::new(xs.to_vec(), data)?;
        let ng = self.any_grad(&[x, s]);
        Ok(self.push(out, Op::ScaleChannels { x, s }, ng))
    }

    /// Multiplies each sample (leading axis) by a constant factor.
    pub fn scale_samples(&mut self, x: Var, factors: Vec<T>) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().first() != Some(&factors.len()) {
            return Err(shape_err(
                "scale_samples",
                format!("{} factors for {:?}", factors.len(), xv.shape()),
            ));
        }
        let per = xv.numel() / factors.len().max(1);
        let data = xv
            .data()
            .chunks_exact(per.max(1))
            .zip(&factors)
            .flat_map(|(p, &f)| p.iter().map(move |&v| v * f))
            .collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        let ng = self.needs_grad(x);
        Ok(self.push(out, Op::ScaleSamples { x, factors }, ng))
    }

    /// Multi-head attention inside independent windows.
    ///
    /// `q` is `[N, Tq, C]`, `k` and `v` are `[N, Tk, C]`. `bias` is a relative
    /// position table `[R, heads]` with a `Tq * Tk` row index. `mask` is
    /// `[M, Tq, Tk]` of additive `0 / -inf` entries, window `n` using mask `n % M`.
    pub fn window_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        bias: Option<(Var, Arc<[usize]>)>,
        mask: Option<&Tensor<T>>,
    ) -> Result<Var> {
        let (qs, ks, vs) = (self.shape(q), self.shape(k), self.shape(v));
        if qs.len() != 3 || ks.len() != 3 || ks != vs || qs[0] != ks[0] || qs[2] != ks[2] {
            return Err(shape_err(
                "window_attention",
                format!("q {:?}, k {:?}, v {:?}", qs, ks, vs),
            ));
        }
        let (n, tq, c, tk) = (qs[0], qs[1], qs[2], ks[1]);
        if heads == 0 || c % heads != 0 {
            return Err(arg_err(
                "window_attention",
                format!("{} channels not divisible by {} heads", c, heads),
            ));
        }
        let mut mask_windows = 1;
        if let Some(m) = mask {
            let ms = m.shape();
            if ms.len() != 3 || ms[1] != tq || ms[2] != tk || ms[0] == 0 || n % ms[0] != 0 {
                return Err(shape_err(
                    "window_attention",
                    format!("mask {:?} for {} windows of {}x{}", ms, n, tq, tk),
                ));
            }
            mask_windows = ms[0];
        }
        if let Some((table, index)) = &bias {
            let ts = self.shape(*table);
            if ts.len() != 2 || ts[1] != heads || index.len() != tq * tk {
                return Err(shape_err(
                    "window_attention",
                    format!("bias table {:?} / index {} for {} heads", ts, index.len(), heads),
                ));
            }
            if index.iter().any(|&i| i >= ts[0]) {
                return Err(shape_err("window_attention", "bias index out of range"));
            }
        }
        let geom = AttentionGeom {
            windows: n,
            tq,
            tk,
            channels: c,
            heads,
            mask_windows,
        };
        let scale = T::one() / T::lit((c / heads) as f64).sqrt();
        let mut out = Tensor::zeros(vec![n, tq, c]);
        let mut probs = vec![T::zero(); geom.probs_len()];
        let bias_ref = bias.as_ref().map(|(t, idx)| BiasRef {
            table: self.value(*t).data(),
            index: idx,
        });
        kernels::attention_forward(
            &geom,
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            bias_ref,
            mask.map(|m| m.data()),
            scale,
            out.data_mut(),
            &mut probs,
        );
        let mut deps = vec![q, k, v];
        deps.extend(bias.as_ref().map(|b| b.0));
        let ng = self.any_grad(&deps);
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                bias,
                geom,
                scale,
                probs,
            },
            ng,
        ))
    }

    /// Soft Dice loss on channel-softmax probabilities of `[B, K, ...]` logits,
    /// averaged over all K classes.
    pub fn dice_loss(&mut self, logits: Var, labels: Arc<[u8]>, eps: f64) -> Result<Var> {
        let (probs, k, s) = self.class_probs("dice_loss", logits, &labels)?;
        let b = self.shape(logits)[0];
        let (inter, psum, tsum) = dice_sums(&probs, &labels, b, k, s);
        let eps_t = T::lit(eps);
        let two = T::lit(2.0);
        let mut loss = T::zero();
        for c in 0..k {
            loss += T::one() - (two * inter[c] + eps_t) / (psum[c] + tsum[c] + eps_t);
        }
        loss /= T::lit(k as f64);
        let ng = self.needs_grad(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Dice {
                logits,
                labels,
                eps: eps_t,
                probs,
            },
            ng,
        ))
    }

    /// Mean voxelwise negative log-likelihood of the true class.
    pub fn cross_entropy(&mut self, logits: Var, labels: Arc<[u8]>) -> Result<Var> {
        let (probs, k, s) = self.class_probs("cross_entropy", logits, &labels)?;
        let b = self.shape(logits)[0];
        let lv = self.value(logits).data();
        let mut loss = T::zero();
        for n in 0..b {
            for i in 0..s {
                let mut m = T::neg_infinity();
                for c in 0..k {
                    m = m.max(lv[(n * k + c) * s + i]);
                }
                let mut z = T::zero();
                for c in 0..k {
                    z += (lv[(n * k + c) * s + i] - m).exp();
                }
                let y = labels[n * s + i] as usize;
                loss += m + z.ln() - lv[(n * k + y) * s + i];
            }
        }
        loss /= T::lit((b * s) as f64);
        let ng = self.needs_grad(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            },
            ng,
        ))
    }

    fn class_probs(
        &self,
        op: &'static str,
        logits: Var,
        labels: &[u8],
    ) -> Result<(Vec<T>, usize, usize)> {
        let ls = self.shape(logits);
        if ls.len() < 2 {
            return Err(shape_err(op, format!("logits {:?}", ls)));
        }
        let (b, k) = (ls[0], ls[1]);
        let s: usize = ls[2..].iter().product();
        if labels.len() != b * s {
            return Err(shape_err(
                op,
                format!("{} labels for logits {:?}", labels.len(), ls),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= k) {
            return Err(arg_err(op, format!("label {} out of range [0, {})", bad, k)));
        }
        Ok((channel_softmax(self.value(logits).data(), b, k, s), k, s))
    }
}

/// Softmax across axis 1 of a `[B, K, S]` buffer.
pub(crate) fn channel_softmax<T: Scalar>(x: &[T], b: usize, k: usize, s: usize) -> Vec<T> {
    let mut p = vec![T::zero(); x.len()];
    let mut row = vec![T::zero(); k];
    let mut out = vec![T::zero(); k];
    for n in 0..b {
        for i in 0..s {
            for c in 0..k {
                row[c] = x[(n * k + c) * s + i];
            }
            kernels::softmax_row(&row, &mut out);
            for c in 0..k {
                p[(n * k + c) * s + i] = out[c];
            }
        }
    }
    p
}

/// Per-class `sum(p * t)`, `sum(p)`, `sum(t)` over batch and voxels.
pub(crate) fn dice_sums<T: Scalar>(
    probs: &[T],
    labels: &[u8],
    b: usize,
    k: usize,
    s: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut inter = vec![T::zero(); k];
    let mut psum = vec![T::zero(); k];
    let mut tsum = vec![T::zero(); k];
    for n in 0..b {
        for c in 0..k {
            let p = &probs[(n * k + c) * s..][..s];
            let l = &labels[n * s..][..s];
            for i in 0..s {
                psum[c] += p[i];
                if l[i] as usize == c {
                    inter[c] += p[i];
                    tsum[c] += T::one();
                }
            }
        }
    }
    (inter, psum, tsum)
}
