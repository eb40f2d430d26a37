use super::{dot, softmax_row};
use crate::tensor::Scalar;

/// Shapes of a batched windowed attention call: `windows` independent windows,
/// `tq` queries and `tk` keys per window, `c = heads * d_k` channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionGeom {
    pub windows: usize,
    pub tq: usize,
    pub tk: usize,
    pub channels: usize,
    pub heads: usize,
    /// Number of distinct masks; window `n` uses mask `n % mask_windows`.
    pub mask_windows: usize,
}

impl AttentionGeom {
    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    pub fn probs_len(&self) -> usize {
        self.windows * self.heads * self.tq * self.tk
    }
}

/// Relative-bias lookup: `table[index[i * tk + j] * heads + h]`.
pub struct BiasRef<'a, T> {
    pub table: &'a [T],
    pub index: &'a [usize],
}

/// `o = softmax(q k^T * scale + bias + mask) v` per window and head.
/// Stores the attention weights in `probs` (`[windows, heads, tq, tk]`).
pub fn attention_forward<T: Scalar>(
    g: &AttentionGeom,
    q: &[T],
    k: &[T],
    v: &[T],
    bias: Option<BiasRef<'_, T>>,
    mask: Option<&[T]>,
    scale: T,
    o: &mut [T],
    probs: &mut [T],
) {
    let (tq, tk, c, nh) = (g.tq, g.tk, g.channels, g.heads);
    let dk = g.head_dim();
    let mut logits = vec![T::zero(); tk];
    o.fill(T::zero());
    for w in 0..g.windows {
        let qw = &q[w * tq * c..][..tq * c];
        let kw = &k[w * tk * c..][..tk * c];
        let vw = &v[w * tk * c..][..tk * c];
        let mw = mask.map(|m| &m[(w % g.mask_windows) * tq * tk..][..tq * tk]);
        for h in 0..nh {
            for i in 0..tq {
                let qi = &qw[i * c + h * dk..][..dk];
                for (j, l) in logits.iter_mut().enumerate() {
                    let mut s = dot(qi, &kw[j * c + h * dk..][..dk]) * scale;
                    if let Some(b) = &bias {
                        s += b.table[b.index[i * tk + j] * nh + h];
                    }
                    if let Some(m) = mw {
                        s += m[i * tk + j];
                    }
                    *l = s;
                }
                let p = &mut probs[((w * nh + h) * tq + i) * tk..][..tk];
                softmax_row(&logits, p);
                let oi = &mut o[(w * tq + i) * c + h * dk..][..dk];
                for (j, &pij) in p.iter().enumerate() {
                    if pij == T::zero() {
                        continue;
                    }
                    let vj = &vw[j * c + h * dk..][..dk];
                    for (ov, &vv) in oi.iter_mut().zip(vj) {
                        *ov += pij * vv;
                    }
                }
            }
        }
    }
}

/// Gradients of [`attention_forward`]. All outputs are accumulated.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<T: Scalar>(
    g: &AttentionGeom,
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    go: &[T],
    bias_index: Option<&[usize]>,
    scale: T,
    mut gq: Option<&mut [T]>,
    mut gk: Option<&mut [T]>,
    mut gv: Option<&mut [T]>,
    mut gtable: Option<&mut [T]>,
) {
    let (tq, tk, c, nh) = (g.tq, g.tk, g.channels, g.heads);
    let dk = g.head_dim();
    let mut gs = vec![T::zero(); tk];
    for w in 0..g.windows {
        let qw = &q[w * tq * c..][..tq * c];
        let kw = &k[w * tk * c..][..tk * c];
        let vw = &v[w * tk * c..][..tk * c];
        for h in 0..nh {
            for i in 0..tq {
                let p = &probs[((w * nh + h) * tq + i) * tk..][..tk];
                let goi = &go[(w * tq + i) * c + h * dk..][..dk];
                // d/dp then softmax backward
                let mut sum_pg = T::zero();
                for j in 0..tk {
                    let gp = if p[j] == T::zero() {
                        T::zero()
                    } else {
                        dot(goi, &vw[j * c + h * dk..][..dk])
                    };
                    gs[j] = gp;
                    sum_pg += p[j] * gp;
                }
                for j in 0..tk {
                    gs[j] = p[j] * (gs[j] - sum_pg);
                }
                if let Some(gv) = gv.as_deref_mut() {
                    for j in 0..tk {
                        if p[j] == T::zero() {
                            continue;
                        }
                        let gvj = &mut gv[(w * tk + j) * c + h * dk..][..dk];
                        for (a, &b) in gvj.iter_mut().zip(goi) {
                            *a += p[j] * b;
                        }
                    }
                }
                if let (Some(gt), Some(idx)) = (gtable.as_deref_mut(), bias_index) {
                    for j in 0..tk {
                        gt[idx[i * tk + j] * nh + h] += gs[j];
                    }
                }
                if let Some(gq) = gq.as_deref_mut() {
                    let gqi = &mut gq[(w * tq + i) * c + h * dk..][..dk];
                    for j in 0..tk {
                        let a = gs[j] * scale;
                        if a == T::zero() {
                            continue;
                        }
                        let kj = &kw[j * c + h * dk..][..dk];
                        for (x, &y) in gqi.iter_mut().zip(kj) {
                            *x += a * y;
                        }
                    }
                }
                if let Some(gk) = gk.as_deref_mut() {
                    let qi = &qw[i * c + h * dk..][..dk];
                    for j in 0..tk {
                        let a = gs[j] * scale;
                        if a == T::zero() {
                            continue;
                        }
                        let gkj = &mut gk[(w * tk + j) * c + h * dk..][..dk];
                        for (x, &y) in gkj.iter_mut().zip(qi) {
                            *x += a * y;
                        }
                    }
                }
            }
        }
    }
}
