use std::sync::Arc;

use proptest::prelude::*;

use super::check::{check_gradients, random_projection, random_tensor};
use super::*;
use crate::Result;
use crate::tensor::kernels::ConvGeom;

const OP_TOL: f64 = 1e-4;
const H: f64 = 1e-5;

fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn assert_grad<F>(name: &str, inputs: &[Tensor<f64>], f: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let r = check_gradients(name, inputs, |g, v| {
        let y = f(g, v)?;
        if g.value(y).numel() == 1 {
            Ok(y)
        } else {
            random_projection(g, y, 7)
        }
    }, H, None)
    .unwrap();
    assert!(r.passed(OP_TOL), "{name}: {r:?}");
}

// ---- conv3d -------------------------------------------------------------

#[test]
fn conv_output_extent_128_k3_s2_p1() {
    let g = ConvGeom::new(&[1, 1, 128, 128, 128], &[1, 1, 3, 3, 3], 2, 1, 1).unwrap();
    assert_eq!(g.output, [64, 64, 64]);
}

#[test]
fn conv_identity_kernel_is_identity() {
    let c = 3;
    let x = random_tensor(&[2, c, 4, 4, 4], 1);
    let w = Tensor::from_fn(vec![c, c, 1, 1, 1], |i| if i / c == i % c { 1.0 } else { 0.0 });
    let mut g = Graph::new();
    let (xv, wv) = (g.constant(x.clone()), g.constant(w));
    let y = g.conv3d(xv, wv, 1, 0, 1).unwrap();
    assert!(g.value(y).bit_eq(&x));
}

#[test]
fn conv_all_ones_2cube_sums_inputs() {
    let data = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.5];
    let x = t64(&[1, 1, 2, 2, 2], &data);
    let mut g = Graph::new();
    let xv = g.constant(x);
    let wv = g.constant(Tensor::ones(vec![1, 1, 2, 2, 2]));
    let y = g.conv3d(xv, wv, 1, 0, 1).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 1, 1, 1]);
    assert_eq!(g.value(y).item(), data.iter().sum::<f64>());
}

#[test]
fn conv_rejects_degenerate_extent_and_channel_mismatch() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(vec![1, 2, 2, 2, 2]));
    let w = g.constant(Tensor::zeros(vec![1, 2, 3, 3, 3]));
    assert!(g.conv3d(x, w, 1, 0, 1).is_err());
    let w_bad = g.constant(Tensor::zeros(vec![1, 3, 1, 1, 1]));
    assert!(g.conv3d(x, w_bad, 1, 0, 1).is_err());
}

#[test]
fn depthwise_center_kernel_is_identity_and_separable() {
    let c = 4;
    let x = random_tensor(&[1, c, 5, 4, 3], 2);
    let w = Tensor::from_fn(vec![c, 1, 3, 3, 3], |i| if i % 27 == 13 { 1.0 } else { 0.0 });
    let mut g = Graph::new();
    let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
    let y = g.depthwise_conv3d(xv, wv, 1, 1).unwrap();
    assert!(g.value(y).bit_eq(&x));

    // channel separability
    let wr = random_tensor(&[c, 1, 3, 3, 3], 3);
    let base = {
        let mut g = Graph::new();
        let (a, b) = (g.constant(x.clone()), g.constant(wr.clone()));
        let y = g.depthwise_conv3d(a, b, 1, 1).unwrap();
        g.value(y).clone()
    };
    let mut xp = x.clone();
    for v in &mut xp.data_mut()[..60] {
        *v += 10.0;
    }
    let mut g = Graph::new();
    let (a, b) = (g.constant(xp), g.constant(wr));
    let y = g.depthwise_conv3d(a, b, 1, 1).unwrap();
    let per = 60;
    assert_ne!(&g.value(y).data()[..per], &base.data()[..per]);
    assert_eq!(&g.value(y).data()[per..], &base.data()[per..]);
}

#[test]
fn depthwise_filter_count_and_param_count() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(vec![1, 16, 4, 4, 4]));
    let w = g.constant(Tensor::zeros(vec![16, 1, 3, 3, 3]));
    assert_eq!(g.value(w).numel(), 432);
    assert!(g.depthwise_conv3d(x, w, 1, 1).is_ok());
    let w_bad = g.constant(Tensor::zeros(vec![8, 1, 3, 3, 3]));
    assert!(g.depthwise_conv3d(x, w_bad, 1, 1).is_err());
}

#[test]
fn grouped_conv_matches_block_diagonal_dense_conv_exactly() {
    let (c, groups) = (6, 3);
    let cg = c / groups;
    let x = random_tensor(&[2, c, 4, 5, 3], 4);
    let wg = random_tensor(&[c, cg, 3, 3, 3], 5);
    let wd = Tensor::from_fn(vec![c, c, 3, 3, 3], |i| {
        let (co, ci, k) = (i / (c * 27), (i / 27) % c, i % 27);
        if ci / cg == co / cg {
            wg.data()[(co * cg + ci % cg) * 27 + k]
        } else {
            0.0
        }
    });
    let mut g = Graph::new();
    let (xv, a, b) = (g.constant(x), g.constant(wg), g.constant(wd));
    let y1 = g.conv3d(xv, a, 1, 1, groups).unwrap();
    let y2 = g.conv3d(xv, b, 1, 1, 1).unwrap();
    assert!(g.value(y1).bit_eq(g.value(y2)));
}

#[test]
fn depthwise_equals_grouped_conv_with_groups_c() {
    let x = random_tensor(&[1, 5, 4, 4, 4], 6);
    let w = random_tensor(&[5, 1, 3, 3, 3], 7);
    let mut g = Graph::new();
    let (xv, wv) = (g.constant(x), g.constant(w));
    let a = g.depthwise_conv3d(xv, wv, 2, 1).unwrap();
    let b = g.conv3d(xv, wv, 2, 1, 5).unwrap();
    assert!(g.value(a).bit_eq(g.value(b)));
}

#[test]
fn conv_gradients() {
    for (stride, pad, groups, cin, cout) in [(1, 1, 1, 2, 3), (2, 1, 1, 3, 2), (1, 0, 2, 4, 2), (2, 1, 3, 3, 3)]
    {
        let x = random_tensor(&[2, cin, 5, 4, 3], 10 + stride as u64);
        let w = random_tensor(&[cout, cin / groups, 3, 3, 3], 20 + groups as u64);
        assert_grad("conv3d", &[x, w], |g, v| g.conv3d(v[0], v[1], stride, pad, groups));
    }
}

// ---- linear -------------------------------------------------------------

#[test]
fn linear_identity_and_hand_value() {
    let mut g = Graph::new();
    let x = g.constant(t64(&[1, 2], &[1.0, 2.0]));
    let w = g.constant(t64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let y = g.linear(x, w, None).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0]);
    let b = g.constant(t64(&[2], &[3.0, 4.0]));
    let y = g.linear(x, w, Some(b)).unwrap();
    assert_eq!(g.value(y).data(), &[4.0, 6.0]);
    let w_bad = g.constant(Tensor::zeros(vec![3, 2]));
    assert!(g.linear(x, w_bad, None).is_err());
}

#[test]
fn linear_gradients() {
    let x = random_tensor(&[2, 3, 4], 30);
    let w = random_tensor(&[4, 5], 31);
    let b = random_tensor(&[5], 32);
    assert_grad("linear", &[x.clone(), w.clone(), b], |g, v| g.linear(v[0], v[1], Some(v[2])));
    // sum(linear(x, w)) wrt w is the outer-product accumulation sum_rows x^T 1
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let wv = g.leaf(w);
    let y = g.linear(xv, wv, None).unwrap();
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    let gw = grads.get(wv).unwrap();
    for i in 0..4 {
        let col: f64 = x.data().chunks(4).map(|r| r[i]).sum();
        for j in 0..5 {
            assert!((gw.data()[i * 5 + j] - col).abs() < 1e-12);
        }
    }
}

// ---- softmax ------------------------------------------------------------

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(vec![1, 5], 0.3));
    let y = g.softmax_lastdim(x).unwrap();
    for &v in g.value(y).data() {
        assert!((v - 0.2f64).abs() < 1e-15);
    }
    let x = g.constant(t64(&[2], &[0.0, f64::NEG_INFINITY]));
    let y = g.softmax_lastdim(x).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 0.0]);
    let r = random_tensor(&[7, 9], 40).map(|v| v * 30.0);
    let x = g.constant(r);
    let y = g.softmax_lastdim(x).unwrap();
    for row in g.value(y).data().chunks(9) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn softmax_gradients() {
    assert_grad("softmax", &[random_tensor(&[3, 6], 41)], |g, v| g.softmax_lastdim(v[0]));
}

// ---- normalization ------------------------------------------------------

#[test]
fn layer_norm_examples() {
    let c = 6;
    let mut g = Graph::new();
    let gamma = g.constant(Tensor::ones(vec![c]));
    let beta = g.constant(Tensor::full(vec![c], 0.25));
    let x = g.constant(Tensor::full(vec![2, c], 3.0));
    let y = g.layer_norm(x, gamma, beta, 1e-5).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.25));

    let zero = g.constant(Tensor::zeros(vec![c]));
    let xr = g.constant(random_tensor(&[5, c], 50).map(|v| v * 4.0 + 1.0));
    let y = g.layer_norm(xr, gamma, zero, 1e-12).unwrap();
    for row in g.value(y).data().chunks(c) {
        let m: f64 = row.iter().sum::<f64>() / c as f64;
        let var: f64 = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / c as f64;
        assert!(m.abs() < 1e-5 && (var - 1.0).abs() < 1e-5);
    }
    let y0 = g.value(y).clone();
    let two = g.constant(Tensor::full(vec![c], 2.0));
    let one = g.constant(Tensor::full(vec![c], 1.0));
    let y2 = g.layer_norm(xr, two, one, 1e-12).unwrap();
    for (a, b) in g.value(y2).data().iter().zip(y0.data()) {
        assert_eq!(*a, 2.0 * b + 1.0);
    }
    let bad = g.constant(Tensor::ones(vec![c + 1]));
    assert!(g.layer_norm(xr, bad, beta, 1e-5).is_err());
}

#[test]
fn layer_norm_gradients() {
    let c = 5;
    assert_grad(
        "layer_norm",
        &[random_tensor(&[3, c], 51), random_tensor(&[c], 52), random_tensor(&[c], 53)],
        |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5),
    );
}

#[test]
fn group_norm_examples() {
    let (b, c) = (2, 4);
    let x = random_tensor(&[b, c, 3, 2, 2], 60).map(|v| 3.0 * v + 2.0);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let ones = g.constant(Tensor::ones(vec![c]));
    let zeros = g.constant(Tensor::zeros(vec![c]));
    // groups == C: per-channel instance normalization
    let y = g.group_norm(xv, c, ones, zeros, 1e-12).unwrap();
    for p in g.value(y).data().chunks(12) {
        let m: f64 = p.iter().sum::<f64>() / 12.0;
        let v: f64 = p.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 12.0;
        assert!(m.abs() < 1e-9 && (v - 1.0).abs() < 1e-9);
    }
    // groups == 1: one statistic over the whole sample
    let y = g.group_norm(xv, 1, ones, zeros, 1e-12).unwrap();
    for p in g.value(y).data().chunks(c * 12) {
        let m: f64 = p.iter().sum::<f64>() / p.len() as f64;
        let v: f64 = p.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / p.len() as f64;
        assert!(m.abs() < 1e-9 && (v - 1.0).abs() < 1e-9);
    }
    let cst = g.constant(Tensor::full(vec![b, c, 2, 2, 2], 7.0));
    let y = g.group_norm(cst, 2, ones, zeros, 1e-5).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    assert!(g.group_norm(xv, 3, ones, zeros, 1e-5).is_err());
}

#[test]
fn group_norm_gradients() {
    let c = 4;
    assert_grad(
        "group_norm",
        &[random_tensor(&[2, c, 2, 3, 2], 61), random_tensor(&[c], 62), random_tensor(&[c], 63)],
        |g, v| g.group_norm(v[0], 2, v[1], v[2], 1e-5),
    );
}

// ---- activations --------------------------------------------------------

#[test]
fn activation_values() {
    let mut g = Graph::new();
    let x = g.constant(t64(&[3], &[0.0, -1.0, 20.0]));
    let s = g.silu(x);
    let r = g.relu(x);
    let sg = g.sigmoid(x);
    assert_eq!(g.value(s).data()[0], 0.0);
    assert_eq!(g.value(r).data()[1], 0.0);
    assert_eq!(g.value(sg).data()[0], 0.5);
    assert!((g.value(s).data()[2] / 20.0 - 1.0).abs() < 1e-6);
}

#[test]
fn activation_gradients() {
    // keep relu inputs away from its kink
    let x = random_tensor(&[4, 5], 70).map(|v| if v.abs() < 0.05 { v + 0.2 } else { v });
    assert_grad("silu", &[x.clone()], |g, v| Ok(g.silu(v[0])));
    assert_grad("relu", &[x.clone()], |g, v| Ok(g.relu(v[0])));
    assert_grad("sigmoid", &[x], |g, v| Ok(g.sigmoid(v[0])));
}

// ---- upsampling and pooling -------------------------------------------

#[test]
fn upsample_constant_identity_and_ramp() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(vec![1, 2, 2, 3, 2], 3.5));
    let y = g.upsample_trilinear(x, 2).unwrap();
    assert_eq!(g.shape(y), &[1, 2, 4, 6, 4]);
    assert!(g.value(y).data().iter().all(|&v| v == 3.5));

    let r = random_tensor(&[1, 2, 2, 3, 2], 80);
    let x = g.constant(r.clone());
    let y = g.upsample_trilinear(x, 1).unwrap();
    assert!(g.value(y).bit_eq(&r));

    // two-voxel ramp along W; closed-form half-pixel interpolation oracle
    let (a, b) = (2.0, 5.0);
    for scale in [2usize, 3, 4] {
        let x = g.constant(t64(&[1, 1, 1, 1, 2], &[a, b]));
        let y = g.upsample_trilinear(x, scale).unwrap();
        for (i, &v) in g.value(y).data().iter().enumerate() {
            let o = i % (2 * scale);
            let src = ((o as f64 + 0.5) / scale as f64 - 0.5).clamp(0.0, 1.0);
            let want = a + (b - a) * src;
            assert!((v - want).abs() < 1e-12, "scale {scale} o {o}: {v} vs {want}");
        }
    }
}

#[test]
fn upsample_gradients() {
    for scale in [2, 3] {
        assert_grad("upsample", &[random_tensor(&[1, 2, 2, 3, 2], 81)], |g, v| {
            g.upsample_trilinear(v[0], scale)
        });
    }
}

#[test]
fn global_avg_pool_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(vec![1, 2, 2, 2, 2], 1.5));
    let y = g.global_avg_pool3d(x).unwrap();
    assert_eq!(g.value(y).data(), &[1.5, 1.5]);

    let mut one_hot = Tensor::zeros(vec![1, 1, 4, 4, 4]);
    one_hot.data_mut()[17] = 8.0;
    let x = g.constant(one_hot);
    let y = g.global_avg_pool3d(x).unwrap();
    assert_eq!(g.value(y).item(), 8.0 / 64.0);

    let r = random_tensor(&[2, 3, 3, 2, 4], 90);
    let x = g.constant(r.clone());
    let y = g.global_avg_pool3d(x).unwrap();
    for (i, &v) in g.value(y).data().iter().enumerate() {
        let flat = &r.data()[i * 24..(i + 1) * 24];
        let mut s = 0.0;
        for &e in flat {
            s += e;
        }
        assert!((v - s / 24.0).abs() < 1e-14);
    }
}

#[test]
fn pool_and_layout_gradients() {
    assert_grad("avg_pool", &[random_tensor(&[2, 3, 2, 2, 3], 91)], |g, v| {
        g.global_avg_pool3d(v[0])
    });
    let index: Arc<[usize]> = vec![3, GATHER_ZERO, 0, 0, 5, 1].into();
    assert_grad("gather", &[random_tensor(&[6], 92)], move |g, v| {
        g.gather(v[0], index.clone(), &[2, 3])
    });
    assert_grad(
        "concat",
        &[random_tensor(&[2, 2, 3], 93), random_tensor(&[2, 1, 3], 94)],
        |g, v| g.concat_channels(v[0], v[1]),
    );
    assert_grad(
        "scale_channels",
        &[random_tensor(&[2, 3, 4], 95), random_tensor(&[2, 3], 96)],
        |g, v| g.scale_channels(v[0], v[1]),
    );
    assert_grad("scale_samples", &[random_tensor(&[3, 4], 97)], |g, v| {
        g.scale_samples(v[0], vec![0.0, 2.0, -1.5])
    });
    assert_grad("reshape", &[random_tensor(&[2, 6], 98)], |g, v| g.reshape(v[0], &[3, 4]));
}

#[test]
fn elementwise_gradients() {
    let a = random_tensor(&[3, 4], 100);
    let b = random_tensor(&[3, 4], 101);
    assert_grad("add", &[a.clone(), b.clone()], |g, v| g.add(v[0], v[1]));
    assert_grad("mul", &[a.clone(), b], |g, v| g.mul(v[0], v[1]));
    assert_grad("scale", &[a.clone()], |g, v| Ok(g.scale(v[0], -2.5)));
    assert_grad("sum", &[a], |g, v| Ok(g.sum(v[0])));
}

// ---- attention ----------------------------------------------------------

#[test]
fn attention_gradients_with_bias_and_mask() {
    let (n, t, c, heads) = (4, 5, 6, 2);
    let q = random_tensor(&[n, t, c], 110);
    let k = random_tensor(&[n, t, c], 111);
    let v = random_tensor(&[n, t, c], 112);
    let table = random_tensor(&[9, heads], 113);
    let index: Arc<[usize]> = (0..t * t).map(|i| (i * 7) % 9).collect::<Vec<_>>().into();
    // window 1 of each mask pair blocks tokens {0,1} from {2,3,4}
    let mask = Tensor::from_fn(vec![2, t, t], |i| {
        let (m, a, b) = (i / (t * t), (i / t) % t, i % t);
        if m == 1 && ((a < 2) != (b < 2)) {
            f64::NEG_INFINITY
        } else {
            0.0
        }
    });
    assert_grad("window_attention", &[q, k, v, table], move |g, vs| {
        g.window_attention(vs[0], vs[1], vs[2], heads, Some((vs[3], index.clone())), Some(&mask))
    });
}

#[test]
fn cross_attention_gradients_distinct_key_count() {
    let q = random_tensor(&[2, 3, 4], 120);
    let k = random_tensor(&[2, 5, 4], 121);
    let v = random_tensor(&[2, 5, 4], 122);
    assert_grad("cross_attention", &[q, k, v], |g, vs| {
        g.window_attention(vs[0], vs[1], vs[2], 2, None, None)
    });
}

// ---- losses -------------------------------------------------------------

#[test]
fn loss_gradients() {
    let logits = random_tensor(&[2, 3, 2, 2, 2], 130).map(|v| 2.0 * v);
    let labels: Arc<[u8]> = (0..16).map(|i| (i * 5 % 3) as u8).collect::<Vec<_>>().into();
    let l2 = labels.clone();
    assert_grad("dice", &[logits.clone()], move |g, v| g.dice_loss(v[0], l2.clone(), 1e-5));
    assert_grad("cross_entropy", &[logits], move |g, v| g.cross_entropy(v[0], labels.clone()));
}

// ---- backward contract --------------------------------------------------

#[test]
fn backward_simple_cases() {
    let x = random_tensor(&[2, 3], 140);
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let s = g.sum(xv);
    let grads = g.backward(s).unwrap();
    assert!(grads.get(xv).unwrap().data().iter().all(|&v| v == 1.0));

    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let sq = g.mul(xv, xv).unwrap();
    let s = g.sum(sq);
    let grads = g.backward(s).unwrap();
    for (a, b) in grads.get(xv).unwrap().data().iter().zip(x.data()) {
        assert_eq!(*a, 2.0 * b);
    }
    assert!(g.backward(sq).is_err());
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let a = g.constant(random_tensor(&[3], 150));
    let b = g.leaf(random_tensor(&[3], 151));
    let p = g.mul(a, b).unwrap();
    let s = g.sum(p);
    let grads = g.backward(s).unwrap();
    assert!(grads.get(a).is_none());
    assert!(grads.get(b).is_some());
}

#[test]
fn f32_forward_is_deterministic() {
    let run = || {
        let mut g = Graph::<f32>::new();
        let x = g.constant(random_tensor(&[1, 3, 6, 6, 6], 160).cast());
        let w = g.constant(random_tensor(&[4, 3, 3, 3, 3], 161).cast());
        let y = g.conv3d(x, w, 2, 1, 1).unwrap();
        let y = g.upsample_trilinear(y, 2).unwrap();
        g.value(y).clone()
    };
    assert!(run().bit_eq(&run()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_shape_follows_extent_formula(
        d in 1usize..9, h in 1usize..9, w in 1usize..9,
        k in 1usize..4, s in 1usize..3, p in 0usize..2,
        cin in 1usize..4, cout in 1usize..4,
    ) {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(vec![1, cin, d, h, w]));
        let wt = g.constant(Tensor::zeros(vec![cout, cin, k, k, k]));
        let f = |n: usize| (n + 2 * p).checked_sub(k).map(|m| m / s + 1);
        match (f(d), f(h), f(w)) {
            (Some(a), Some(b), Some(c)) => {
                let y = g.conv3d(x, wt, s, p, 1).unwrap();
                prop_assert_eq!(g.shape(y), &[1, cout, a, b, c]);
            }
            _ => prop_assert!(g.conv3d(x, wt, s, p, 1).is_err()),
        }
    }

    #[test]
    fn upsample_and_pool_shapes(
        b in 1usize..3, c in 1usize..4, d in 1usize..5, h in 1usize..5, w in 1usize..5, s in 1usize..4,
    ) {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(vec![b, c, d, h, w]));
        let y = g.upsample_trilinear(x, s).unwrap();
        prop_assert_eq!(g.shape(y), &[b, c, d * s, h * s, w * s]);
        let p = g.global_avg_pool3d(y).unwrap();
        prop_assert_eq!(g.shape(p), &[b, c]);
    }

    #[test]
    fn linear_shape_broadcasts_leading_axes(
        a in 1usize..4, b in 1usize..4, din in 1usize..5, dout in 1usize..5,
    ) {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(vec![a, b, din]));
        let w = g.constant(Tensor::zeros(vec![din, dout]));
        let y = g.linear(x, w, None).unwrap();
        prop_assert_eq!(g.shape(y), &[a, b, dout]);
    }
}
