//! The 64-bit finite-difference suite: every differentiable op on small
//! random inputs, then the whole model on a tiny volume.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::check::{check_gradients, random_projection, random_tensor, GradCheckReport};
use crate::autograd::{Graph, Var, GATHER_ZERO};
use crate::error::Result;
use crate::model::{Model, ModelConfig};
use crate::nn::{Ctx, ParamStore};
use crate::tensor::Tensor;
use crate::train::{total_loss, LossConfig};

pub const OP_TOL: f64 = 1e-4;
pub const MODEL_TOL: f64 = 1e-3;
const OP_STEP: f64 = 1e-5;
const MODEL_STEP: f64 = 1e-4;
/// Gradient magnitudes below this are compared absolutely.
const MODEL_FLOOR: f64 = 1e-6;

fn op<F>(name: &str, inputs: &[Tensor<f64>], f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    check_gradients(
        name,
        inputs,
        |g, v| {
            let y = f(g, v)?;
            if g.value(y).numel() == 1 {
                Ok(y)
            } else {
                random_projection(g, y, 7)
            }
        },
        OP_STEP,
        None,
    )
}

/// Checks every differentiable op; tensor-valued outputs are reduced with a
/// fixed random projection.
pub fn op_suite() -> Result<Vec<GradCheckReport>> {
    let mut r = Vec::new();
    for (i, &(stride, pad, groups, cin, cout)) in
        [(1, 1, 1, 2, 3), (2, 1, 1, 3, 2), (1, 0, 2, 4, 2), (2, 1, 3, 3, 3)].iter().enumerate()
    {
        let x = random_tensor(&[2, cin, 5, 4, 3], 10 + i as u64);
        let w = random_tensor(&[cout, cin / groups, 3, 3, 3], 20 + i as u64);
        r.push(op(&format!("conv3d s{stride} p{pad} g{groups}"), &[x, w], |g, v| {
            g.conv3d(v[0], v[1], stride, pad, groups)
        })?);
    }
    r.push(op(
        "depthwise_conv3d",
        &[random_tensor(&[2, 3, 4, 4, 3], 25), random_tensor(&[3, 1, 3, 3, 3], 26)],
        |g, v| g.depthwise_conv3d(v[0], v[1], 1, 1),
    )?);
    r.push(op(
        "linear",
        &[random_tensor(&[2, 3, 4], 30), random_tensor(&[4, 5], 31), random_tensor(&[5], 32)],
        |g, v| g.linear(v[0], v[1], Some(v[2])),
    )?);
    r.push(op("softmax", &[random_tensor(&[3, 6], 41)], |g, v| g.softmax_lastdim(v[0]))?);
    r.push(op(
        "layer_norm",
        &[random_tensor(&[3, 5], 51), random_tensor(&[5], 52), random_tensor(&[5], 53)],
        |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5),
    )?);
    r.push(op(
        "group_norm",
        &[random_tensor(&[2, 4, 2, 3, 2], 61), random_tensor(&[4], 62), random_tensor(&[4], 63)],
        |g, v| g.group_norm(v[0], 2, v[1], v[2], 1e-5),
    )?);
    let x = random_tensor(&[3, 4], 70);
    r.push(op("silu", &[x.clone()], |g, v| Ok(g.silu(v[0])))?);
    r.push(op("relu", &[x.clone()], |g, v| Ok(g.relu(v[0])))?);
    r.push(op("sigmoid", &[x], |g, v| Ok(g.sigmoid(v[0])))?);
    for scale in [2, 4] {
        r.push(op(&format!("upsample x{scale}"), &[random_tensor(&[1, 2, 2, 3, 2], 81)], |g, v| {
            g.upsample_trilinear(v[0], scale)
        })?);
    }
    r.push(op("global_avg_pool3d", &[random_tensor(&[2, 3, 2, 2, 3], 91)], |g, v| {
        g.global_avg_pool3d(v[0])
    })?);
    let index: Arc<[usize]> = vec![3, GATHER_ZERO, 0, 0, 5, 1].into();
    r.push(op("gather", &[random_tensor(&[6], 92)], move |g, v| {
        g.gather(v[0], index.clone(), &[2, 3])
    })?);
    r.push(op(
        "concat_channels",
        &[random_tensor(&[2, 2, 3], 93), random_tensor(&[2, 1, 3], 94)],
        |g, v| g.concat_channels(v[0], v[1]),
    )?);
    r.push(op(
        "scale_channels",
        &[random_tensor(&[2, 3, 4], 95), random_tensor(&[2, 3], 96)],
        |g, v| g.scale_channels(v[0], v[1]),
    )?);
    r.push(op("scale_samples", &[random_tensor(&[3, 4], 97)], |g, v| {
        g.scale_samples(v[0], vec![0.0, 2.0, -1.5])
    })?);
    r.push(op("reshape", &[random_tensor(&[2, 6], 98)], |g, v| g.reshape(v[0], &[3, 4]))?);
    let (a, b) = (random_tensor(&[3, 4], 100), random_tensor(&[3, 4], 101));
    r.push(op("add", &[a.clone(), b.clone()], |g, v| g.add(v[0], v[1]))?);
    r.push(op("mul", &[a.clone(), b], |g, v| g.mul(v[0], v[1]))?);
    r.push(op("scale", &[a.clone()], |g, v| Ok(g.scale(v[0], -2.5)))?);
    r.push(op("sum", &[a.clone()], |g, v| Ok(g.sum(v[0])))?);
    r.push(op("mean", &[a], |g, v| Ok(g.mean(v[0])))?);

    let (n, t, c, heads) = (4, 5, 6, 2);
    let index: Arc<[usize]> = (0..t * t).map(|i| (i * 7) % 9).collect::<Vec<_>>().into();
    let mask = Tensor::from_fn(vec![2, t, t], |i| {
        let (m, a, b) = (i / (t * t), (i / t) % t, i % t);
        if m == 1 && ((a < 2) != (b < 2)) {
            f64::NEG_INFINITY
        } else {
            0.0
        }
    });
    r.push(op(
        "window_attention (bias, mask)",
        &[
            random_tensor(&[n, t, c], 110),
            random_tensor(&[n, t, c], 111),
            random_tensor(&[n, t, c], 112),
            random_tensor(&[9, heads], 113),
        ],
        move |g, v| g.window_attention(v[0], v[1], v[2], heads, Some((v[3], index.clone())), Some(&mask)),
    )?);
    r.push(op(
        "window_attention (cross)",
        &[random_tensor(&[2, 3, 4], 120), random_tensor(&[2, 5, 4], 121), random_tensor(&[2, 5, 4], 122)],
        |g, v| g.window_attention(v[0], v[1], v[2], 2, None, None),
    )?);

    let logits = random_tensor(&[2, 3, 2, 2, 2], 130).map(|v| 2.0 * v);
    let labels: Arc<[u8]> = (0..16).map(|i| (i * 5 % 3) as u8).collect::<Vec<_>>().into();
    let l2 = labels.clone();
    r.push(op("dice_loss", &[logits.clone()], move |g, v| g.dice_loss(v[0], l2.clone(), 1e-5))?);
    r.push(op("cross_entropy", &[logits], move |g, v| g.cross_entropy(v[0], labels.clone()))?);
    Ok(r)
}

/// `|a - n| / max(|a|, |n|, floor)`.
fn model_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(MODEL_FLOOR)
}

fn model_loss(model: &Model, params: &ParamStore<f64>, x: &Tensor<f64>, labels: &Arc<[u8]>) -> Result<f64> {
    let mut ctx = Ctx::eval(params);
    let xv = ctx.graph.constant(x.clone());
    let out = model.forward_graph(&mut ctx, xv)?;
    let l = total_loss(&mut ctx.graph, &out, labels, &LossConfig::default())?;
    Ok(ctx.graph.value(l.total).item())
}

/// Gradient of the deep-supervised loss with respect to every parameter
/// tensor of `cfg` on a random `extent^3` volume. Per tensor, the element of
/// largest analytic gradient plus `random_per_param` random elements are
/// checked; the input is checked too. Elements that fail at the default step
/// are re-measured at 1/10 and 1/100 of it, and counted in the report name.
pub fn end_to_end(cfg: &ModelConfig, extent: usize, random_per_param: usize, seed: u64) -> Result<GradCheckReport> {
    let model = Model::build(cfg)?;
    let mut params: ParamStore<f64> = model.params.cast();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::from_fn(vec![1, cfg.in_channels, extent, extent, extent], |_| rng.random_range(-1.0..1.0));
    let labels: Arc<[u8]> = (0..extent.pow(3))
        .map(|_| rng.random_range(0..cfg.num_classes) as u8)
        .collect::<Vec<_>>()
        .into();

    let (analytic, input_grad) = {
        let mut ctx = Ctx::eval(&params);
        let xv = ctx.graph.leaf(x.clone());
        let out = model.forward_graph(&mut ctx, xv)?;
        let l = total_loss(&mut ctx.graph, &out, &labels, &LossConfig::default())?;
        let grads = ctx.graph.backward(l.total)?;
        let mut per_param: Vec<Option<Tensor<f64>>> = vec![None; params.len()];
        for (id, v) in ctx.bindings() {
            per_param[id.0] = grads.get(v).cloned();
        }
        (per_param, grads.get(xv).cloned())
    };

    let mut report = GradCheckReport {
        name: format!("end-to-end {extent}^3"),
        checked: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    let mut refined = 0;
    // Central difference of the loss along one coordinate. A step that
    // straddles a ReLU kink is retried with smaller steps; a wrong gradient
    // stays wrong at every step size.
    let mut probe = |report: &mut GradCheckReport,
                     slot: usize,
                     e: usize,
                     a: f64,
                     eval: &mut dyn FnMut(f64) -> Result<f64>|
     -> Result<()> {
        let mut best = f64::INFINITY;
        let mut numeric = 0.0;
        for (i, h) in [MODEL_STEP, MODEL_STEP / 10.0, MODEL_STEP / 100.0].into_iter().enumerate() {
            let n = (eval(h)? - eval(-h)?) / (2.0 * h);
            let err = model_err(a, n);
            if err < best {
                best = err;
                numeric = n;
            }
            if best < MODEL_TOL {
                if i > 0 {
                    refined += 1;
                }
                break;
            }
        }
        report.checked += 1;
        if best >= report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(best);
            report.worst = Some((slot, e, a, numeric));
        }
        Ok(())
    };

    let ids: Vec<_> = params.ids().collect();
    for (slot, id) in ids.into_iter().enumerate() {
        let numel = params.get(id).value.numel();
        let zeros = Tensor::zeros(params.get(id).value.shape().to_vec());
        let a = analytic[slot].clone().unwrap_or(zeros);
        let top = (0..numel)
            .max_by(|&i, &j| a.data()[i].abs().total_cmp(&a.data()[j].abs()))
            .unwrap_or(0);
        let mut elems = vec![top];
        elems.extend((0..random_per_param.min(numel)).map(|_| rng.random_range(0..numel)));
        for e in elems {
            let orig = params.get(id).value.data()[e];
            let mut eval = |h: f64| {
                params.get_mut(id).value.data_mut()[e] = orig + h;
                let l = model_loss(&model, &params, &x, &labels);
                params.get_mut(id).value.data_mut()[e] = orig;
                l
            };
            probe(&mut report, slot, e, a.data()[e], &mut eval)?;
        }
    }

    // A few input voxels, through every layer.
    let gx = input_grad.unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));
    let mut xw = x.clone();
    for _ in 0..4 {
        let e = rng.random_range(0..x.numel());
        let orig = xw.data()[e];
        let mut eval = |h: f64| {
            xw.data_mut()[e] = orig + h;
            let l = model_loss(&model, &params, &xw, &labels);
            xw.data_mut()[e] = orig;
            l
        };
        probe(&mut report, usize::MAX, e, gx.data()[e], &mut eval)?;
    }
    if refined > 0 {
        report.name = format!("{} ({refined} re-measured at a smaller step)", report.name);
    }
    Ok(report)
}
