use std::sync::Arc;

use proptest::prelude::*;
use refineformer::autograd::check::{check_gradients, random_tensor};
use refineformer::harness::{RunConfig, Trainer};
use refineformer::model::SegVars;
use refineformer::nn::ParamStore;
use refineformer::train::*;
use refineformer::{Graph, Tensor};

fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

// ---- dice and cross-entropy ---------------------------------------------

#[test]
fn dice_two_voxel_two_class_by_hand() {
    // voxel 0: logits (0.3, -0.2), label 0; voxel 1: logits (0.1, 0.9), label 1
    let logits = t64(&[1, 2, 1, 1, 2], &[0.3, 0.1, -0.2, 0.9]);
    let eps = 1e-5;
    let p0 = softmax(&[0.3, -0.2]);
    let p1 = softmax(&[0.1, 0.9]);
    let c0 = 1.0 - (2.0 * p0[0] + eps) / (p0[0] + p1[0] + 1.0 + eps);
    let c1 = 1.0 - (2.0 * p1[1] + eps) / (p0[1] + p1[1] + 1.0 + eps);
    let want = 0.5 * (c0 + c1);
    let got = dice_loss(&logits, &[0, 1], eps).unwrap();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn dice_limits() {
    let labels = [0u8, 1, 2, 1, 0, 2, 2, 1];
    let onehot = |sign: f64, shift: usize| {
        Tensor::from_fn(vec![1, 3, 2, 2, 2], move |i| {
            let (c, v) = (i / 8, i % 8);
            if (labels[v] as usize + shift) % 3 == c { 40.0 * sign } else { 0.0 }
        })
    };
    assert!(dice_loss(&onehot(1.0, 0), &labels, 1e-5).unwrap() < 0.01);
    let disjoint: f64 = dice_loss(&onehot(1.0, 1), &labels, 1e-5).unwrap();
    assert!((disjoint - 1.0).abs() < 1e-5, "{disjoint}");
    assert!(cross_entropy(&onehot(1.0, 0), &labels).unwrap() < 1e-12);
}

#[test]
fn dice_rejects_out_of_range_labels() {
    let logits = Tensor::<f64>::zeros(vec![1, 2, 1, 1, 2]);
    assert!(dice_loss(&logits, &[0, 2], 1e-5).is_err());
    assert!(cross_entropy(&logits, &[0, 2]).is_err());
}

#[test]
fn cross_entropy_uniform_and_hand_values() {
    for k in [2usize, 3, 5] {
        let logits = Tensor::<f64>::full(vec![2, k, 2, 1, 2], 0.7);
        let labels: Vec<u8> = (0..8).map(|i| (i % k) as u8).collect();
        let ce = cross_entropy(&logits, &labels).unwrap();
        assert!((ce - (k as f64).ln()).abs() < 1e-12);
    }
    let logits = t64(&[1, 3, 1, 1, 1], &[1.0, 2.0, 3.0]);
    let want = -(3.0 - (1f64.exp() + 2f64.exp() + 3f64.exp()).ln());
    assert!((cross_entropy(&logits, &[2]).unwrap() - want).abs() < 1e-12);
}

#[test]
fn dice_gradient_on_two_cube() {
    let labels: Arc<[u8]> = vec![0, 1, 1, 0, 2, 2, 1, 0].into();
    let r = check_gradients(
        "dice",
        &[random_tensor(&[1, 3, 2, 2, 2], 5)],
        |g, v| g.dice_loss(v[0], labels.clone(), 1e-5),
        1e-5,
        None,
    )
    .unwrap();
    assert!(r.passed(1e-4), "{r:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn losses_are_nonnegative(seed in 0u64..1000, k in 2usize..5, scale in 0.1f64..30.0) {
        let logits = random_tensor(&[2, k, 2, 2, 1], seed).map(|v| v * scale);
        let labels: Vec<u8> = (0..8).map(|i| ((i as u64 * 7 + seed) % k as u64) as u8).collect();
        prop_assert!(dice_loss(&logits, &labels, 1e-5).unwrap() >= 0.0);
        prop_assert!(cross_entropy(&logits, &labels).unwrap() >= 0.0);
    }
}

// ---- deep supervision ---------------------------------------------------

/// Class-constant logits: identical soft predictions at every resolution.
fn constant_logits(g: &mut Graph<f64>, extent: usize) -> refineformer::Var {
    let per_class = [0.4, -1.1, 0.25];
    let n = extent.pow(3);
    g.constant(Tensor::from_fn(vec![1, 3, extent, extent, extent], |i| per_class[i / n]))
}

#[test]
fn equal_components_give_one_point_eight() {
    let labels: Arc<[u8]> = (0..64).map(|i| (i % 3) as u8).collect::<Vec<_>>().into();
    let mut g = Graph::<f64>::new();
    let out = SegVars {
        logits: constant_logits(&mut g, 4),
        aux: [constant_logits(&mut g, 1), constant_logits(&mut g, 2)],
    };
    let (_, _, main) = seg_loss(&mut g, out.logits, &labels, 1e-5).unwrap();
    let l = g.value(main).item();
    let total = total_loss(&mut g, &out, &labels, &LossConfig::default()).unwrap();
    assert!((g.value(total.total).item() - 1.8 * l).abs() < 1e-9);

    let zero = LossConfig { aux_weight: 0.0, ..LossConfig::default() };
    let total = total_loss(&mut g, &out, &labels, &zero).unwrap();
    assert_eq!(g.value(total.total).item().to_bits(), l.to_bits());
}

#[test]
fn total_loss_rejects_non_integer_aux_scale() {
    let labels: Arc<[u8]> = vec![0; 64].into();
    let mut g = Graph::<f64>::new();
    let out = SegVars {
        logits: constant_logits(&mut g, 4),
        aux: [constant_logits(&mut g, 3), constant_logits(&mut g, 2)],
    };
    assert!(total_loss(&mut g, &out, &labels, &LossConfig::default()).is_err());
}

#[test]
fn loss_config_validation_names_fields() {
    let bad = LossConfig { aux_weight: -1.0, dice_eps: 0.0 };
    let msg = bad.validate().unwrap_err().to_string();
    assert!(msg.contains("aux_weight") && msg.contains("dice_eps"), "{msg}");
}

#[test]
fn hard_dice_scores() {
    let s = dice_scores(&[0, 1, 1, 2], &[0, 1, 2, 2], 4).unwrap();
    assert_eq!(s, vec![1.0, 2.0 / 3.0, 2.0 / 3.0, 1.0]);
    let scores = t64(&[1, 2, 1, 1, 2], &[0.9, 0.1, 0.2, 0.8]);
    assert_eq!(predict_labels(&scores).unwrap(), vec![0, 1]);
}

// ---- AdamW --------------------------------------------------------------

fn scalar_store(v: f64, g: f64) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    let id = s.add("p", Tensor::scalar(v)).unwrap();
    s.get_mut(id).grad = Tensor::scalar(g);
    s
}

#[test]
fn adamw_single_step_by_hand() {
    let (p, g, lr, wd) = (0.5f64, 0.2f64, 0.01f64, 0.1f64);
    let mut store = scalar_store(p, g);
    let mut opt = AdamW::new(&store, wd);
    opt.update(&mut store, lr).unwrap();
    // m_hat = g, v_hat = g^2 after one bias-corrected step
    let m = 0.1 * g;
    let v = 0.001 * g * g;
    let (mh, vh) = (m / (1.0 - 0.9), v / (1.0 - 0.999));
    let want = p * (1.0 - lr * wd) - lr * mh / (vh.sqrt() + 1e-8);
    let got = store.iter().next().unwrap().value.item();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");

    // second step with a new gradient
    store.iter_mut().next().unwrap().grad = Tensor::scalar(-0.05);
    opt.update(&mut store, lr).unwrap();
    let m2 = 0.9 * m + 0.1 * -0.05;
    let v2 = 0.999 * v + 0.001 * 0.0025;
    let want2 = want * (1.0 - lr * wd) - lr * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
    let got2 = store.iter().next().unwrap().value.item();
    assert!((got2 - want2).abs() < 1e-12);
}

#[test]
fn adamw_zero_grad_and_decay() {
    let mut store = scalar_store(-0.75, 0.0);
    let mut opt = AdamW::new(&store, 0.0);
    for _ in 0..5 {
        opt.update(&mut store, 0.1).unwrap();
    }
    assert_eq!(store.iter().next().unwrap().value.item(), -0.75);

    let mut opt = AdamW::new(&store, 0.5);
    let mut prev = 0.75;
    for _ in 0..5 {
        opt.update(&mut store, 0.1).unwrap();
        let now = store.iter().next().unwrap().value.item().abs();
        assert!(now < prev);
        prev = now;
    }
}

#[test]
fn adamw_frozen_prefixes_are_component_wise() {
    let mut s = ParamStore::<f64>::new();
    for name in ["decoder.0.wq", "decoder.0.wkv", "decoder.1.wq", "decoder.10.wq"] {
        let id = s.add(name, Tensor::scalar(1.0)).unwrap();
        s.get_mut(id).grad = Tensor::scalar(1.0);
    }
    let mut opt = AdamW::new(&s, 0.0);
    assert_eq!(opt.freeze_prefixes(&s, &["decoder.0.wq".into(), "decoder.1".into()]), 2);
    opt.update(&mut s, 0.1).unwrap();
    let v: Vec<f64> = s.iter().map(|p| p.value.item()).collect();
    assert_eq!(v[0], 1.0);
    assert!(v[1] < 1.0);
    assert_eq!(v[2], 1.0);
    assert!(v[3] < 1.0);
}

// ---- schedule -----------------------------------------------------------

#[test]
fn schedule_endpoints() {
    let s = LrSchedule::new(2e-4, 1e-9, 5, 100);
    assert_eq!(s.lr(0), 0.0);
    assert_eq!(s.lr(5), 2e-4);
    assert!((s.lr(105) - 1e-9).abs() < 1e-18);
    assert_eq!(s.lr(400), 1e-9);
    assert!((s.lr(2) - 0.8e-4).abs() < 1e-18);
}

proptest! {
    #[test]
    fn schedule_is_nonincreasing_after_warmup(warmup in 0usize..20, t_max in 1usize..300, a in 0usize..400, d in 0usize..50) {
        let s = LrSchedule::new(2e-4, 1e-9, warmup, t_max);
        let a = warmup + a;
        prop_assert!(s.lr(a + d) <= s.lr(a));
        prop_assert!(s.lr(a) >= 1e-9 && s.lr(a) <= 2e-4);
    }
}

// ---- descent ------------------------------------------------------------

#[test]
fn adamw_descends_on_fixed_batch() {
    let mut cfg = RunConfig::default();
    cfg.model.drop_path_max = 0.0;
    cfg.task.size = 16;
    cfg.train.train_volumes = 1;
    cfg.train.val_volumes = 0;
    cfg.train.warmup_steps = 0;
    cfg.train.peak_lr = 3e-4;
    cfg.train.min_lr = 3e-4;
    cfg.train.steps = 51;
    let mut tr = Trainer::new(&cfg).unwrap();
    let losses: Vec<f64> = (0..51).map(|_| tr.step().unwrap().total_loss).collect();
    let down = losses.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(down >= 45, "{down}/50 decreasing: {losses:?}");
}
