use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refineformer::model::checkpoint::{self, CheckpointError};
use refineformer::model::*;
use refineformer::nn::ffn::{dense_mlp_param_count, mixffn_param_count};
use refineformer::nn::Ctx;
use refineformer::train::{total_loss, LossConfig};
use refineformer::{Error, Tensor};

fn input(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

#[test]
fn tiny_model_output_shapes() {
    let m = Model::build(&ModelConfig::tiny()).unwrap();
    let out = m.forward(&input(&[1, 4, 32, 32, 32], 0)).unwrap();
    assert_eq!(out.logits.shape(), &[1, 3, 32, 32, 32]);
    assert_eq!(out.aux.len(), 2);
    assert_eq!(out.aux[0].shape(), &[1, 3, 8, 8, 8]);
    assert_eq!(out.aux[1].shape(), &[1, 3, 16, 16, 16]);
    assert!(out.logits.data().iter().all(|v| v.is_finite()));

    let out = m.forward(&input(&[2, 4, 16, 32, 48], 1)).unwrap();
    assert_eq!(out.logits.shape(), &[2, 3, 16, 32, 48]);
}

#[test]
fn topology_is_fixed() {
    let m = Model::build(&ModelConfig::tiny()).unwrap();
    assert_eq!(m.encoder.len(), 4);
    assert_eq!(m.blocks().count(), ENCODER_BLOCKS);
    assert_eq!(m.decoder.len(), 3);
    assert_eq!(m.aux_heads.len(), 2);
}

#[test]
fn invalid_inputs_are_rejected() {
    let m = Model::build(&ModelConfig::tiny()).unwrap();
    assert!(m.forward(&input(&[1, 4, 24, 32, 32], 0)).is_err());
    assert!(m.forward(&input(&[1, 3, 32, 32, 32], 0)).is_err());
    assert!(m.forward(&input(&[4, 32, 32, 32], 0)).is_err());
    let padded = pad_to_multiple(&input(&[1, 4, 17, 20, 16], 0), INPUT_MULTIPLE).unwrap();
    assert_eq!(padded.shape(), &[1, 4, 32, 32, 16]);
    m.check_input(padded.shape()).unwrap();
}

#[test]
fn invalid_config_names_each_field() {
    let cfg = ModelConfig {
        num_classes: 1,
        heads: [3, 2, 4, 8],
        decoder_window: 0,
        drop_path_max: 1.5,
        ..ModelConfig::tiny()
    };
    let msg = Model::build(&cfg).unwrap_err().to_string();
    for field in ["num_classes", "heads[0]", "decoder_window", "drop_path_max"] {
        assert!(msg.contains(field), "{field} missing from {msg}");
    }
}

fn fuzzed_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let base = [8usize, 16, 32][rng.random_range(0..3)];
    let mul = [[1, 2, 4, 8], [1, 2, 4, 4], [2, 2, 4, 8]][rng.random_range(0..3)];
    let channels = mul.map(|m| base * m);
    ModelConfig {
        in_channels: rng.random_range(1..5),
        num_classes: rng.random_range(2..6),
        stage_channels: channels,
        heads: channels.map(|c| [1, 2, 4][rng.random_range(0..3)].min(c)),
        encoder_window: [0; 3].map(|_| rng.random_range(1..5)),
        decoder_window: rng.random_range(1..5),
        decoder_heads: [1, 2, 4][rng.random_range(0..3)],
        ghost_ratio: rng.random_range(1..4),
        conv: if rng.random_bool(0.5) { ConvKind::Ghost } else { ConvKind::Standard },
        ffn: if rng.random_bool(0.5) { FfnKind::MixFfn } else { FfnKind::DenseMlp },
        fusion: if rng.random_bool(0.7) { FusionKind::CrossAttention } else { FusionKind::Concat },
        seed: rng.random(),
        ..ModelConfig::default()
    }
}

#[test]
fn runtime_counts_equal_analytic_for_fuzzed_configs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    while checked < 20 {
        let cfg = fuzzed_config(&mut rng);
        if cfg.validate().is_err() {
            continue;
        }
        let m = Model::build(&cfg).unwrap();
        assert_eq!(m.param_count(), analytic_param_count(&cfg), "{cfg:?}");
        let by_module: usize = m.param_breakdown(2).iter().map(|(_, n)| n).sum();
        assert_eq!(by_module, m.param_count());
        checked += 1;
    }
}

#[test]
fn ablation_variants_change_counts_in_the_right_direction() {
    let base = ModelConfig::default();
    let ghost = analytic_param_count(&base);
    let standard = analytic_param_count(&ModelConfig { conv: ConvKind::Standard, ..base.clone() });
    assert!(standard > ghost);
    let dense = analytic_param_count(&ModelConfig { ffn: FfnKind::DenseMlp, ..base.clone() });
    assert!(dense > ghost);
    for d in (128..=1024).step_by(32) {
        assert!(dense_mlp_param_count(d) > mixffn_param_count(d), "d = {d}");
    }
}

#[test]
fn construction_and_forward_are_deterministic() {
    let cfg = ModelConfig::tiny();
    let (a, b) = (Model::build(&cfg).unwrap(), Model::build(&cfg).unwrap());
    for (p, q) in a.params.iter().zip(b.params.iter()) {
        assert!(p.value.bit_eq(&q.value), "{}", p.name);
    }
    let x = input(&[1, 4, 16, 16, 16], 3);
    assert!(a.forward(&x).unwrap().logits.bit_eq(&b.forward(&x).unwrap().logits));
    let c = Model::build(&ModelConfig { seed: 1, ..cfg }).unwrap();
    assert!(!a.forward(&x).unwrap().logits.bit_eq(&c.forward(&x).unwrap().logits));
}

#[test]
fn flop_breakdown_sums_and_scales() {
    let cfg = ModelConfig::tiny();
    let r = estimate_flops(&cfg, &[1, 4, 32, 32, 32]).unwrap();
    assert_eq!(r.breakdown.iter().map(|(_, f)| f).sum::<u64>(), r.total);
    let r2 = estimate_flops(&cfg, &[2, 4, 32, 32, 32]).unwrap();
    assert_eq!(r2.total, 2 * r.total);
    let big = estimate_flops(&cfg, &[1, 4, 64, 64, 64]).unwrap();
    assert!(big.total > 7 * r.total);
    assert!(estimate_flops(&cfg, &[4, 32, 32, 32]).is_err());
}

// ---- checkpoints --------------------------------------------------------

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut cfg = ModelConfig::tiny();
    cfg.seed = 5;
    let m = Model::build(&cfg).unwrap();
    checkpoint::save(&m, &path).unwrap();
    let back = checkpoint::load(&path).unwrap();
    assert_eq!(back.config, cfg);
    let x = input(&[1, 4, 16, 16, 16], 8);
    let (a, b) = (m.forward(&x).unwrap(), back.forward(&x).unwrap());
    assert!(a.logits.bit_eq(&b.logits));
    assert!(a.aux.iter().zip(&b.aux).all(|(p, q)| p.bit_eq(q)));

    let mut other = Model::build(&ModelConfig::tiny()).unwrap();
    checkpoint::load_into(&mut other, &path).unwrap_err();
}

fn ckpt_err(bytes: &[u8]) -> CheckpointError {
    match checkpoint::decode(bytes) {
        Err(e) => e,
        Ok(d) => {
            let mut m = Model::build(&d.config).unwrap();
            checkpoint::restore(&mut m, d).unwrap_err()
        }
    }
}

#[test]
fn corrupted_checkpoints_get_distinct_errors() {
    let m = Model::build(&ModelConfig::tiny()).unwrap();
    let good = checkpoint::to_bytes(&m);

    let mut bad = good.clone();
    bad[0] = b'X';
    assert!(matches!(ckpt_err(&bad), CheckpointError::BadMagic));

    let mut bad = good.clone();
    bad[8..12].copy_from_slice(&9u32.to_le_bytes());
    assert!(matches!(ckpt_err(&bad), CheckpointError::UnsupportedVersion { found: 9, .. }));

    assert!(matches!(ckpt_err(&good[..good.len() - 3]), CheckpointError::Truncated(_)));

    // header hash no longer matches the embedded config
    let mut bad = good.clone();
    bad[12] ^= 0xff;
    assert!(matches!(ckpt_err(&bad), CheckpointError::Corrupt(_)));

    let mut bad = good.clone();
    bad.extend_from_slice(&[0, 0]);
    assert!(matches!(ckpt_err(&bad), CheckpointError::TrailingBytes(2)));

    // A checkpoint of another configuration cannot be restored into this model.
    let other = Model::build(&ModelConfig { stage_channels: [16, 32, 64, 128], ..ModelConfig::tiny() }).unwrap();
    let decoded = checkpoint::decode(&checkpoint::to_bytes(&other)).unwrap();
    let mut target = Model::build(&ModelConfig::tiny()).unwrap();
    assert!(matches!(
        checkpoint::restore(&mut target, decoded),
        Err(CheckpointError::FingerprintMismatch { .. })
    ));

    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(checkpoint::load(dir.path().join("none")), Err(Error::Io(_))));
}

// ---- gradient flow ------------------------------------------------------

fn param_grads(m: &Model, lambda: f64) -> Vec<(String, Tensor<f32>)> {
    // 32^3 so the deepest stage sees more than one token per window
    let x = input(&[2, 4, 32, 32, 32], 11);
    let labels: Arc<[u8]> = (0..65536).map(|i| (i % 3) as u8).collect::<Vec<_>>().into();
    let mut ctx = Ctx::eval(&m.params);
    let xv = ctx.graph.constant(x);
    let out = m.forward_graph(&mut ctx, xv).unwrap();
    let cfg = LossConfig { aux_weight: lambda, ..LossConfig::default() };
    let l = total_loss(&mut ctx.graph, &out, &labels, &cfg).unwrap();
    let grads = ctx.graph.backward(l.total).unwrap();
    let bound = ctx.bindings();
    m.params
        .ids()
        .map(|id| {
            let p = m.params.get(id);
            let g = bound
                .iter()
                .find(|(b, _)| *b == id)
                .and_then(|(_, v)| grads.get(*v).cloned())
                .unwrap_or_else(|| Tensor::zeros(p.value.shape().to_vec()));
            (p.name.clone(), g)
        })
        .collect()
}

#[test]
fn every_parameter_receives_gradient() {
    let m = Model::build(&ModelConfig::tiny()).unwrap();
    let grads = param_grads(&m, 0.4);
    let zero = |name: &str| {
        let g = &grads.iter().find(|(n, _)| n == name).unwrap().1;
        g.data().iter().all(|&v| v == 0.0)
    };
    for (name, g) in &grads {
        assert!(g.data().iter().all(|v| v.is_finite()), "{name}");
        if !zero(name) {
            continue;
        }
        // The only legitimate zero: an SE bottleneck whose ReLU is inactive
        // for every sample, which also zeroes the second layer's gradient.
        let se = name.strip_suffix(".w1").or_else(|| name.strip_suffix(".w2")).filter(|p| p.ends_with(".se"));
        let dead = se.is_some_and(|p| zero(&format!("{p}.w1")) && zero(&format!("{p}.w2")));
        assert!(dead, "{name} has zero gradient");
    }
}

#[test]
fn aux_gradients_flow_only_with_positive_weight() {
    let m = Model::build(&ModelConfig::tiny()).unwrap();
    let with = param_grads(&m, 0.4);
    let without = param_grads(&m, 0.0);
    let mut decoder_differs = false;
    for ((name, a), (_, b)) in with.iter().zip(&without) {
        if name.starts_with("aux.") {
            assert!(a.data().iter().any(|&v| v != 0.0), "{name}");
            assert!(b.data().iter().all(|&v| v == 0.0), "{name}");
        } else if name.starts_with("final.") || name.starts_with("head.") {
            // downstream of every aux branch: identical gradient paths
            assert!(a.bit_eq(b), "{name}");
        } else if name.starts_with("decoder.") && !a.bit_eq(b) {
            decoder_differs = true;
        }
    }
    assert!(decoder_differs);
}
