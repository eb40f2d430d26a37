use proptest::prelude::*;
use refineformer::autograd::check::random_tensor;
use refineformer::nn::window::*;
use refineformer::{Graph, Tensor};

fn coords(n: usize, grid: [usize; 3]) -> [usize; 3] {
    [n / (grid[1] * grid[2]), (n / grid[2]) % grid[1], n % grid[2]]
}

#[test]
fn zero_shift_is_identity() {
    let x = random_tensor(&[2, 3, 4, 5, 2], 1);
    assert!(cyclic_shift(&x, [0, 0, 0]).unwrap().bit_eq(&x));
}

#[test]
fn one_axis_roll_by_one() {
    let x = Tensor::new(vec![1, 1, 1, 4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let y = cyclic_shift(&x, [0, 0, 1]).unwrap();
    assert_eq!(y.data(), &[4.0, 1.0, 2.0, 3.0]);
    let x = Tensor::new(vec![1, 4, 1, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(cyclic_shift(&x, [1, 0, 0]).unwrap().data(), &[4.0, 1.0, 2.0, 3.0]);
}

#[test]
fn partition_counts() {
    let x = random_tensor(&[1, 8, 8, 8, 3], 2);
    let w = window_partition(&x, [4, 4, 4]).unwrap();
    assert_eq!(w.shape(), &[8, 64, 3]);
    let full = window_partition(&x, [8, 8, 8]).unwrap();
    assert_eq!(full.shape(), &[1, 512, 3]);
    assert_eq!(full.data(), x.data());
    assert!(window_partition(&x, [3, 4, 4]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn shift_and_partition_roundtrips(
        b in 1usize..3, nd in 1usize..4, nh in 1usize..4, nw in 1usize..4,
        wd in 1usize..4, wh in 1usize..4, ww in 1usize..4, c in 1usize..4,
        sd in -5isize..6, sh in -5isize..6, sw in -5isize..6, seed in 0u64..1000,
    ) {
        let grid = [nd * wd, nh * wh, nw * ww];
        let x = random_tensor(&[b, grid[0], grid[1], grid[2], c], seed);
        let s = cyclic_shift(&x, [sd, sh, sw]).unwrap();
        prop_assert!(cyclic_shift(&s, [-sd, -sh, -sw]).unwrap().bit_eq(&x));
        let p = window_partition(&x, [wd, wh, ww]).unwrap();
        prop_assert_eq!(p.shape()[0], b * nd * nh * nw);
        prop_assert!(window_reverse(&p, [wd, wh, ww], b, grid).unwrap().bit_eq(&x));
    }

    #[test]
    fn shift_mask_is_symmetric(
        d in 1usize..9, h in 1usize..9, w in 1usize..9, win in 1usize..5,
    ) {
        let m = build_shift_mask::<f64>([d, h, w], WindowSpec::shifted([win; 3])).unwrap();
        let t = win.pow(3);
        for (k, &v) in m.data().iter().enumerate() {
            let (wi, i, j) = (k / (t * t), (k / t) % t, k % t);
            prop_assert_eq!(v, m.data()[(wi * t + j) * t + i]);
            prop_assert!(v == 0.0 || v == f64::NEG_INFINITY);
        }
    }
}

#[test]
fn unshifted_divisible_mask_is_zero() {
    let m = build_shift_mask::<f32>([8, 8, 8], WindowSpec::new([4, 4, 4])).unwrap();
    assert_eq!(m.shape(), &[8, 64, 64]);
    assert!(m.data().iter().all(|&v| v == 0.0));
}

/// Brute-force oracle: slot `i` of the rolled grid holds original voxel
/// `(p + s) mod n` per axis. Two tokens in one window are neighbours iff their
/// original offsets equal their offsets after the roll on every axis.
fn brute_force_allowed(grid: [usize; 3], window: [usize; 3], shift: [usize; 3]) -> Vec<bool> {
    let x = Tensor::from_fn(vec![1, grid[0], grid[1], grid[2], 3], |i| {
        let n = i / 3;
        let c = coords(n, grid);
        [c[0], c[1], c[2]][i % 3] as f64
    });
    let s = [0, 1, 2].map(|a| -(shift[a] as isize));
    let rolled = cyclic_shift(&x, s).unwrap();
    let wins = window_partition(&rolled, window).unwrap();
    let unrolled_pos = window_partition(
        &Tensor::from_fn(vec![1, grid[0], grid[1], grid[2], 3], |i| {
            let c = coords(i / 3, grid);
            [c[0], c[1], c[2]][i % 3] as f64
        }),
        window,
    )
    .unwrap();
    let t: usize = window.iter().product();
    let m = wins.shape()[0];
    let mut out = Vec::with_capacity(m * t * t);
    for w in 0..m {
        for i in 0..t {
            for j in 0..t {
                let ok = (0..3).all(|a| {
                    let oi = wins.data()[(w * t + i) * 3 + a];
                    let oj = wins.data()[(w * t + j) * 3 + a];
                    let pi = unrolled_pos.data()[(w * t + i) * 3 + a];
                    let pj = unrolled_pos.data()[(w * t + j) * 3 + a];
                    oi - oj == pi - pj
                });
                out.push(ok);
            }
        }
    }
    out
}

#[test]
fn shift_mask_blocks_exactly_non_adjacent_pairs_1d() {
    let (grid, window, shift) = ([1, 1, 8], [1, 1, 4], [0, 0, 2]);
    let mask = build_shift_mask::<f64>(grid, WindowSpec { window, shift }).unwrap();
    let allowed = brute_force_allowed(grid, window, shift);
    assert_eq!(mask.numel(), allowed.len());
    for (m, ok) in mask.data().iter().zip(&allowed) {
        assert_eq!(*m == 0.0, *ok);
    }
    // the first window is interior, the wrap-around one is split 2 + 2
    assert!(mask.data()[..16].iter().all(|&v| v == 0.0));
    assert_eq!(mask.data()[16..].iter().filter(|v| v.is_infinite()).count(), 8);
}

#[test]
fn shift_mask_matches_brute_force_3d() {
    for (grid, window) in [([8, 8, 8], [4, 4, 4]), ([4, 8, 6], [2, 4, 3])] {
        let spec = WindowSpec::shifted(window);
        let mask = build_shift_mask::<f64>(grid, spec).unwrap();
        let allowed = brute_force_allowed(grid, window, spec.shift);
        for (m, ok) in mask.data().iter().zip(&allowed) {
            assert_eq!(*m == 0.0, *ok);
        }
    }
}

#[test]
fn padded_tokens_are_isolated() {
    let grid = [6, 5, 4];
    let spec = WindowSpec::shifted([4, 4, 4]);
    let plan = WindowPlan::new(1, grid, spec).unwrap();
    let labels = plan.labels();
    let index = plan.partition_index(1, 0, 1);
    let mask = plan.mask::<f64>().unwrap();
    let t = plan.tokens();
    for w in 0..plan.windows {
        for i in 0..t {
            for j in 0..t {
                let pad_i = index[w * t + i] == usize::MAX;
                let pad_j = index[w * t + j] == usize::MAX;
                let m = mask.data()[(w * t + i) * t + j];
                if pad_i != pad_j {
                    assert!(m.is_infinite());
                }
                if pad_i && pad_j {
                    assert_eq!(m, 0.0);
                }
            }
        }
    }
    assert!(labels.contains(&8));
}

#[test]
fn plan_agrees_with_tensor_ops() {
    let (b, grid, c) = (2, [8, 4, 8], 3);
    let x = random_tensor(&[b, grid[0], grid[1], grid[2], c], 5);
    for spec in [WindowSpec::new([4, 2, 4]), WindowSpec::shifted([4, 2, 4])] {
        let plan = WindowPlan::new(b, grid, spec).unwrap();
        let s = spec.shift.map(|v| -(v as isize));
        let want = window_partition(&cyclic_shift(&x, s).unwrap(), spec.window).unwrap();
        let n = grid.iter().product::<usize>();
        let mut g = Graph::new();
        let xv = g.constant(x.clone().reshape(vec![b, n, c]).unwrap());
        let w = g.gather(xv, plan.partition_index(c, 0, c), want.shape()).unwrap();
        assert!(g.value(w).bit_eq(&want));
        let back = g.gather(w, plan.reverse_index(c, false), &[b, n, c]).unwrap();
        assert_eq!(g.value(back).data(), x.data());
    }
}

#[test]
fn relative_index_depends_only_on_offset() {
    let window = [2, 3, 2];
    let idx = relative_position_index(window);
    let t: usize = window.iter().product();
    let rows = relative_table_rows(window);
    assert_eq!(rows, 3 * 5 * 3);
    let pos = |i: usize| coords(i, window).map(|v| v as isize);
    for a in 0..t * t {
        for b in 0..t * t {
            let (pi, pj) = (pos(a / t), pos(a % t));
            let (qi, qj) = (pos(b / t), pos(b % t));
            let same = (0..3).all(|k| pi[k] - pj[k] == qi[k] - qj[k]);
            assert_eq!(same, idx[a] == idx[b]);
        }
    }
    assert!(idx.iter().all(|&i| i < rows));
}

#[test]
fn attention_flops_linearity_and_hand_count() {
    let a = attention_flops([8, 8, 8], [4, 4, 4], 32);
    let b = attention_flops([16, 8, 8], [4, 4, 4], 32);
    assert_eq!(b, 2 * a);
    // one 4x4x4 window with C = 8: four 64x8x8 projections, 64x64x8 for
    // Q K^T and for A V; two flops per multiply-accumulate
    let (t, c) = (64u64, 8u64);
    let hand = 2 * (4 * t * c * c + t * t * c + t * t * c);
    assert_eq!(attention_flops([4, 4, 4], [4, 4, 4], 8), hand);
    // a window covering the whole volume grows quadratically
    let n1 = attention_flops([4, 4, 4], [4, 4, 4], 8) - 2 * 4 * 64 * 64;
    let n2 = attention_flops([4, 4, 8], [4, 4, 8], 8) - 2 * 4 * 128 * 64;
    assert_eq!(n2, 4 * n1);
}
