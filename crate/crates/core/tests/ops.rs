mod common;

use common::*;
use proptest::prelude::*;
use stnet::ops::*;
use stnet::{Tape, Tensor};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn conv2d_matches_nested_loops(
        b in 1usize..3, ci in 1usize..4, co in 1usize..4, k in 1usize..4,
        s in 1usize..3, extra in 0usize..4, seed in any::<u64>(),
    ) {
        let p = k / 2;
        let mut r = rng(seed);
        let (h, w) = (k + extra, k + extra + 1);
        let x = random(&mut r, &[b, ci, h, w]);
        let wt = random(&mut r, &[co, ci, k, k]);
        let bias = random(&mut r, &[co]);
        let got = conv2d_forward(&x, &wt, Some(&bias), Conv2dConfig::new(s, p)).unwrap();
        prop_assert!(rel_close(&got, &conv2d(&x, &wt, Some(&bias), s, p), 1e-6));
    }

    #[test]
    fn conv3d_matches_nested_loops(b in 1usize..3, c in 1usize..5, o in 1usize..5, t in 1usize..6, seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = random(&mut r, &[b, c, t, 2, 3]);
        let w = random(&mut r, &[o, c, 3, 1, 1]);
        let bias = random(&mut r, &[o]);
        let got = conv3d_t311_forward(&x, &w, &bias).unwrap();
        prop_assert!(rel_close(&got, &conv3d_t311(&x, &w, &bias), 1e-6));
    }

    #[test]
    fn sequence_convs_match_nested_loops(t in 1usize..8, ci in 1usize..6, co in 1usize..6, seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = random(&mut r, &[t, ci]);
        let wc = random(&mut r, &[ci, 3]);
        let bc = random(&mut r, &[ci]);
        prop_assert!(rel_close(&conv1d_channelwise_forward(&x, &wc, &bc).unwrap(), &channelwise(&x, &wc, &bc), 1e-6));
        let wt = random(&mut r, &[co, ci]);
        let bt = random(&mut r, &[co]);
        prop_assert!(rel_close(&conv1d_temporalwise_forward(&x, &wt, &bt).unwrap(), &matmul_bias(&x, &wt, &bt), 1e-6));
        prop_assert!(rel_close(&fc_forward(&x, &wt, &bt).unwrap(), &matmul_bias(&x, &wt, &bt), 1e-6));
        let wf = random(&mut r, &[co, ci, 3]);
        prop_assert!(rel_close(&conv1d_forward(&x, &wf, &bt).unwrap(), &conv1d_full(&x, &wf, &bt), 1e-6));
    }

    #[test]
    fn pools_and_norm_match_nested_loops(n in 1usize..4, c in 1usize..4, h in 2usize..6, w in 2usize..6, seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = random(&mut r, &[n, c, h, w]);
        prop_assert!(rel_close(&global_avg_pool2d_forward(&x).unwrap(), &gap(&x), 1e-6));
        prop_assert!(rel_close(&max_pool2d_forward(&x, 2, 2, 1).unwrap(), &max_pool2d(&x, 2, 2, 1), 1e-6));
        let seq = random(&mut r, &[h, w]);
        prop_assert!(rel_close(&temporal_max_pool_forward(&seq).unwrap(), &temporal_max(&seq), 1e-6));

        let alpha = random(&mut r, &[c]);
        let beta = random(&mut r, &[c]);
        let stats = RunningStats { mean: random(&mut r, &[c]), var: Tensor::from_fn([c], |i| 0.5 + i as f64) };
        let (train, _) = batch_norm_forward(&x, &alpha, &beta, &stats, BnConfig::new(1, Mode::Train)).unwrap();
        prop_assert!(rel_close(&train, &batch_norm(&x, &alpha, &beta, None, BN_EPS), 1e-6));
        let (infer, _) = batch_norm_forward(&x, &alpha, &beta, &stats, BnConfig::new(1, Mode::Infer)).unwrap();
        prop_assert!(rel_close(&infer, &batch_norm(&x, &alpha, &beta, Some((&stats.mean, &stats.var)), BN_EPS), 1e-6));
    }

    #[test]
    fn batch_norm_infer_is_affine(scale in -3.0f64..3.0, seed in any::<u64>()) {
        let mut r = rng(seed);
        let (alpha, beta) = (random(&mut r, &[3]), random(&mut r, &[3]));
        let stats = RunningStats { mean: random(&mut r, &[3]), var: Tensor::full([3], 0.7) };
        let cfg = BnConfig::new(1, Mode::Infer);
        let bn = |x: &Tensor<f64>| batch_norm_forward(x, &alpha, &beta, &stats, cfg).unwrap().0;
        let x = random(&mut r, &[4, 3]);
        let z = bn(&Tensor::zeros([4, 3]));
        let lhs = bn(&x.map(|v| scale * v));
        let rhs = bn(&x);
        // BN(a x) - BN(0) == a (BN(x) - BN(0))
        for i in 0..12 {
            let l = lhs.data()[i] - z.data()[i];
            let r = scale * (rhs.data()[i] - z.data()[i]);
            prop_assert!((l - r).abs() < 1e-10);
        }
    }
}

/// Indices `t` where the output differs after perturbing input step `t0`.
fn affected_steps(f: impl Fn(&Tensor<f64>) -> Tensor<f64>, t: usize, c: usize, t0: usize) -> Vec<usize> {
    let mut r = rng(11);
    let x = random(&mut r, &[t, c]);
    let base = f(&x);
    let mut bumped = x.clone();
    for j in 0..c {
        bumped.data_mut()[t0 * c + j] += 0.5;
    }
    let moved = f(&bumped);
    let width = base.dim(1);
    (0..t)
        .filter(|&i| (0..width).any(|j| (base.at(&[i, j]) - moved.at(&[i, j])).abs() > 1e-12))
        .collect()
}

#[test]
fn stacked_channelwise_convs_see_five_steps() {
    let mut r = rng(3);
    let (w1, b1, w2, b2) = (random(&mut r, &[4, 3]), random(&mut r, &[4]), random(&mut r, &[4, 3]), random(&mut r, &[4]));
    let f = |x: &Tensor<f64>| {
        let y = conv1d_channelwise_forward(x, &w1, &b1).unwrap();
        conv1d_channelwise_forward(&y, &w2, &b2).unwrap()
    };
    assert_eq!(affected_steps(f, 11, 4, 5), vec![3, 4, 5, 6, 7]);
}

#[test]
fn temporalwise_conv_sees_one_step() {
    let mut r = rng(4);
    let (w, b) = (random(&mut r, &[6, 4]), random(&mut r, &[6]));
    let f = |x: &Tensor<f64>| conv1d_temporalwise_forward(x, &w, &b).unwrap();
    assert_eq!(affected_steps(f, 9, 4, 2), vec![2]);
}

#[test]
fn every_op_passes_gradient_check() {
    for op in OP_NAMES {
        let report = run_op_checks(op, 20, 2024).unwrap();
        assert_eq!(report.instances, 20);
        assert!(report.max_rel_error < 1e-4, "{op}: {report:?}");
    }
}

#[test]
fn fc_parameter_count_for_kinetics_head() {
    let w = Tensor::<f32>::zeros([400, 1024]);
    let b = Tensor::<f32>::zeros([400]);
    assert_eq!(w.numel() + b.numel(), 410_000);
}

#[test]
fn single_precision_training_path_agrees_with_double() {
    let mut r = rng(8);
    let x = random(&mut r, &[2, 3, 6, 6]);
    let w = random(&mut r, &[4, 3, 3, 3]);
    let y64 = conv2d_forward(&x, &w, None, Conv2dConfig::new(1, 1)).unwrap();
    let y32 = conv2d_forward(&x.cast::<f32>(), &w.cast::<f32>(), None, Conv2dConfig::new(1, 1)).unwrap();
    assert!(y32.cast::<f64>().max_abs_diff(&y64) < 1e-5);
}

#[test]
fn tape_chain_backpropagates_through_composed_ops() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(Tensor::from_vec([1, 2], vec![0.5, -0.25]));
    let w = tape.param(Tensor::from_vec([3, 2], vec![1.0, 2.0, -1.0, 0.5, 0.0, 1.0]));
    let b = tape.param(Tensor::zeros([3]));
    let y = tape.fc(x, w, b).unwrap();
    let y = tape.relu(y).unwrap();
    let loss = tape.softmax_cross_entropy(y, &[1]).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert!(grads.get(w).is_some() && grads.get(x).is_some() && grads.get(b).is_some());
}
