mod common;

use std::collections::BTreeSet;

use common::*;
use stnet::complexity::analyze;
use stnet::graph::*;
use stnet::ops::{fc_forward, softmax, Mode};
use stnet::{Error, Tape, Tensor};

fn toy(head: &str) -> ArchSpec {
    let base = ArchSpec::preset("stnet-toy").unwrap();
    match head {
        "tsn" => ArchSpec::preset("tsn-toy").unwrap(),
        "ordinary" => ArchSpec { head: HeadKind::OrdinaryTconv, ..base },
        _ => base,
    }
}

fn small(spec: ArchSpec) -> ArchSpec {
    ArchSpec { height: 16, width: 16, ..spec }
}

#[test]
fn parameter_names_match_complexity_tensors() {
    for spec in [toy("full"), toy("tsn"), toy("ordinary"), ArchSpec::preset("stnet-resnet50").unwrap()] {
        let from_report: BTreeSet<(String, Vec<usize>)> = analyze(&spec).unwrap().layers.into_iter().flat_map(|l| l.tensors).collect();
        let from_model: BTreeSet<(String, Vec<usize>)> = parameter_shapes(&spec).into_iter().collect();
        assert_eq!(from_report, from_model, "{}", spec.name);
        let total: usize = from_model.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        assert_eq!(total as u64, analyze(&spec).unwrap().total_params);
    }
}

#[test]
fn instantiated_model_matches_the_symbolic_count() {
    let spec = toy("full");
    let model: Model64 = build_model(&spec, 0).unwrap();
    assert_eq!(model.num_params() as u64, analyze(&spec).unwrap().total_params);
}

#[test]
fn avg_score_head_equals_mean_of_per_snippet_softmax() {
    let spec = small(toy("tsn"));
    let model: Model64 = build_model(&spec, 4).unwrap();
    let x = random(&mut rng(1), &spec.input_shape(2));
    let out = model.predict(&x).unwrap();
    let seq = model.features(&x).unwrap();
    let (b, t, c) = (seq.dim(0), seq.dim(1), seq.dim(2));
    let flat = seq.reshape([b * t, c]).unwrap();
    let scores = fc_forward(&flat, model.param("head/fc/weight").unwrap(), model.param("head/fc/bias").unwrap()).unwrap();
    let probs = softmax(&scores).unwrap();
    let k = spec.classes;
    for bi in 0..b {
        for j in 0..k {
            let mean: f64 = (0..t).map(|ti| probs.at(&[bi * t + ti, j])).sum::<f64>() / t as f64;
            assert!((out.at(&[bi, j]) - mean.ln()).abs() < 1e-10);
        }
    }
}

fn permute_snippets(x: &Tensor<f64>, order: &[usize]) -> Tensor<f64> {
    let per = x.numel() / (x.dim(0) * x.dim(1));
    let t = x.dim(1);
    let mut out = x.clone();
    for b in 0..x.dim(0) {
        for (dst, &src) in order.iter().enumerate() {
            let (d, s) = ((b * t + dst) * per, (b * t + src) * per);
            out.data_mut()[d..d + per].copy_from_slice(&x.data()[s..s + per]);
        }
    }
    out
}

#[test]
fn tsn_is_invariant_to_snippet_order_and_stnet_is_not() {
    let order = [3, 1, 0, 2];
    let tsn = small(toy("tsn"));
    let model: Model64 = build_model(&tsn, 2).unwrap();
    let x = random(&mut rng(2), &tsn.input_shape(1));
    let d = model.predict(&x).unwrap().max_abs_diff(&model.predict(&permute_snippets(&x, &order)).unwrap());
    assert!(d < 1e-10, "tsn moved by {d}");

    let full = small(toy("full"));
    let mut model: Model64 = build_model(&full, 2).unwrap();
    for (name, p) in model.params().clone() {
        if name.starts_with("tm") && name.ends_with("weight") {
            *model.param_mut(&name).unwrap() = random(&mut rng(9), p.shape());
        }
    }
    let x = random(&mut rng(3), &full.input_shape(1));
    let d = model.predict(&x).unwrap().max_abs_diff(&model.predict(&permute_snippets(&x, &order)).unwrap());
    assert!(d > 1e-6, "stnet unchanged under permutation");
}

#[test]
fn forward_shapes_for_every_head() {
    for head in ["full", "tsn", "ordinary"] {
        let spec = small(toy(head));
        let model: Model32 = build_model(&spec, 0).unwrap();
        let x = random(&mut rng(0), &spec.input_shape(3)).cast::<f32>();
        assert_eq!(model.predict(&x).unwrap().shape(), [3, spec.classes]);
        assert_eq!(model.features(&x).unwrap().shape(), [3, spec.snippets, spec.feature_channels()]);
    }
}

#[test]
fn wrong_input_shape_is_rejected() {
    let spec = small(toy("full"));
    let model: Model32 = build_model(&spec, 0).unwrap();
    let bad = Tensor::<f32>::zeros([1, spec.snippets, 5, 16, 16]);
    assert!(matches!(model.predict(&bad), Err(Error::Shape { .. })));
}

#[test]
fn train_mode_reports_bn_updates_and_infer_does_not() {
    let spec = small(toy("full"));
    let model: Model64 = build_model(&spec, 0).unwrap();
    let x = random(&mut rng(5), &spec.input_shape(2));
    let mut tape = Tape::new();
    let pass = model.forward_in(&mut tape, &x, Mode::Train).unwrap();
    let prefixes: BTreeSet<&str> = pass.bn_updates.iter().map(|(p, _)| p.as_str()).collect();
    assert_eq!(prefixes.len(), model.running_stats().len());
    let mut tape = Tape::new();
    assert!(model.forward_in(&mut tape, &x, Mode::Infer).unwrap().bn_updates.is_empty());
}

#[test]
fn same_seed_builds_identical_models() {
    let spec = toy("full");
    let a: Model32 = build_model(&spec, 42).unwrap();
    let b: Model32 = build_model(&spec, 42).unwrap();
    let c: Model32 = build_model(&spec, 43).unwrap();
    assert_eq!(a.named_tensors(), b.named_tensors());
    assert_ne!(a.named_tensors(), c.named_tensors());
}

#[test]
fn checkpoint_file_round_trip_and_spec_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let spec = toy("full");
    let model: Model32 = build_model(&spec, 6).unwrap();
    save_checkpoint(&model, &path).unwrap();
    let back: Model32 = load_checkpoint(&spec, &path).unwrap();
    assert_eq!(back.named_tensors(), model.named_tensors());
    let other = ArchSpec { classes: 7, ..spec.clone() };
    assert!(matches!(load_checkpoint::<f32>(&other, &path), Err(Error::ParameterShape { .. })));
    let tsn = toy("tsn");
    assert!(load_checkpoint::<f32>(&tsn, &path).is_err());
}

#[test]
fn snippet_count_can_change_after_training() {
    let spec = small(toy("full"));
    let model: Model64 = build_model(&spec, 0).unwrap();
    let longer = model.with_snippets(7).unwrap();
    let x = random(&mut rng(8), &longer.spec().input_shape(1));
    assert_eq!(longer.predict(&x).unwrap().shape(), [1, spec.classes]);
}

#[test]
fn presets_round_trip_through_text() {
    for (name, _) in PRESETS {
        let spec = ArchSpec::preset(name).unwrap();
        assert_eq!(ArchSpec::parse(&spec.to_text(), name).unwrap(), spec);
    }
}

#[test]
fn unknown_preset_lists_the_available_ones() {
    match ArchSpec::resolve("resnet9000") {
        Err(Error::UnknownPreset { available, .. }) => assert!(available.iter().any(|p| p == "stnet-toy")),
        other => panic!("unexpected {other:?}"),
    }
}
