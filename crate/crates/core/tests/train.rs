use stnet::data::{gen_synthetic, make_batch, SampleMode, SamplerConfig, SynthConfig, VideoClip};
use stnet::graph::{build_model, ArchSpec, Model32};
use stnet::train::*;
use stnet::Error;

fn clips(per_class: usize, seed: u64) -> Vec<VideoClip> {
    gen_synthetic(&SynthConfig { clips_per_class: per_class, seed, ..SynthConfig::default() }).unwrap()
}

fn toy() -> ArchSpec {
    ArchSpec::preset("stnet-toy").unwrap()
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let data = clips(2, 0);
    let mut model: Model32 = build_model(&toy(), 1).unwrap();
    let before = model.params().clone();
    let cfg = TrainConfig { epochs: 1, batch_size: 4, lr: 0.0, ..TrainConfig::default() };
    train(&mut model, &data, &cfg).unwrap();
    assert_eq!(model.params(), &before);
}

#[test]
fn plain_sgd_step_is_minus_lr_times_grad() {
    let data = clips(1, 0);
    let refs: Vec<&VideoClip> = data.iter().collect();
    let spec = toy();
    let batch = make_batch::<f32>(&refs, &SamplerConfig::new(spec.snippets, spec.frames, SampleMode::Test), &[0; 6]).unwrap();
    let mut model: Model32 = build_model(&spec, 3).unwrap();
    let (_, grads) = train_step(&mut model, &batch.data, &batch.labels).unwrap();
    assert_eq!(grads.len(), model.params().len());
    let before = model.params().clone();
    let lr = 0.05;
    Sgd::new(0.0, 0.0).step(&mut model, &grads, lr);
    for (name, g) in &grads {
        let (p0, p1) = (&before[name], model.param(name).unwrap());
        for ((&a, &b), &d) in p0.data().iter().zip(p1.data()).zip(g.data()) {
            assert_eq!(b, a - (lr as f32) * d, "{name}");
        }
    }
}

#[test]
fn momentum_and_weight_decay_follow_the_update_rule() {
    let spec = toy();
    let mut model: Model32 = build_model(&spec, 3).unwrap();
    let name = "head/fc/weight".to_string();
    let p0 = model.param(&name).unwrap().clone();
    let g = stnet::Tensor::full(p0.shape().to_vec(), 0.5f32);
    let grads = [(name.clone(), g)].into_iter().collect();
    let mut sgd = Sgd::new(0.9, 0.1);
    sgd.step(&mut model, &grads, 0.1);
    sgd.step(&mut model, &grads, 0.1);
    let (mut p, mut v) = (p0.data()[0], 0.0f32);
    for _ in 0..2 {
        v = 0.9 * v + 0.5 + 0.1 * p;
        p -= 0.1 * v;
    }
    assert!((model.param(&name).unwrap().data()[0] - p).abs() < 1e-6);
}

#[test]
fn single_clip_overfits_within_two_hundred_steps() {
    let data: Vec<VideoClip> = clips(1, 7).into_iter().take(1).collect();
    let mut model: Model32 = build_model(&toy(), 0).unwrap();
    let cfg = TrainConfig { epochs: 200, batch_size: 1, ..TrainConfig::default() };
    let report = train(&mut model, &data, &cfg).unwrap();
    assert_eq!(report.loss_curve.len(), 200);
    let first = report.loss_curve.iter().position(|&(_, l)| l < 0.01);
    assert!(first.is_some(), "final loss {}", report.final_loss);
    assert!(report.final_loss < 0.01);
    assert_eq!(evaluate(&model, &data, 1).unwrap().top1, 1.0);
}

#[test]
fn loss_on_a_fixed_batch_decreases_with_small_lr() {
    let data = clips(2, 1);
    let refs: Vec<&VideoClip> = data.iter().collect();
    let spec = toy();
    let batch = make_batch::<f32>(&refs, &SamplerConfig::new(spec.snippets, spec.frames, SampleMode::Test), &vec![0; refs.len()]).unwrap();
    let mut model: Model32 = build_model(&spec, 2).unwrap();
    let mut sgd = Sgd::new(0.9, 0.0);
    let mut losses = Vec::new();
    for _ in 0..10 {
        let (loss, grads) = train_step(&mut model, &batch.data, &batch.labels).unwrap();
        sgd.step(&mut model, &grads, 0.002);
        losses.push(loss);
    }
    let increases = losses.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(increases <= 1, "{losses:?}");
    assert!(losses[9] < losses[0]);
}

#[test]
fn identical_seeds_give_identical_runs() {
    let data = clips(2, 2);
    let run = |seed| {
        let mut model: Model32 = build_model(&toy(), seed).unwrap();
        let cfg = TrainConfig { epochs: 2, batch_size: 4, seed, ..TrainConfig::default() };
        train(&mut model, &data, &cfg).unwrap()
    };
    let (a, b, c) = (run(5), run(5), run(6));
    assert_eq!(a.loss_curve, b.loss_curve);
    assert_ne!(a.loss_curve, c.loss_curve);
}

#[test]
fn evaluation_is_side_effect_free() {
    let data = clips(2, 3);
    let model: Model32 = build_model(&toy(), 4).unwrap();
    let before = model.named_tensors();
    let a = evaluate(&model, &data, 5).unwrap();
    let b = evaluate(&model, &data, 3).unwrap();
    assert_eq!(a.confusion, b.confusion);
    assert!((a.loss - b.loss).abs() < 1e-5);
    assert_eq!(model.named_tensors(), before);
}

#[test]
fn untrained_model_is_near_chance_and_balanced_metrics_agree() {
    let data = clips(20, 4);
    let model: Model32 = build_model(&toy(), 8).unwrap();
    let m = evaluate(&model, &data, 32).unwrap();
    let (p, n) = (1.0 / 6.0, data.len() as f64);
    let sigma = (p * (1.0 - p) / n).sqrt();
    assert!((m.top1 - p).abs() <= 3.0 * sigma + 1e-12, "top1 {}", m.top1);
    assert!((m.class_mean - m.top1).abs() < 1e-12);
    let trace: usize = (0..6).map(|i| m.confusion[i][i]).sum();
    assert_eq!(m.top1, trace as f64 / n);
    assert!(m.per_class.iter().all(|a| (0.0..=1.0).contains(a)));
}

#[test]
fn exploding_learning_rate_reports_divergence() {
    let data = clips(2, 5);
    let mut model: Model32 = build_model(&toy(), 0).unwrap();
    let cfg = TrainConfig { epochs: 20, batch_size: 4, lr: 1e8, momentum: 0.0, ..TrainConfig::default() };
    match train(&mut model, &data, &cfg) {
        Err(Error::Diverged { epoch, step, .. }) => assert!(step >= 1 && epoch < 20),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn bad_inputs_are_rejected() {
    let mut model: Model32 = build_model(&toy(), 0).unwrap();
    let cfg = TrainConfig::default();
    assert!(matches!(train(&mut model, &[], &cfg), Err(Error::EmptyDataset)));
    assert!(matches!(evaluate(&model, &[], 4), Err(Error::EmptyDataset)));
    let mut data = clips(1, 0);
    data[0].label = 9;
    let cfg = TrainConfig { epochs: 1, batch_size: 6, ..cfg };
    assert!(matches!(train(&mut model, &data, &cfg), Err(Error::LabelOutOfRange { label: 9, .. })));
}

#[test]
fn ablation_produces_four_rows_in_toggle_order() {
    let data = clips(2, 6);
    let cfg = TrainConfig { epochs: 1, batch_size: 6, ..TrainConfig::default() };
    let report = run_ablation(&data, &data, &toy(), &cfg, &ABLATION_ROWS).unwrap();
    let toggles: Vec<(bool, bool, bool)> = report.rows.iter().map(|r| (r.toggles.superimage, r.toggles.tm, r.toggles.txb)).collect();
    assert_eq!(toggles, vec![(false, false, false), (true, false, false), (true, true, false), (true, true, true)]);
    assert!(report.rows.windows(2).all(|w| w[1].params >= w[0].params));
    assert_eq!(report.to_table().lines().count(), 5);
    let json: serde_json::Value = serde_json::to_value(&report).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 4);
}

#[test]
fn loss_curve_csv_has_one_row_per_step() {
    let data = clips(1, 0);
    let mut model: Model32 = build_model(&toy(), 0).unwrap();
    let cfg = TrainConfig { epochs: 2, batch_size: 4, ..TrainConfig::default() };
    let report = train(&mut model, &data, &cfg).unwrap();
    let csv = report.loss_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,loss"));
    assert_eq!(lines.count(), 4);
    assert_eq!(report.epoch_losses.len(), 2);
}
