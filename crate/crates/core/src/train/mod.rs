//! SGD training, evaluation and the component ablation.

pub mod ablation;
pub mod metrics;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use ablation::{run_ablation, AblationReport, AblationRow, Toggles, ABLATION_ROWS};
pub use metrics::Metrics;

use crate::data::{make_batch, SampleMode, SamplerConfig, VideoClip};
use crate::error::{Error, Result};
use crate::graph::ModelInstance;
use crate::kv::{KvMap, KvWriter};
use crate::ops::{softmax_cross_entropy_forward, Mode};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Multiplier applied at each epoch listed in `lr_steps`.
    pub lr_decay: f64,
    pub lr_steps: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 10, batch_size: 16, lr: 0.01, momentum: 0.9, weight_decay: 1e-4, seed: 0, lr_decay: 0.1, lr_steps: Vec::new() }
    }
}

impl TrainConfig {
    pub fn parse(text: &str, file: &str) -> Result<Self> {
        Self::parse_over(text, file, Self::default())
    }

    /// Like [`TrainConfig::parse`], with keys missing from `text` taken from `d`.
    pub fn parse_over(text: &str, file: &str, d: Self) -> Result<Self> {
        let mut kv = KvMap::parse(text, file)?;
        let cfg = TrainConfig {
            epochs: kv.take_or("epochs", d.epochs)?,
            batch_size: kv.take_or("batch_size", d.batch_size)?,
            lr: kv.take_or("lr", d.lr)?,
            momentum: kv.take_or("momentum", d.momentum)?,
            weight_decay: kv.take_or("weight_decay", d.weight_decay)?,
            seed: kv.take_or("seed", d.seed)?,
            lr_decay: kv.take_or("lr.decay", d.lr_decay)?,
            lr_steps: kv.take_list("lr.steps")?.unwrap_or(d.lr_steps),
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut w = KvWriter::new();
        w.put("epochs", self.epochs)
            .put("batch_size", self.batch_size)
            .put("lr", self.lr)
            .put("momentum", self.momentum)
            .put("weight_decay", self.weight_decay)
            .put("seed", self.seed)
            .put("lr.decay", self.lr_decay)
            .put_list("lr.steps", &self.lr_steps);
        w.finish()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, msg: &str| Err(Error::InvalidSpec { path: path.into(), msg: msg.into() });
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay", "must be non-negative");
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.lr_steps.iter().filter(|&&s| s <= epoch).count();
        self.lr * self.lr_decay.powi(drops as i32)
    }
}

/// SGD with momentum and L2 weight decay:
/// `v <- mu v + (g + wd p)`, `p <- p - lr v`.
#[derive(Clone, Debug)]
pub struct Sgd<S: Scalar> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> Sgd<S> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd { momentum, weight_decay, velocity: BTreeMap::new() }
    }

    pub fn step(&mut self, model: &mut ModelInstance<S>, grads: &BTreeMap<String, Tensor<S>>, lr: f64) {
        let (mu, wd, lr) = (S::lit(self.momentum), S::lit(self.weight_decay), S::lit(lr));
        for (name, g) in grads {
            let Some(p) = model.param_mut(name) else { continue };
            let v = self.velocity.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
            for ((pv, vv), &gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vv = mu * *vv + gv + wd * *pv;
                *pv -= lr * *vv;
            }
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainReport {
    /// `(step, loss)` for every minibatch.
    pub loss_curve: Vec<(usize, f64)>,
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
}

impl TrainReport {
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (step, loss) in &self.loss_curve {
            out += &format!("{step},{loss}\n");
        }
        out
    }
}

/// SplitMix64 finalizer, used to derive per-epoch and per-clip seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One forward/backward pass on a batch; returns the loss and parameter
/// gradients and folds BN batch statistics into the model's running stats.
pub fn train_step<S: Scalar>(model: &mut ModelInstance<S>, data: &Tensor<S>, labels: &[usize]) -> Result<(f64, BTreeMap<String, Tensor<S>>)> {
    let mut tape = Tape::new();
    let pass = model.forward_in(&mut tape, data, Mode::Train)?;
    let loss = tape.softmax_cross_entropy(pass.logits, labels)?;
    let value = tape.value(loss).item().to_f64().unwrap_or(f64::NAN);
    let mut grads = tape.backward(loss)?;
    let mut by_name: BTreeMap<String, Tensor<S>> = BTreeMap::new();
    for (name, var) in pass.params {
        if let Some(g) = grads.take(var) {
            match by_name.get_mut(&name) {
                Some(acc) => acc.add_assign(&g),
                None => {
                    by_name.insert(name, g);
                }
            }
        }
    }
    model.apply_bn_updates(&pass.bn_updates);
    Ok((value, by_name))
}

/// Minibatch SGD on softmax cross-entropy. Batch order and snippet offsets
/// are pure functions of `cfg.seed`.
pub fn train<S: Scalar>(model: &mut ModelInstance<S>, clips: &[VideoClip], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if clips.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let spec = model.spec().clone();
    let sampler = SamplerConfig::new(spec.snippets, spec.frames, SampleMode::Train);
    let mut sgd = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut report = TrainReport { loss_curve: Vec::new(), epoch_losses: Vec::new(), final_loss: f64::NAN };
    let mut step = 0;
    model.set_mode(Mode::Train);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let epoch_seed = mix_seed(cfg.seed, epoch as u64);
        let mut order: Vec<usize> = (0..clips.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch_clips: Vec<&VideoClip> = chunk.iter().map(|&i| &clips[i]).collect();
            let seeds: Vec<u64> = chunk.iter().map(|&i| mix_seed(epoch_seed, i as u64)).collect();
            let batch = make_batch::<S>(&batch_clips, &sampler, &seeds)?;
            let diverged = |loss| Error::Diverged { epoch, step, loss };
            let (loss, grads) = match train_step(model, &batch.data, &batch.labels) {
                Err(Error::NonFinite { .. }) => return Err(diverged(f64::NAN)),
                other => other?,
            };
            if !loss.is_finite() {
                return Err(diverged(loss));
            }
            sgd.step(model, &grads, lr);
            report.loss_curve.push((step, loss));
            total += loss * chunk.len() as f64;
            step += 1;
        }
        report.epoch_losses.push(total / clips.len() as f64);
    }
    report.final_loss = report.loss_curve.last().map_or(f64::NAN, |&(_, l)| l);
    model.set_mode(Mode::Infer);
    Ok(report)
}

/// Center-sampled inference over `clips`; does not modify the model.
pub fn evaluate<S: Scalar>(model: &ModelInstance<S>, clips: &[VideoClip], batch_size: usize) -> Result<Metrics> {
    if clips.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let spec = model.spec();
    let k = spec.classes;
    let sampler = SamplerConfig::new(spec.snippets, spec.frames, SampleMode::Test);
    let mut confusion = vec![vec![0usize; k]; k];
    let mut loss = 0.0;
    for chunk in clips.chunks(batch_size.max(1)) {
        let refs: Vec<&VideoClip> = chunk.iter().collect();
        let batch = make_batch::<S>(&refs, &sampler, &vec![0; chunk.len()])?;
        let logits = model.predict(&batch.data)?;
        loss += softmax_cross_entropy_forward(&logits, &batch.labels)?.to_f64().unwrap_or(f64::NAN) * chunk.len() as f64;
        for (row, &label) in logits.data().chunks(k).zip(&batch.labels) {
            let pred = row.iter().enumerate().fold(0, |best, (j, &v)| if v > row[best] { j } else { best });
            confusion[label][pred] += 1;
        }
    }
    Ok(Metrics::from_confusion(confusion, loss / clips.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_steps_down() {
        let cfg = TrainConfig { lr: 1.0, lr_decay: 0.1, lr_steps: vec![2, 4], ..TrainConfig::default() };
        let lrs: Vec<f64> = (0..6).map(|e| cfg.lr_at(e)).collect();
        assert_eq!(lrs[0], 1.0);
        assert!((lrs[2] - 0.1).abs() < 1e-12 && (lrs[5] - 0.01).abs() < 1e-12);
    }

    #[test]
    fn config_round_trips_and_validates() {
        let cfg = TrainConfig { epochs: 3, lr_steps: vec![1, 2], ..TrainConfig::default() };
        assert_eq!(TrainConfig::parse(&cfg.to_text(), "t").unwrap(), cfg);
        assert!(TrainConfig::parse("batch_size = 0\n", "t").is_err());
        assert!(TrainConfig::parse("lr = -1\n", "t").is_err());
    }

    #[test]
    fn seed_mixing_separates_streams() {
        assert_ne!(mix_seed(1, 2), mix_seed(2, 1));
        assert_eq!(mix_seed(5, 5), mix_seed(5, 5));
    }
}
