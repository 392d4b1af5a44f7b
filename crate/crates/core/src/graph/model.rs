//! Model assembly and the forward pass.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::init::{he_normal, inflate_first_conv, uniform_fan_in, BnParams};
use super::spec::{ArchSpec, BlockKind, HeadKind, TxbSpec};
use crate::error::{shape_err, Error, Result};
use crate::ops::{BatchStats, BnConfig, Conv2dConfig, Mode, RunningStats, BN_MOMENTUM};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    He(usize),
    /// He on the 3-channel kernel, then inflated over `frames`.
    Inflated { fan_in: usize, frames: usize },
    Uniform(usize),
    Zeros,
    Const(f64),
}

enum Slot {
    Param { name: String, shape: Vec<usize>, init: Init },
    Bn { prefix: String, channels: usize, identity: bool },
}

pub fn block_prefix(stage: usize, block: usize) -> String {
    format!("stage{stage}/block{block}")
}

/// Whether a residual block needs a projection shortcut.
pub fn needs_downsample(c_in: usize, c_out: usize, stride: usize) -> bool {
    stride != 1 || c_in != c_out
}

/// Every parameter group of `spec`, in initialization order.
fn layout(spec: &ArchSpec) -> Vec<Slot> {
    let mut slots = Vec::new();
    let param = |slots: &mut Vec<Slot>, name: String, shape: Vec<usize>, init: Init| slots.push(Slot::Param { name, shape, init });
    let bn = |slots: &mut Vec<Slot>, prefix: String, channels: usize| slots.push(Slot::Bn { prefix, channels, identity: false });

    let mut c = spec.input_channels();
    if let Some(stem) = &spec.stem {
        let k = stem.kernel;
        let init = Init::Inflated { fan_in: 3 * k * k, frames: spec.frames };
        param(&mut slots, "stem/conv/weight".into(), vec![stem.channels, c, k, k], init);
        bn(&mut slots, "stem/bn".into(), stem.channels);
        c = stem.channels;
    }
    for (i, st) in spec.stages.iter().enumerate() {
        for j in 0..st.repeat {
            let p = block_prefix(i, j);
            let stride = if j == 0 { st.stride } else { 1 };
            let out = st.channels;
            match st.block {
                BlockKind::Plain => {
                    param(&mut slots, format!("{p}/conv1/weight"), vec![out, c, 3, 3], Init::He(c * 9));
                    bn(&mut slots, format!("{p}/bn1"), out);
                }
                BlockKind::Basic => {
                    param(&mut slots, format!("{p}/conv1/weight"), vec![out, c, 3, 3], Init::He(c * 9));
                    bn(&mut slots, format!("{p}/bn1"), out);
                    param(&mut slots, format!("{p}/conv2/weight"), vec![out, out, 3, 3], Init::He(out * 9));
                    bn(&mut slots, format!("{p}/bn2"), out);
                }
                BlockKind::Bottleneck => {
                    let m = out / 4;
                    param(&mut slots, format!("{p}/conv1/weight"), vec![m, c, 1, 1], Init::He(c));
                    bn(&mut slots, format!("{p}/bn1"), m);
                    param(&mut slots, format!("{p}/conv2/weight"), vec![m, m, 3, 3], Init::He(m * 9));
                    bn(&mut slots, format!("{p}/bn2"), m);
                    param(&mut slots, format!("{p}/conv3/weight"), vec![out, m, 1, 1], Init::He(m));
                    bn(&mut slots, format!("{p}/bn3"), out);
                }
            }
            if st.block != BlockKind::Plain && needs_downsample(c, out, stride) {
                param(&mut slots, format!("{p}/downsample/conv/weight"), vec![out, c, 1, 1], Init::He(c));
                bn(&mut slots, format!("{p}/downsample/bn"), out);
            }
            c = out;
        }
        if spec.tm_points().contains(&i) {
            let w = Init::Const(1.0 / (3 * c) as f64);
            param(&mut slots, format!("tm{i}/conv/weight"), vec![c, c, 3, 1, 1], w);
            param(&mut slots, format!("tm{i}/conv/bias"), vec![c], Init::Zeros);
            slots.push(Slot::Bn { prefix: format!("tm{i}/bn"), channels: c, identity: true });
        }
    }
    let c = spec.feature_channels();
    let (co, k) = (spec.head_channels, spec.classes);
    let affine = |slots: &mut Vec<Slot>, prefix: &str, shape: Vec<usize>, init: Init| {
        let out = shape[0];
        param(slots, format!("{prefix}/weight"), shape, init);
        param(slots, format!("{prefix}/bias"), vec![out], Init::Zeros);
    };
    match spec.head {
        HeadKind::Txb => {
            slots.push(Slot::Bn { prefix: "head/bn".into(), channels: c, identity: true });
            affine(&mut slots, "head/short", vec![co, c], Init::He(c));
            affine(&mut slots, "head/long/cw1", vec![c, 3], Init::He(3));
            affine(&mut slots, "head/long/tw1", vec![co, c], Init::He(c));
            affine(&mut slots, "head/long/cw2", vec![co, 3], Init::He(3));
            affine(&mut slots, "head/long/tw2", vec![co, co], Init::He(co));
            affine(&mut slots, "head/fc", vec![k, co], Init::Uniform(co));
        }
        HeadKind::AvgScore => affine(&mut slots, "head/fc", vec![k, c], Init::Uniform(c)),
        HeadKind::OrdinaryTconv => {
            affine(&mut slots, "head/conv1", vec![co, c, 3], Init::He(3 * c));
            affine(&mut slots, "head/conv2", vec![co, co, 3], Init::He(3 * co));
            affine(&mut slots, "head/fc", vec![k, co], Init::Uniform(co));
        }
    }
    slots
}

/// Trainable tensors of `spec`: `(name, shape)` in initialization order.
pub fn parameter_shapes(spec: &ArchSpec) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for slot in layout(spec) {
        match slot {
            Slot::Param { name, shape, .. } => out.push((name, shape)),
            Slot::Bn { prefix, channels, .. } => {
                out.push((format!("{prefix}/alpha"), vec![channels]));
                out.push((format!("{prefix}/beta"), vec![channels]));
            }
        }
    }
    out
}

/// BN running statistics of `spec`: `(name, shape)`.
pub fn buffer_shapes(spec: &ArchSpec) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for slot in layout(spec) {
        if let Slot::Bn { prefix, channels, .. } = slot {
            out.push((format!("{prefix}/running_mean"), vec![channels]));
            out.push((format!("{prefix}/running_var"), vec![channels]));
        }
    }
    out
}

/// A spec bound to parameter values and BN running statistics.
#[derive(Clone, Debug)]
pub struct ModelInstance<S: Scalar> {
    spec: ArchSpec,
    params: BTreeMap<String, Tensor<S>>,
    stats: BTreeMap<String, RunningStats<S>>,
    mode: Mode,
}

pub type Model32 = ModelInstance<f32>;
pub type Model64 = ModelInstance<f64>;

/// Result of one recorded forward pass.
pub struct ForwardPass<S> {
    pub logits: Var,
    /// Parameter leaves on the tape, by name.
    pub params: Vec<(String, Var)>,
    /// Batch statistics per BN prefix, produced in train mode.
    pub bn_updates: Vec<(String, BatchStats<S>)>,
}

/// Allocates and initializes all parameters of `spec`; deterministic in `seed`.
pub fn build_model<S: Scalar>(spec: &ArchSpec, seed: u64) -> Result<ModelInstance<S>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = BTreeMap::new();
    let mut stats = BTreeMap::new();
    for slot in layout(spec) {
        match slot {
            Slot::Param { name, shape, init } => {
                let t = match init {
                    Init::He(fan_in) => he_normal(&mut rng, &shape, fan_in),
                    Init::Inflated { fan_in, frames } => {
                        let base = [shape[0], 3, shape[2], shape[3]];
                        inflate_first_conv(&he_normal(&mut rng, &base, fan_in), frames)?
                    }
                    Init::Uniform(fan_in) => uniform_fan_in(&mut rng, &shape, fan_in),
                    Init::Zeros => Tensor::zeros(shape),
                    Init::Const(v) => Tensor::full(shape, S::lit(v)),
                };
                params.insert(name, t);
            }
            Slot::Bn { prefix, channels, identity } => {
                let bn = if identity { BnParams::identity(channels) } else { BnParams::fresh(channels) };
                params.insert(format!("{prefix}/alpha"), bn.alpha);
                params.insert(format!("{prefix}/beta"), bn.beta);
                stats.insert(prefix, RunningStats { mean: bn.mean, var: bn.var });
            }
        }
    }
    Ok(ModelInstance { spec: spec.clone(), params, stats, mode: Mode::Train })
}

/// Standalone temporal Xception block over `[B,T,C_in]` features.
pub fn build_txb<S: Scalar>(txb: &TxbSpec, snippets: usize, seed: u64) -> Result<ModelInstance<S>> {
    if txb.c_in == 0 || txb.c_o == 0 {
        return Err(Error::InvalidSpec { path: "txb".into(), msg: "C_in and C_o must be positive".into() });
    }
    let spec = ArchSpec {
        name: "txb".into(),
        snippets,
        frames: 1,
        height: 1,
        width: 1,
        classes: txb.classes,
        stem: None,
        stages: Vec::new(),
        features: Some(txb.c_in),
        tm_after: Vec::new(),
        head: HeadKind::Txb,
        head_channels: txb.c_o,
        enable_superimage: true,
        enable_tm: false,
    };
    build_model(&spec, seed)
}

/// `[B,T,...] -> [B*T,...]`.
pub fn fold_snippets<S: Scalar>(x: Tensor<S>) -> Result<Tensor<S>> {
    if x.rank() < 2 {
        return Err(shape_err("fold", format!("need [B,T,...], got {:?}", x.shape())));
    }
    let mut shape = vec![x.dim(0) * x.dim(1)];
    shape.extend_from_slice(&x.shape()[2..]);
    x.reshape(shape)
}

/// `[B*T,...] -> [B,T,...]`.
pub fn unfold_snippets<S: Scalar>(x: Tensor<S>, snippets: usize) -> Result<Tensor<S>> {
    if x.rank() < 1 || snippets == 0 || !x.dim(0).is_multiple_of(snippets) {
        return Err(shape_err("unfold", format!("cannot split {:?} into {snippets} snippets", x.shape())));
    }
    let mut shape = vec![x.dim(0) / snippets, snippets];
    shape.extend_from_slice(&x.shape()[1..]);
    x.reshape(shape)
}

struct Ctx<'a, S: Scalar> {
    tape: &'a mut Tape<S>,
    model: &'a ModelInstance<S>,
    mode: Mode,
    vars: Vec<(String, Var)>,
    updates: Vec<(String, BatchStats<S>)>,
}

impl<S: Scalar> Ctx<'_, S> {
    fn p(&mut self, name: &str) -> Result<Var> {
        let t = self.model.params.get(name).ok_or_else(|| Error::MissingParameter { name: name.to_string() })?;
        let v = self.tape.param(t.clone());
        self.vars.push((name.to_string(), v));
        Ok(v)
    }

    fn bn(&mut self, x: Var, prefix: &str, axis: usize) -> Result<Var> {
        let alpha = self.p(&format!("{prefix}/alpha"))?;
        let beta = self.p(&format!("{prefix}/beta"))?;
        let stats = self.model.stats.get(prefix).ok_or_else(|| Error::MissingParameter { name: format!("{prefix}/running_mean") })?;
        let (y, batch) = self.tape.batch_norm(x, alpha, beta, stats, BnConfig::new(axis, self.mode))?;
        if let Some(b) = batch {
            self.updates.push((prefix.to_string(), b));
        }
        Ok(y)
    }

    fn conv(&mut self, x: Var, prefix: &str, stride: usize, padding: usize) -> Result<Var> {
        let w = self.p(&format!("{prefix}/weight"))?;
        self.tape.conv2d(x, w, None, Conv2dConfig::new(stride, padding))
    }

    fn conv_bn(&mut self, x: Var, conv: &str, bn: &str, stride: usize, padding: usize) -> Result<Var> {
        let y = self.conv(x, conv, stride, padding)?;
        self.bn(y, bn, 1)
    }

    fn affine(&mut self, x: Var, prefix: &str, f: fn(&mut Tape<S>, Var, Var, Var) -> Result<Var>) -> Result<Var> {
        let w = self.p(&format!("{prefix}/weight"))?;
        let b = self.p(&format!("{prefix}/bias"))?;
        f(self.tape, x, w, b)
    }

    fn block(&mut self, x: Var, kind: BlockKind, p: &str, stride: usize, c_in: usize, c_out: usize) -> Result<Var> {
        let body = match kind {
            BlockKind::Plain => {
                let y = self.conv_bn(x, &format!("{p}/conv1"), &format!("{p}/bn1"), stride, 1)?;
                return self.tape.relu(y);
            }
            BlockKind::Basic => {
                let y = self.conv_bn(x, &format!("{p}/conv1"), &format!("{p}/bn1"), stride, 1)?;
                let y = self.tape.relu(y)?;
                self.conv_bn(y, &format!("{p}/conv2"), &format!("{p}/bn2"), 1, 1)?
            }
            BlockKind::Bottleneck => {
                let y = self.conv_bn(x, &format!("{p}/conv1"), &format!("{p}/bn1"), 1, 0)?;
                let y = self.tape.relu(y)?;
                let y = self.conv_bn(y, &format!("{p}/conv2"), &format!("{p}/bn2"), stride, 1)?;
                let y = self.tape.relu(y)?;
                self.conv_bn(y, &format!("{p}/conv3"), &format!("{p}/bn3"), 1, 0)?
            }
        };
        let shortcut = if needs_downsample(c_in, c_out, stride) {
            self.conv_bn(x, &format!("{p}/downsample/conv"), &format!("{p}/downsample/bn"), stride, 0)?
        } else {
            x
        };
        let y = self.tape.add(body, shortcut)?;
        self.tape.relu(y)
    }

    /// `[B*T,C,H,W]` through Conv3d(3,1,1)-BN3d-ReLU over the snippet axis.
    fn tm_block(&mut self, x: Var, stage: usize, t: usize) -> Result<Var> {
        let [bt, c, h, w] = *self.tape.shape(x) else {
            return Err(shape_err("tm_block", "expected [B*T,C,H,W]"));
        };
        let b = bt / t;
        let y = self.tape.reshape(x, &[b, t, c, h, w])?;
        let y = self.tape.permute(y, &[0, 2, 1, 3, 4])?;
        let wt = self.p(&format!("tm{stage}/conv/weight"))?;
        let bias = self.p(&format!("tm{stage}/conv/bias"))?;
        let y = self.tape.conv3d_t311(y, wt, bias)?;
        let y = self.bn(y, &format!("tm{stage}/bn"), 1)?;
        let y = self.tape.relu(y)?;
        let y = self.tape.permute(y, &[0, 2, 1, 3, 4])?;
        self.tape.reshape(y, &[bt, c, h, w])
    }

    /// BN1d then the two TXB branches over `[B,T,C]`; returns `(short, long)`.
    fn txb_branches(&mut self, seq: Var) -> Result<(Var, Var)> {
        let v = self.bn(seq, "head/bn", 2)?;
        let short = self.affine(v, "head/short", Tape::conv1d_temporalwise)?;
        let l = self.affine(v, "head/long/cw1", Tape::conv1d_channelwise)?;
        let l = self.affine(l, "head/long/tw1", Tape::conv1d_temporalwise)?;
        let l = self.tape.relu(l)?;
        let l = self.affine(l, "head/long/cw2", Tape::conv1d_channelwise)?;
        let l = self.affine(l, "head/long/tw2", Tape::conv1d_temporalwise)?;
        let long = self.tape.relu(l)?;
        Ok((short, long))
    }

    fn head(&mut self, seq: Var) -> Result<Var> {
        let spec = &self.model.spec;
        match spec.head {
            HeadKind::Txb => {
                let (short, long) = self.txb_branches(seq)?;
                let y = self.tape.add(short, long)?;
                let y = self.tape.relu(y)?;
                let y = self.tape.temporal_max_pool(y)?;
                self.affine(y, "head/fc", Tape::fc)
            }
            HeadKind::AvgScore => {
                let [b, t, c] = *self.tape.shape(seq) else { unreachable!("sequence is rank 3") };
                let flat = self.tape.reshape(seq, &[b * t, c])?;
                let scores = self.affine(flat, "head/fc", Tape::fc)?;
                let scores = self.tape.reshape(scores, &[b, t, spec.classes])?;
                self.tape.log_mean_softmax(scores)
            }
            HeadKind::OrdinaryTconv => {
                let y = self.affine(seq, "head/conv1", Tape::conv1d)?;
                let y = self.tape.relu(y)?;
                let y = self.affine(y, "head/conv2", Tape::conv1d)?;
                let y = self.tape.relu(y)?;
                let y = self.tape.temporal_max_pool(y)?;
                self.affine(y, "head/fc", Tape::fc)
            }
        }
    }

    /// Input `[B,T,...]` to the `[B,T,C]` feature sequence.
    fn features(&mut self, input: &Tensor<S>) -> Result<Var> {
        let spec = self.model.spec.clone();
        let expected_tail = spec.input_shape(0);
        if input.rank() != expected_tail.len() || input.shape()[1..] != expected_tail[1..] || input.dim(0) == 0 {
            return Err(shape_err(
                "forward",
                format!("input must be [B,{}], got {:?}", expected_tail[1..].iter().map(|d| d.to_string()).collect::<Vec<_>>().join(","), input.shape()),
            ));
        }
        let (b, t) = (input.dim(0), spec.snippets);
        if !spec.has_backbone() {
            return Ok(self.tape.constant(input.clone()));
        }
        let mut x = self.tape.constant(fold_snippets(input.clone())?);
        if let Some(stem) = &spec.stem {
            x = self.conv_bn(x, "stem/conv", "stem/bn", stem.stride, stem.padding)?;
            x = self.tape.relu(x)?;
            if stem.max_pool {
                x = self.tape.max_pool2d(x, 3, 2, 1)?;
            }
        }
        let mut c = spec.stem.as_ref().map_or(spec.input_channels(), |s| s.channels);
        for (i, st) in spec.stages.iter().enumerate() {
            for j in 0..st.repeat {
                let stride = if j == 0 { st.stride } else { 1 };
                x = self.block(x, st.block, &block_prefix(i, j), stride, c, st.channels)?;
                c = st.channels;
            }
            if spec.tm_points().contains(&i) {
                x = self.tm_block(x, i, t)?;
            }
        }
        let pooled = self.tape.global_avg_pool2d(x)?;
        self.tape.reshape(pooled, &[b, t, c])
    }
}

impl<S: Scalar> ModelInstance<S> {
    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<S>> {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<S>> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.params.get_mut(name)
    }

    pub fn running_stats(&self) -> &BTreeMap<String, RunningStats<S>> {
        &self.stats
    }

    /// Total trainable element count.
    pub fn num_params(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// The same parameters under a spec with a different snippet count.
    pub fn with_snippets(&self, t: usize) -> Result<Self> {
        let spec = self.spec.with_snippets(t);
        spec.validate()?;
        Ok(ModelInstance { spec, ..self.clone() })
    }

    /// Every stored tensor by name: parameters plus
    /// `<bn>/running_mean` and `<bn>/running_var` buffers.
    pub fn named_tensors(&self) -> BTreeMap<String, Tensor<S>> {
        let mut all = self.params.clone();
        for (prefix, s) in &self.stats {
            all.insert(format!("{prefix}/running_mean"), s.mean.clone());
            all.insert(format!("{prefix}/running_var"), s.var.clone());
        }
        all
    }

    /// Rebuilds a model from named tensors, which must match `spec` exactly.
    pub fn from_named_tensors(spec: &ArchSpec, mut tensors: BTreeMap<String, Tensor<S>>) -> Result<Self> {
        spec.validate()?;
        let mut take = |name: &str, shape: &[usize]| -> Result<Tensor<S>> {
            let t = tensors.remove(name).ok_or_else(|| Error::MissingParameter { name: name.to_string() })?;
            if t.shape() != shape {
                return Err(Error::ParameterShape { name: name.to_string(), expected: shape.to_vec(), found: t.shape().to_vec() });
            }
            Ok(t)
        };
        let mut params = BTreeMap::new();
        for (name, shape) in parameter_shapes(spec) {
            let t = take(&name, &shape)?;
            params.insert(name, t);
        }
        let mut stats = BTreeMap::new();
        for slot in layout(spec) {
            if let Slot::Bn { prefix, channels, .. } = slot {
                let mean = take(&format!("{prefix}/running_mean"), &[channels])?;
                let var = take(&format!("{prefix}/running_var"), &[channels])?;
                stats.insert(prefix, RunningStats { mean, var });
            }
        }
        if let Some(name) = tensors.into_keys().next() {
            return Err(Error::UnexpectedParameter { name });
        }
        Ok(ModelInstance { spec: spec.clone(), params, stats, mode: Mode::Infer })
    }

    /// Records a forward pass of `input` (`[B,T,3N,H,W]`, or `[B,T,C]` for
    /// head-only specs) using the model's current mode.
    pub fn forward(&self, tape: &mut Tape<S>, input: &Tensor<S>) -> Result<ForwardPass<S>> {
        self.forward_in(tape, input, self.mode)
    }

    pub fn forward_in(&self, tape: &mut Tape<S>, input: &Tensor<S>, mode: Mode) -> Result<ForwardPass<S>> {
        let mut ctx = Ctx { tape, model: self, mode, vars: Vec::new(), updates: Vec::new() };
        let seq = ctx.features(input)?;
        let logits = ctx.head(seq)?;
        Ok(ForwardPass { logits, params: ctx.vars, bn_updates: ctx.updates })
    }

    /// Inference-mode logits `[B,K]` without recording gradients.
    pub fn predict(&self, input: &Tensor<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::inference();
        let pass = self.forward_in(&mut tape, input, Mode::Infer)?;
        Ok(tape.value(pass.logits).clone())
    }

    /// The `[B,T,C]` sequence the head consumes, in inference mode.
    pub fn features(&self, input: &Tensor<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::inference();
        let mut ctx = Ctx { tape: &mut tape, model: self, mode: Mode::Infer, vars: Vec::new(), updates: Vec::new() };
        let seq = ctx.features(input)?;
        Ok(tape.value(seq).clone())
    }

    /// TXB `(short, long)` branch outputs for a `[B,T,C]` feature sequence.
    pub fn txb_branches(&self, seq: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        if self.spec.head != HeadKind::Txb {
            return Err(Error::InvalidArgument { op: "txb_branches", msg: format!("head is {}", self.spec.head) });
        }
        let mut tape = Tape::inference();
        let mut ctx = Ctx { tape: &mut tape, model: self, mode: Mode::Infer, vars: Vec::new(), updates: Vec::new() };
        let x = ctx.tape.constant(seq.clone());
        let (s, l) = ctx.txb_branches(x)?;
        Ok((tape.value(s).clone(), tape.value(l).clone()))
    }

    /// Folds batch statistics into the running statistics.
    pub fn apply_bn_updates(&mut self, updates: &[(String, BatchStats<S>)]) {
        for (prefix, batch) in updates {
            if let Some(s) = self.stats.get_mut(prefix) {
                s.update(batch, BN_MOMENTUM);
            }
        }
    }
}
