//! Finite-difference gradient checking in double precision.
//!
//! The op output is contracted with a fixed random tensor `r`, so the checked
//! scalar is `f(x) = <op(x), r>`. Analytic gradients come from one backward
//! pass seeded with `r`; numeric ones from central differences with step
//! `1e-5 * max(1, |x|)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ops::{BnConfig, Conv2dConfig, Mode, RunningStats};
use crate::tensor::{Tape, Tensor, Var};

pub const STEP: f64 = 1e-5;
pub const FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub op: String,
    /// Max over all checked coordinates of
    /// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    pub coordinates: usize,
    pub instances: usize,
}

/// Checks the gradient of `f` with respect to every tensor in `inputs`.
pub fn grad_check<F>(op: &str, inputs: &[Tensor<f64>], seed: u64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let wrap = |e: Error| match e {
        Error::NonFinite { op: inner } => Error::NonFinite { op: format!("{op} (at {inner})") },
        other => other,
    };
    let run = |values: Vec<Tensor<f64>>| -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.into_iter().map(|t| tape.param(t)).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };

    let (tape, vars, out) = run(inputs.to_vec()).map_err(wrap)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let proj = Tensor::from_fn(tape.value(out).shape().to_vec(), |_| rng.random_range(-1.0..1.0));
    let grads = tape.backward_with(out, proj.clone()).map_err(wrap)?;

    let objective = |values: Vec<Tensor<f64>>| -> Result<f64> {
        let (tape, _, out) = run(values)?;
        Ok(tape.value(out).data().iter().zip(proj.data()).map(|(a, b)| a * b).sum())
    };

    let mut max_rel = 0.0f64;
    let mut coordinates = 0;
    for (i, var) in vars.iter().enumerate() {
        let zeros = Tensor::zeros(inputs[i].shape().to_vec());
        let analytic = grads.get(*var).unwrap_or(&zeros);
        for j in 0..inputs[i].numel() {
            let x = inputs[i].data()[j];
            let h = STEP * x.abs().max(1.0);
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] = x + h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] = x - h;
            let numeric = (objective(plus).map_err(wrap)? - objective(minus).map_err(wrap)?) / (2.0 * h);
            if !numeric.is_finite() {
                return Err(Error::NonFinite { op: format!("{op} (finite difference)") });
            }
            let a = analytic.data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            max_rel = max_rel.max(rel);
            coordinates += 1;
        }
    }
    Ok(GradCheckReport { op: op.to_string(), max_rel_error: max_rel, coordinates, instances: 1 })
}

/// Names accepted by [`run_op_checks`].
pub const OP_NAMES: &[&str] = &[
    "conv2d",
    "conv3d_t311",
    "conv1d_channelwise",
    "conv1d_temporalwise",
    "conv1d",
    "batch_norm_train",
    "batch_norm_infer",
    "relu",
    "add",
    "global_avg_pool2d",
    "temporal_max_pool",
    "max_pool2d",
    "fc",
    "softmax_cross_entropy",
    "log_mean_softmax",
    "permute",
];

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Values kept at least 0.1 away from zero (relu kink).
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Distinct values spaced by at least 0.05 so finite differences never
/// change an argmax.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    Tensor::from_fn(shape.to_vec(), |i| order[i] as f64 * 0.05 - n as f64 * 0.025)
}

fn one_instance(name: &str, rng: &mut ChaCha8Rng, seed: u64) -> Result<GradCheckReport> {
    let r = |rng: &mut ChaCha8Rng, lo: usize, hi: usize| rng.random_range(lo..=hi);
    match name {
        "conv2d" => {
            let (b, ci, co) = (r(rng, 1, 2), r(rng, 1, 3), r(rng, 1, 3));
            let k = r(rng, 1, 3);
            let (s, p) = (r(rng, 1, 2), r(rng, 0, k - 1));
            let (h, w) = (r(rng, k.max(2), 5), r(rng, k.max(2), 5));
            let inputs = [uniform(rng, &[b, ci, h, w]), uniform(rng, &[co, ci, k, k]), uniform(rng, &[co])];
            grad_check(name, &inputs, seed, |t, v| t.conv2d(v[0], v[1], Some(v[2]), Conv2dConfig::new(s, p)))
        }
        "conv3d_t311" => {
            let (b, ci, co, tt) = (r(rng, 1, 2), r(rng, 1, 3), r(rng, 1, 3), r(rng, 1, 4));
            let (h, w) = (r(rng, 1, 2), r(rng, 1, 3));
            let inputs = [uniform(rng, &[b, ci, tt, h, w]), uniform(rng, &[co, ci, 3, 1, 1]), uniform(rng, &[co])];
            grad_check(name, &inputs, seed, |t, v| t.conv3d_t311(v[0], v[1], v[2]))
        }
        "conv1d_channelwise" => {
            let (b, tt, c) = (r(rng, 1, 3), r(rng, 1, 6), r(rng, 1, 4));
            let inputs = [uniform(rng, &[b, tt, c]), uniform(rng, &[c, 3]), uniform(rng, &[c])];
            grad_check(name, &inputs, seed, |t, v| t.conv1d_channelwise(v[0], v[1], v[2]))
        }
        "conv1d_temporalwise" => {
            let (b, tt, ci, co) = (r(rng, 1, 3), r(rng, 1, 5), r(rng, 1, 4), r(rng, 1, 4));
            let inputs = [uniform(rng, &[b, tt, ci]), uniform(rng, &[co, ci]), uniform(rng, &[co])];
            grad_check(name, &inputs, seed, |t, v| t.conv1d_temporalwise(v[0], v[1], v[2]))
        }
        "conv1d" => {
            let (b, tt, ci, co) = (r(rng, 1, 2), r(rng, 1, 5), r(rng, 1, 3), r(rng, 1, 3));
            let inputs = [uniform(rng, &[b, tt, ci]), uniform(rng, &[co, ci, 3]), uniform(rng, &[co])];
            grad_check(name, &inputs, seed, |t, v| t.conv1d(v[0], v[1], v[2]))
        }
        "batch_norm_train" | "batch_norm_infer" => {
            let train = name == "batch_norm_train";
            let rank = r(rng, 2, 4);
            let mut shape: Vec<usize> = (0..rank).map(|_| r(rng, 1, 3)).collect();
            let axis = r(rng, 0, rank - 1);
            // at least two values per channel so the batch variance is non-degenerate
            if shape.iter().enumerate().filter(|(i, _)| *i != axis).map(|(_, d)| d).product::<usize>() < 2 {
                shape[(axis + 1) % rank] = 3;
            }
            let c = shape[axis];
            let stats = RunningStats {
                mean: uniform(rng, &[c]),
                var: Tensor::from_fn([c], |_| rng.random_range(0.5..2.0)),
            };
            let alpha = Tensor::from_fn([c], |_| rng.random_range(0.5..1.5));
            let inputs = [uniform(rng, &shape), alpha, uniform(rng, &[c])];
            let mode = if train { Mode::Train } else { Mode::Infer };
            grad_check(name, &inputs, seed, move |t, v| {
                Ok(t.batch_norm(v[0], v[1], v[2], &stats, BnConfig::new(axis, mode))?.0)
            })
        }
        "relu" => {
            let shape = [r(rng, 1, 4), r(rng, 1, 5)];
            grad_check(name, &[away_from_zero(rng, &shape)], seed, |t, v| t.relu(v[0]))
        }
        "add" => {
            let shape = [r(rng, 1, 4), r(rng, 1, 4)];
            let inputs = [uniform(rng, &shape), uniform(rng, &shape)];
            grad_check(name, &inputs, seed, |t, v| t.add(v[0], v[1]))
        }
        "global_avg_pool2d" => {
            let shape = [r(rng, 1, 2), r(rng, 1, 3), r(rng, 1, 4), r(rng, 1, 4)];
            grad_check(name, &[uniform(rng, &shape)], seed, |t, v| t.global_avg_pool2d(v[0]))
        }
        "temporal_max_pool" => {
            let shape = [r(rng, 1, 3), r(rng, 1, 5), r(rng, 1, 4)];
            grad_check(name, &[distinct(rng, &shape)], seed, |t, v| t.temporal_max_pool(v[0]))
        }
        "max_pool2d" => {
            let k = r(rng, 2, 3);
            let (s, p) = (r(rng, 1, 2), r(rng, 0, 1));
            let shape = [r(rng, 1, 2), r(rng, 1, 2), r(rng, k, 5), r(rng, k, 5)];
            grad_check(name, &[distinct(rng, &shape)], seed, |t, v| t.max_pool2d(v[0], k, s, p))
        }
        "fc" => {
            let (b, ci, co) = (r(rng, 1, 4), r(rng, 1, 5), r(rng, 1, 4));
            let inputs = [uniform(rng, &[b, ci]), uniform(rng, &[co, ci]), uniform(rng, &[co])];
            grad_check(name, &inputs, seed, |t, v| t.fc(v[0], v[1], v[2]))
        }
        "softmax_cross_entropy" => {
            let (b, k) = (r(rng, 1, 4), r(rng, 2, 5));
            let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
            let logits = Tensor::from_fn([b, k], |_| rng.random_range(-3.0..3.0));
            grad_check(name, &[logits], seed, move |t, v| t.softmax_cross_entropy(v[0], &labels))
        }
        "log_mean_softmax" => {
            let shape = [r(rng, 1, 3), r(rng, 1, 4), r(rng, 2, 5)];
            let x = Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-3.0..3.0));
            grad_check(name, &[x], seed, |t, v| t.log_mean_softmax(v[0]))
        }
        "permute" => {
            let shape = [r(rng, 1, 3), r(rng, 1, 3), r(rng, 1, 3), r(rng, 1, 3)];
            let x = uniform(rng, &shape);
            grad_check(name, &[x], seed, |t, v| {
                let y = t.permute(v[0], &[0, 2, 1, 3])?;
                // non-uniform downstream weights make the permutation observable
                let w = t.constant(Tensor::from_fn(t.shape(y).to_vec(), |i| 1.0 + i as f64));
                let y = t.add(y, w)?;
                t.relu(y)
            })
        }
        other => Err(Error::InvalidArgument {
            op: "gradcheck",
            msg: format!("unknown op `{other}` (known: {})", OP_NAMES.join(", ")),
        }),
    }
}

/// Runs `instances` random-shape checks of `name` and returns the worst one.
pub fn run_op_checks(name: &str, instances: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: Option<GradCheckReport> = None;
    let mut coordinates = 0;
    for i in 0..instances {
        let report = one_instance(name, &mut rng, seed.wrapping_add(i as u64))?;
        coordinates += report.coordinates;
        if worst.as_ref().is_none_or(|w| report.max_rel_error > w.max_rel_error) {
            worst = Some(report);
        }
    }
    let mut worst = worst.unwrap_or(GradCheckReport {
        op: name.to_string(),
        max_rel_error: 0.0,
        coordinates: 0,
        instances: 0,
    });
    worst.coordinates = coordinates;
    worst.instances = instances;
    Ok(worst)
}
