use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{BackwardOp, Tape, Tensor, Var};

fn softmax_row<S: Scalar>(row: &[S], out: &mut [S]) {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut total = S::zero();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Row-wise softmax of a `[B, K]` tensor.
pub fn softmax<S: Scalar>(logits: &Tensor<S>) -> Result<Tensor<S>> {
    if logits.rank() != 2 {
        return Err(shape_err("softmax", format!("expected [B,K], got {:?}", logits.shape())));
    }
    let k = logits.dim(1);
    let mut out = vec![S::zero(); logits.numel()];
    for (row, dst) in logits.data().chunks(k).zip(out.chunks_mut(k)) {
        softmax_row(row, dst);
    }
    Tensor::new(logits.shape().to_vec(), out)
}

fn check_labels(labels: &[usize], batch: usize, classes: usize) -> Result<()> {
    if labels.len() != batch {
        return Err(shape_err("softmax_cross_entropy", format!("{} labels for batch of {batch}", labels.len())));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn softmax_cross_entropy_forward<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> Result<S> {
    Ok(cross_entropy_impl(logits, labels)?.0)
}

fn cross_entropy_impl<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> Result<(S, Tensor<S>)> {
    if logits.rank() != 2 || logits.dim(0) == 0 {
        return Err(shape_err("softmax_cross_entropy", format!("expected non-empty [B,K], got {:?}", logits.shape())));
    }
    let (batch, k) = (logits.dim(0), logits.dim(1));
    check_labels(labels, batch, k)?;
    let mut loss = S::zero();
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<S>().ln() + max;
        loss += lse - row[label];
    }
    let probs = softmax(logits)?;
    Ok((loss / S::from_usize_lossy(batch), probs))
}

struct CrossEntropyBackward<S> {
    probs: Tensor<S>,
    labels: Vec<usize>,
}

impl<S: Scalar> BackwardOp<S> for CrossEntropyBackward<S> {
    fn name(&self) -> &'static str {
        "softmax_cross_entropy"
    }

    fn backward(&self, _inputs: &[&Tensor<S>], _output: &Tensor<S>, grad: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        let (batch, k) = (self.probs.dim(0), self.probs.dim(1));
        let scale = grad.item() / S::from_usize_lossy(batch);
        let mut d = self.probs.clone();
        for (row, &label) in d.data_mut().chunks_mut(k).zip(&self.labels) {
            row[label] -= S::one();
            for v in row.iter_mut() {
                *v *= scale;
            }
        }
        vec![Some(d)]
    }
}

/// `[B,T,K] -> [B,K]`: `log(mean_t softmax(x[b,t,:]))`.
///
/// The result is a valid logit vector whose softmax is the average of the
/// per-step class distributions.
pub fn log_mean_softmax_forward<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    Ok(log_mean_softmax_impl(x)?.0)
}

fn log_mean_softmax_impl<S: Scalar>(x: &Tensor<S>) -> Result<(Tensor<S>, Vec<S>)> {
    let [batch, t, k] = *x.shape() else {
        return Err(shape_err("log_mean_softmax", format!("expected [B,T,K], got {:?}", x.shape())));
    };
    if t == 0 || k == 0 {
        return Err(shape_err("log_mean_softmax", "T and K must be positive"));
    }
    let mut probs = vec![S::zero(); x.numel()];
    for (row, dst) in x.data().chunks(k).zip(probs.chunks_mut(k)) {
        softmax_row(row, dst);
    }
    let inv_t = S::one() / S::from_usize_lossy(t);
    let mut out = vec![S::zero(); batch * k];
    for n in 0..batch {
        for i in 0..t {
            let row = &probs[(n * t + i) * k..(n * t + i + 1) * k];
            for (o, &p) in out[n * k..(n + 1) * k].iter_mut().zip(row) {
                *o += p * inv_t;
            }
        }
    }
    let logits = out.iter().map(|&p| p.ln()).collect();
    Ok((Tensor::new([batch, k], logits)?, probs))
}

struct LogMeanSoftmaxBackward<S> {
    probs: Vec<S>,
    t: usize,
}

impl<S: Scalar> BackwardOp<S> for LogMeanSoftmaxBackward<S> {
    fn name(&self) -> &'static str {
        "log_mean_softmax"
    }

    fn backward(&self, inputs: &[&Tensor<S>], output: &Tensor<S>, grad: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        // out = log m, m = mean_t p_t; d out / d x_t = (diag(p_t) - p_t p_t^T) / (T m)
        let (batch, k, t) = (output.dim(0), output.dim(1), self.t);
        let inv_t = S::one() / S::from_usize_lossy(t);
        let mut dx = vec![S::zero(); inputs[0].numel()];
        for n in 0..batch {
            let gm: Vec<S> = (0..k)
                .map(|j| grad.data()[n * k + j] / output.data()[n * k + j].exp() * inv_t)
                .collect();
            for i in 0..t {
                let base = (n * t + i) * k;
                let p = &self.probs[base..base + k];
                let dot: S = p.iter().zip(&gm).map(|(&a, &b)| a * b).sum();
                for j in 0..k {
                    dx[base + j] = p[j] * (gm[j] - dot);
                }
            }
        }
        vec![Some(Tensor::from_vec(inputs[0].shape().to_vec(), dx))]
    }
}

impl<S: Scalar> Tape<S> {
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = cross_entropy_impl(self.value(logits), labels)?;
        let op = CrossEntropyBackward { probs, labels: labels.to_vec() };
        self.push_op(Tensor::scalar(loss), &[logits], op)
    }

    pub fn log_mean_softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).shape().get(1).copied().unwrap_or(0);
        let (out, probs) = log_mean_softmax_impl(self.value(x))?;
        self.push_op(out, &[x], LogMeanSoftmaxBackward { probs, t })
    }
}
