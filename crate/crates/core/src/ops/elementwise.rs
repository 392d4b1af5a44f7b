use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{BackwardOp, Tape, Tensor, Var};

pub fn relu_forward<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| if v > S::zero() { v } else { S::zero() })
}

struct ReluBackward;

impl<S: Scalar> BackwardOp<S> for ReluBackward {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn backward(&self, inputs: &[&Tensor<S>], _output: &Tensor<S>, grad: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        let x = inputs[0];
        let g = Tensor::from_fn(x.shape().to_vec(), |i| {
            if x.data()[i] > S::zero() {
                grad.data()[i]
            } else {
                S::zero()
            }
        });
        vec![Some(g)]
    }
}

struct AddBackward;

impl<S: Scalar> BackwardOp<S> for AddBackward {
    fn name(&self) -> &'static str {
        "add"
    }

    fn backward(&self, _inputs: &[&Tensor<S>], _output: &Tensor<S>, grad: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        vec![Some(grad.clone()), Some(grad.clone())]
    }
}

struct ReshapeBackward {
    input_shape: Vec<usize>,
}

impl<S: Scalar> BackwardOp<S> for ReshapeBackward {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, _inputs: &[&Tensor<S>], _output: &Tensor<S>, grad: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        vec![Some(grad.clone().reshape(self.input_shape.clone()).expect("same element count"))]
    }
}

struct PermuteBackward {
    inverse: Vec<usize>,
}

impl<S: Scalar> BackwardOp<S> for PermuteBackward {
    fn name(&self) -> &'static str {
        "permute"
    }

    fn backward(&self, _inputs: &[&Tensor<S>], _output: &Tensor<S>, grad: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        vec![Some(grad.permute(&self.inverse).expect("valid inverse permutation"))]
    }
}

impl<S: Scalar> Tape<S> {
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = relu_forward(self.value(x));
        self.push_op(out, &[x], ReluBackward)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let mut out = ta.clone();
        out.add_assign(tb);
        self.push_op(out, &[a, b], AddBackward)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let input_shape = self.value(x).shape().to_vec();
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        self.push_op(out, &[x], ReshapeBackward { input_shape })
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let out = self.value(x).permute(axes)?;
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        self.push_op(out, &[x], PermuteBackward { inverse })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::from_vec([3], vec![-1.0f32, 0.0, 2.0]);
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_gradient_masks_by_sign() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_vec([4], vec![-3.0, -0.5, 0.25, 4.0]));
        let y = tape.relu(x).unwrap();
        let seed = Tensor::from_vec([4], vec![1.5, 2.5, 3.5, -4.5]);
        let g = tape.backward_with(y, seed).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.0, 3.5, -4.5]);
    }

    #[test]
    fn all_negative_input_gives_zero_output_and_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::full([5], -1.0));
        let y = tape.relu(x).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
        let g = tape.backward_with(y, Tensor::ones([5])).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn add_requires_equal_shapes() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros([2, 3]));
        let b = tape.constant(Tensor::zeros([3, 2]));
        assert!(tape.add(a, b).is_err());
    }
}
