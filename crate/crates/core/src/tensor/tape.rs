use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of one recorded op.
///
/// `inputs` are the forward input values in the order the op was recorded
/// with, `output` is the forward result and `grad` the upstream gradient of
/// the output. Returns one entry per input; `None` means no gradient flows
/// to that input.
pub trait BackwardOp<S: Scalar> {
    fn name(&self) -> &'static str;

    fn backward(&self, inputs: &[&Tensor<S>], output: &Tensor<S>, grad: &Tensor<S>) -> Vec<Option<Tensor<S>>>;
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    requires_grad: bool,
    inputs: Vec<Var>,
    op: Option<Box<dyn BackwardOp<S>>>,
}

/// Linear record of a forward computation.
///
/// Nodes are appended in execution order, which is a topological order of
/// the graph; backward walks it in reverse and visits every node once.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    record: bool,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), record: true }
    }

    /// A tape that never records backward context; [`Tape::param`] behaves
    /// like [`Tape::constant`].
    pub fn inference() -> Self {
        Tape { nodes: Vec::new(), record: false }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push_leaf(value, false)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        let rg = self.record;
        self.push_leaf(value, rg)
    }

    fn push_leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, requires_grad, inputs: Vec::new(), op: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an op result. The backward closure is only kept when some
    /// input needs a gradient.
    pub fn push_op<F>(&mut self, value: Tensor<S>, inputs: &[Var], backward: F) -> Result<Var>
    where
        F: BackwardOp<S> + 'static,
    {
        value.check_finite(backward.name())?;
        let requires_grad = self.record && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let (inputs, op): (Vec<Var>, Option<Box<dyn BackwardOp<S>>>) = if requires_grad {
            (inputs.to_vec(), Some(Box::new(backward)))
        } else {
            (Vec::new(), None)
        };
        self.nodes.push(Node { value, requires_grad, inputs, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Backpropagates from a one-element `root` with seed gradient 1.
    pub fn backward(&self, root: Var) -> Result<Gradients<S>> {
        let v = self.value(root);
        if v.numel() != 1 {
            return Err(shape_err("backward", format!("root must hold one value, has shape {:?}", v.shape())));
        }
        self.backward_with(root, Tensor::full(v.shape().to_vec(), S::one()))
    }

    /// Backpropagates an arbitrary seed gradient of the same shape as `root`.
    pub fn backward_with(&self, root: Var, seed: Tensor<S>) -> Result<Gradients<S>> {
        if seed.shape() != self.value(root).shape() {
            return Err(shape_err(
                "backward",
                format!("seed shape {:?} does not match root {:?}", seed.shape(), self.value(root).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            let Some(op) = node.op.as_ref() else { continue };
            let Some(g) = grads[idx].take() else { continue };
            let inputs: Vec<&Tensor<S>> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let input_grads = op.backward(&inputs, &node.value, &g);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (var, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                if !ig.is_finite() {
                    return Err(Error::NonFinite { op: format!("{} backward", op.name()) });
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&ig),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
///
/// Only leaves created with [`Tape::param`] (and the root) keep a gradient.
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<S>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Square;

    impl BackwardOp<f64> for Square {
        fn name(&self) -> &'static str {
            "square"
        }

        fn backward(&self, inputs: &[&Tensor<f64>], _: &Tensor<f64>, grad: &Tensor<f64>) -> Vec<Option<Tensor<f64>>> {
            let x = inputs[0];
            let g = Tensor::from_fn(x.shape().to_vec(), |i| 2.0 * x.data()[i] * grad.data()[i]);
            vec![Some(g)]
        }
    }

    struct AddPair;

    impl BackwardOp<f64> for AddPair {
        fn name(&self) -> &'static str {
            "add"
        }

        fn backward(&self, _: &[&Tensor<f64>], _: &Tensor<f64>, grad: &Tensor<f64>) -> Vec<Option<Tensor<f64>>> {
            vec![Some(grad.clone()), Some(grad.clone())]
        }
    }

    #[test]
    fn shared_input_accumulates() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let sq = tape.push_op(Tensor::scalar(9.0), &[x], Square).unwrap();
        // y = x^2 + x -> dy/dx = 2x + 1 = 7
        let y = tape.push_op(Tensor::scalar(12.0), &[sq, x], AddPair).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 7.0);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(2.0));
        let y = tape.push_op(Tensor::scalar(4.0), &[x], Square).unwrap();
        let g = tape.backward(y).unwrap();
        assert!(g.get(x).is_none());
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let err = tape.push_op(Tensor::scalar(f64::NAN), &[x], Square).unwrap_err();
        assert!(matches!(err, Error::NonFinite { ref op } if op == "square"));
    }

    #[test]
    fn inference_tape_records_nothing() {
        let mut tape = Tape::inference();
        let x = tape.param(Tensor::scalar(2.0));
        assert!(!tape.requires_grad(x));
        let y = tape.push_op(Tensor::scalar(4.0), &[x], Square).unwrap();
        assert!(!tape.requires_grad(y));
    }
}
