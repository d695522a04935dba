//! Reverse-mode tape. Every op appends a node holding its output value;
//! `backward` walks the nodes in exact reverse order and accumulates
//! gradients additively, so a variable used twice receives both
//! contributions.

use super::kernels::{
    add, conv2d, conv2d_backward, mul, relu, relu_backward, transposed_conv2d, transposed_conv2d_backward, ConvGeometry,
};
use super::{Scalar, Tensor};
use crate::error::{shape_err, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    TransposedConv2d {
        input: Var,
        weight: Var,
        geom: ConvGeometry,
    },
    Relu(Var),
    Mul(Var, Var),
    Add(Var, Var),
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable leaf whose gradient is reported by `backward`.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a constant leaf; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// `bias` is stored as a tensor holding one value per filter.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, geom: ConvGeometry) -> Result<Var> {
        let out = conv2d(self.value(input), self.value(weight), self.value(bias).data(), geom)?;
        let rg = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    pub fn transposed_conv2d(&mut self, input: Var, weight: Var, geom: ConvGeometry) -> Result<Var> {
        let out = transposed_conv2d(self.value(input), self.value(weight), geom)?;
        let rg = self.needs(input) || self.needs(weight);
        Ok(self.push(out, Op::TransposedConv2d { input, weight, geom }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = relu(self.value(input));
        let rg = self.needs(input);
        self.push(out, Op::Relu(input), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = mul(self.value(a), self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = add(self.value(a), self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Back-propagates `seed` (the gradient of a scalar objective with
    /// respect to `output`) through every recorded op.
    pub fn backward(&self, output: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        if seed.shape() != self.value(output).shape() {
            return Err(shape_err!(
                "seed gradient {} for output {}",
                seed.shape(),
                self.value(output).shape()
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed);
        for idx in (0..=output.0).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match node.op {
                Op::Leaf => {
                    grads[idx] = Some(grad);
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    geom,
                } => {
                    let g = conv2d_backward(self.value(input), self.value(weight), &grad, geom, self.needs(input))?;
                    if let Some(gi) = g.input {
                        accumulate(&mut grads, input, gi)?;
                    }
                    if self.needs(weight) {
                        accumulate(&mut grads, weight, g.weight)?;
                    }
                    if self.needs(bias) {
                        let shape = self.value(bias).shape();
                        accumulate(&mut grads, bias, Tensor::from_vec(shape, g.bias)?)?;
                    }
                }
                Op::TransposedConv2d { input, weight, geom } => {
                    let g = transposed_conv2d_backward(
                        self.value(input),
                        self.value(weight),
                        &grad,
                        geom,
                        self.needs(input),
                    )?;
                    if let Some(gi) = g.input {
                        accumulate(&mut grads, input, gi)?;
                    }
                    if self.needs(weight) {
                        accumulate(&mut grads, weight, g.weight)?;
                    }
                }
                Op::Relu(input) => {
                    if self.needs(input) {
                        let gi = relu_backward(&node.value, &grad)?;
                        accumulate(&mut grads, input, gi)?;
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(a) {
                        accumulate(&mut grads, a, mul(&grad, self.value(b))?)?;
                    }
                    if self.needs(b) {
                        accumulate(&mut grads, b, mul(&grad, self.value(a))?)?;
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(a) {
                        accumulate(&mut grads, a, grad.clone())?;
                    }
                    if self.needs(b) {
                        accumulate(&mut grads, b, grad)?;
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a parameter leaf; `None` when the objective does not
    /// depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reused_parameter_accumulates() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::full([1, 1, 1, 2], 3.0));
        let sq = tape.mul(a, a).unwrap();
        let out = tape.add(sq, a).unwrap();
        let grads = tape.backward(out, Tensor::full([1, 1, 1, 2], 1.0)).unwrap();
        // d(a² + a)/da = 2a + 1
        assert_eq!(grads.get(a).unwrap().data(), &[7.0, 7.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full([1, 1, 2, 2], 1.0));
        let w = tape.param(Tensor::full([1, 1, 1, 1], 2.0));
        let b = tape.param(Tensor::zeros([1, 1, 1, 1]));
        let y = tape.conv2d(x, w, b, ConvGeometry::new(1, 0)).unwrap();
        let grads = tape.backward(y, Tensor::full([1, 1, 2, 2], 1.0)).unwrap();
        assert!(grads.get(x).is_none());
        assert_eq!(grads.get(w).unwrap().data(), &[4.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[4.0]);
    }

    #[test]
    fn seed_shape_is_checked() {
        let mut tape = Tape::<f32>::new();
        let a = tape.param(Tensor::zeros([1, 1, 2, 2]));
        let r = tape.relu(a);
        assert!(tape.backward(r, Tensor::zeros([1, 1, 1, 1])).is_err());
    }
}
