use crate::error::{Error, Result};

use super::{Float, Tape, Tensor, Var};

/// A named trainable tensor with its gradient buffer.
///
/// Frozen parameters enter the tape as constants, so their gradient stays
/// zero, and optimizers skip them.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    name: String,
    value: Tensor<T>,
    grad: Vec<T>,
    frozen: bool,
}

impl<T: Float> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = vec![T::zero(); value.numel()];
        Parameter {
            name: name.into(),
            value,
            grad,
            frozen: false,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor<T> {
        &mut self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn grad(&self) -> &[T] {
        &self.grad
    }

    /// Value and gradient borrowed together, for optimizer updates.
    pub fn value_and_grad_mut(&mut self) -> (&mut [T], &mut [T]) {
        (self.value.data_mut(), &mut self.grad)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }
}

/// Handles for a module's parameters on one tape, in `parameters()` order.
#[derive(Clone, Debug)]
pub struct Bound(pub(crate) Vec<Var>);

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.0
    }

    /// Same binding with parameter `index` routed to `var` instead.
    pub fn substitute(mut self, index: usize, var: Var) -> Bound {
        self.0[index] = var;
        self
    }
}

impl std::ops::Index<usize> for Bound {
    type Output = Var;

    fn index(&self, i: usize) -> &Var {
        &self.0[i]
    }
}

pub trait Module<T: Float> {
    fn parameters(&self) -> Vec<&Parameter<T>>;

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>>;

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.value().numel()).sum()
    }

    fn set_frozen(&mut self, frozen: bool) {
        for p in self.parameters_mut() {
            p.set_frozen(frozen);
        }
    }

    fn zero_grad(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    /// Adds the tape's gradients into the parameter buffers. Frozen and
    /// untracked parameters are left untouched.
    fn accumulate_grads(&mut self, tape: &Tape<T>, bound: &Bound) -> Result<()> {
        let params = self.parameters_mut();
        if params.len() != bound.0.len() {
            return Err(Error::Validation(format!(
                "binding has {} parameters, module has {}",
                bound.0.len(),
                params.len()
            )));
        }
        for (p, &var) in params.into_iter().zip(&bound.0) {
            if p.is_frozen() {
                continue;
            }
            if let Some(g) = tape.grad(var) {
                if g.len() != p.grad.len() {
                    return Err(Error::dim(
                        "accumulate_grads",
                        format!("gradient length mismatch for {}", p.name),
                    ));
                }
                for (dst, &src) in p.grad.iter_mut().zip(g) {
                    *dst += src;
                }
            }
        }
        Ok(())
    }
}
