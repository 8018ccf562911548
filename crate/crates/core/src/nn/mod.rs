//! Minimal layer library with hand-written backward passes.
//!
//! Every layer caches what it needs during [`Layer::forward_train`] and
//! accumulates parameter gradients in [`Layer::backward`]. Inference goes
//! through [`Layer::infer`], which takes `&self` and is a pure function of
//! the weights and the input.

mod conv;
mod dense;
mod loss;
mod lstm;
mod norm;
mod pool;
mod tensor;

use rand::Rng;
use thiserror::Error;

use crate::scalar::Scalar;

pub use conv::Conv1d;
pub use dense::{Dropout, Flatten, Linear, Relu};
pub use loss::{log_softmax_rows, softmax_cross_entropy};
pub use lstm::BiLstm;
pub use norm::BatchNorm1d;
pub use pool::{AdaptiveMaxPool1d, MaxPool1d};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite activation after layer {0}")]
    NonFinite(String),
    #[error("backward called without a cached training forward in {0}")]
    NoCache(&'static str),
}

/// Forward-pass mode. `Eval` disables dropout and uses running batch-norm
/// statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Trainable parameter with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            value: vec![T::zero(); len],
            grad: vec![T::zero(); len],
        }
    }

    pub fn filled(name: impl Into<String>, shape: &[usize], v: T) -> Self {
        let mut p = Self::zeros(name, shape);
        p.value.iter_mut().for_each(|x| *x = v);
        p
    }

    /// Uniform on `[-bound, bound]`.
    pub fn uniform<R: Rng>(name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(name, shape);
        for v in &mut p.value {
            *v = T::of(rng.random_range(-bound..=bound));
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Non-trainable state that still belongs in a checkpoint (running
/// statistics).
#[derive(Debug, Clone)]
pub struct Buffer<T> {
    pub name: String,
    pub value: Vec<T>,
}

pub trait Layer<T: Scalar>: Send + Sync {
    fn name(&self) -> String;

    fn infer(&self, input: Tensor<T>) -> Result<Tensor<T>, NetError>;

    fn forward_train(&mut self, input: Tensor<T>) -> Result<Tensor<T>, NetError>;

    /// Takes dLoss/dOutput, accumulates parameter gradients and returns
    /// dLoss/dInput.
    fn backward(&mut self, grad_output: Tensor<T>) -> Result<Tensor<T>, NetError>;

    fn params(&self) -> Vec<&Param<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }

    fn buffers(&self) -> Vec<&Buffer<T>> {
        Vec::new()
    }

    fn buffers_mut(&mut self) -> Vec<&mut Buffer<T>> {
        Vec::new()
    }

    /// Drops any cached activations.
    fn clear_cache(&mut self) {}
}

/// Ordered stack of layers.
pub struct Sequential<T: Scalar> {
    layers: Vec<Box<dyn Layer<T>>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Box<dyn Layer<T>>>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[Box<dyn Layer<T>>] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NetError> {
        self.forward_range(input, mode, self.layers.len())
    }

    /// Runs the first `upto` layers.
    pub fn forward_range(
        &mut self,
        input: &Tensor<T>,
        mode: Mode,
        upto: usize,
    ) -> Result<Tensor<T>, NetError> {
        if mode == Mode::Eval {
            return self.infer_range(input, upto);
        }
        let mut x = input.clone();
        for layer in &mut self.layers[..upto] {
            x = layer.forward_train(x)?;
            if !x.all_finite() {
                return Err(NetError::NonFinite(layer.name()));
            }
        }
        Ok(x)
    }

    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        self.infer_range(input, self.layers.len())
    }

    pub fn infer_range(&self, input: &Tensor<T>, upto: usize) -> Result<Tensor<T>, NetError> {
        let mut x = input.clone();
        for layer in &self.layers[..upto] {
            x = layer.infer(x)?;
            if !x.all_finite() {
                return Err(NetError::NonFinite(layer.name()));
            }
        }
        Ok(x)
    }

    pub fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        let mut g = grad_output.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(g)?;
        }
        Ok(g)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn buffers(&self) -> Vec<&Buffer<T>> {
        self.layers.iter().flat_map(|l| l.buffers()).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Buffer<T>> {
        self.layers.iter_mut().flat_map(|l| l.buffers_mut()).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn clear_cache(&mut self) {
        for l in &mut self.layers {
            l.clear_cache();
        }
    }
}
