//! The two classifier architectures: a plain 1-D CNN and a CNN feeding a
//! stacked bidirectional LSTM.

mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{
    AdaptiveMaxPool1d, BatchNorm1d, BiLstm, Buffer, Conv1d, Dropout, Flatten, Layer, Linear,
    MaxPool1d, Mode, NetError, Param, Relu, Sequential, Tensor,
};
use crate::rng::derive_seed;
use crate::scalar::Scalar;

pub use checkpoint::{load_checkpoint, read_checkpoint_header, save_checkpoint, CheckpointHeader, CHECKPOINT_VERSION};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model argument: {0}")]
    InvalidArg(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModelKind {
    Cnn,
    CnnLstm,
}

impl ModelKind {
    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Cnn => "cnn",
            ModelKind::CnnLstm => "cnn_lstm",
        }
    }
}

pub const DEFAULT_DROPOUT: f64 = 0.5;
const CNN_POOL_LEN: usize = 4;
const LSTM_HIDDEN: usize = 100;
const LSTM_LAYERS: usize = 3;

fn default_dropout() -> f64 {
    DEFAULT_DROPOUT
}

fn default_steps() -> usize {
    1
}

/// Declarative description of a network; enough to rebuild it from a
/// checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub in_channels: usize,
    pub num_classes: usize,
    /// Rate for every dropout site, including between LSTM layers.
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    /// Output length of the adaptive pool ahead of the LSTM, i.e. the number
    /// of time steps the recurrence sees. Ignored for the plain CNN.
    #[serde(default = "default_steps")]
    pub lstm_steps: usize,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, in_channels: usize, num_classes: usize) -> Self {
        Self {
            kind,
            in_channels,
            num_classes,
            dropout: DEFAULT_DROPOUT,
            lstm_steps: 1,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.in_channels < 1 {
            return Err(ModelError::InvalidArg("in_channels must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(ModelError::InvalidArg("num_classes must be >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::InvalidArg(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.lstm_steps < 1 {
            return Err(ModelError::InvalidArg("lstm_steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// A built network plus the index where its convolutional feature extractor
/// ends.
pub struct Model<T: Scalar> {
    spec: ModelSpec,
    net: Sequential<T>,
    conv_stack_len: usize,
}

fn conv_block<T: Scalar>(
    layers: &mut Vec<Box<dyn Layer<T>>>,
    rng: &mut ChaCha8Rng,
    cin: usize,
    cout: usize,
    kernel: usize,
    padding: usize,
) {
    layers.push(Box::new(Conv1d::new(cin, cout, kernel, padding, rng)));
    layers.push(Box::new(BatchNorm1d::new(cout)));
    layers.push(Box::new(Relu::new()));
}

/// Plain CNN: four conv blocks, adaptive max-pool to 4, three affine
/// layers.
pub fn build_cnn<T: Scalar>(in_channels: usize, num_classes: usize, seed: u64) -> Result<Model<T>, ModelError> {
    Model::build(&ModelSpec::new(ModelKind::Cnn, in_channels, num_classes), seed)
}

/// CNN feature extractor followed by a 3-layer bidirectional LSTM (hidden 100)
/// and a batch-normalized affine head.
pub fn build_cnn_lstm<T: Scalar>(
    in_channels: usize,
    num_classes: usize,
    seed: u64,
) -> Result<Model<T>, ModelError> {
    Model::build(&ModelSpec::new(ModelKind::CnnLstm, in_channels, num_classes), seed)
}

impl<T: Scalar> Model<T> {
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "model-init", 0));
        let drop_seed = |i: u64| derive_seed(seed, "dropout", i);
        let p = spec.dropout;
        let k = spec.num_classes;
        let mut layers: Vec<Box<dyn Layer<T>>> = Vec::new();
        let conv_stack_len;
        match spec.kind {
            ModelKind::Cnn => {
                conv_block(&mut layers, &mut rng, spec.in_channels, 16, 15, 0);
                conv_block(&mut layers, &mut rng, 16, 32, 3, 0);
                layers.push(Box::new(MaxPool1d::new(2, 2)));
                conv_block(&mut layers, &mut rng, 32, 64, 3, 0);
                conv_block(&mut layers, &mut rng, 64, 128, 3, 0);
                layers.push(Box::new(AdaptiveMaxPool1d::new(CNN_POOL_LEN)));
                conv_stack_len = layers.len();
                layers.push(Box::new(Flatten::new()));
                layers.push(Box::new(Linear::new(128 * CNN_POOL_LEN, 256, &mut rng)));
                layers.push(Box::new(Relu::new()));
                layers.push(Box::new(Dropout::new(p, drop_seed(0))));
                layers.push(Box::new(Linear::new(256, 256, &mut rng)));
                layers.push(Box::new(Relu::new()));
                layers.push(Box::new(Dropout::new(p, drop_seed(1))));
                layers.push(Box::new(Linear::new(256, k, &mut rng)));
            }
            ModelKind::CnnLstm => {
                conv_block(&mut layers, &mut rng, spec.in_channels, 32, 5, 3);
                conv_block(&mut layers, &mut rng, 32, 64, 3, 2);
                layers.push(Box::new(MaxPool1d::new(2, 2)));
                conv_block(&mut layers, &mut rng, 64, 128, 3, 1);
                conv_block(&mut layers, &mut rng, 128, 256, 3, 1);
                layers.push(Box::new(AdaptiveMaxPool1d::new(spec.lstm_steps)));
                conv_stack_len = layers.len();
                layers.push(Box::new(BiLstm::new(256, LSTM_HIDDEN, LSTM_LAYERS, p, &mut rng)));
                layers.push(Box::new(Linear::new(2 * LSTM_HIDDEN, 512, &mut rng)));
                layers.push(Box::new(BatchNorm1d::new(512)));
                layers.push(Box::new(Relu::new()));
                layers.push(Box::new(Dropout::new(p, drop_seed(0))));
                layers.push(Box::new(Linear::new(512, 256, &mut rng)));
                layers.push(Box::new(BatchNorm1d::new(256)));
                layers.push(Box::new(Relu::new()));
                layers.push(Box::new(Dropout::new(p, drop_seed(1))));
                layers.push(Box::new(Linear::new(256, k, &mut rng)));
            }
        }
        Ok(Self {
            spec: spec.clone(),
            net: Sequential::new(layers),
            conv_stack_len,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Box<dyn Layer<T>>] {
        self.net.layers()
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<(), ModelError> {
        match *input.shape() {
            [n, c, _] if n >= 1 && c == self.spec.in_channels => {}
            _ => {
                return Err(NetError::Shape(format!(
                    "model expects (batch>=1, {}, length), got {:?}",
                    self.spec.in_channels,
                    input.shape()
                ))
                .into())
            }
        }
        if !input.all_finite() {
            return Err(ModelError::NonFiniteInput);
        }
        Ok(())
    }

    /// Logits `(batch, num_classes)`. `Train` caches activations for
    /// [`Model::backward`]; `Eval` is pure.
    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, ModelError> {
        self.check_input(input)?;
        Ok(self.net.forward(input, mode)?)
    }

    /// Inference-mode logits.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        self.check_input(input)?;
        Ok(self.net.infer(input)?)
    }

    /// Output of the convolutional feature extractor (before flatten / LSTM),
    /// inference mode.
    pub fn conv_features(&self, input: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        self.check_input(input)?;
        Ok(self.net.infer_range(input, self.conv_stack_len)?)
    }

    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<(), ModelError> {
        self.net.backward(grad_logits)?;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.net.zero_grad();
    }

    pub fn clear_cache(&mut self) {
        self.net.clear_cache();
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.net.params_mut()
    }

    pub fn buffers(&self) -> Vec<&Buffer<T>> {
        self.net.buffers()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Buffer<T>> {
        self.net.buffers_mut()
    }

    /// Copy of all weights and running statistics.
    pub fn state(&self) -> ModelState<T> {
        ModelState {
            params: self.params().iter().map(|p| p.value.clone()).collect(),
            buffers: self.buffers().iter().map(|b| b.value.clone()).collect(),
        }
    }

    pub fn load_state(&mut self, state: &ModelState<T>) -> Result<(), ModelError> {
        if self.params().len() != state.params.len() || self.buffers().len() != state.buffers.len() {
            return Err(ModelError::Checkpoint("state does not match architecture".into()));
        }
        for (p, v) in self.net.params_mut().into_iter().zip(&state.params) {
            if p.value.len() != v.len() {
                return Err(ModelError::Checkpoint(format!("size mismatch for {}", p.name)));
            }
            p.value.copy_from_slice(v);
        }
        for (b, v) in self.net.buffers_mut().into_iter().zip(&state.buffers) {
            if b.value.len() != v.len() {
                return Err(ModelError::Checkpoint(format!("size mismatch for {}", b.name)));
            }
            b.value.copy_from_slice(v);
        }
        Ok(())
    }

    /// Names of every parameter and buffer, prefixed by layer index, in
    /// checkpoint order.
    pub(crate) fn tensor_names(&self) -> (Vec<String>, Vec<String>) {
        let mut params = Vec::new();
        let mut buffers = Vec::new();
        for (i, layer) in self.net.layers().iter().enumerate() {
            params.extend(layer.params().iter().map(|p| format!("{i}.{}", p.name)));
            buffers.extend(layer.buffers().iter().map(|b| format!("{i}.{}", b.name)));
        }
        (params, buffers)
    }
}

/// Snapshot of weights and running statistics in architecture order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    pub params: Vec<Vec<T>>,
    pub buffers: Vec<Vec<T>>,
}

/// Total number of trainable scalars.
pub fn count_parameters<T: Scalar>(model: &Model<T>) -> usize {
    model.params().iter().map(|p| p.len()).sum()
}

/// Categorical distribution over the classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbabilities<T> {
    pub p: Vec<T>,
}

impl<T: Scalar> ClassProbabilities<T> {
    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.p)
    }
}

/// First index of the maximum.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Softmax of one logit vector.
pub fn predict_proba<T: Scalar>(logits: &[T]) -> Result<ClassProbabilities<T>, ModelError> {
    if logits.is_empty() || logits.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteInput);
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    Ok(ClassProbabilities {
        p: exps.into_iter().map(|e| e / total).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cnn_first_conv_parameter_count() {
        for (cin, expect) in [(1usize, 256usize), (3, 736)] {
            let m = build_cnn::<f32>(cin, 3, 0).unwrap();
            let first: usize = m.layers()[0].params().iter().map(|p| p.len()).sum();
            assert_eq!(first, expect);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(build_cnn::<f32>(0, 3, 0), Err(ModelError::InvalidArg(_))));
        assert!(matches!(build_cnn_lstm::<f32>(1, 1, 0), Err(ModelError::InvalidArg(_))));
    }

    #[test]
    fn softmax_closed_form() {
        let p = predict_proba(&[2f64.ln(), 0.0]).unwrap();
        assert!((p.p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.p[1] - 1.0 / 3.0).abs() < 1e-15);
        let u = predict_proba(&[0.0f64, 0.0, 0.0]).unwrap();
        assert!(u.p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!(matches!(predict_proba(&[f64::NAN, 0.0]), Err(ModelError::NonFiniteInput)));
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        assert_eq!(argmax(&[1.0f32, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0f32, 0.0]), 0);
    }

    #[test]
    fn short_input_fails_with_shape_error() {
        let m = build_cnn::<f32>(1, 3, 0).unwrap();
        let err = m.infer(&Tensor::zeros(&[1, 1, 16])).unwrap_err();
        assert!(matches!(err, ModelError::Net(NetError::Shape(_))), "{err:?}");
    }
}
