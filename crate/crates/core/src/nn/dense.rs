use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Layer, NetError, Param, Tensor};
use crate::scalar::Scalar;

/// Affine map `y = x W^T + b` on `(batch, in_features)`.
pub struct Linear<T: Scalar> {
    in_features: usize,
    out_features: usize,
    weight: Param<T>,
    bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        Self {
            in_features,
            out_features,
            weight: Param::uniform("weight", &[out_features, in_features], bound, rng),
            bias: Param::uniform("bias", &[out_features], bound, rng),
            input: None,
        }
    }

    fn batch_of(&self, input: &Tensor<T>) -> Result<usize, NetError> {
        match *input.shape() {
            [n, f] if f == self.in_features => Ok(n),
            _ => Err(NetError::Shape(format!(
                "linear expects (batch, {}), got {:?}",
                self.in_features,
                input.shape()
            ))),
        }
    }

    fn run(&self, input: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        let n = self.batch_of(input)?;
        let (fi, fo) = (self.in_features, self.out_features);
        let mut out = Tensor::zeros(&[n, fo]);
        for row in out.data_mut().chunks_mut(fo) {
            row.copy_from_slice(&self.bias.value);
        }
        T::gemm(
            n,
            fi,
            fo,
            T::one(),
            (input.data(), fi as isize, 1),
            (&self.weight.value, 1, fi as isize),
            T::one(),
            (out.data_mut(), fo as isize, 1),
        );
        Ok(out)
    }
}

impl<T: Scalar> Layer<T> for Linear<T> {
    fn name(&self) -> String {
        format!("Linear({}, {})", self.in_features, self.out_features)
    }

    fn infer(&self, input: Tensor<T>) -> Result<Tensor<T>, NetError> {
        self.run(&input)
    }

    fn forward_train(&mut self, input: Tensor<T>) -> Result<Tensor<T>, NetError> {
        let out = self.run(&input)?;
        self.input = Some(input);
        Ok(out)
    }

    fn backward(&mut self, grad_output: Tensor<T>) -> Result<Tensor<T>, NetError> {
        let input = self.input.take().ok_or(NetError::NoCache("Linear"))?;
        let n = self.batch_of(&input)?;
        let (fi, fo) = (self.in_features, self.out_features);
        if grad_output.shape() != [n, fo] {
            return Err(NetError::Shape(format!(
                "linear backward got gradient {:?}",
                grad_output.shape()
            )));
        }
        let dy = grad_output.data();
        for row in dy.chunks(fo) {
            for (g, &d) in self.bias.grad.iter_mut().zip(row) {
                *g += d;
            }
        }
        // dW += dY^T X
        T::gemm(
            fo,
            n,
            fi,
            T::one(),
            (dy, 1, fo as isize),
            (input.data(), fi as isize, 1),
            T::one(),
            (&mut self.weight.grad, fi as isize, 1),
        );
        let mut grad_input = Tensor::zeros(&[n, fi]);
        T::gemm(
            n,
            fo,
            fi,
            T::one(),
            (dy, fo as isize, 1),
            (&self.weight.value, fi as isize, 1),
            T::zero(),
            (grad_input.data_mut(), fi as isize, 1),
        );
        Ok(grad_input)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn clear_cache(&mut self) {
        self.input = None;
    }
}

#[derive(Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Layer<T> for Relu {
    fn name(&self) -> String {
        "ReLU".into()
    }

    fn infer(&self, mut input: Tensor<T>) -> Result<Tensor<T>, NetError> {
        input.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
        Ok(input)
    }

    fn forward_train(&mut self, input: Tensor<T>) -> Result<Tensor<T>, NetError> {
        self.mask = Some(input.data().iter().map(|&v| v > T::zero()).collect());
        self.infer(input)
    }

    fn backward(&mut self, mut g: Tensor<T>) -> Result<Tensor<T>, NetError> {
        let mask = self.mask.take().ok_or(NetError::NoCache("ReLU"))?;
        if mask.len() != g.len() {
            return Err(NetError::Shape("relu backward size mismatch".into()));
        }
        for (v, &keep) in g.data_mut().iter_mut().zip(&mask) {
            if !keep {
                *v = T::zero();
            }
        }
        Ok(g)
    }

    fn clear_cache(&mut self) {
        self.mask = None;
    }
}

/// Inverted dropout; identity in inference. Owns a seeded generator so a run
/// is reproducible from its seed.
pub struct Dropout<T> {
    rate: f64,
    rng: ChaCha8Rng,
    mask: Option<Vec<T>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(rate: f64, seed: u64) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        Self {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mask: None,
        }
    }
}

/// Draws an inverted-dropout mask of `len` entries (0 or `1/(1-rate)`).
pub(crate) fn dropout_mask<T: Scalar>(rate: f64, len: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect()
}

impl<T: Scalar> Layer<T> for Dropout<T> {
    fn name(&self) -> String {
        format!("Dropout({})", self.rate)
    }

    fn infer(&self, input: Tensor<T>) -> Result<Tensor<T>, NetError> {
        Ok(input)
    }

    fn forward_train(&mut self, mut input: Tensor<T>) -> Result<Tensor<T>, NetError> {
        if self.rate == 0.0 {
            self.mask = Some(vec![T::one(); input.len()]);
            return Ok(input);
        }
        let mask = dropout_mask::<T>(self.rate, input.len(), &mut self.rng);
        for (v, &m) in input.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        self.mask = Some(mask);
        Ok(input)
    }

    fn backward(&mut self, mut g: Tensor<T>) -> Result<Tensor<T>, NetError> {
        let mask = self.mask.take().ok_or(NetError::NoCache("Dropout"))?;
        if mask.len() != g.len() {
            return Err(NetError::Shape("dropout backward size mismatch".into()));
        }
        for (v, &m) in g.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        Ok(g)
    }

    fn clear_cache(&mut self) {
        self.mask = None;
    }
}

/// `(batch, c, l)` to `(batch, c * l)`.
#[derive(Default)]
pub struct Flatten {
    input_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Layer<T> for Flatten {
    fn name(&self) -> String {
        "Flatten".into()
    }

    fn infer(&self, input: Tensor<T>) -> Result<Tensor<T>, NetError> {
        let n = input.batch();
        let rest = if n == 0 { 0 } else { input.len() / n };
        input.reshape(&[n, rest])
    }

    fn forward_train(&mut self, input: Tensor<T>) -> Result<Tensor<T>, NetError> {
        self.input_shape = Some(input.shape().to_vec());
        self.infer(input)
    }

    fn backward(&mut self, grad_output: Tensor<T>) -> Result<Tensor<T>, NetError> {
        let shape = self.input_shape.take().ok_or(NetError::NoCache("Flatten"))?;
        grad_output.reshape(&shape)
    }

    fn clear_cache(&mut self) {
        self.input_shape = None;
    }
}
