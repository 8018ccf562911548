use super::{Buffer, Layer, NetError, Param, Tensor};
use crate::scalar::Scalar;

const EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.1;

struct NormCache<T> {
    shape: Vec<usize>,
    x_hat: Vec<T>,
    inv_std: Vec<T>,
}

/// Batch normalization over `(batch, channels[, length])`; statistics are per
/// channel across batch and length.
///
/// Running variance is updated with the unbiased estimate. A channel that
/// sees a single value in a training batch normalizes to `beta` and leaves
/// the running statistics untouched.
pub struct BatchNorm1d<T: Scalar> {
    channels: usize,
    gamma: Param<T>,
    beta: Param<T>,
    running_mean: Buffer<T>,
    running_var: Buffer<T>,
    cache: Option<NormCache<T>>,
}

impl<T: Scalar> BatchNorm1d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::filled("weight", &[channels], T::one()),
            beta: Param::zeros("bias", &[channels]),
            running_mean: Buffer {
                name: "running_mean".into(),
                value: vec![T::zero(); channels],
            },
            running_var: Buffer {
                name: "running_var".into(),
                value: vec![T::one(); channels],
            },
            cache: None,
        }
    }

    fn dims(&self, input: &Tensor<T>) -> Result<(usize, usize), NetError> {
        let (n, c, l) = input.ncl()?;
        if c != self.channels {
            return Err(NetError::Shape(format!(
                "batch norm expects {} channels, got {c}",
                self.channels
            )));
        }
        Ok((n, l))
    }
}

impl<T: Scalar> Layer<T> for BatchNorm1d<T> {
    fn name(&self) -> String {
        format!("BatchNorm1d({})", self.channels)
    }

    fn infer(&self, mut input: Tensor<T>) -> Result<Tensor<T>, NetError> {
        let (n, l) = self.dims(&input)?;
        let eps = T::of(EPS);
        let y = input.data_mut();
        for c in 0..self.channels {
            let scale = self.gamma.value[c] / (self.running_var.value[c] + eps).sqrt();
            let shift = self.beta.value[c] - self.running_mean.value[c] * scale;
            for s in 0..n {
                for v in &mut y[(s * self.channels + c) * l..(s * self.channels + c + 1) * l] {
                    *v = *v * scale + shift;
                }
            }
        }
        Ok(input)
    }

    fn forward_train(&mut self, input: Tensor<T>) -> Result<Tensor<T>, NetError> {
        let (n, l) = self.dims(&input)?;
        let count = n * l;
        let cnt = T::from_usize(count).unwrap();
        let eps = T::of(EPS);
        let momentum = T::of(MOMENTUM);
        let shape = input.shape().to_vec();
        let mut out = input;
        let y = out.data_mut();
        let mut x_hat = vec![T::zero(); y.len()];
        let mut inv_std = vec![T::zero(); self.channels];
        for c in 0..self.channels {
            let rows = (0..n).map(|s| (s * self.channels + c) * l);
            let mut sum = T::zero();
            for r in rows.clone() {
                sum += y[r..r + l].iter().copied().sum::<T>();
            }
            let mean = sum / cnt;
            let mut sq = T::zero();
            for r in rows.clone() {
                sq += y[r..r + l].iter().map(|&v| (v - mean) * (v - mean)).sum::<T>();
            }
            let var = sq / cnt;
            let istd = T::one() / (var + eps).sqrt();
            inv_std[c] = istd;
            for r in rows {
                for i in r..r + l {
                    let h = (y[i] - mean) * istd;
                    x_hat[i] = h;
                    y[i] = self.gamma.value[c] * h + self.beta.value[c];
                }
            }
            if count > 1 {
                let unbiased = sq / T::from_usize(count - 1).unwrap();
                let rm = &mut self.running_mean.value[c];
                *rm = (T::one() - momentum) * *rm + momentum * mean;
                let rv = &mut self.running_var.value[c];
                *rv = (T::one() - momentum) * *rv + momentum * unbiased;
            }
        }
        self.cache = Some(NormCache {
            shape,
            x_hat,
            inv_std,
        });
        Ok(out)
    }

    fn backward(&mut self, mut grad_output: Tensor<T>) -> Result<Tensor<T>, NetError> {
        let cache = self.cache.take().ok_or(NetError::NoCache("BatchNorm1d"))?;
        if grad_output.shape() != cache.shape.as_slice() {
            return Err(NetError::Shape(format!(
                "batch norm backward got gradient {:?}",
                grad_output.shape()
            )));
        }
        let (n, _, l) = grad_output.ncl()?;
        let cnt = T::from_usize(n * l).unwrap();
        let dy = grad_output.data_mut();
        for c in 0..self.channels {
            let rows = (0..n).map(|s| (s * self.channels + c) * l);
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for r in rows.clone() {
                for i in r..r + l {
                    sum_dy += dy[i];
                    sum_dy_xhat += dy[i] * cache.x_hat[i];
                }
            }
            self.gamma.grad[c] += sum_dy_xhat;
            self.beta.grad[c] += sum_dy;
            let g = self.gamma.value[c];
            let k = g * cache.inv_std[c] / cnt;
            for r in rows {
                for i in r..r + l {
                    dy[i] = k * (cnt * dy[i] - sum_dy - cache.x_hat[i] * sum_dy_xhat);
                }
            }
        }
        Ok(grad_output)
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn buffers(&self) -> Vec<&Buffer<T>> {
        vec![&self.running_mean, &self.running_var]
    }

    fn buffers_mut(&mut self) -> Vec<&mut Buffer<T>> {
        vec![&mut self.running_mean, &mut self.running_var]
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_output_is_normalized_per_channel() {
        let mut bn = BatchNorm1d::<f64>::new(2);
        let x = Tensor::from_vec(&[2, 2, 3], vec![1., 2., 3., 10., 10., 40., 4., 5., 6., 20., 30., 30.]).unwrap();
        let y = bn.forward_train(x).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = (0..2).flat_map(|s| y.data()[(s * 2 + c) * 3..(s * 2 + c + 1) * 3].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / 6.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
        // running mean moved 10% toward the batch mean of channel 0 (3.5)
        assert!((bn.running_mean.value[0] - 0.35).abs() < 1e-12);
    }

    #[test]
    fn eval_uses_running_statistics() {
        let bn = BatchNorm1d::<f64>::new(1);
        let x = Tensor::from_vec(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let y = bn.infer(x.clone()).unwrap();
        // fresh running stats are mean 0, var 1
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b / (1.0 + EPS).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn single_value_batch_is_finite() {
        let mut bn = BatchNorm1d::<f32>::new(4);
        let x = Tensor::from_vec(&[1, 4], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let y = bn.forward_train(x).unwrap();
        assert!(y.all_finite());
        assert_eq!(bn.running_var.value, vec![1.0; 4]);
    }
}
