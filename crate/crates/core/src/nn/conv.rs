use rand::Rng;

use super::{Layer, NetError, Param, Tensor};
use crate::scalar::Scalar;

/// 1-D convolution, stride 1, symmetric zero padding. Lowered to one GEMM per
/// sample over an unfolded `(in_channels * kernel) x out_len` patch matrix.
pub struct Conv1d<T: Scalar> {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    padding: usize,
    weight: Param<T>,
    bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv1d<T> {
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / ((in_channels * kernel) as f64).sqrt();
        Self {
            in_channels,
            out_channels,
            kernel,
            padding,
            weight: Param::uniform("weight", &[out_channels, in_channels, kernel], bound, rng),
            bias: Param::uniform("bias", &[out_channels], bound, rng),
            input: None,
        }
    }

    pub fn out_len(&self, len: usize) -> Result<usize, NetError> {
        let padded = len + 2 * self.padding;
        if padded < self.kernel {
            return Err(NetError::Shape(format!(
                "conv kernel {} longer than padded input {padded}",
                self.kernel
            )));
        }
        Ok(padded - self.kernel + 1)
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<(usize, usize, usize), NetError> {
        let (n, c, l) = match *input.shape() {
            [n, c, l] => (n, c, l),
            _ => {
                return Err(NetError::Shape(format!(
                    "conv expects (batch, channels, length), got {:?}",
                    input.shape()
                )))
            }
        };
        if c != self.in_channels {
            return Err(NetError::Shape(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        Ok((n, l, self.out_len(l)?))
    }

    /// Fills `col` (row `ci * kernel + k`, column `t`) from one sample.
    fn unfold(&self, x: &[T], len: usize, out_len: usize, col: &mut [T]) {
        let k = self.kernel;
        let pad = self.padding as isize;
        for ci in 0..self.in_channels {
            let xs = &x[ci * len..(ci + 1) * len];
            for kk in 0..k {
                let row = &mut col[(ci * k + kk) * out_len..(ci * k + kk + 1) * out_len];
                let shift = kk as isize - pad;
                for (t, v) in row.iter_mut().enumerate() {
                    let src = t as isize + shift;
                    *v = if src >= 0 && (src as usize) < len {
                        xs[src as usize]
                    } else {
                        T::zero()
                    };
                }
            }
        }
    }

    fn run(&self, input: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        let (n, len, out_len) = self.check_input(input)?;
        let patch = self.in_channels * self.kernel;
        let mut out = Tensor::zeros(&[n, self.out_channels, out_len]);
        let mut col = vec![T::zero(); patch * out_len];
        let x = input.data();
        let y = out.data_mut();
        for s in 0..n {
            self.unfold(&x[s * self.in_channels * len..(s + 1) * self.in_channels * len], len, out_len, &mut col);
            let ys = &mut y[s * self.out_channels * out_len..(s + 1) * self.out_channels * out_len];
            for (co, row) in ys.chunks_mut(out_len).enumerate() {
                row.iter_mut().for_each(|v| *v = self.bias.value[co]);
            }
            T::gemm(
                self.out_channels,
                patch,
                out_len,
                T::one(),
                (&self.weight.value, patch as isize, 1),
                (&col, out_len as isize, 1),
                T::one(),
                (ys, out_len as isize, 1),
            );
        }
        Ok(out)
    }
}

impl<T: Scalar> Layer<T> for Conv1d<T> {
    fn name(&self) -> String {
        format!(
            "Conv1d({}, {}, kernel={}, padding={})",
            self.in_channels, self.out_channels, self.kernel, self.padding
        )
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
        let input = self.input.take().ok_or(NetError::NoCache("Conv1d"))?;
        let (n, len, out_len) = self.check_input(&input)?;
        if grad_output.shape() != [n, self.out_channels, out_len] {
            return Err(NetError::Shape(format!(
                "conv backward got gradient {:?}",
                grad_output.shape()
            )));
        }
        let patch = self.in_channels * self.kernel;
        let k = self.kernel;
        let pad = self.padding as isize;
        let mut grad_input = Tensor::zeros(input.shape());
        let mut col = vec![T::zero(); patch * out_len];
        let mut dcol = vec![T::zero(); patch * out_len];
        let x = input.data();
        let dy = grad_output.data();
        let dx = grad_input.data_mut();
        let sample_in = self.in_channels * len;
        let sample_out = self.out_channels * out_len;
        for s in 0..n {
            let dys = &dy[s * sample_out..(s + 1) * sample_out];
            for (co, row) in dys.chunks(out_len).enumerate() {
                self.bias.grad[co] += row.iter().copied().sum::<T>();
            }
            self.unfold(&x[s * sample_in..(s + 1) * sample_in], len, out_len, &mut col);
            // dW += dY * col^T
            T::gemm(
                self.out_channels,
                out_len,
                patch,
                T::one(),
                (dys, out_len as isize, 1),
                (&col, 1, out_len as isize),
                T::one(),
                (&mut self.weight.grad, patch as isize, 1),
            );
            // dcol = W^T * dY
            T::gemm(
                patch,
                self.out_channels,
                out_len,
                T::one(),
                (&self.weight.value, 1, patch as isize),
                (dys, out_len as isize, 1),
                T::zero(),
                (&mut dcol, out_len as isize, 1),
            );
            let dxs = &mut dx[s * sample_in..(s + 1) * sample_in];
            for ci in 0..self.in_channels {
                let dxc = &mut dxs[ci * len..(ci + 1) * len];
                for kk in 0..k {
                    let row = &dcol[(ci * k + kk) * out_len..(ci * k + kk + 1) * out_len];
                    let shift = kk as isize - pad;
                    for (t, &g) in row.iter().enumerate() {
                        let dst = t as isize + shift;
                        if dst >= 0 && (dst as usize) < len {
                            dxc[dst as usize] += g;
                        }
                    }
                }
            }
        }
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

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn direct_conv(
        x: &[f64],
        w: &[f64],
        b: &[f64],
        cin: usize,
        cout: usize,
        k: usize,
        pad: usize,
        len: usize,
    ) -> Vec<f64> {
        let out_len = len + 2 * pad - k + 1;
        let mut y = vec![0.0; cout * out_len];
        for co in 0..cout {
            for t in 0..out_len {
                let mut acc = b[co];
                for ci in 0..cin {
                    for kk in 0..k {
                        let src = t as isize + kk as isize - pad as isize;
                        if src >= 0 && (src as usize) < len {
                            acc += w[(co * cin + ci) * k + kk] * x[ci * len + src as usize];
                        }
                    }
                }
                y[co * out_len + t] = acc;
            }
        }
        y
    }

    #[test]
    fn matches_direct_sum_with_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = Conv1d::<f64>::new(2, 3, 3, 2, &mut rng);
        let len = 7;
        let x: Vec<f64> = (0..2 * len).map(|i| (i as f64 * 0.7).sin()).collect();
        let input = Tensor::from_vec(&[1, 2, len], x.clone()).unwrap();
        let out = conv.infer(input).unwrap();
        assert_eq!(out.shape(), &[1, 3, len + 2]);
        let expect = direct_conv(&x, &conv.weight.value, &conv.bias.value, 2, 3, 3, 2, len);
        for (a, b) in out.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn too_short_input_is_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv1d::<f32>::new(1, 4, 15, 0, &mut rng);
        let input = Tensor::zeros(&[1, 1, 10]);
        assert!(matches!(conv.infer(input), Err(NetError::Shape(_))));
    }

    #[test]
    fn wrong_channel_count_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv1d::<f32>::new(3, 4, 3, 0, &mut rng);
        assert!(conv.infer(Tensor::zeros(&[2, 1, 10])).is_err());
    }
}
