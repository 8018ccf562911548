use super::{Layer, NetError, Tensor};
use crate::scalar::Scalar;

struct PoolCache {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

fn expect_3d<T: Scalar>(input: &Tensor<T>, what: &str) -> Result<(usize, usize, usize), NetError> {
    match *input.shape() {
        [n, c, l] => Ok((n, c, l)),
        _ => Err(NetError::Shape(format!(
            "{what} expects (batch, channels, length), got {:?}",
            input.shape()
        ))),
    }
}

/// Max over windows `[start, end)` of every row; returns output and the flat
/// input index of each maximum (first occurrence wins).
fn pool_rows<T: Scalar>(
    input: &Tensor<T>,
    out_len: usize,
    bounds: impl Fn(usize) -> (usize, usize),
) -> (Tensor<T>, Vec<usize>) {
    let (n, c, l) = input.ncl().expect("checked by caller");
    let mut out = Tensor::zeros(&[n, c, out_len]);
    let mut argmax = vec![0usize; n * c * out_len];
    let x = input.data();
    let y = out.data_mut();
    for row in 0..n * c {
        let base = row * l;
        for i in 0..out_len {
            let (start, end) = bounds(i);
            let mut best = base + start;
            for j in base + start + 1..base + end {
                if x[j] > x[best] {
                    best = j;
                }
            }
            y[row * out_len + i] = x[best];
            argmax[row * out_len + i] = best;
        }
    }
    (out, argmax)
}

fn scatter_back<T: Scalar>(cache: PoolCache, grad_output: &Tensor<T>) -> Result<Tensor<T>, NetError> {
    if grad_output.len() != cache.argmax.len() {
        return Err(NetError::Shape(format!(
            "pool backward got gradient {:?}",
            grad_output.shape()
        )));
    }
    let mut grad_input = Tensor::zeros(&cache.input_shape);
    let dx = grad_input.data_mut();
    for (&idx, &g) in cache.argmax.iter().zip(grad_output.data()) {
        dx[idx] += g;
    }
    Ok(grad_input)
}

/// Fixed-window max pooling.
pub struct MaxPool1d {
    kernel: usize,
    stride: usize,
    cache: Option<PoolCache>,
}

impl MaxPool1d {
    pub fn new(kernel: usize, stride: usize) -> Self {
        Self {
            kernel,
            stride,
            cache: None,
        }
    }

    fn out_len(&self, len: usize) -> Result<usize, NetError> {
        if len < self.kernel {
            return Err(NetError::Shape(format!(
                "max pool kernel {} longer than input {len}",
                self.kernel
            )));
        }
        Ok((len - self.kernel) / self.stride + 1)
    }

    fn run<T: Scalar>(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>), NetError> {
        let (_, _, l) = expect_3d(input, "max pool")?;
        let out_len = self.out_len(l)?;
        Ok(pool_rows(input, out_len, |i| {
            (i * self.stride, i * self.stride + self.kernel)
        }))
    }
}

impl<T: Scalar> Layer<T> for MaxPool1d {
    fn name(&self) -> String {
        format!("MaxPool1d(kernel={}, stride={})", self.kernel, self.stride)
    }

    fn infer(&self, input: Tensor<T>) -> Result<Tensor<T>, NetError> {
        Ok(self.run(&input)?.0)
    }

    fn forward_train(&mut self, input: Tensor<T>) -> Result<Tensor<T>, NetError> {
        let (out, argmax) = self.run(&input)?;
        self.cache = Some(PoolCache {
            input_shape: input.shape().to_vec(),
            argmax,
        });
        Ok(out)
    }

    fn backward(&mut self, grad_output: Tensor<T>) -> Result<Tensor<T>, NetError> {
        let cache = self.cache.take().ok_or(NetError::NoCache("MaxPool1d"))?;
        scatter_back(cache, &grad_output)
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Max pooling to a fixed output length; bin `i` of `out` covers
/// `[floor(i*L/out), ceil((i+1)*L/out))`.
pub struct AdaptiveMaxPool1d {
    out_len: usize,
    cache: Option<PoolCache>,
}

impl AdaptiveMaxPool1d {
    pub fn new(out_len: usize) -> Self {
        Self {
            out_len,
            cache: None,
        }
    }

    fn run<T: Scalar>(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>), NetError> {
        let (_, _, l) = expect_3d(input, "adaptive max pool")?;
        if l == 0 {
            return Err(NetError::Shape("adaptive max pool on empty input".into()));
        }
        let out = self.out_len;
        Ok(pool_rows(input, out, |i| {
            ((i * l) / out, ((i + 1) * l).div_ceil(out))
        }))
    }
}

impl<T: Scalar> Layer<T> for AdaptiveMaxPool1d {
    fn name(&self) -> String {
        format!("AdaptiveMaxPool1d({})", self.out_len)
    }

    fn infer(&self, input: Tensor<T>) -> Result<Tensor<T>, NetError> {
        Ok(self.run(&input)?.0)
    }

    fn forward_train(&mut self, input: Tensor<T>) -> Result<Tensor<T>, NetError> {
        let (out, argmax) = self.run(&input)?;
        self.cache = Some(PoolCache {
            input_shape: input.shape().to_vec(),
            argmax,
        });
        Ok(out)
    }

    fn backward(&mut self, grad_output: Tensor<T>) -> Result<Tensor<T>, NetError> {
        let cache = self.cache.take().ok_or(NetError::NoCache("AdaptiveMaxPool1d"))?;
        scatter_back(cache, &grad_output)
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxpool_halves_and_floors() {
        let pool = MaxPool1d::new(2, 2);
        let x = Tensor::from_vec(&[1, 1, 5], vec![1.0f64, 3.0, 2.0, 2.0, 9.0]).unwrap();
        let y = Layer::<f64>::infer(&pool, x.clone()).unwrap();
        assert_eq!(y.data(), &[3.0, 2.0]);
    }

    #[test]
    fn adaptive_bins_cover_input() {
        let pool = AdaptiveMaxPool1d::new(4);
        let x = Tensor::from_vec(&[1, 1, 10], (0..10).map(|v| v as f64).collect()).unwrap();
        // bins [0,3) [2,5) [5,8) [7,10)
        let y = Layer::<f64>::infer(&pool, x.clone()).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0, 7.0, 9.0]);
        let one = AdaptiveMaxPool1d::new(1);
        assert_eq!(Layer::<f64>::infer(&one, x).unwrap().data(), &[9.0]);
    }

    #[test]
    fn backward_routes_to_argmax() {
        let mut pool = MaxPool1d::new(2, 2);
        let x = Tensor::from_vec(&[1, 1, 4], vec![1.0f64, 3.0, 5.0, 2.0]).unwrap();
        pool.forward_train(x).unwrap();
        let g = Tensor::from_vec(&[1, 1, 2], vec![10.0, 20.0]).unwrap();
        let dx = pool.backward(g).unwrap();
        assert_eq!(dx.data(), &[0.0, 10.0, 20.0, 0.0]);
    }
}
