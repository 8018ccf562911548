use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dense::dropout_mask;
use super::{Layer, NetError, Param, Tensor};
use crate::scalar::Scalar;

/// Weights of one direction of one layer. Gate blocks are ordered
/// input, forget, cell, output.
struct Direction<T: Scalar> {
    w_ih: Param<T>,
    w_hh: Param<T>,
    b_ih: Param<T>,
    b_hh: Param<T>,
}

impl<T: Scalar> Direction<T> {
    fn new<R: Rng>(input: usize, hidden: usize, tag: &str, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            w_ih: Param::uniform(format!("weight_ih_{tag}"), &[4 * hidden, input], bound, rng),
            w_hh: Param::uniform(format!("weight_hh_{tag}"), &[4 * hidden, hidden], bound, rng),
            b_ih: Param::uniform(format!("bias_ih_{tag}"), &[4 * hidden], bound, rng),
            b_hh: Param::uniform(format!("bias_hh_{tag}"), &[4 * hidden], bound, rng),
        }
    }
}

/// Per-direction activations kept for backpropagation through time. All
/// buffers are time-major: `(t * batch + n) * width + j`.
struct DirTrace<T> {
    gates: Vec<T>,
    cell: Vec<T>,
    tanh_cell: Vec<T>,
    hidden: Vec<T>,
}

struct LayerTrace<T> {
    input: Vec<T>,
    dropout: Option<Vec<T>>,
    dirs: [DirTrace<T>; 2],
}

struct Trace<T> {
    shape: Vec<usize>,
    layers: Vec<LayerTrace<T>>,
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Stacked bidirectional LSTM over `(batch, features, steps)`.
///
/// The conv feature map is read as a sequence: channels are features, the
/// length axis is time. The output is `(batch, 2 * hidden)`: the last layer's
/// forward state after the final step concatenated with its backward state
/// after step 0. Dropout is applied between layers in training only.
pub struct BiLstm<T: Scalar> {
    input_size: usize,
    hidden: usize,
    dropout: f64,
    layers: Vec<[Direction<T>; 2]>,
    rng: ChaCha8Rng,
    trace: Option<Trace<T>>,
}

impl<T: Scalar> BiLstm<T> {
    pub fn new<R: Rng>(
        input_size: usize,
        hidden: usize,
        num_layers: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        assert!(num_layers >= 1);
        let layers = (0..num_layers)
            .map(|l| {
                let inp = if l == 0 { input_size } else { 2 * hidden };
                [
                    Direction::new(inp, hidden, &format!("l{l}"), rng),
                    Direction::new(inp, hidden, &format!("l{l}_reverse"), rng),
                ]
            })
            .collect();
        let seed = rng.random();
        Self {
            input_size,
            hidden,
            dropout,
            layers,
            rng: ChaCha8Rng::seed_from_u64(seed),
            trace: None,
        }
    }

    fn dims(&self, input: &Tensor<T>) -> Result<(usize, usize), NetError> {
        match *input.shape() {
            [n, f, steps] if f == self.input_size && steps >= 1 => Ok((n, steps)),
            _ => Err(NetError::Shape(format!(
                "lstm expects (batch, {}, steps>=1), got {:?}",
                self.input_size,
                input.shape()
            ))),
        }
    }

    /// One direction over a time-major sequence of width `width`.
    fn run_direction(
        dir: &Direction<T>,
        seq: &[T],
        steps: usize,
        n: usize,
        width: usize,
        hidden: usize,
        reverse: bool,
    ) -> DirTrace<T> {
        let g4 = 4 * hidden;
        let rows = steps * n;
        let mut pre = vec![T::zero(); rows * g4];
        for row in pre.chunks_mut(g4) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = dir.b_ih.value[j] + dir.b_hh.value[j];
            }
        }
        T::gemm(
            rows,
            width,
            g4,
            T::one(),
            (seq, width as isize, 1),
            (&dir.w_ih.value, 1, width as isize),
            T::one(),
            (&mut pre, g4 as isize, 1),
        );
        let mut trace = DirTrace {
            gates: pre,
            cell: vec![T::zero(); rows * hidden],
            tanh_cell: vec![T::zero(); rows * hidden],
            hidden: vec![T::zero(); rows * hidden],
        };
        let mut prev: Option<usize> = None;
        for step in 0..steps {
            let t = if reverse { steps - 1 - step } else { step };
            let gates = &mut trace.gates[t * n * g4..(t + 1) * n * g4];
            if let Some(p) = prev {
                T::gemm(
                    n,
                    hidden,
                    g4,
                    T::one(),
                    (&trace.hidden[p * n * hidden..(p + 1) * n * hidden], hidden as isize, 1),
                    (&dir.w_hh.value, 1, hidden as isize),
                    T::one(),
                    (gates, g4 as isize, 1),
                );
            }
            for s in 0..n {
                let g = &mut gates[s * g4..(s + 1) * g4];
                for j in 0..hidden {
                    let i_g = sigmoid(g[j]);
                    let f_g = sigmoid(g[hidden + j]);
                    let c_g = g[2 * hidden + j].tanh();
                    let o_g = sigmoid(g[3 * hidden + j]);
                    g[j] = i_g;
                    g[hidden + j] = f_g;
                    g[2 * hidden + j] = c_g;
                    g[3 * hidden + j] = o_g;
                    let c_prev = prev.map_or(T::zero(), |p| trace.cell[(p * n + s) * hidden + j]);
                    let c = f_g * c_prev + i_g * c_g;
                    let tc = c.tanh();
                    let idx = (t * n + s) * hidden + j;
                    trace.cell[idx] = c;
                    trace.tanh_cell[idx] = tc;
                    trace.hidden[idx] = o_g * tc;
                }
            }
            prev = Some(t);
        }
        trace
    }

    /// `(n, f, steps)` to time-major `(steps, n, f)`.
    fn to_time_major(input: &Tensor<T>, n: usize, f: usize, steps: usize) -> Vec<T> {
        let x = input.data();
        let mut seq = vec![T::zero(); x.len()];
        for s in 0..n {
            for j in 0..f {
                for t in 0..steps {
                    seq[(t * n + s) * f + j] = x[(s * f + j) * steps + t];
                }
            }
        }
        seq
    }

    fn concat_directions(fwd: &[T], bwd: &[T], rows: usize, hidden: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(rows * 2 * hidden);
        for r in 0..rows {
            out.extend_from_slice(&fwd[r * hidden..(r + 1) * hidden]);
            out.extend_from_slice(&bwd[r * hidden..(r + 1) * hidden]);
        }
        out
    }

    fn final_state(&self, fwd: &DirTrace<T>, bwd: &DirTrace<T>, n: usize, steps: usize) -> Tensor<T> {
        let h = self.hidden;
        let mut out = Tensor::zeros(&[n, 2 * h]);
        let y = out.data_mut();
        for s in 0..n {
            let last = ((steps - 1) * n + s) * h;
            y[s * 2 * h..s * 2 * h + h].copy_from_slice(&fwd.hidden[last..last + h]);
            y[s * 2 * h + h..(s + 1) * 2 * h].copy_from_slice(&bwd.hidden[s * h..(s + 1) * h]);
        }
        out
    }

    fn run(&mut self, input: &Tensor<T>, train: bool) -> Result<(Tensor<T>, Vec<LayerTrace<T>>), NetError> {
        let (n, steps) = self.dims(input)?;
        let h = self.hidden;
        let mut seq = Self::to_time_major(input, n, self.input_size, steps);
        let mut width = self.input_size;
        let mut traces: Vec<LayerTrace<T>> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut mask = None;
            if l > 0 && train && self.dropout > 0.0 {
                let m = dropout_mask::<T>(self.dropout, seq.len(), &mut self.rng);
                for (v, &k) in seq.iter_mut().zip(&m) {
                    *v *= k;
                }
                mask = Some(m);
            }
            let fwd = Self::run_direction(&layer[0], &seq, steps, n, width, h, false);
            let bwd = Self::run_direction(&layer[1], &seq, steps, n, width, h, true);
            let next = Self::concat_directions(&fwd.hidden, &bwd.hidden, steps * n, h);
            traces.push(LayerTrace {
                input: seq,
                dropout: mask,
                dirs: [fwd, bwd],
            });
            seq = next;
            width = 2 * h;
        }
        let top = traces.last().expect("at least one layer");
        let out = self.final_state(&top.dirs[0], &top.dirs[1], n, steps);
        Ok((out, traces))
    }

    /// Backpropagation through time for one direction. `d_out` holds the
    /// gradient w.r.t. this layer's concatenated outputs; gradient w.r.t. the
    /// layer input is accumulated into `d_in`.
    #[allow(clippy::too_many_arguments)]
    fn backward_direction(
        dir: &mut Direction<T>,
        trace: &DirTrace<T>,
        input: &[T],
        d_out: &[T],
        d_in: &mut [T],
        offset: usize,
        steps: usize,
        n: usize,
        width: usize,
        hidden: usize,
        reverse: bool,
    ) {
        let g4 = 4 * hidden;
        let mut d_pre = vec![T::zero(); steps * n * g4];
        let mut dh_next = vec![T::zero(); n * hidden];
        let mut dc_next = vec![T::zero(); n * hidden];
        for step in (0..steps).rev() {
            let t = if reverse { steps - 1 - step } else { step };
            let prev = if step == 0 {
                None
            } else if reverse {
                Some(t + 1)
            } else {
                Some(t - 1)
            };
            for s in 0..n {
                let g = &trace.gates[(t * n + s) * g4..(t * n + s + 1) * g4];
                let dp = &mut d_pre[(t * n + s) * g4..(t * n + s + 1) * g4];
                for j in 0..hidden {
                    let idx = (t * n + s) * hidden + j;
                    let (i_g, f_g, c_g, o_g) = (g[j], g[hidden + j], g[2 * hidden + j], g[3 * hidden + j]);
                    let tc = trace.tanh_cell[idx];
                    let dh = d_out[(t * n + s) * 2 * hidden + offset + j] + dh_next[s * hidden + j];
                    let d_o = dh * tc;
                    let dc = dh * o_g * (T::one() - tc * tc) + dc_next[s * hidden + j];
                    let c_prev = prev.map_or(T::zero(), |p| trace.cell[(p * n + s) * hidden + j]);
                    let d_i = dc * c_g;
                    let d_c = dc * i_g;
                    let d_f = dc * c_prev;
                    dc_next[s * hidden + j] = dc * f_g;
                    dp[j] = d_i * i_g * (T::one() - i_g);
                    dp[hidden + j] = d_f * f_g * (T::one() - f_g);
                    dp[2 * hidden + j] = d_c * (T::one() - c_g * c_g);
                    dp[3 * hidden + j] = d_o * o_g * (T::one() - o_g);
                }
            }
            let dp_t = &d_pre[t * n * g4..(t + 1) * n * g4];
            // dh_prev = dA W_hh
            T::gemm(
                n,
                g4,
                hidden,
                T::one(),
                (dp_t, g4 as isize, 1),
                (&dir.w_hh.value, hidden as isize, 1),
                T::zero(),
                (&mut dh_next, hidden as isize, 1),
            );
            if let Some(p) = prev {
                // dW_hh += dA^T h_prev
                T::gemm(
                    g4,
                    n,
                    hidden,
                    T::one(),
                    (dp_t, 1, g4 as isize),
                    (&trace.hidden[p * n * hidden..(p + 1) * n * hidden], hidden as isize, 1),
                    T::one(),
                    (&mut dir.w_hh.grad, hidden as isize, 1),
                );
            }
        }
        let rows = steps * n;
        for row in d_pre.chunks(g4) {
            for j in 0..g4 {
                dir.b_ih.grad[j] += row[j];
                dir.b_hh.grad[j] += row[j];
            }
        }
        T::gemm(
            g4,
            rows,
            width,
            T::one(),
            (&d_pre, 1, g4 as isize),
            (input, width as isize, 1),
            T::one(),
            (&mut dir.w_ih.grad, width as isize, 1),
        );
        T::gemm(
            rows,
            g4,
            width,
            T::one(),
            (&d_pre, g4 as isize, 1),
            (&dir.w_ih.value, width as isize, 1),
            T::one(),
            (d_in, width as isize, 1),
        );
    }
}

impl<T: Scalar> Layer<T> for BiLstm<T> {
    fn name(&self) -> String {
        format!(
            "LSTM({}, {}, num_layers={}, dropout={}, bidirectional)",
            self.input_size,
            self.hidden,
            self.layers.len(),
            self.dropout
        )
    }

    fn infer(&self, input: Tensor<T>) -> Result<Tensor<T>, NetError> {
        let (n, steps) = self.dims(&input)?;
        let h = self.hidden;
        let mut seq = Self::to_time_major(&input, n, self.input_size, steps);
        let mut width = self.input_size;
        let mut last = None;
        for layer in &self.layers {
            let fwd = Self::run_direction(&layer[0], &seq, steps, n, width, h, false);
            let bwd = Self::run_direction(&layer[1], &seq, steps, n, width, h, true);
            seq = Self::concat_directions(&fwd.hidden, &bwd.hidden, steps * n, h);
            width = 2 * h;
            last = Some((fwd, bwd));
        }
        let (fwd, bwd) = last.expect("at least one layer");
        Ok(self.final_state(&fwd, &bwd, n, steps))
    }

    fn forward_train(&mut self, input: Tensor<T>) -> Result<Tensor<T>, NetError> {
        let (out, layers) = self.run(&input, true)?;
        self.trace = Some(Trace {
            shape: input.shape().to_vec(),
            layers,
        });
        Ok(out)
    }

    fn backward(&mut self, grad_output: Tensor<T>) -> Result<Tensor<T>, NetError> {
        let trace = self.trace.take().ok_or(NetError::NoCache("LSTM"))?;
        let (n, f, steps) = (trace.shape[0], trace.shape[1], trace.shape[2]);
        let h = self.hidden;
        if grad_output.shape() != [n, 2 * h] {
            return Err(NetError::Shape(format!(
                "lstm backward got gradient {:?}",
                grad_output.shape()
            )));
        }
        let mut d_out = vec![T::zero(); steps * n * 2 * h];
        let g = grad_output.data();
        for s in 0..n {
            let last = ((steps - 1) * n + s) * 2 * h;
            d_out[last..last + h].copy_from_slice(&g[s * 2 * h..s * 2 * h + h]);
            let first = s * 2 * h + h;
            d_out[first..first + h].copy_from_slice(&g[s * 2 * h + h..(s + 1) * 2 * h]);
        }
        for (l, lt) in trace.layers.iter().enumerate().rev() {
            let width = if l == 0 { self.input_size } else { 2 * h };
            let mut d_in = vec![T::zero(); steps * n * width];
            let layer = &mut self.layers[l];
            for (d, dir) in layer.iter_mut().enumerate() {
                Self::backward_direction(
                    dir,
                    &lt.dirs[d],
                    &lt.input,
                    &d_out,
                    &mut d_in,
                    d * h,
                    steps,
                    n,
                    width,
                    h,
                    d == 1,
                );
            }
            if let Some(mask) = &lt.dropout {
                for (v, &m) in d_in.iter_mut().zip(mask) {
                    *v *= m;
                }
            }
            d_out = d_in;
        }
        let mut grad_input = Tensor::zeros(&trace.shape);
        let dx = grad_input.data_mut();
        for s in 0..n {
            for j in 0..f {
                for t in 0..steps {
                    dx[(s * f + j) * steps + t] = d_out[(t * n + s) * f + j];
                }
            }
        }
        Ok(grad_input)
    }

    fn params(&self) -> Vec<&Param<T>> {
        self.layers
            .iter()
            .flat_map(|pair| pair.iter())
            .flat_map(|d| [&d.w_ih, &d.w_hh, &d.b_ih, &d.b_hh])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers
            .iter_mut()
            .flat_map(|pair| pair.iter_mut())
            .flat_map(|d| [&mut d.w_ih, &mut d.w_hh, &mut d.b_ih, &mut d.b_hh])
            .collect()
    }

    fn clear_cache(&mut self) {
        self.trace = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_loss(lstm: &BiLstm<f64>, x: &Tensor<f64>, w: &[f64]) -> f64 {
        let y = lstm.infer(x.clone()).unwrap();
        y.data().iter().zip(w).map(|(a, b)| a * b).sum()
    }

    /// Central differences on every parameter and input of a small stack with
    /// several time steps.
    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut lstm = BiLstm::<f64>::new(3, 4, 2, 0.0, &mut rng);
        let (n, f, steps) = (2, 3, 3);
        let x = Tensor::from_vec(
            &[n, f, steps],
            (0..n * f * steps).map(|i| ((i as f64) * 0.77).sin()).collect(),
        )
        .unwrap();
        let w: Vec<f64> = (0..n * 8).map(|i| ((i as f64) * 1.3).cos()).collect();
        let y = lstm.forward_train(x.clone()).unwrap();
        assert_eq!(y, lstm.infer(x.clone()).unwrap());
        let gy = Tensor::from_vec(&[n, 8], w.clone()).unwrap();
        let dx = lstm.backward(gy).unwrap();

        let eps = 1e-6;
        let np = lstm.params().len();
        for pi in 0..np {
            let len = lstm.params()[pi].len();
            for k in 0..len {
                let orig = lstm.params()[pi].value[k];
                lstm.params_mut()[pi].value[k] = orig + eps;
                let up = scalar_loss(&lstm, &x, &w);
                lstm.params_mut()[pi].value[k] = orig - eps;
                let down = scalar_loss(&lstm, &x, &w);
                lstm.params_mut()[pi].value[k] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let analytic = lstm.params()[pi].grad[k];
                let denom = numeric.abs().max(analytic.abs()).max(1e-8);
                assert!(
                    (numeric - analytic).abs() / denom < 1e-5 || (numeric - analytic).abs() < 1e-9,
                    "{} [{k}]: numeric {numeric} analytic {analytic}",
                    lstm.params()[pi].name
                );
            }
        }
        for k in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[k] += eps;
            let mut xm = x.clone();
            xm.data_mut()[k] -= eps;
            let numeric = (scalar_loss(&lstm, &xp, &w) - scalar_loss(&lstm, &xm, &w)) / (2.0 * eps);
            assert!((numeric - dx.data()[k]).abs() < 1e-7, "input {k}");
        }
    }

    #[test]
    fn output_width_is_twice_hidden() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lstm = BiLstm::<f32>::new(256, 100, 3, 0.5, &mut rng);
        let y = lstm.infer(Tensor::zeros(&[4, 256, 1])).unwrap();
        assert_eq!(y.shape(), &[4, 200]);
    }
}
