use super::{NetError, Tensor};
use crate::scalar::Scalar;

/// Row-wise log-softmax of `(batch, classes)` logits.
pub fn log_softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>, NetError> {
    let k = match *logits.shape() {
        [_, k] if k > 0 => k,
        _ => return Err(NetError::Shape(format!("logits must be (batch, classes), got {:?}", logits.shape()))),
    };
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    Ok(out)
}

/// Mean categorical cross-entropy and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>), NetError> {
    let logp = log_softmax_rows(logits)?;
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n || n == 0 {
        return Err(NetError::Shape(format!("{} labels for batch of {n}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(NetError::Shape(format!("label {bad} out of range for {k} classes")));
    }
    let inv_n = T::one() / T::from_usize(n).unwrap();
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(&[n, k]);
    for (&y, (lp, g)) in labels
        .iter()
        .zip(logp.data().chunks(k).zip(grad.data_mut().chunks_mut(k)))
    {
        loss -= lp[y];
        for (j, (gv, &l)) in g.iter_mut().zip(lp).enumerate() {
            let p = l.exp();
            *gv = (if j == y { p - T::one() } else { p }) * inv_n;
        }
    }
    Ok((loss * inv_n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Tensor::from_vec(&[2, 3], vec![0.0f64; 6]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[0, 2]).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
        assert!((grad.data()[0] - (1.0 / 3.0 - 1.0) / 2.0).abs() < 1e-12);
        assert!((grad.data()[1] - (1.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_label_rejected() {
        let logits = Tensor::from_vec(&[1, 2], vec![0.0f32, 1.0]).unwrap();
        assert!(softmax_cross_entropy(&logits, &[2]).is_err());
    }
}
