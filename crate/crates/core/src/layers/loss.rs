use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Row-wise softmax of `(n, classes, 1, 1)` logits, max-subtracted.
pub fn softmax<T: Scalar>(logits: &Tensor4<T>) -> Tensor4<T> {
    let classes = logits.shape().sample_len();
    let mut p = logits.clone();
    for row in p.data_mut().chunks_exact_mut(classes) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    p
}

/// Mean cross-entropy over the batch and its gradient `(p - onehot) / n`.
pub fn softmax_xent<T: Scalar>(logits: &Tensor4<T>, labels: &[usize]) -> Result<(T, Tensor4<T>)> {
    let s = logits.shape();
    let classes = s.sample_len();
    if labels.len() != s.n {
        return Err(Error::mismatch(format!("{} labels", s.n), labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::IndexOutOfRange {
            what: "label",
            index: bad,
            limit: classes,
        });
    }
    let inv_n = T::one() / T::lit(s.n as f64);
    let mut grad = logits.clone();
    let mut loss = T::zero();
    for (row, &label) in grad.data_mut().chunks_exact_mut(classes).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let log_total = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        loss -= row[label] - max - log_total;
        for (c, v) in row.iter_mut().enumerate() {
            let p = (*v - max - log_total).exp();
            let target = if c == label { T::one() } else { T::zero() };
            *v = (p - target) * inv_n;
        }
    }
    Ok((loss * inv_n, grad))
}
