use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

pub fn relu<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes the gradient where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(x: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    grad_out.ensure_shape(x.shape())?;
    let mut g = grad_out.clone();
    for (g, &v) in g.data_mut().iter_mut().zip(x.data()) {
        if v <= T::zero() {
            *g = T::zero();
        }
    }
    Ok(g)
}
