use crate::error::{Error, Result};
use crate::scalar::{gemm, Scalar};
use crate::tensor::{Shape4, Tensor4};

/// Fully connected layer over the flattened `(c, h, w)` sample.
///
/// Weight is `(out, in, 1, 1)`, bias `(out, 1, 1, 1)`; the output is `(n, out, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor4<T>,
    pub bias: Tensor4<T>,
}

#[derive(Debug, Clone)]
pub struct LinearGrads<T> {
    pub input: Option<Tensor4<T>>,
    pub weight: Tensor4<T>,
    pub bias: Tensor4<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(weight: Tensor4<T>, bias: Tensor4<T>) -> Result<Self> {
        let ws = weight.shape();
        if ws.h != 1 || ws.w != 1 {
            return Err(Error::mismatch("(out, in, 1, 1) weight", ws));
        }
        bias.ensure_shape(Shape4::new(ws.n, 1, 1, 1))?;
        Ok(Linear { weight, bias })
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape().c
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape().n
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        if input.sample_len() != self.in_features() {
            return Err(Error::mismatch(
                format!("{} input features", self.in_features()),
                format!("{} from {input}", input.sample_len()),
            ));
        }
        Ok(Shape4::new(input.n, self.out_features(), 1, 1))
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let out = self.output_shape(x.shape())?;
        let (n, fin, fout) = (out.n, self.in_features(), self.out_features());
        let mut y = Vec::with_capacity(n * fout);
        for _ in 0..n {
            y.extend_from_slice(self.bias.data());
        }
        gemm(
            n,
            fin,
            fout,
            T::one(),
            x.data(),
            false,
            self.weight.data(),
            true,
            T::one(),
            &mut y,
        );
        Tensor4::from_vec(out, y)
    }

    pub fn backward(&self, x: &Tensor4<T>, grad_out: &Tensor4<T>, need_input: bool) -> Result<LinearGrads<T>> {
        let out = self.output_shape(x.shape())?;
        grad_out.ensure_shape(out)?;
        let (n, fin, fout) = (out.n, self.in_features(), self.out_features());
        let mut wg = vec![T::zero(); fout * fin];
        gemm(
            fout,
            n,
            fin,
            T::one(),
            grad_out.data(),
            true,
            x.data(),
            false,
            T::zero(),
            &mut wg,
        );
        let mut bg = vec![T::zero(); fout];
        for row in grad_out.data().chunks_exact(fout) {
            for (b, &g) in bg.iter_mut().zip(row) {
                *b += g;
            }
        }
        let input = if need_input {
            let mut xg = vec![T::zero(); n * fin];
            gemm(
                n,
                fout,
                fin,
                T::one(),
                grad_out.data(),
                false,
                self.weight.data(),
                false,
                T::zero(),
                &mut xg,
            );
            Some(Tensor4::from_vec(x.shape(), xg)?)
        } else {
            None
        };
        Ok(LinearGrads {
            input,
            weight: Tensor4::from_vec(self.weight.shape(), wg)?,
            bias: Tensor4::from_vec(self.bias.shape(), bg)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_by_hand() {
        let w = Tensor4::from_vec(Shape4::new(2, 3, 1, 1), vec![1.0f64, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap();
        let b = Tensor4::from_vec(Shape4::new(2, 1, 1, 1), vec![0.5, -0.5]).unwrap();
        let fc = Linear::new(w, b).unwrap();
        let x = Tensor4::from_vec(Shape4::new(1, 3, 1, 1), vec![1.0, 1.0, 2.0]).unwrap();
        assert_eq!(fc.forward(&x).unwrap().data(), &[9.5, 0.5]);
    }

    #[test]
    fn flattens_spatial_input() {
        let w = Tensor4::new(Shape4::new(1, 8, 1, 1), 1.0f32).unwrap();
        let b = Tensor4::zeros(Shape4::new(1, 1, 1, 1)).unwrap();
        let fc = Linear::new(w, b).unwrap();
        let x = Tensor4::new(Shape4::new(3, 2, 2, 2), 1.0).unwrap();
        let y = fc.forward(&x).unwrap();
        assert_eq!(y.shape(), Shape4::new(3, 1, 1, 1));
        assert_eq!(y.data(), &[8.0; 3]);
        assert!(fc
            .forward(&Tensor4::new(Shape4::new(1, 3, 1, 1), 1.0).unwrap())
            .is_err());
    }
}
