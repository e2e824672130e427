use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Inverted dropout: survivors are scaled by `1 / (1 - ratio)` at training
/// time so inference is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Dropout<T> {
    ratio: f64,
    mask: Option<Vec<T>>,
    frozen: bool,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(ratio: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&ratio) {
            return Err(Error::param(format!("dropout ratio must lie in [0, 1), got {ratio}")));
        }
        Ok(Dropout {
            ratio,
            mask: None,
            frozen: false,
        })
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    /// Keeps reusing the current mask instead of drawing new ones. Used by
    /// gradient checks, which need a fixed function across evaluations.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    /// The last mask drawn, already scaled (each entry is 0 or `1/(1-ratio)`).
    pub fn mask(&self) -> Option<&[T]> {
        self.mask.as_deref()
    }

    pub fn forward<R: Rng + ?Sized>(&mut self, x: &Tensor4<T>, rng: &mut R, training: bool) -> Tensor4<T> {
        if !training || self.ratio == 0.0 {
            self.mask = None;
            return x.clone();
        }
        let reuse = self.frozen && self.mask.as_ref().is_some_and(|m| m.len() == x.len());
        if !reuse {
            let scale = T::lit(1.0 / (1.0 - self.ratio));
            let mask = (0..x.len())
                .map(|_| {
                    if rng.gen::<f64>() < self.ratio {
                        T::zero()
                    } else {
                        scale
                    }
                })
                .collect();
            self.mask = Some(mask);
        }
        let mask = self.mask.as_ref().expect("mask drawn above");
        let mut y = x.clone();
        for (v, &m) in y.data_mut().iter_mut().zip(mask) {
            *v *= m;
        }
        y
    }

    pub fn backward(&self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let Some(mask) = &self.mask else {
            return Ok(grad_out.clone());
        };
        if mask.len() != grad_out.len() {
            return Err(Error::mismatch(mask.len(), grad_out.len()));
        }
        let mut g = grad_out.clone();
        for (v, &m) in g.data_mut().iter_mut().zip(mask) {
            *v *= m;
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ratio_zero_is_identity() {
        let mut d = Dropout::<f32>::new(0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor4::from_fn(Shape4::new(1, 1, 3, 3), |_, _, y, x| (y * 3 + x) as f32).unwrap();
        assert_eq!(d.forward(&x, &mut rng, true), x);
        assert_eq!(d.forward(&x, &mut rng, false), x);
        assert_eq!(d.backward(&x).unwrap(), x);
    }

    #[test]
    fn inference_is_identity() {
        let mut d = Dropout::<f32>::new(0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor4::new(Shape4::new(2, 3, 4, 4), 0.25).unwrap();
        assert_eq!(d.forward(&x, &mut rng, false), x);
    }

    #[test]
    fn ratio_one_rejected() {
        assert!(Dropout::<f32>::new(1.0).is_err());
        assert!(Dropout::<f32>::new(-0.1).is_err());
    }

    #[test]
    fn keep_rate_and_scale() {
        let mut d = Dropout::<f32>::new(0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = Tensor4::new(Shape4::new(1, 1, 1000, 1000), 1.0).unwrap();
        let y = d.forward(&x, &mut rng, true);
        let kept = y.data().iter().filter(|&&v| v != 0.0).count();
        let rate = kept as f64 / 1e6;
        assert!((rate - 0.5).abs() < 0.002, "keep rate {rate}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
        let g = d.backward(&x).unwrap();
        assert_eq!(g, y);
    }

    #[test]
    fn frozen_mask_is_reused() {
        let mut d = Dropout::<f64>::new(0.5).unwrap();
        d.set_frozen(true);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor4::new(Shape4::new(1, 1, 8, 8), 1.0).unwrap();
        let a = d.forward(&x, &mut rng, true);
        let b = d.forward(&x, &mut rng, true);
        assert_eq!(a, b);
    }
}
