use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PoolKind {
    Max,
    Avg,
}

/// `ceil((input - k) / stride) + 1` with windows allowed to overhang the
/// far border. A trailing window that would start past the input is
/// dropped. `None` when the result is below 1.
pub fn pool_out_dim(input: usize, k: usize, stride: usize) -> Option<usize> {
    if stride == 0 || k == 0 || input == 0 {
        return None;
    }
    let span = input as isize - k as isize;
    let s = stride as isize;
    // ceil division valid for negative spans as well
    let steps = if span >= 0 { (span + s - 1) / s } else { -((-span) / s) };
    let mut out = steps + 1;
    if out >= 2 && (out - 1) * s >= input as isize {
        out -= 1;
    }
    (out >= 1).then_some(out as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pool2d {
    pub kind: PoolKind,
    pub k: usize,
    pub stride: usize,
}

/// Flat input index of each output's maximum; empty for average pooling.
#[derive(Debug, Clone, Default)]
pub struct PoolCache {
    pub argmax: Vec<usize>,
}

impl Pool2d {
    pub fn new(kind: PoolKind, k: usize, stride: usize) -> Result<Self> {
        if k == 0 || stride == 0 {
            return Err(Error::param("pool window and stride must be positive"));
        }
        Ok(Pool2d { kind, k, stride })
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        if self.k > input.h && self.k > input.w {
            return Err(Error::param(format!(
                "pool window {} larger than input {}x{}",
                self.k, input.h, input.w
            )));
        }
        match (
            pool_out_dim(input.h, self.k, self.stride),
            pool_out_dim(input.w, self.k, self.stride),
        ) {
            (Some(oh), Some(ow)) => Ok(Shape4::new(input.n, input.c, oh, ow)),
            _ => Err(Error::param(format!(
                "pool k={} s={} does not fit input {input}",
                self.k, self.stride
            ))),
        }
    }

    #[inline]
    fn window(&self, o: usize, limit: usize) -> (usize, usize) {
        let start = o * self.stride;
        (start, (start + self.k).min(limit))
    }

    pub fn forward<T: Scalar>(&self, x: &Tensor4<T>) -> Result<(Tensor4<T>, PoolCache)> {
        let s = x.shape();
        let out = self.output_shape(s)?;
        let mut y = Tensor4::zeros(out)?;
        let mut cache = PoolCache::default();
        if self.kind == PoolKind::Max {
            cache.argmax = vec![0; out.len()];
        }
        let (ip, op) = (s.plane_len(), out.plane_len());
        for (plane, (src, dst)) in x
            .data()
            .chunks_exact(ip)
            .zip(y.data_mut().chunks_exact_mut(op))
            .enumerate()
        {
            for oy in 0..out.h {
                let (y0, y1) = self.window(oy, s.h);
                for ox in 0..out.w {
                    let (x0, x1) = self.window(ox, s.w);
                    let o = oy * out.w + ox;
                    match self.kind {
                        PoolKind::Max => {
                            let mut best = y0 * s.w + x0;
                            for iy in y0..y1 {
                                for ix in x0..x1 {
                                    let p = iy * s.w + ix;
                                    if src[p] > src[best] {
                                        best = p;
                                    }
                                }
                            }
                            dst[o] = src[best];
                            cache.argmax[plane * op + o] = plane * ip + best;
                        }
                        PoolKind::Avg => {
                            let mut acc = T::zero();
                            for iy in y0..y1 {
                                for ix in x0..x1 {
                                    acc += src[iy * s.w + ix];
                                }
                            }
                            dst[o] = acc / T::lit(((y1 - y0) * (x1 - x0)) as f64);
                        }
                    }
                }
            }
        }
        Ok((y, cache))
    }

    pub fn backward<T: Scalar>(&self, input: Shape4, grad_out: &Tensor4<T>, cache: &PoolCache) -> Result<Tensor4<T>> {
        let out = self.output_shape(input)?;
        grad_out.ensure_shape(out)?;
        let mut grad = Tensor4::zeros(input)?;
        match self.kind {
            PoolKind::Max => {
                if cache.argmax.len() != out.len() {
                    return Err(Error::mismatch(out.len(), cache.argmax.len()));
                }
                let g = grad.data_mut();
                for (&src, &v) in cache.argmax.iter().zip(grad_out.data()) {
                    g[src] += v;
                }
            }
            PoolKind::Avg => {
                let (ip, op) = (input.plane_len(), out.plane_len());
                for (dst, src) in grad
                    .data_mut()
                    .chunks_exact_mut(ip)
                    .zip(grad_out.data().chunks_exact(op))
                {
                    for oy in 0..out.h {
                        let (y0, y1) = self.window(oy, input.h);
                        for ox in 0..out.w {
                            let (x0, x1) = self.window(ox, input.w);
                            let share = src[oy * out.w + ox] / T::lit(((y1 - y0) * (x1 - x0)) as f64);
                            for iy in y0..y1 {
                                for ix in x0..x1 {
                                    dst[iy * input.w + ix] += share;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(grad)
    }
}
