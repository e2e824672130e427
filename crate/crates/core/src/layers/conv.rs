use crate::error::{Error, Result};
use crate::scalar::{gemm, Scalar};
use crate::tensor::{Shape4, Tensor4};

/// `floor((input + 2*pad - k) / stride) + 1`, or `None` when that is below 1.
pub fn conv_out_dim(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || k == 0 || padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Square-kernel 2D cross-correlation with bias.
///
/// The kernel is stored as `(out_channels, in_channels, k, k)` and the bias
/// as `(out_channels, 1, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub kernel: Tensor4<T>,
    pub bias: Tensor4<T>,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor4<T>>,
    pub kernel: Tensor4<T>,
    pub bias: Tensor4<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(kernel: Tensor4<T>, bias: Tensor4<T>, stride: usize, pad: usize) -> Result<Self> {
        let ks = kernel.shape();
        if ks.h != ks.w {
            return Err(Error::param(format!(
                "conv kernels must be square, got {}x{}",
                ks.h, ks.w
            )));
        }
        if stride == 0 {
            return Err(Error::param("conv stride must be positive"));
        }
        bias.ensure_shape(Shape4::new(ks.n, 1, 1, 1))?;
        Ok(Conv2d {
            kernel,
            bias,
            stride,
            pad,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape().n
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape().c
    }

    pub fn k(&self) -> usize {
        self.kernel.shape().h
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        if input.c != self.in_channels() {
            return Err(Error::mismatch(
                format!("{} input channels", self.in_channels()),
                format!("{} channels", input.c),
            ));
        }
        let k = self.k();
        let oh = conv_out_dim(input.h, k, self.stride, self.pad);
        let ow = conv_out_dim(input.w, k, self.stride, self.pad);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok(Shape4::new(input.n, self.out_channels(), oh, ow)),
            _ => Err(Error::param(format!(
                "conv k={k} s={} p={} does not fit input {input}",
                self.stride, self.pad
            ))),
        }
    }

    /// Unrolls the input into a `(c*k*k) x (n*oh*ow)` matrix.
    fn im2col(&self, x: &Tensor4<T>, out: Shape4) -> Vec<T> {
        let s = x.shape();
        let k = self.k();
        let cols_n = s.n * out.h * out.w;
        let mut cols = vec![T::zero(); s.c * k * k * cols_n];
        let src = x.data();
        for ci in 0..s.c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * cols_n..(row + 1) * cols_n];
                    for i in 0..s.n {
                        let plane = &src[s.flatten(i, ci, 0, 0)..][..s.h * s.w];
                        for oy in 0..out.h {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            let base = (i * out.h + oy) * out.w;
                            if iy < 0 || iy >= s.h as isize {
                                continue;
                            }
                            let line = &plane[iy as usize * s.w..][..s.w];
                            for ox in 0..out.w {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < s.w as isize {
                                    dst[base + ox] = line[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], input: Shape4, out: Shape4) -> Tensor4<T> {
        let k = self.k();
        let cols_n = input.n * out.h * out.w;
        let mut grad = vec![T::zero(); input.len()];
        for ci in 0..input.c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * cols_n..(row + 1) * cols_n];
                    for i in 0..input.n {
                        let plane_start = input.flatten(i, ci, 0, 0);
                        for oy in 0..out.h {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= input.h as isize {
                                continue;
                            }
                            let base = (i * out.h + oy) * out.w;
                            let line = plane_start + iy as usize * input.w;
                            for ox in 0..out.w {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < input.w as isize {
                                    grad[line + ix as usize] += src[base + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        Tensor4::from_vec(input, grad).expect("input shape already validated")
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let out = self.output_shape(x.shape())?;
        let cols = self.im2col(x, out);
        let oc = self.out_channels();
        let ckk = self.in_channels() * self.k() * self.k();
        let per_sample = out.h * out.w;
        let cols_n = out.n * per_sample;
        let mut prod = vec![T::zero(); oc * cols_n];
        gemm(
            oc,
            ckk,
            cols_n,
            T::one(),
            self.kernel.data(),
            false,
            &cols,
            false,
            T::zero(),
            &mut prod,
        );

        let mut y = Tensor4::zeros(out)?;
        let bias = self.bias.data();
        for o in 0..oc {
            let row = &prod[o * cols_n..(o + 1) * cols_n];
            for i in 0..out.n {
                let dst = &mut y.data_mut()[out.flatten(i, o, 0, 0)..][..per_sample];
                for (d, &v) in dst.iter_mut().zip(&row[i * per_sample..(i + 1) * per_sample]) {
                    *d = v + bias[o];
                }
            }
        }
        Ok(y)
    }

    /// Gradients of the forward map at `x`. The input gradient is skipped
    /// when `need_input` is false (first layer of a network).
    pub fn backward(&self, x: &Tensor4<T>, grad_out: &Tensor4<T>, need_input: bool) -> Result<ConvGrads<T>> {
        let out = self.output_shape(x.shape())?;
        grad_out.ensure_shape(out)?;
        let oc = self.out_channels();
        let k = self.k();
        let ckk = self.in_channels() * k * k;
        let per_sample = out.h * out.w;
        let cols_n = out.n * per_sample;

        // (n, oc, p) -> (oc, n*p)
        let mut g = vec![T::zero(); oc * cols_n];
        let mut bias_grad = vec![T::zero(); oc];
        for o in 0..oc {
            for i in 0..out.n {
                let src = &grad_out.data()[out.flatten(i, o, 0, 0)..][..per_sample];
                g[o * cols_n + i * per_sample..][..per_sample].copy_from_slice(src);
                for &v in src {
                    bias_grad[o] += v;
                }
            }
        }

        let cols = self.im2col(x, out);
        let mut kernel_grad = vec![T::zero(); oc * ckk];
        gemm(
            oc,
            cols_n,
            ckk,
            T::one(),
            &g,
            false,
            &cols,
            true,
            T::zero(),
            &mut kernel_grad,
        );

        let input = if need_input {
            let mut dcols = cols;
            gemm(
                ckk,
                oc,
                cols_n,
                T::one(),
                self.kernel.data(),
                true,
                &g,
                false,
                T::zero(),
                &mut dcols,
            );
            Some(self.col2im(&dcols, x.shape(), out))
        } else {
            None
        };

        Ok(ConvGrads {
            input,
            kernel: Tensor4::from_vec(self.kernel.shape(), kernel_grad)?,
            bias: Tensor4::from_vec(self.bias.shape(), bias_grad)?,
        })
    }
}
