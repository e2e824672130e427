//! Geometric neural phrase pooling.
//!
//! Each location's response (the central word) is averaged with the
//! largest weighted response among its spatial neighbours (the side
//! words), independently per channel:
//!
//! ```text
//! z[y,x] = 1/2 * (x[y,x] + max_k s_k * x[y+dy_k, x+dx_k])
//! ```
//!
//! Side words outside the map are skipped. When no side word is in
//! bounds (a 1x1 map) the max term is 0, so `z = x / 2`.
//!
//! Also home to the Gaussian-blur layer used as a linear-smoother control.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NeighborhoodType {
    /// Four edge-adjacent side words, each weighted `sigma`.
    Type1,
    /// Type1 plus the four diagonals, weighted `sigma^2`.
    Type2,
}

impl NeighborhoodType {
    pub fn side_words(self) -> usize {
        match self {
            NeighborhoodType::Type1 => 4,
            NeighborhoodType::Type2 => 8,
        }
    }

    /// Relative positions of the side words in tie-break order.
    pub fn positions(self) -> &'static [(isize, isize)] {
        &NEIGHBOR_POSITIONS[..self.side_words()]
    }
}

impl fmt::Display for NeighborhoodType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NeighborhoodType::Type1 => f.write_str("type1"),
            NeighborhoodType::Type2 => f.write_str("type2"),
        }
    }
}

const NEIGHBOR_POSITIONS: [(isize, isize); 8] = [(-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SideWord<T> {
    pub dy: isize,
    pub dx: isize,
    pub weight: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnppConfig<T> {
    nb_type: NeighborhoodType,
    sigma: T,
    offsets: Vec<SideWord<T>>,
}

impl<T: Scalar> GnppConfig<T> {
    pub fn new(nb_type: NeighborhoodType, sigma: T) -> Result<Self> {
        if !(sigma > T::zero() && sigma <= T::one()) {
            return Err(Error::param(format!("GNPP sigma must lie in (0, 1], got {sigma}")));
        }
        let offsets = nb_type
            .positions()
            .iter()
            .map(|&(dy, dx)| SideWord {
                dy,
                dx,
                weight: if dy != 0 && dx != 0 { sigma * sigma } else { sigma },
            })
            .collect();
        Ok(GnppConfig {
            nb_type,
            sigma,
            offsets,
        })
    }

    pub fn nb_type(&self) -> NeighborhoodType {
        self.nb_type
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn offsets(&self) -> &[SideWord<T>] {
        &self.offsets
    }
}

/// Index of the winning side word per element, from the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GnppCache {
    shape: crate::tensor::Shape4,
    argmax: Vec<u8>,
}

impl GnppCache {
    /// Marks a location with no in-bounds side word.
    pub const EMPTY: u8 = u8::MAX;

    pub fn shape(&self) -> crate::tensor::Shape4 {
        self.shape
    }

    pub fn argmax(&self) -> &[u8] {
        &self.argmax
    }
}

#[inline]
fn neighbor(y: usize, x: usize, dy: isize, dx: isize, h: usize, w: usize) -> Option<usize> {
    let ny = y as isize + dy;
    let nx = x as isize + dx;
    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
        None
    } else {
        Some(ny as usize * w + nx as usize)
    }
}

pub fn gnpp_forward<T: Scalar>(x: &Tensor4<T>, cfg: &GnppConfig<T>) -> (Tensor4<T>, GnppCache) {
    let shape = x.shape();
    let (h, w) = (shape.h, shape.w);
    let half = T::lit(0.5);
    let mut z = x.zeros_like();
    let mut argmax = vec![GnppCache::EMPTY; x.len()];

    for ((src, dst), arg) in x
        .data()
        .chunks_exact(h * w)
        .zip(z.data_mut().chunks_exact_mut(h * w))
        .zip(argmax.chunks_exact_mut(h * w))
    {
        for y in 0..h {
            for xx in 0..w {
                let mut best: Option<(u8, T)> = None;
                for (k, off) in cfg.offsets.iter().enumerate() {
                    if let Some(q) = neighbor(y, xx, off.dy, off.dx, h, w) {
                        let v = off.weight * src[q];
                        // strict comparison: the first side word wins ties
                        if best.is_none_or(|(_, b)| v > b) {
                            best = Some((k as u8, v));
                        }
                    }
                }
                let p = y * w + xx;
                let side = match best {
                    Some((k, v)) => {
                        arg[p] = k;
                        v
                    }
                    None => T::zero(),
                };
                dst[p] = half * (src[p] + side);
            }
        }
    }
    (z, GnppCache { shape, argmax })
}

pub fn gnpp_backward<T: Scalar>(grad_z: &Tensor4<T>, cache: &GnppCache, cfg: &GnppConfig<T>) -> Result<Tensor4<T>> {
    grad_z.ensure_shape(cache.shape)?;
    let (h, w) = (cache.shape.h, cache.shape.w);
    let half = T::lit(0.5);
    let mut grad_x = grad_z.map(|g| half * g);

    for ((gz, gx), arg) in grad_z
        .data()
        .chunks_exact(h * w)
        .zip(grad_x.data_mut().chunks_exact_mut(h * w))
        .zip(cache.argmax.chunks_exact(h * w))
    {
        for y in 0..h {
            for xx in 0..w {
                let q = y * w + xx;
                let k = arg[q];
                if k == GnppCache::EMPTY {
                    continue;
                }
                let off = &cfg.offsets[k as usize];
                let p = neighbor(y, xx, off.dy, off.dx, h, w).expect("cached side word is in bounds");
                gx[p] += half * off.weight * gz[q];
            }
        }
    }
    Ok(grad_x)
}

/// Per-channel blur with a normalized Gaussian truncated at `ceil(3*std)`,
/// zero-padded at the borders.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBlur<T> {
    std: T,
    taps: Vec<T>,
}

impl<T: Scalar> GaussianBlur<T> {
    pub fn new(std: T) -> Result<Self> {
        if !(std > T::zero()) || !std.is_finite() {
            return Err(Error::param(format!("blur std must be positive, got {std}")));
        }
        let radius = Self::radius_for(std.to_f64().unwrap_or(0.0));
        let s = std.to_f64().unwrap_or(1.0);
        let raw: Vec<f64> = (-(radius as isize)..=radius as isize)
            .map(|d| (-((d * d) as f64) / (2.0 * s * s)).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        // The 2D kernel is the outer product of these taps, so it also sums to 1.
        let taps = raw.iter().map(|&v| T::lit(v / total)).collect();
        Ok(GaussianBlur { std, taps })
    }

    pub fn radius_for(std: f64) -> usize {
        (3.0 * std).ceil() as usize
    }

    pub fn std(&self) -> T {
        self.std
    }

    pub fn radius(&self) -> usize {
        self.taps.len() / 2
    }

    /// One-dimensional normalized taps, `2*radius + 1` long.
    pub fn taps(&self) -> &[T] {
        &self.taps
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Tensor4<T> {
        let s = x.shape();
        let (h, w) = (s.h, s.w);
        let r = self.radius() as isize;
        let mut out = x.zeros_like();
        let mut tmp = vec![T::zero(); h * w];
        for (src, dst) in x.data().chunks_exact(h * w).zip(out.data_mut().chunks_exact_mut(h * w)) {
            // horizontal pass
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = T::zero();
                    for (t, &g) in self.taps.iter().enumerate() {
                        let sx = xx as isize + t as isize - r;
                        if sx >= 0 && sx < w as isize {
                            acc += g * src[y * w + sx as usize];
                        }
                    }
                    tmp[y * w + xx] = acc;
                }
            }
            // vertical pass
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = T::zero();
                    for (t, &g) in self.taps.iter().enumerate() {
                        let sy = y as isize + t as isize - r;
                        if sy >= 0 && sy < h as isize {
                            acc += g * tmp[sy as usize * w + xx];
                        }
                    }
                    dst[y * w + xx] = acc;
                }
            }
        }
        out
    }

    /// The kernel is symmetric, so the adjoint of the zero-padded blur is the blur itself.
    pub fn backward(&self, grad_out: &Tensor4<T>) -> Tensor4<T> {
        self.forward(grad_out)
    }
}

pub fn gaussian_blur_forward<T: Scalar>(x: &Tensor4<T>, std: T) -> Result<Tensor4<T>> {
    Ok(GaussianBlur::new(std)?.forward(x))
}
