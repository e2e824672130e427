//! Receptive-field geometry, latent connection counts and diffusion heatmaps.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use crate::arch::{shape_infer, ArchSpec, LayerDesc};
use crate::error::{Error, Result};
use crate::gnpp::{GaussianBlur, NeighborhoodType};
use crate::scalar::Scalar;
use crate::tensor::{channel_mean_map, Plane, Shape4, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RfInfo {
    /// Side length of the receptive field, in input pixels.
    pub rf: usize,
    /// Input-pixel distance between adjacent neurons.
    pub jump: usize,
    /// Linear overlap of two adjacent neurons' fields, `(rf - jump) / rf`.
    pub overlap: f64,
    /// Input coordinate of the field centre of neuron 0 (may be negative
    /// with padding).
    pub center: f64,
}

/// Receptive field after arch layer `layer_index` (inclusive).
///
/// Conv and pooling layers grow the field by `(k-1)*jump` and multiply
/// the jump by their stride. Phrase pooling adds one neuron ring
/// (`2*jump`), a blur of radius `r` adds `2*r*jump`, dropout adds nothing.
/// FC layers have no spatial field.
pub fn receptive_field(arch: &ArchSpec, layer_index: usize) -> Result<RfInfo> {
    if layer_index >= arch.layers.len() {
        return Err(Error::IndexOutOfRange {
            what: "layer",
            index: layer_index,
            limit: arch.layers.len(),
        });
    }
    let (mut rf, mut jump, mut center) = (1usize, 1usize, 0.0f64);
    for (i, layer) in arch.layers[..=layer_index].iter().enumerate() {
        match *layer {
            LayerDesc::Conv { k, stride, pad, .. } => {
                center += ((k as f64 - 1.0) / 2.0 - pad as f64) * jump as f64;
                rf += (k - 1) * jump;
                jump *= stride;
            }
            LayerDesc::MaxPool { k, stride } | LayerDesc::AvgPool { k, stride } => {
                center += (k as f64 - 1.0) / 2.0 * jump as f64;
                rf += (k - 1) * jump;
                jump *= stride;
            }
            LayerDesc::Gnpp { .. } => rf += 2 * jump,
            LayerDesc::GaussBlur { std } => rf += 2 * GaussianBlur::<f64>::radius_for(std) * jump,
            LayerDesc::Dropout { .. } => {}
            LayerDesc::Fc { .. } => {
                return Err(Error::param(format!(
                    "layer {layer_index} is at or past FC layer {i}; receptive fields stop at the first FC"
                )))
            }
        }
    }
    let overlap = (rf as f64 - jump as f64).max(0.0) / rf as f64;
    Ok(RfInfo {
        rf,
        jump,
        overlap,
        center,
    })
}

/// Distinct input positions seen by one output neuron of a `k x k`,
/// stride-`stride` convolution, optionally merged with its phrase
/// neighbours (the neuron plus its side words).
pub fn spatial_footprint(k: usize, stride: usize, gnpp: Option<NeighborhoodType>) -> usize {
    let mut centers = vec![(0isize, 0isize)];
    if let Some(t) = gnpp {
        centers.extend_from_slice(t.positions());
    }
    let mut cells = BTreeSet::new();
    for (dy, dx) in centers {
        for ky in 0..k as isize {
            for kx in 0..k as isize {
                cells.insert((dy * stride as isize + ky, dx * stride as isize + kx));
            }
        }
    }
    cells.len()
}

/// Connections between conv layer `conv_index` and its input:
/// `outputs * footprint * in_channels`, where the footprint grows when the
/// output feeds phrase pooling.
pub fn connection_count(
    arch: &ArchSpec,
    input: Shape4,
    conv_index: usize,
    gnpp: Option<NeighborhoodType>,
) -> Result<u64> {
    let Some(&LayerDesc::Conv { k, stride, .. }) = arch.layers.get(conv_index) else {
        return Err(Error::param(format!("layer {conv_index} is not a conv layer")));
    };
    let shapes = shape_infer(arch, input.with_batch(1))?;
    let in_c = if conv_index == 0 {
        input.c
    } else {
        shapes[conv_index - 1].c
    };
    let out = shapes[conv_index];
    let neurons = (out.c * out.h * out.w) as u64;
    Ok(neurons * spatial_footprint(k, stride, gnpp) as u64 * in_c as u64)
}

/// Channel-averaged responses at `layer_index`, each spread over the input
/// image as a Gaussian centred on its receptive field with
/// `std = std_factor * rf`. Not normalized.
pub fn diffusion_map<T: Scalar>(
    features: &Tensor4<T>,
    sample: usize,
    arch: &ArchSpec,
    input: Shape4,
    layer_index: usize,
    std_factor: f64,
) -> Result<Plane<f64>> {
    if !(std_factor > 0.0) {
        return Err(Error::param(format!("std factor must be positive, got {std_factor}")));
    }
    let shapes = shape_infer(arch, input.with_batch(1))?;
    let expected = shapes
        .get(layer_index)
        .copied()
        .ok_or(Error::IndexOutOfRange {
            what: "layer",
            index: layer_index,
            limit: shapes.len(),
        })?
        .with_batch(features.shape().n);
    features.ensure_shape(expected)?;
    let info = receptive_field(arch, layer_index)?;
    let mean = channel_mean_map(features, sample)?;

    let std = std_factor * info.rf as f64;
    let inv = 1.0 / (2.0 * std * std);
    let (h, w) = (input.h, input.w);
    let mut acc = vec![0.0f64; h * w];
    // separable Gaussian: precompute the per-axis weights of each neuron row/column
    let profile = |n: usize, len: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let c = info.center + (i * info.jump) as f64;
                (0..len).map(|p| (-(p as f64 - c).powi(2) * inv).exp()).collect()
            })
            .collect()
    };
    let ys = profile(mean.h, h);
    let xs = profile(mean.w, w);
    for (ny, yp) in ys.iter().enumerate() {
        for (nx, xp) in xs.iter().enumerate() {
            let r = mean.get(ny, nx).to_f64().unwrap_or(0.0);
            if r == 0.0 {
                continue;
            }
            for (py, &y) in yp.iter().enumerate() {
                let wy = r * y;
                let row = &mut acc[py * w..(py + 1) * w];
                for (a, &wx) in row.iter_mut().zip(xp) {
                    *a += wy * wx;
                }
            }
        }
    }
    Ok(Plane { h, w, data: acc })
}

/// 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub h: usize,
    pub w: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Min-max scales a plane to `[0, 255]`; a flat plane maps to zeros.
    pub fn from_plane(plane: &Plane<f64>) -> Self {
        let lo = plane.data.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = plane.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let pixels = plane
            .data
            .iter()
            .map(|&v| {
                if span > 0.0 {
                    ((v - lo) / span * 255.0).round() as u8
                } else {
                    0
                }
            })
            .collect();
        GrayImage {
            h: plane.h,
            w: plane.w,
            pixels,
        }
    }

    /// Binary PGM (`P5`, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.w, self.h).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_pgm())?;
        Ok(())
    }
}

pub fn heatmap<T: Scalar>(
    features: &Tensor4<T>,
    sample: usize,
    arch: &ArchSpec,
    input: Shape4,
    layer_index: usize,
    std_factor: f64,
) -> Result<GrayImage> {
    Ok(GrayImage::from_plane(&diffusion_map(
        features,
        sample,
        arch,
        input,
        layer_index,
        std_factor,
    )?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{parse_arch, with_gnpp};
    use crate::{ALEXNET, LENET3};

    #[test]
    fn alexnet_conv5() {
        let a = parse_arch(ALEXNET).unwrap();
        let info = receptive_field(&a, 6).unwrap();
        assert_eq!(
            a.layers[6],
            LayerDesc::Conv {
                k: 3,
                stride: 1,
                pad: 1,
                out_channels: 256
            }
        );
        assert_eq!((info.rf, info.jump), (163, 16));
        assert!((info.overlap - 0.902).abs() < 0.0005);
    }

    #[test]
    fn single_conv() {
        let a = parse_arch("{C3(S1P1)@8}{FC10}").unwrap();
        let info = receptive_field(&a, 0).unwrap();
        assert_eq!((info.rf, info.jump), (3, 1));
        assert!((info.overlap - 2.0 / 3.0).abs() < 1e-12);
        assert!(receptive_field(&a, 1).is_err());
    }

    #[test]
    fn gnpp_grows_rf_keeps_jump() {
        let a = parse_arch(LENET3).unwrap();
        let g = with_gnpp(&a, &[0, 1, 2], NeighborhoodType::Type1, 0.8).unwrap();
        let plain = receptive_field(&a, 5).unwrap();
        let with = receptive_field(&g, 8).unwrap();
        assert_eq!(plain.jump, with.jump);
        assert!(with.rf > plain.rf);
    }

    #[test]
    fn alexnet_connections() {
        let a = parse_arch(ALEXNET).unwrap();
        let input = Shape4::new(1, 3, 227, 227);
        assert_eq!(connection_count(&a, input, 6, None).unwrap(), 149_520_384);
        assert_eq!(
            connection_count(&a, input, 6, Some(NeighborhoodType::Type1)).unwrap(),
            348_880_896
        );
        assert!(connection_count(&a, input, 1, None).is_err());
    }

    #[test]
    fn footprints() {
        assert_eq!(spatial_footprint(3, 1, None), 9);
        assert_eq!(spatial_footprint(3, 1, Some(NeighborhoodType::Type1)), 21);
        assert_eq!(spatial_footprint(3, 1, Some(NeighborhoodType::Type2)), 25);
        assert_eq!(spatial_footprint(1, 1, Some(NeighborhoodType::Type1)), 5);
    }

    #[test]
    fn single_neuron_heatmap_peaks_at_its_center() {
        let a = parse_arch("{C5(S1P0)@2-MP2(S2)}{FC10}").unwrap();
        let input = Shape4::new(1, 1, 20, 20);
        // pool output is 8x8
        let mut f = Tensor4::<f32>::zeros(Shape4::new(1, 2, 8, 8)).unwrap();
        f.set(0, 0, 3, 5, 1.0);
        let info = receptive_field(&a, 1).unwrap();
        let img = heatmap(&f, 0, &a, input, 1, 0.25).unwrap();
        let peak = img.pixels.iter().enumerate().max_by_key(|(_, &v)| v).unwrap().0;
        let cy = info.center + 3.0 * info.jump as f64;
        let cx = info.center + 5.0 * info.jump as f64;
        assert_eq!(img.pixels[peak], 255);
        assert!(((peak / 20) as f64 - cy).abs() <= 0.5);
        assert!(((peak % 20) as f64 - cx).abs() <= 0.5);
    }

    #[test]
    fn pgm_header() {
        let img = GrayImage {
            h: 2,
            w: 3,
            pixels: vec![0, 1, 2, 3, 4, 5],
        };
        let bytes = img.to_pgm();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 6);
    }

    #[test]
    fn heatmap_shape_checked() {
        let a = parse_arch("{C5(S1P0)@2-MP2(S2)}{FC10}").unwrap();
        let f = Tensor4::<f32>::zeros(Shape4::new(1, 2, 7, 8)).unwrap();
        assert!(heatmap(&f, 0, &a, Shape4::new(1, 1, 20, 20), 1, 0.25).is_err());
    }
}
