//! Receptive fields against a dependency-mask oracle, heatmaps against a
//! naive accumulation, and the exact analytical numbers.

use gnpp::analysis::{connection_count, diffusion_map, receptive_field, spatial_footprint};
use gnpp::{
    parse_arch, shape_infer, with_gnpp, ArchSpec, LayerDesc, NeighborhoodType, Shape4, Tensor4, ALEXNET, LENET3,
};
use proptest::prelude::*;

/// Input pixels reachable from output neuron `(oy, ox)` after
/// `arch.layers[..=last]`, found by walking a boolean mask backwards.
/// `None` when some window of the field is cut by a border (padding or
/// pool overhang), where the field is no longer a full square.
fn dependency_mask(arch: &ArchSpec, input: Shape4, last: usize, oy: usize, ox: usize) -> Option<Vec<Vec<bool>>> {
    let shapes = shape_infer(arch, input).unwrap();
    let dims = |i: usize| {
        if i == 0 {
            (input.h, input.w)
        } else {
            (shapes[i - 1].h, shapes[i - 1].w)
        }
    };
    let (oh, ow) = (shapes[last].h, shapes[last].w);
    let mut mask = vec![vec![false; ow]; oh];
    mask[oy][ox] = true;
    for li in (0..=last).rev() {
        let (ih, iw) = dims(li);
        let mut prev = vec![vec![false; iw]; ih];
        let mut clipped = false;
        let mut mark = |prev: &mut Vec<Vec<bool>>, y: i64, x: i64| {
            if y >= 0 && x >= 0 && (y as usize) < ih && (x as usize) < iw {
                prev[y as usize][x as usize] = true;
            } else {
                clipped = true;
            }
        };
        for (y, row) in mask.iter().enumerate() {
            for (x, &on) in row.iter().enumerate() {
                if !on {
                    continue;
                }
                let (y, x) = (y as i64, x as i64);
                match arch.layers[li] {
                    LayerDesc::Conv { k, stride, pad, .. } => {
                        for ky in 0..k as i64 {
                            for kx in 0..k as i64 {
                                mark(
                                    &mut prev,
                                    y * stride as i64 - pad as i64 + ky,
                                    x * stride as i64 - pad as i64 + kx,
                                );
                            }
                        }
                    }
                    LayerDesc::MaxPool { k, stride } | LayerDesc::AvgPool { k, stride } => {
                        for ky in 0..k as i64 {
                            for kx in 0..k as i64 {
                                mark(&mut prev, y * stride as i64 + ky, x * stride as i64 + kx);
                            }
                        }
                    }
                    LayerDesc::Gnpp { nb_type, .. } => {
                        mark(&mut prev, y, x);
                        for &(dy, dx) in nb_type.positions() {
                            mark(&mut prev, y + dy as i64, x + dx as i64);
                        }
                    }
                    LayerDesc::GaussBlur { std } => {
                        let r = (3.0 * std).ceil() as i64;
                        for dy in -r..=r {
                            for dx in -r..=r {
                                mark(&mut prev, y + dy, x + dx);
                            }
                        }
                    }
                    LayerDesc::Dropout { .. } => mark(&mut prev, y, x),
                    LayerDesc::Fc { .. } => unreachable!(),
                }
            }
        }
        if clipped {
            return None;
        }
        mask = prev;
    }
    Some(mask)
}

/// Side of the bounding box of the marked pixels.
fn extent(mask: &[Vec<bool>]) -> (usize, usize) {
    let rows: Vec<usize> = (0..mask.len()).filter(|&y| mask[y].iter().any(|&b| b)).collect();
    let cols: Vec<usize> = (0..mask[0].len()).filter(|&x| mask.iter().any(|r| r[x])).collect();
    (rows.last().unwrap() - rows[0] + 1, cols.last().unwrap() - cols[0] + 1)
}

/// Oracle rf for the central output neuron, if its field is unclipped.
fn oracle_rf(arch: &ArchSpec, input: Shape4, last: usize) -> Option<usize> {
    let out = shape_infer(arch, input).ok()?[last];
    let mask = dependency_mask(arch, input, last, out.h / 2, out.w / 2)?;
    let (h, w) = extent(&mask);
    assert_eq!(h, w);
    Some(h)
}

#[test]
fn lenet3_last_conv_matches_mask_oracle() {
    let arch = parse_arch(LENET3).unwrap();
    let input = Shape4::new(1, 3, 64, 64);
    for last in 0..6 {
        let info = receptive_field(&arch, last).unwrap();
        assert_eq!(Some(info.rf), oracle_rf(&arch, input, last), "layer {last}");
    }
    assert_eq!(
        arch.layers[4],
        LayerDesc::Conv {
            k: 5,
            stride: 1,
            pad: 2,
            out_channels: 64
        }
    );
    assert_eq!(receptive_field(&arch, 4).unwrap().rf, 35);
}

fn layer() -> impl Strategy<Value = LayerDesc> {
    prop_oneof![
        (1usize..6, 1usize..3, 0usize..3).prop_map(|(k, stride, pad)| LayerDesc::Conv {
            k,
            stride,
            pad: pad.min(k / 2),
            out_channels: 2
        }),
        (2usize..4, 1usize..3).prop_map(|(k, stride)| LayerDesc::MaxPool { k, stride }),
        (2usize..4, 1usize..3).prop_map(|(k, stride)| LayerDesc::AvgPool { k, stride }),
        prop_oneof![Just(NeighborhoodType::Type1), Just(NeighborhoodType::Type2)]
            .prop_map(|nb_type| LayerDesc::Gnpp { nb_type, sigma: 0.8 }),
        Just(LayerDesc::GaussBlur { std: 0.5 }),
        Just(LayerDesc::Dropout { ratio: 0.5 }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn recurrence_equals_mask_oracle(layers in proptest::collection::vec(layer(), 1..=5), size in 16usize..=64) {
        let mut all = layers.clone();
        all.push(LayerDesc::Fc { out: 2 });
        let arch = ArchSpec::from_layers(all).unwrap();
        let input = Shape4::new(1, 1, size, size);
        prop_assume!(shape_infer(&arch, input).is_ok());
        let last = layers.len() - 1;
        if let Some(rf) = oracle_rf(&arch, input, last) {
            prop_assert_eq!(receptive_field(&arch, last).unwrap().rf, rf);
        }
    }

    #[test]
    fn gnpp_never_shrinks_rf_nor_changes_jump(layers in proptest::collection::vec(layer(), 1..=5), nb in prop_oneof![Just(NeighborhoodType::Type1), Just(NeighborhoodType::Type2)]) {
        let mut all: Vec<LayerDesc> = layers
            .into_iter()
            .filter(|l| !matches!(l, LayerDesc::Gnpp { .. } | LayerDesc::GaussBlur { .. }))
            .collect();
        all.push(LayerDesc::MaxPool { k: 2, stride: 2 });
        all.push(LayerDesc::Fc { out: 2 });
        let arch = ArchSpec::from_layers(all).unwrap();
        let last_pool = *arch.pool_indices().last().unwrap();
        let ordinal = arch.pool_indices().len() - 1;
        let g = with_gnpp(&arch, &[ordinal], nb, 0.8).unwrap();
        for i in 0..last_pool {
            prop_assert_eq!(receptive_field(&arch, i).unwrap(), receptive_field(&g, i).unwrap());
        }
        let plain = receptive_field(&arch, last_pool).unwrap();
        let with = receptive_field(&g, last_pool + 1).unwrap();
        prop_assert!(with.rf >= plain.rf);
        prop_assert_eq!(with.jump, plain.jump);
    }
}

#[test]
fn alexnet_rf_overlap_and_connections() {
    let arch = parse_arch(ALEXNET).unwrap();
    let conv5 = arch.conv_indices()[4];
    let info = receptive_field(&arch, conv5).unwrap();
    assert_eq!(info.rf, 163);
    assert_eq!(info.jump, 16);
    assert!((100.0 * info.overlap - 90.2).abs() <= 0.05);
    let input = Shape4::new(1, 3, 227, 227);
    assert_eq!(shape_infer(&arch, input).unwrap()[conv5], Shape4::new(1, 256, 13, 13));
    assert_eq!(
        connection_count(&arch, input, conv5, None).unwrap(),
        169 * 256 * 9 * 384
    );
    assert_eq!(connection_count(&arch, input, conv5, None).unwrap(), 149_520_384);
    assert_eq!(
        connection_count(&arch, input, conv5, Some(NeighborhoodType::Type1)).unwrap(),
        348_880_896
    );
    assert_eq!(spatial_footprint(3, 1, None), 9);
    assert_eq!(spatial_footprint(3, 1, Some(NeighborhoodType::Type1)), 21);
}

/// Per-neuron, per-pixel double loop with a 2D Gaussian.
fn naive_heatmap(f: &Tensor4<f64>, arch: &ArchSpec, input: Shape4, layer: usize, factor: f64) -> Vec<f64> {
    let info = receptive_field(arch, layer).unwrap();
    let s = f.shape();
    let std = factor * info.rf as f64;
    let mut acc = vec![0.0; input.h * input.w];
    for ny in 0..s.h {
        for nx in 0..s.w {
            let r: f64 = (0..s.c).map(|c| f.get(0, c, ny, nx)).sum::<f64>() / s.c as f64;
            let cy = info.center + (ny * info.jump) as f64;
            let cx = info.center + (nx * info.jump) as f64;
            for py in 0..input.h {
                for px in 0..input.w {
                    let d2 = (py as f64 - cy).powi(2) + (px as f64 - cx).powi(2);
                    acc[py * input.w + px] += r * (-d2 / (2.0 * std * std)).exp();
                }
            }
        }
    }
    acc
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn heatmap_matches_naive_accumulation(vals in proptest::collection::vec(0.0f64..3.0, 3 * 8 * 8), factor in 0.1f64..0.6) {
        let arch = parse_arch("{C5(S1P0)@3-MP2(S2)}{FC10}").unwrap();
        let input = Shape4::new(1, 1, 20, 20);
        let f = Tensor4::from_vec(Shape4::new(1, 3, 8, 8), vals).unwrap();
        let got = diffusion_map(&f, 0, &arch, input, 1, factor).unwrap();
        let want = naive_heatmap(&f, &arch, input, 1, factor);
        for (a, b) in got.data.iter().zip(&want) {
            prop_assert!((a - b).abs() <= 1e-5);
        }
    }
}

#[test]
fn uniform_responses_give_flat_interior() {
    let arch = parse_arch("{C3(S1P1)@2}{FC10}").unwrap();
    let input = Shape4::new(1, 1, 40, 40);
    let f = Tensor4::new(Shape4::new(1, 2, 40, 40), 1.0).unwrap();
    let m = diffusion_map(&f, 0, &arch, input, 0, 0.25).unwrap();
    let centre = m.get(20, 20);
    for y in 15..25 {
        for x in 15..25 {
            assert!((m.get(y, x) - centre).abs() / centre < 1e-6);
        }
    }
}
