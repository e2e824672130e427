//! Layers against direct-loop oracles, and the gradient-check suite.

use gnpp::gradcheck::{check_layers, check_model, random_batch, GradCheckOptions, NetModel};
use gnpp::layers::{Conv2d, Linear, Pool2d, PoolKind};
use gnpp::{build_network, parse_arch, GaussianBlur, Placement, Shape4, Tensor4, MNIST_LENET};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: Shape4, rng: &mut ChaCha8Rng) -> Tensor4<f64> {
    Tensor4::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0)).unwrap()
}

fn naive_conv(x: &Tensor4<f64>, k: &Tensor4<f64>, b: &Tensor4<f64>, stride: usize, pad: usize) -> Tensor4<f64> {
    let (xs, ks) = (x.shape(), k.shape());
    let oh = (xs.h + 2 * pad - ks.h) / stride + 1;
    let ow = (xs.w + 2 * pad - ks.w) / stride + 1;
    Tensor4::from_fn(Shape4::new(xs.n, ks.n, oh, ow), |i, o, oy, ox| {
        let mut acc = b.get(o, 0, 0, 0);
        for c in 0..xs.c {
            for ky in 0..ks.h {
                for kx in 0..ks.w {
                    let iy = (oy * stride + ky) as i64 - pad as i64;
                    let ix = (ox * stride + kx) as i64 - pad as i64;
                    if iy >= 0 && ix >= 0 && (iy as usize) < xs.h && (ix as usize) < xs.w {
                        acc += k.get(o, c, ky, kx) * x.get(i, c, iy as usize, ix as usize);
                    }
                }
            }
        }
        acc
    })
    .unwrap()
}

/// Caffe pooling: ceil output size, windows clipped at the far border,
/// a window starting at or past the border is dropped.
fn naive_pool(x: &Tensor4<f64>, max: bool, k: usize, s: usize) -> Tensor4<f64> {
    let xs = x.shape();
    let dim = |n: usize| {
        let mut o = n.saturating_sub(k).div_ceil(s) + 1;
        if (o - 1) * s >= n {
            o -= 1;
        }
        o
    };
    let (oh, ow) = (dim(xs.h), dim(xs.w));
    Tensor4::from_fn(Shape4::new(xs.n, xs.c, oh, ow), |i, c, oy, ox| {
        let mut vals = Vec::new();
        for y in oy * s..(oy * s + k).min(xs.h) {
            for xx in ox * s..(ox * s + k).min(xs.w) {
                vals.push(x.get(i, c, y, xx));
            }
        }
        if max {
            vals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    })
    .unwrap()
}

/// 2D Gaussian with truncation radius ceil(3*std), normalized over the full
/// square window, applied with zero padding.
fn naive_blur(x: &Tensor4<f64>, std: f64) -> Tensor4<f64> {
    let r = (3.0 * std).ceil() as i64;
    let mut kernel = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            kernel.push(((dy, dx), (-((dy * dy + dx * dx) as f64) / (2.0 * std * std)).exp()));
        }
    }
    let total: f64 = kernel.iter().map(|(_, w)| w).sum();
    let s = x.shape();
    Tensor4::from_fn(s, |i, c, y, xx| {
        kernel
            .iter()
            .map(|&((dy, dx), w)| {
                let (sy, sx) = (y as i64 + dy, xx as i64 + dx);
                if sy < 0 || sx < 0 || sy >= s.h as i64 || sx >= s.w as i64 {
                    0.0
                } else {
                    w / total * x.get(i, c, sy as usize, sx as usize)
                }
            })
            .sum()
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_matches_direct_loops(seed in 0u64..1000, n in 1usize..3, c in 1usize..4, o in 1usize..4,
                                 h in 3usize..9, w in 3usize..9, k in 1usize..4, stride in 1usize..3, pad in 0usize..2) {
        prop_assume!(h + 2 * pad >= k && w + 2 * pad >= k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(Shape4::new(n, c, h, w), &mut rng);
        let kern = random(Shape4::new(o, c, k, k), &mut rng);
        let bias = random(Shape4::new(o, 1, 1, 1), &mut rng);
        let conv = Conv2d::new(kern.clone(), bias.clone(), stride, pad).unwrap();
        let got = conv.forward(&x).unwrap();
        let want = naive_conv(&x, &kern, &bias, stride, pad);
        prop_assert_eq!(got.shape(), want.shape());
        for (a, b) in got.data().iter().zip(want.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_matches_direct_loops(seed in 0u64..1000, h in 2usize..10, w in 2usize..10, k in 1usize..4, s in 1usize..4, max in any::<bool>()) {
        prop_assume!(k <= h && k <= w);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(Shape4::new(2, 2, h, w), &mut rng);
        let kind = if max { PoolKind::Max } else { PoolKind::Avg };
        let (got, _) = Pool2d::new(kind, k, s).unwrap().forward(&x).unwrap();
        let want = naive_pool(&x, max, k, s);
        prop_assert_eq!(got.shape(), want.shape());
        for (a, b) in got.data().iter().zip(want.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_matches_2d_oracle(seed in 0u64..1000, h in 1usize..12, w in 1usize..12, std in 0.3f64..2.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(Shape4::new(1, 2, h, w), &mut rng);
        let got = GaussianBlur::new(std).unwrap().forward(&x);
        let want = naive_blur(&x, std);
        for (a, b) in got.data().iter().zip(want.data()) {
            prop_assert!((a - b).abs() < 1e-5);
        }
    }
}

#[test]
fn blur_backward_is_adjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let b = GaussianBlur::new(1.3).unwrap();
    let x = random(Shape4::new(1, 1, 7, 9), &mut rng);
    let g = random(Shape4::new(1, 1, 7, 9), &mut rng);
    let lhs: f64 = b.forward(&x).data().iter().zip(g.data()).map(|(a, c)| a * c).sum();
    let rhs: f64 = x.data().iter().zip(b.backward(&g).data()).map(|(a, c)| a * c).sum();
    assert!((lhs - rhs).abs() < 1e-12);
}

#[test]
fn linear_matches_direct_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(Shape4::new(3, 2, 2, 2), &mut rng);
    let w = random(Shape4::new(4, 8, 1, 1), &mut rng);
    let b = random(Shape4::new(4, 1, 1, 1), &mut rng);
    let y = Linear::new(w.clone(), b.clone()).unwrap().forward(&x).unwrap();
    for i in 0..3 {
        for o in 0..4 {
            let want: f64 = b.data()[o] + (0..8).map(|j| w.data()[o * 8 + j] * x.sample(i)[j]).sum::<f64>();
            assert!((y.get(i, o, 0, 0) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn every_layer_passes_gradient_check() {
    for seed in [0, 1, 2] {
        for r in check_layers(seed, &GradCheckOptions::default()).unwrap() {
            assert!(r.passed(), "seed {seed}: {:?}", r.per_layer());
        }
    }
}

#[test]
fn mnist_lenet_on_small_input_passes_gradient_check() {
    let arch = parse_arch(MNIST_LENET).unwrap();
    let input = Shape4::new(1, 1, 16, 16);
    let mut net = build_network::<f64>(&arch, input, 11, Placement::Strict).unwrap();
    let (x, labels) = random_batch(input, 2, 10, 12).unwrap();
    let mut m = NetModel::new(&mut net, x, labels).unwrap();
    let opts = GradCheckOptions {
        max_per_tensor: Some(300),
        ..Default::default()
    };
    let r = check_model(&mut m, &opts).unwrap();
    assert!(r.passed(), "{:?}", r.per_layer());
}
