//! Architecture strings as printed in the literature, checkpoint round trips
//! through evaluation, and MNIST loading checked by an independent reader.

use std::path::PathBuf;

use gnpp::checkpoint::{checkpoint_load, checkpoint_save};
use gnpp::data::{layout, load_mnist, Dataset, Split};
use gnpp::train::{evaluate, train, TrainConfig};
use gnpp::{
    build_network, parse_arch, shape_infer, with_gnpp, LayerDesc, NeighborhoodType, Placement, Shape4, Tensor4,
};

const MNIST_VERBATIM: &str = "{C5(S1P0)@20-MP2(S2)}{C5(S1P0)@50-MP2(S2)}{FC500}{FC10}.";
const SVHN_VERBATIM: &str = "{C5(S1P2)@32-MP3(S2)}{C5(S1P2)@32-AP3(S2)}{C5(S1P2)@64-AP3(S2)}{FC10}.";
const ALEXNET_VERBATIM: &str = "{C11(S4)@96-MP3(S2)}{C5(S1P2)@256-MP3(S2)}{C3(S1P1)@384}{C3(S1P1)@384}\n{C3(S1P1)@256-MP3(S2)}{FC4096-D0.5}{FC4096-D0.5}{FC1000}.";

#[test]
fn verbatim_strings_parse() {
    let m = parse_arch(MNIST_VERBATIM).unwrap();
    assert_eq!(
        m.layers,
        vec![
            LayerDesc::Conv {
                k: 5,
                stride: 1,
                pad: 0,
                out_channels: 20
            },
            LayerDesc::MaxPool { k: 2, stride: 2 },
            LayerDesc::Conv {
                k: 5,
                stride: 1,
                pad: 0,
                out_channels: 50
            },
            LayerDesc::MaxPool { k: 2, stride: 2 },
            LayerDesc::Fc { out: 500 },
            LayerDesc::Fc { out: 10 },
        ]
    );
    assert_eq!(parse_arch(SVHN_VERBATIM).unwrap().layers.len(), 7);
    let a = parse_arch(ALEXNET_VERBATIM).unwrap();
    assert_eq!(a.layers.len(), 13);
    assert_eq!(a.classes(), 1000);
}

#[test]
fn mnist_shape_chain_and_parameter_count() {
    let m = parse_arch(MNIST_VERBATIM).unwrap();
    let shapes = shape_infer(&m, Shape4::new(1, 1, 28, 28)).unwrap();
    let chain: Vec<(usize, usize, usize)> = shapes.iter().map(|s| (s.c, s.h, s.w)).collect();
    assert_eq!(
        chain,
        vec![
            (20, 24, 24),
            (20, 12, 12),
            (50, 8, 8),
            (50, 4, 4),
            (500, 1, 1),
            (10, 1, 1)
        ]
    );
    let hand = 20 * 25 + 20 + 50 * (25 * 20) + 50 + 500 * 800 + 500 + 10 * 500 + 10;
    assert_eq!(hand, 431_080);
    assert_eq!(m.param_count(Shape4::new(1, 1, 28, 28)).unwrap(), hand);
}

#[test]
fn phrase_pooling_changes_neither_shapes_nor_parameters() {
    let input = Shape4::new(1, 3, 32, 32);
    let base = parse_arch(SVHN_VERBATIM).unwrap();
    for nb in [NeighborhoodType::Type1, NeighborhoodType::Type2] {
        for pools in [&[0usize][..], &[0, 2], &[0, 1, 2]] {
            let g = with_gnpp(&base, pools, nb, 0.8).unwrap();
            assert_eq!(g.param_count(input).unwrap(), base.param_count(input).unwrap());
            let sb = shape_infer(&base, input).unwrap();
            let sg: Vec<Shape4> = shape_infer(&g, input)
                .unwrap()
                .into_iter()
                .zip(&g.layers)
                .filter(|(_, l)| !matches!(l, LayerDesc::Gnpp { .. }))
                .map(|(s, _)| s)
                .collect();
            assert_eq!(sb, sg);
        }
    }
    let spec =
        parse_arch("{C5(S1P2)@32-G1(0.8)-MP3(S2)}{C5(S1P2)@32-AP3(S2)}{C5(S1P2)@64-G1(0.8)-AP3(S2)}{FC10}").unwrap();
    assert_eq!(spec, with_gnpp(&base, &[0, 2], NeighborhoodType::Type1, 0.8).unwrap());
}

#[test]
fn unbalanced_brace_reports_end_of_input() {
    let text = "{C5(S1P0)@20-MP2(S2)";
    let err = parse_arch(text).unwrap_err();
    match err {
        gnpp::Error::Parse { offset, .. } => assert_eq!(offset, text.len()),
        other => panic!("unexpected error {other}"),
    }
}

fn toy(n: usize, split: Split) -> Dataset<f32> {
    let labels: Vec<usize> = (0..n).map(|i| (i * 7) % 3).collect();
    let images = Tensor4::from_fn(Shape4::new(n, 1, 8, 8), |i, _, y, x| {
        let band = labels[i] * 2;
        let noise = ((i * 13 + y * 5 + x) % 7) as f32 / 20.0;
        if y >= band && y < band + 3 {
            0.9 - noise
        } else {
            noise
        }
    })
    .unwrap();
    Dataset::new(images, labels, 3, split).unwrap()
}

#[test]
fn reloaded_checkpoint_reproduces_test_error_exactly() {
    let arch = parse_arch("{C3(S1P1)@4-G2(0.8)-MP2(S2)}{FC12-D0.5}{FC3}").unwrap();
    let mut net = build_network::<f32>(&arch, Shape4::new(1, 1, 8, 8), 4, Placement::Strict).unwrap();
    let (tr, te) = (toy(60, Split::Train), toy(30, Split::Test));
    let cfg = TrainConfig {
        schedule: "2@0.02".parse().unwrap(),
        batch: 10,
        ..Default::default()
    };
    train(&mut net, &tr, &te, &cfg, |_, _| Ok(())).unwrap();
    let before = evaluate(&mut net, &te, 7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint_save(&net, 2, &path).unwrap();
    let (mut loaded, meta) = checkpoint_load::<f32>(&path).unwrap();
    assert_eq!(meta.epoch, 2);
    assert_eq!(evaluate(&mut loaded, &te, 7).unwrap(), before);
    let logits_a = net.forward(&te.images, false).unwrap();
    let logits_b = loaded.forward(&te.images, false).unwrap();
    assert_eq!(logits_a.data(), logits_b.data());
}

/// Directory holding the MNIST files, if `GNPP_DATA_DIR` points at one.
fn mnist_dir() -> Option<PathBuf> {
    let root = PathBuf::from(std::env::var_os("GNPP_DATA_DIR")?);
    [root.clone(), root.join("mnist")]
        .into_iter()
        .find(|d| layout::mnist(d, true).0.exists() && layout::mnist(d, false).0.exists())
}

/// Minimal IDX reader written directly from the format description.
fn read_idx(path: &std::path::Path) -> (Vec<u32>, Vec<u8>) {
    let raw = std::fs::read(path).unwrap();
    let bytes = if path.extension().is_some_and(|e| e == "gz") {
        use std::io::Read;
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(&raw[..]).read_to_end(&mut out).unwrap();
        out
    } else {
        raw
    };
    assert_eq!(bytes[0], 0);
    assert_eq!(bytes[1], 0);
    assert_eq!(bytes[2], 0x08, "unsigned byte payload");
    let ndim = bytes[3] as usize;
    let dims: Vec<u32> = (0..ndim)
        .map(|d| u32::from_be_bytes(bytes[4 + 4 * d..8 + 4 * d].try_into().unwrap()))
        .collect();
    (dims, bytes[4 + 4 * ndim..].to_vec())
}

#[test]
fn mnist_matches_independent_reader() {
    let Some(dir) = mnist_dir() else {
        eprintln!("GNPP_DATA_DIR has no MNIST files; skipping");
        return;
    };
    for train in [true, false] {
        let (img, lab) = layout::mnist(&dir, train);
        let split = if train { Split::Train } else { Split::Test };
        let ds = load_mnist::<f32>(&img, &lab, split).unwrap();
        let (idims, pixels) = read_idx(&img);
        let (ldims, labels) = read_idx(&lab);
        let n = if train { 60_000 } else { 10_000 };
        assert_eq!(idims, vec![n, 28, 28]);
        assert_eq!(ldims, vec![n]);
        assert_eq!(ds.images.shape(), Shape4::new(n as usize, 1, 28, 28));
        let theirs: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
        assert_eq!(ds.labels, theirs);
        let sum_bytes: u64 = pixels.iter().map(|&p| p as u64).sum();
        let sum_loaded: u64 = ds.images.data().iter().map(|&v| (v * 255.0).round() as u64).sum();
        assert_eq!(sum_bytes, sum_loaded);
        assert!(ds.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let hist = ds.class_histogram();
        assert_eq!(hist.iter().sum::<usize>(), n as usize);
        // roughly uniform: every class within 20% of n/10
        assert!(
            hist.iter()
                .all(|&c| c * 100 > n as usize * 8 && c * 100 < n as usize * 12),
            "{hist:?}"
        );
        if train {
            assert_eq!(ds.labels[0], 5);
        } else {
            assert_eq!(ds.labels[0], 7);
        }
    }
}
