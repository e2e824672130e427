//! MNIST and CIFAR loaders, normalization and flip augmentation.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

pub const MNIST_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const MNIST_LABEL_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_PIXELS: usize = 3 * 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CifarVariant {
    C10,
    C100,
}

impl CifarVariant {
    pub fn record_len(self) -> usize {
        match self {
            CifarVariant::C10 => 1 + CIFAR_PIXELS,
            CifarVariant::C100 => 2 + CIFAR_PIXELS,
        }
    }

    pub fn classes(self) -> usize {
        match self {
            CifarVariant::C10 => 10,
            CifarVariant::C100 => 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Pixels divided by 255 (the load-time default).
    Scale255,
    /// Per-channel training-set mean removed.
    MeanSubtract,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub images: Tensor4<T>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub split: Split,
    /// Per-channel mean removed by `MeanSubtract`, if applied.
    pub channel_mean: Option<Vec<f64>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(images: Tensor4<T>, labels: Vec<usize>, class_count: usize, split: Split) -> Result<Self> {
        if labels.len() != images.shape().n {
            return Err(Error::mismatch(format!("{} labels", images.shape().n), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::IndexOutOfRange {
                what: "label",
                index: bad,
                limit: class_count,
            });
        }
        Ok(Dataset {
            images,
            labels,
            class_count,
            split,
            channel_mean: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample image shape with batch 1.
    pub fn sample_shape(&self) -> Shape4 {
        self.images.shape().with_batch(1)
    }

    /// Keeps the first `n` samples.
    pub fn truncate(&mut self, n: usize) -> Result<()> {
        if n >= self.len() {
            return Ok(());
        }
        let idx: Vec<usize> = (0..n).collect();
        self.images = self.images.gather(&idx)?;
        self.labels.truncate(n);
        Ok(())
    }

    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor4<T>, Vec<usize>)> {
        let x = self.images.gather(indices)?;
        let y = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((x, y))
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| format_err(path, "truncated IDX header"))
}

fn pixels<T: Scalar>(bytes: &[u8]) -> impl Iterator<Item = T> + '_ {
    bytes.iter().map(|&b| T::lit(b as f64 / 255.0))
}

/// Reads an MNIST image/label IDX pair (optionally gzipped). Pixels are
/// scaled to `[0, 1]`.
pub fn load_mnist<T: Scalar>(
    image_path: impl AsRef<Path>,
    label_path: impl AsRef<Path>,
    split: Split,
) -> Result<Dataset<T>> {
    let (image_path, label_path) = (image_path.as_ref(), label_path.as_ref());
    let img = read_file(image_path)?;
    let lab = read_file(label_path)?;

    let magic = be_u32(&img, 0, image_path)?;
    if magic != MNIST_IMAGE_MAGIC {
        return Err(format_err(
            image_path,
            format!("bad magic 0x{magic:08x}, expected image magic 0x{MNIST_IMAGE_MAGIC:08x}"),
        ));
    }
    let magic = be_u32(&lab, 0, label_path)?;
    if magic != MNIST_LABEL_MAGIC {
        return Err(format_err(
            label_path,
            format!("bad magic 0x{magic:08x}, expected label magic 0x{MNIST_LABEL_MAGIC:08x}"),
        ));
    }

    let n = be_u32(&img, 4, image_path)? as usize;
    let rows = be_u32(&img, 8, image_path)? as usize;
    let cols = be_u32(&img, 12, image_path)? as usize;
    let n_labels = be_u32(&lab, 4, label_path)? as usize;
    if n != n_labels {
        return Err(format_err(
            label_path,
            format!("{n_labels} labels for {n} images in {}", image_path.display()),
        ));
    }
    let body = &img[16..];
    if body.len() < n * rows * cols {
        return Err(format_err(
            image_path,
            format!("truncated: {} pixel bytes for {n}x{rows}x{cols}", body.len()),
        ));
    }
    let labels = &lab[8..];
    if labels.len() < n {
        return Err(format_err(
            label_path,
            format!("truncated: {} label bytes for {n}", labels.len()),
        ));
    }

    let images = Tensor4::from_vec(
        Shape4::new(n, 1, rows, cols),
        pixels(&body[..n * rows * cols]).collect(),
    )?;
    let labels = labels[..n].iter().map(|&b| b as usize).collect();
    Dataset::new(images, labels, 10, split)
}

/// Reads CIFAR binary batch files, concatenated in the given order.
/// CIFAR-100 records use the fine label.
pub fn load_cifar<T: Scalar>(paths: &[PathBuf], variant: CifarVariant, split: Split) -> Result<Dataset<T>> {
    let rec = variant.record_len();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = read_file(path)?;
        if bytes.len() % rec != 0 {
            return Err(format_err(
                path,
                format!("length {} is not a multiple of the {rec}-byte record", bytes.len()),
            ));
        }
        for record in bytes.chunks_exact(rec) {
            let (label, px) = match variant {
                CifarVariant::C10 => (record[0], &record[1..]),
                CifarVariant::C100 => (record[1], &record[2..]),
            };
            labels.push(label as usize);
            data.extend(pixels::<T>(px));
        }
    }
    let images = Tensor4::from_vec(Shape4::new(labels.len(), 3, 32, 32), data)?;
    Dataset::new(images, labels, variant.classes(), split)
}

/// Mirrors each sample horizontally with probability `prob`. Returns which
/// samples were flipped.
pub fn augment_flip<T: Scalar, R: Rng + ?Sized>(batch: &mut Tensor4<T>, prob: f64, rng: &mut R) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::param(format!("flip probability must lie in [0, 1], got {prob}")));
    }
    let s = batch.shape();
    let mut flipped = Vec::with_capacity(s.n);
    for i in 0..s.n {
        let flip = rng.gen::<f64>() < prob;
        flipped.push(flip);
        if flip {
            for row in batch.sample_mut(i).chunks_exact_mut(s.w) {
                row.reverse();
            }
        }
    }
    Ok(flipped)
}

/// Per-channel mean over every pixel of every sample.
pub fn channel_means<T: Scalar>(images: &Tensor4<T>) -> Vec<f64> {
    let s = images.shape();
    let plane = s.plane_len();
    let mut sums = vec![0.0f64; s.c];
    for (k, chunk) in images.data().chunks_exact(plane).enumerate() {
        sums[k % s.c] += chunk.iter().map(|v| v.to_f64().unwrap_or(0.0)).sum::<f64>();
    }
    let count = (s.n * plane) as f64;
    sums.into_iter().map(|v| v / count).collect()
}

/// Applies `scheme`. For `MeanSubtract`, a training split computes and
/// records its own mean; a test split must be given the training mean.
pub fn normalize<T: Scalar>(
    mut ds: Dataset<T>,
    scheme: Normalization,
    train_mean: Option<&[f64]>,
) -> Result<Dataset<T>> {
    match scheme {
        Normalization::Scale255 => Ok(ds),
        Normalization::MeanSubtract => {
            let mean = match (train_mean, ds.split) {
                (Some(m), _) => m.to_vec(),
                (None, Split::Train) => channel_means(&ds.images),
                (None, Split::Test) => {
                    return Err(Error::param(
                        "mean subtraction on a test split needs the stored training mean",
                    ))
                }
            };
            let s = ds.images.shape();
            if mean.len() != s.c {
                return Err(Error::mismatch(format!("{} channel means", s.c), mean.len()));
            }
            let plane = s.plane_len();
            for (k, chunk) in ds.images.data_mut().chunks_exact_mut(plane).enumerate() {
                let m = T::lit(mean[k % s.c]);
                for v in chunk {
                    *v -= m;
                }
            }
            ds.channel_mean = Some(mean);
            Ok(ds)
        }
    }
}

/// Standard file names inside a dataset directory.
pub mod layout {
    use std::path::{Path, PathBuf};

    /// Image and label paths, preferring uncompressed files over `.gz`.
    pub fn mnist(dir: &Path, train: bool) -> (PathBuf, PathBuf) {
        let prefix = if train { "train" } else { "t10k" };
        let pick = |name: String| {
            let plain = dir.join(&name);
            if plain.exists() {
                plain
            } else {
                dir.join(format!("{name}.gz"))
            }
        };
        (
            pick(format!("{prefix}-images-idx3-ubyte")),
            pick(format!("{prefix}-labels-idx1-ubyte")),
        )
    }

    pub fn cifar10(dir: &Path, train: bool) -> Vec<PathBuf> {
        let base = if dir.join("cifar-10-batches-bin").is_dir() {
            dir.join("cifar-10-batches-bin")
        } else {
            dir.to_path_buf()
        };
        if train {
            (1..=5).map(|i| base.join(format!("data_batch_{i}.bin"))).collect()
        } else {
            vec![base.join("test_batch.bin")]
        }
    }

    pub fn cifar100(dir: &Path, train: bool) -> Vec<PathBuf> {
        let base = if dir.join("cifar-100-binary").is_dir() {
            dir.join("cifar-100-binary")
        } else {
            dir.to_path_buf()
        };
        vec![base.join(if train { "train.bin" } else { "test.bin" })]
    }
}
