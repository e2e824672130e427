//! Mini-batch SGD training loop and test-set evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{augment_flip, Dataset};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::optim::{LrSchedule, SgdState};
use crate::scalar::Scalar;

const SHUFFLE_STREAM: u64 = 2;
const FLIP_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub schedule: LrSchedule,
    pub batch: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Horizontal flip probability per sample; 0 disables augmentation.
    pub flip_prob: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schedule: LrSchedule::mnist(),
            batch: 100,
            momentum: 0.9,
            weight_decay: 5e-4,
            flip_prob: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::param("batch size must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::param(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::param(format!(
                "flip probability must lie in [0, 1], got {}",
                self.flip_prob
            )));
        }
        Ok(())
    }
}

/// One row of the learning curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// SGD steps taken so far.
    pub iteration: usize,
    pub lr: f64,
    /// Mean training loss over the epoch's samples.
    pub train_loss: f64,
    /// Test error in percent.
    pub test_error: f64,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,iteration,lr,train_loss,test_error";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:e},{:.6},{:.4}",
            self.epoch, self.iteration, self.lr, self.train_loss, self.test_error
        )
    }
}

fn check_compat<T: Scalar>(net: &Network<T>, ds: &Dataset<T>) -> Result<()> {
    if ds.sample_shape() != net.input_shape() {
        return Err(Error::mismatch(net.input_shape(), ds.sample_shape()));
    }
    if ds.class_count != net.classes() {
        return Err(Error::param(format!(
            "dataset has {} classes but the network outputs {}",
            ds.class_count,
            net.classes()
        )));
    }
    Ok(())
}

/// Misclassified fraction of `ds`, in percent, in inference mode.
pub fn evaluate<T: Scalar>(net: &mut Network<T>, ds: &Dataset<T>, batch: usize) -> Result<f64> {
    check_compat(net, ds)?;
    if ds.is_empty() {
        return Err(Error::param("cannot evaluate on an empty dataset"));
    }
    let mut wrong = 0usize;
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let (x, y) = ds.batch(chunk)?;
        let pred = net.predict(&x)?;
        wrong += pred.iter().zip(&y).filter(|(p, l)| p != l).count();
    }
    net.clear_cache();
    Ok(100.0 * wrong as f64 / ds.len() as f64)
}

/// Trains for the full schedule. `on_epoch` sees each record right after
/// the epoch's evaluation; an error from it aborts training.
pub fn train<T: Scalar>(
    net: &mut Network<T>,
    train_set: &Dataset<T>,
    test_set: &Dataset<T>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &Network<T>) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    check_compat(net, train_set)?;
    check_compat(net, test_set)?;
    if train_set.is_empty() {
        return Err(Error::param("training set is empty"));
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    let mut flip_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    flip_rng.set_stream(FLIP_STREAM);

    let mut sgd = SgdState::new(
        T::lit(cfg.schedule.lr_at(0)?),
        T::lit(cfg.momentum),
        T::lit(cfg.weight_decay),
    )?;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut records = Vec::with_capacity(cfg.schedule.total_epochs());
    let mut iteration = 0;
    for epoch in 0..cfg.schedule.total_epochs() {
        let lr = cfg.schedule.lr_at(epoch)?;
        sgd.lr = T::lit(lr);
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let (mut x, y) = train_set.batch(chunk)?;
            if cfg.flip_prob > 0.0 {
                augment_flip(&mut x, cfg.flip_prob, &mut flip_rng)?;
            }
            let loss = net.train_batch(&x, &y)?.to_f64().unwrap_or(f64::NAN);
            if !loss.is_finite() {
                return Err(Error::param(format!(
                    "training diverged at iteration {iteration} (loss {loss})"
                )));
            }
            loss_sum += loss * chunk.len() as f64;
            net.sgd_step(&mut sgd)?;
            iteration += 1;
        }
        let test_error = evaluate(net, test_set, cfg.batch)?;
        let rec = EpochRecord {
            epoch: epoch + 1,
            iteration,
            lr,
            train_loss: loss_sum / train_set.len() as f64,
            test_error,
        };
        on_epoch(&rec, net)?;
        records.push(rec);
    }
    Ok(records)
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::parse_arch;
    use crate::data::Split;
    use crate::network::{build_network, Placement};
    use crate::tensor::{Shape4, Tensor4};

    /// Two classes: bright left half vs bright right half.
    fn toy(n: usize, split: Split) -> Dataset<f32> {
        let shape = Shape4::new(n, 1, 6, 6);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let images = Tensor4::from_fn(shape, |i, _, y, x| {
            let noise = ((i * 31 + y * 7 + x * 3) % 11) as f32 / 40.0;
            let on = if labels[i] == 0 { x < 3 } else { x >= 3 };
            if on {
                0.8 + noise
            } else {
                noise
            }
        })
        .unwrap();
        Dataset::new(images, labels, 2, split).unwrap()
    }

    fn cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            schedule: "3@0.05".parse().unwrap(),
            batch: 8,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn learns_toy_problem() {
        let arch = parse_arch("{C3(S1P1)@4-MP2(S2)}{FC2}").unwrap();
        let mut net = build_network::<f32>(&arch, Shape4::new(1, 1, 6, 6), 1, Placement::Strict).unwrap();
        let (tr, te) = (toy(64, Split::Train), toy(20, Split::Test));
        let mut seen = 0;
        let recs = train(&mut net, &tr, &te, &cfg(1), |_, _| {
            seen += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, 3);
        assert_eq!(recs.last().unwrap().iteration, 3 * 8);
        assert!(recs.last().unwrap().test_error < 10.0, "{recs:?}");
        assert!(recs[2].train_loss < recs[0].train_loss);
    }

    #[test]
    fn same_seed_same_curve() {
        let arch = parse_arch("{C3(S1P1)@4-G1(1)-MP2(S2)}{FC8-D0.5}{FC2}").unwrap();
        let run = |seed| {
            let mut net = build_network::<f32>(&arch, Shape4::new(1, 1, 6, 6), seed, Placement::Strict).unwrap();
            let c = TrainConfig {
                flip_prob: 0.5,
                ..cfg(seed)
            };
            let recs = train(&mut net, &toy(30, Split::Train), &toy(10, Split::Test), &c, |_, _| {
                Ok(())
            })
            .unwrap();
            (recs, net.params().into_iter().cloned().collect::<Vec<_>>())
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5).1, run(6).1);
    }

    #[test]
    fn class_mismatch_rejected() {
        let arch = parse_arch("{C3(S1P1)@4-MP2(S2)}{FC3}").unwrap();
        let mut net = build_network::<f32>(&arch, Shape4::new(1, 1, 6, 6), 1, Placement::Strict).unwrap();
        let err = train(
            &mut net,
            &toy(8, Split::Train),
            &toy(4, Split::Test),
            &cfg(0),
            |_, _| Ok(()),
        )
        .unwrap_err();
        assert!(err.to_string().contains("classes"));
    }

    #[test]
    fn mean_and_sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }

    #[test]
    fn csv_row_format() {
        let r = EpochRecord {
            epoch: 2,
            iteration: 1200,
            lr: 1e-3,
            train_loss: 0.5,
            test_error: 1.25,
        };
        assert_eq!(r.csv_row(), "2,1200,1e-3,0.500000,1.2500");
    }
}
