use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use gnpp::checkpoint::checkpoint_save;
use gnpp::data::{layout, load_cifar, load_mnist, normalize, CifarVariant, Dataset, Normalization, Split};
use gnpp::train::{mean_std, train, EpochRecord, TrainConfig};
use gnpp::{build_network, ArchSpec, LrSchedule, Placement};

use crate::args::{resolve_arch, DatasetName, NormArg, RunArgs};
use crate::{cfg_err, CliError, CliResult};

/// Fully resolved training configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub arch: ArchSpec,
    pub dataset: DatasetName,
    pub data_dir: Option<PathBuf>,
    pub train: TrainConfig,
    pub repeats: u64,
    pub normalize: Normalization,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub out: PathBuf,
    pub quiet: bool,
}

impl RunConfig {
    pub fn from_args(a: &RunArgs) -> CliResult<Self> {
        let arch = resolve_arch(a.arch.as_deref().unwrap_or(a.dataset.default_arch()))?;
        if arch.classes() != a.dataset.classes() {
            return Err(CliError::config(format!(
                "architecture ends in {} outputs but {:?} has {} classes",
                arch.classes(),
                a.dataset,
                a.dataset.classes()
            )));
        }
        let cifar = a.dataset != DatasetName::Mnist;
        let mut schedule = match &a.schedule {
            Some(s) => s.parse::<LrSchedule>().map_err(cfg_err)?,
            None if cifar => LrSchedule::cifar(),
            None => LrSchedule::mnist(),
        };
        if let Some(e) = a.epochs {
            if e == 0 {
                return Err(CliError::config("--epochs must be positive"));
            }
            schedule = schedule.truncated(e).map_err(cfg_err)?;
        }
        if a.repeats == 0 {
            return Err(CliError::config("--repeats must be at least 1"));
        }
        let train = TrainConfig {
            schedule,
            batch: a.batch,
            momentum: a.momentum,
            weight_decay: a.weight_decay,
            flip_prob: a.flip_prob.unwrap_or(if cifar { 0.5 } else { 0.0 }),
            seed: a.seed,
        };
        train.validate().map_err(cfg_err)?;
        let normalize = match a.normalize {
            Some(NormArg::Scale255) => Normalization::Scale255,
            Some(NormArg::MeanSubtract) => Normalization::MeanSubtract,
            None if cifar => Normalization::MeanSubtract,
            None => Normalization::Scale255,
        };
        Ok(RunConfig {
            arch,
            dataset: a.dataset,
            data_dir: a.data_dir.clone(),
            train,
            repeats: a.repeats,
            normalize,
            train_limit: a.train_limit,
            test_limit: a.test_limit,
            out: a.out.clone(),
            quiet: a.quiet,
        })
    }

    /// `key=value` lines describing one run.
    pub fn echo(&self, arch: &ArchSpec, seed: u64) -> String {
        let t = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| s.push_str(&format!("{k}={v}\n"));
        kv("arch", arch.render());
        kv("dataset", format!("{:?}", self.dataset).to_lowercase());
        kv("normalize", format!("{:?}", self.normalize));
        kv("schedule", t.schedule.to_string());
        kv("batch", t.batch.to_string());
        kv("momentum", t.momentum.to_string());
        kv("weight_decay", t.weight_decay.to_string());
        kv("flip_prob", t.flip_prob.to_string());
        kv("seed", seed.to_string());
        kv("train_limit", self.train_limit.map_or("all".into(), |n| n.to_string()));
        kv("test_limit", self.test_limit.map_or("all".into(), |n| n.to_string()));
        s
    }
}

pub struct Data {
    pub train: Dataset<f32>,
    pub test: Dataset<f32>,
}

pub fn load_data(cfg: &RunConfig) -> CliResult<Data> {
    let dir = cfg
        .data_dir
        .as_deref()
        .ok_or_else(|| CliError::config("no data directory; pass --data-dir or set GNPP_DATA_DIR"))?;
    let load = |split: Split| -> CliResult<Dataset<f32>> {
        let train = split == Split::Train;
        Ok(match cfg.dataset {
            DatasetName::Mnist => {
                let dirs = [dir.to_path_buf(), dir.join("mnist")];
                let pairs: Vec<_> = dirs.iter().map(|d| layout::mnist(d, train)).collect();
                let (img, lab) = pairs
                    .iter()
                    .find(|(i, _)| i.exists())
                    .cloned()
                    .unwrap_or_else(|| pairs[0].clone());
                load_mnist(img, lab, split)?
            }
            DatasetName::Cifar10 => {
                let sets = [
                    layout::cifar10(dir, train),
                    layout::cifar10(&dir.join("cifar10"), train),
                ];
                let paths = sets.iter().find(|s| s.iter().all(|p| p.exists())).unwrap_or(&sets[0]);
                load_cifar(paths, CifarVariant::C10, split)?
            }
            DatasetName::Cifar100 => {
                let sets = [
                    layout::cifar100(dir, train),
                    layout::cifar100(&dir.join("cifar100"), train),
                ];
                let paths = sets.iter().find(|s| s.iter().all(|p| p.exists())).unwrap_or(&sets[0]);
                load_cifar(paths, CifarVariant::C100, split)?
            }
        })
    };
    let mut tr = load(Split::Train)?;
    let mut te = load(Split::Test)?;
    if let Some(n) = cfg.train_limit {
        tr.truncate(n)?;
    }
    if let Some(n) = cfg.test_limit {
        te.truncate(n)?;
    }
    let tr = normalize(tr, cfg.normalize, None)?;
    let te = normalize(te, cfg.normalize, tr.channel_mean.as_deref())?;
    Ok(Data { train: tr, test: te })
}

/// True when the files for `dataset` are present under `dir`.
pub fn data_available(dataset: DatasetName, dir: &Path) -> bool {
    match dataset {
        DatasetName::Mnist => [dir.to_path_buf(), dir.join("mnist")].iter().any(|d| {
            let (a, b) = layout::mnist(d, true);
            let (c, e) = layout::mnist(d, false);
            a.exists() && b.exists() && c.exists() && e.exists()
        }),
        DatasetName::Cifar10 => [dir.to_path_buf(), dir.join("cifar10")].iter().any(|d| {
            layout::cifar10(d, true)
                .iter()
                .chain(&layout::cifar10(d, false))
                .all(|p| p.exists())
        }),
        DatasetName::Cifar100 => [dir.to_path_buf(), dir.join("cifar100")].iter().any(|d| {
            layout::cifar100(d, true)
                .iter()
                .chain(&layout::cifar100(d, false))
                .all(|p| p.exists())
        }),
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub dir: PathBuf,
    pub records: Vec<EpochRecord>,
}

impl RunOutcome {
    pub fn final_error(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.test_error)
    }
}

/// One seed: writes `config.txt`, `seed.txt`, `curves.csv` (one row per
/// epoch, appended as training goes) and `model.ckpt` into `dir`.
pub fn run_one(cfg: &RunConfig, arch: &ArchSpec, data: &Data, seed: u64, dir: &Path) -> CliResult<RunOutcome> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.txt"), cfg.echo(arch, seed))?;
    fs::write(dir.join("seed.txt"), format!("{seed}\n"))?;
    let mut net = build_network::<f32>(arch, data.train.sample_shape(), seed, Placement::Strict).map_err(cfg_err)?;
    let mut curves = File::create(dir.join("curves.csv"))?;
    writeln!(curves, "{}", EpochRecord::CSV_HEADER)?;
    let tcfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let quiet = cfg.quiet;
    let records = train(&mut net, &data.train, &data.test, &tcfg, |r, _| {
        writeln!(curves, "{}", r.csv_row())?;
        curves.flush()?;
        if !quiet {
            println!(
                "[seed {seed}] epoch {:>3}  iter {:>6}  lr {:e}  loss {:.4}  test error {:.2}%",
                r.epoch, r.iteration, r.lr, r.train_loss, r.test_error
            );
        }
        Ok(())
    })?;
    let epoch = records.last().map_or(0, |r| r.epoch as u32);
    checkpoint_save(&net, epoch, dir.join("model.ckpt"))?;
    Ok(RunOutcome {
        seed,
        dir: dir.to_path_buf(),
        records,
    })
}

/// Runs seeds `seed..seed+repeats` of `arch` under `out`, writing a
/// `summary.csv` with each seed's final test error.
pub fn run_repeats(cfg: &RunConfig, arch: &ArchSpec, data: &Data, out: &Path) -> CliResult<Vec<RunOutcome>> {
    fs::create_dir_all(out)?;
    let mut outcomes = Vec::new();
    for seed in cfg.train.seed..cfg.train.seed + cfg.repeats {
        outcomes.push(run_one(cfg, arch, data, seed, &out.join(format!("seed-{seed}")))?);
    }
    let mut summary = String::from("seed,final_test_error\n");
    for o in &outcomes {
        summary.push_str(&format!("{},{:.4}\n", o.seed, o.final_error()));
    }
    fs::write(out.join("summary.csv"), summary)?;
    Ok(outcomes)
}

pub fn summarize(outcomes: &[RunOutcome]) -> (f64, f64) {
    mean_std(&outcomes.iter().map(RunOutcome::final_error).collect::<Vec<_>>())
}

pub fn cmd_train(args: &crate::args::TrainArgs) -> CliResult<Vec<RunOutcome>> {
    let cfg = RunConfig::from_args(&args.run)?;
    let data = load_data(&cfg)?;
    let outcomes = run_repeats(&cfg, &cfg.arch, &data, &cfg.out)?;
    for o in &outcomes {
        println!("seed {}: final test error {:.2}%", o.seed, o.final_error());
    }
    if outcomes.len() > 1 {
        let (m, s) = summarize(&outcomes);
        println!("mean test error over {} seeds: {m:.2}% ± {s:.2}", outcomes.len());
    }
    Ok(outcomes)
}
