use std::fs;
use std::path::PathBuf;

use gnpp::analysis::{connection_count, heatmap, receptive_field, spatial_footprint, RfInfo};
use gnpp::checkpoint::checkpoint_load;
use gnpp::data::Normalization;
use gnpp::train::TrainConfig;
use gnpp::{build_network, LayerDesc, Placement, Shape4};

use crate::args::{parse_shape, resolve_arch, AnalyzeArgs, AnalyzeCommand, DatasetName};
use crate::train::{load_data, RunConfig};
use crate::{cfg_err, CliError, CliResult};

/// `1234567` as `1,234,567`.
pub fn thousands(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

pub fn rf_line(index: usize, layer: &LayerDesc, info: &RfInfo) -> String {
    format!(
        "layer {index:>2} {:<14} rf {:>4}  jump {:>3}  overlap {:.1}%",
        layer.to_string(),
        info.rf,
        info.jump,
        100.0 * info.overlap
    )
}

fn write_csv(path: &Option<PathBuf>, csv: &str) -> CliResult<()> {
    if let Some(p) = path {
        fs::write(p, csv)?;
    }
    Ok(())
}

pub fn cmd_analyze(a: &AnalyzeArgs) -> CliResult<()> {
    match &a.what {
        AnalyzeCommand::Rf { arch, layer, csv } => {
            let arch = resolve_arch(arch)?;
            let indices: Vec<usize> = match layer {
                Some(i) => vec![*i],
                None => arch
                    .layers
                    .iter()
                    .take_while(|l| !matches!(l, LayerDesc::Fc { .. }))
                    .enumerate()
                    .map(|(i, _)| i)
                    .collect(),
            };
            let mut out = String::from("layer,token,rf,jump,overlap\n");
            for i in indices {
                let info = receptive_field(&arch, i).map_err(cfg_err)?;
                println!("{}", rf_line(i, &arch.layers[i], &info));
                out.push_str(&format!(
                    "{i},{},{},{},{:.6}\n",
                    arch.layers[i], info.rf, info.jump, info.overlap
                ));
            }
            write_csv(csv, &out)
        }
        AnalyzeCommand::Connections {
            arch,
            input,
            layer,
            gnpp,
            csv,
        } => {
            let arch = resolve_arch(arch)?;
            let input = parse_shape(input)?;
            let indices = match layer {
                Some(i) => vec![*i],
                None => arch.conv_indices(),
            };
            let nb = gnpp.nb_type();
            let tag = nb.map_or("none".to_string(), |t| t.to_string());
            let mut out = String::from("layer,token,gnpp,footprint,connections\n");
            for i in indices {
                let count = connection_count(&arch, input, i, nb).map_err(cfg_err)?;
                let LayerDesc::Conv { k, stride, .. } = arch.layers[i] else {
                    unreachable!("connection_count accepted a non-conv layer")
                };
                let fp = spatial_footprint(k, stride, nb);
                println!(
                    "layer {i:>2} {:<14} gnpp {tag:<5} footprint {fp:>3}  connections {} ({:.1}M)",
                    arch.layers[i].to_string(),
                    thousands(count),
                    count as f64 / 1e6
                );
                out.push_str(&format!("{i},{},{tag},{fp},{count}\n", arch.layers[i]));
            }
            write_csv(csv, &out)
        }
        AnalyzeCommand::Heatmap {
            checkpoint,
            arch,
            dataset,
            data_dir,
            index,
            layer,
            std_factor,
            seed,
            out,
        } => {
            let cfg = RunConfig {
                arch: resolve_arch(arch.as_deref().unwrap_or(dataset.default_arch()))?,
                dataset: *dataset,
                data_dir: data_dir.clone(),
                train: TrainConfig::default(),
                repeats: 1,
                normalize: if *dataset == DatasetName::Mnist {
                    Normalization::Scale255
                } else {
                    Normalization::MeanSubtract
                },
                train_limit: None,
                test_limit: None,
                out: PathBuf::new(),
                quiet: true,
            };
            let data = load_data(&cfg)?;
            if *index >= data.test.len() {
                return Err(CliError::config(format!(
                    "image index {index} out of range (test set has {})",
                    data.test.len()
                )));
            }
            let mut net = match checkpoint {
                Some(p) => checkpoint_load::<f32>(p)?.0,
                None => build_network::<f32>(&cfg.arch, data.test.sample_shape(), *seed, Placement::Relaxed)
                    .map_err(cfg_err)?,
            };
            let input: Shape4 = net.input_shape();
            if input != data.test.sample_shape() {
                return Err(CliError::config(format!(
                    "network expects {input} but the dataset provides {}",
                    data.test.sample_shape()
                )));
            }
            let arch = net.arch().clone();
            let (x, labels) = data.test.batch(&[*index])?;
            let features = net.features_at(&x, *layer).map_err(cfg_err)?;
            let img = heatmap(&features, 0, &arch, input, *layer, *std_factor).map_err(cfg_err)?;
            img.write_pgm(out)?;
            let info = receptive_field(&arch, *layer).map_err(cfg_err)?;
            println!(
                "heatmap of test image {index} (label {}) at layer {layer} ({}), rf {}, std {:.2} px -> {}",
                labels[0],
                arch.layers[*layer],
                info.rf,
                std_factor * info.rf as f64,
                out.display()
            );
            Ok(())
        }
    }
}
