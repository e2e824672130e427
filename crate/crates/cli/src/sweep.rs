use std::fs;

use gnpp::train::mean_std;
use gnpp::{with_gnpp, ArchSpec, NeighborhoodType};

use crate::args::SweepArgs;
use crate::train::{load_data, run_repeats, RunConfig};
use crate::{cfg_err, CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// 0-based pool ordinals that receive phrase pooling; empty is the baseline.
    pub subset: Vec<usize>,
    /// Mean test error per column.
    pub cells: Vec<f64>,
}

/// Rows are pool subsets, columns are (type, sigma) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub pools: usize,
    pub columns: Vec<(NeighborhoodType, f64)>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut head: Vec<String> = (1..=self.pools).map(|i| format!("L{i}")).collect();
        head.extend(self.columns.iter().map(|(t, s)| format!("{t}_sigma{s}")));
        let mut out = head.join(",") + "\n";
        for row in &self.rows {
            let mut cells: Vec<String> = (0..self.pools)
                .map(|p| {
                    if row.subset.contains(&p) {
                        "1".into()
                    } else {
                        "0".into()
                    }
                })
                .collect();
            cells.extend(row.cells.iter().map(|e| format!("{e:.4}")));
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

fn subset_tag(subset: &[usize]) -> String {
    subset
        .iter()
        .map(|p| format!("L{}", p + 1))
        .collect::<Vec<_>>()
        .join("-")
}

/// Every subset of `pools` (baseline first, then by bitmask) crossed with
/// every `(type, sigma)`. `trainer` receives each architecture with a
/// directory-safe tag and returns its (mean) test error; the baseline is
/// trained once and repeated across columns.
pub fn sweep_table(
    arch: &ArchSpec,
    pools: &[usize],
    types: &[NeighborhoodType],
    sigmas: &[f64],
    mut trainer: impl FnMut(&ArchSpec, &str) -> CliResult<f64>,
) -> CliResult<SweepTable> {
    let available = arch.pool_indices().len();
    if pools.is_empty() || types.is_empty() || sigmas.is_empty() {
        return Err(CliError::config("empty sweep: need at least one pool, type and sigma"));
    }
    if let Some(&p) = pools.iter().find(|&&p| p >= available) {
        return Err(CliError::config(format!(
            "pool L{} does not exist; the architecture has {available} pooling layers",
            p + 1
        )));
    }
    if pools.len() > 16 {
        return Err(CliError::config("too many pools to enumerate"));
    }
    let base_arch = arch.without_smoothing();
    let columns: Vec<(NeighborhoodType, f64)> = types
        .iter()
        .flat_map(|&t| sigmas.iter().map(move |&s| (t, s)))
        .collect();
    let mut rows = Vec::with_capacity(1 << pools.len());
    let baseline = trainer(&base_arch, "baseline")?;
    rows.push(SweepRow {
        subset: Vec::new(),
        cells: vec![baseline; columns.len()],
    });
    for mask in 1u32..(1 << pools.len()) {
        let mut subset: Vec<usize> = (0..pools.len())
            .filter(|b| mask & (1 << b) != 0)
            .map(|b| pools[b])
            .collect();
        subset.sort_unstable();
        let mut cells = Vec::with_capacity(columns.len());
        for &(t, s) in &columns {
            let a = with_gnpp(&base_arch, &subset, t, s).map_err(cfg_err)?;
            cells.push(trainer(&a, &format!("{}_{t}_sigma{s}", subset_tag(&subset)))?);
        }
        rows.push(SweepRow { subset, cells });
    }
    Ok(SweepTable {
        pools: available,
        columns,
        rows,
    })
}

pub fn cmd_sweep(args: &SweepArgs) -> CliResult<SweepTable> {
    let cfg = RunConfig::from_args(&args.run)?;
    let available = cfg.arch.pool_indices().len();
    let pools: Vec<usize> = match &args.pools {
        Some(p) => p
            .iter()
            .map(|&i| {
                i.checked_sub(1)
                    .ok_or_else(|| CliError::config("pools are numbered from 1"))
            })
            .collect::<CliResult<_>>()?,
        None => (0..available).collect(),
    };
    let types: Vec<NeighborhoodType> = args.types.iter().map(|&t| t.into()).collect();
    // validate the whole grid before spending time on data and training
    for &s in &args.sigmas {
        gnpp::GnppConfig::<f64>::new(NeighborhoodType::Type1, s).map_err(cfg_err)?;
    }
    let data = load_data(&cfg)?;
    let table = sweep_table(&cfg.arch, &pools, &types, &args.sigmas, |arch, tag| {
        let outcomes = run_repeats(&cfg, arch, &data, &cfg.out.join(tag))?;
        let (m, s) = mean_std(&outcomes.iter().map(|o| o.final_error()).collect::<Vec<_>>());
        println!("{tag}: {m:.2}% ± {s:.2}");
        Ok(m)
    })?;
    fs::create_dir_all(&cfg.out)?;
    let csv = table.to_csv();
    fs::write(cfg.out.join("sweep.csv"), &csv)?;
    print!("{csv}");
    Ok(table)
}
