use gnpp::gradcheck::{
    check_layers, check_model, random_batch, Corrupted, GradCheckOptions, GradModel, GradReport, NetModel,
};
use gnpp::{build_network, Placement};

use crate::args::{parse_shape, resolve_arch, GradcheckArgs};
use crate::{cfg_err, CliError, CliResult};

fn print_report(title: &str, r: &GradReport) {
    println!("{title}");
    for (layer, err) in r.per_layer() {
        let kinks: usize = r.checks.iter().filter(|c| c.layer == layer).map(|c| c.kinks).sum();
        let checked: usize = r.checks.iter().filter(|c| c.layer == layer).map(|c| c.checked).sum();
        let verdict = if err < r.tolerance { "ok" } else { "FAIL" };
        println!("  {layer:<28} max rel err {err:.3e}  ({checked} entries, {kinks} kinks)  {verdict}");
    }
}

/// Runs the checks and returns every report; exit status is decided by the caller.
pub fn run_gradcheck(a: &GradcheckArgs) -> CliResult<Vec<(String, GradReport)>> {
    let opts = GradCheckOptions {
        tolerance: a.tolerance,
        max_per_tensor: a.max_per_tensor,
        seed: a.seed,
        ..Default::default()
    };
    let mut reports = Vec::new();
    if a.layers {
        for r in check_layers(a.seed, &opts)? {
            let name = r.checks.first().map_or_else(String::new, |c| c.layer.clone());
            reports.push((format!("layer {name}"), r));
        }
    }
    let arch = resolve_arch(&a.arch)?;
    let input = parse_shape(&a.input)?;
    let mut net = build_network::<f64>(&arch, input, a.seed, Placement::Relaxed).map_err(cfg_err)?;
    let (x, labels) = random_batch(input, a.batch, arch.classes(), a.seed.wrapping_add(1)).map_err(cfg_err)?;
    let model = NetModel::new(&mut net, x, labels)?;
    let report = match a.corrupt_backward {
        Some(factor) => check_model(&mut Corrupted { inner: model, factor }, &opts)?,
        None => {
            let mut m = model;
            check_model(&mut m as &mut dyn GradModel, &opts)?
        }
    };
    reports.push((format!("network {} on {}", arch.render(), input), report));
    Ok(reports)
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> CliResult<()> {
    let reports = run_gradcheck(a)?;
    let mut failed = Vec::new();
    for (title, r) in &reports {
        print_report(title, r);
        if !r.passed() {
            failed.push(title.clone());
        }
    }
    if failed.is_empty() {
        println!("gradient check passed (tolerance {:e})", a.tolerance);
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "relative error above {:e} in: {}",
            a.tolerance,
            failed.join("; ")
        )))
    }
}
