//! `psfield validate`: holdout coverage of the model configuration.

use psfield::model::validate_holdout;

use crate::config::{ResolvedPaths, RunConfig};
use crate::out::{fnum, write_csv};
use crate::CliError;

pub fn run(cfg: &RunConfig, paths: &ResolvedPaths) -> Result<(), CliError> {
    let obs = super::load_observations(paths)?;
    let fit_cfg = super::fit::build_fit_config(cfg)?;
    let timelines = if fit_cfg.retention_effects {
        Some(super::load_timelines(paths)?)
    } else {
        None
    };
    let report = validate_holdout(
        &obs,
        timelines.as_deref(),
        cfg.validate.holdout_fraction,
        cfg.validate.seed,
        &fit_cfg,
    )?;

    let rows: Vec<String> = report
        .rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{}",
                r.site_id,
                r.year,
                fnum(r.observed_z),
                fnum(r.predicted_mean),
                fnum(r.predicted_sd),
                fnum(r.std_residual),
                r.outside_95 as u8
            )
        })
        .collect();
    write_csv(
        &paths.validation_csv(),
        "site_id,year,observed_z,predicted_mean,predicted_sd,std_residual,outside_95",
        &rows,
    )?;
    crate::out::write_file(
        &paths.validation_json(),
        &format!("{}\n", serde_json::to_string_pretty(&report)?),
    )?;

    for w in &report.warnings {
        println!("warning: {w}");
    }
    println!(
        "held out {} of {} observations (fraction {}, seed {})",
        report.n_holdout,
        report.n_total,
        fnum(report.fraction),
        report.seed
    );
    println!(
        "share outside central 95% interval: {} (nominal {})",
        fnum(report.share_outside_95),
        fnum(report.nominal_share)
    );
    println!("wrote {}", paths.validation_json().display());
    Ok(())
}
